//! Run orchestration: configuration, method dispatch, reports and CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::bfsm::{bfsm_linear_until, bfsm_semilinear_until, StepNewtonConfig};
use crate::diagnostics::{
    bound_report, decay_profile, spectrum, write_bound_csv, write_decay_csv, write_spectrum_csv,
    SpectrumTag,
};
use crate::krylov::{Breakdown, KrylovConfig};
use crate::newton::{solve_semilinear, NewtonConfig};
use crate::precond::default_alpha;
use crate::problems::{Problem, ProblemRegistry};
use crate::solve::{solve_linear, Method};
use crate::system::AllAtOnceSystem;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub beta: f64,
    pub r: f64,
    pub m: usize,
    pub n: usize,
    pub method: Method,
    pub alpha: Option<f64>,
    /// BiCGSTAB tolerance for linear problems.
    pub rtol: f64,
    /// Outer tolerance of the modified Newton iterations.
    pub newton_rtol: f64,
    /// BiCGSTAB tolerance inside Newton.
    pub inner_rtol: f64,
    pub maxit: usize,
    pub coarsening: usize,
    pub threads: Option<usize>,
    pub seed: u64,
    /// Wall-clock budget in seconds.
    pub time_budget: Option<f64>,
    pub dump_spectra: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "example1".into(),
            beta: 0.5,
            r: 2.0,
            m: 32,
            n: 32,
            method: Method::Preconditioned,
            alpha: None,
            rtol: 1e-9,
            newton_rtol: 1e-10,
            inner_rtol: 1e-6,
            maxit: 1000,
            coarsening: 2,
            threads: None,
            seed: 0,
            time_budget: None,
            dump_spectra: false,
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "bad value '{v}' for '{key}'"
        ))),
    }
}

fn optional(v: &str) -> Option<&str> {
    match v.to_ascii_lowercase().as_str() {
        "" | "none" | "default" => None,
        _ => Some(v),
    }
}

impl RunConfig {
    /// Sets one field from a `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "problem" => self.problem = v.to_string(),
            "beta" => self.beta = parse_num(key, v)?,
            "r" => self.r = parse_num(key, v)?,
            "m" => self.m = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "method" => self.method = v.parse()?,
            "alpha" => self.alpha = optional(v).map(|x| parse_num(key, x)).transpose()?,
            "rtol" => self.rtol = parse_num(key, v)?,
            "newton_rtol" => self.newton_rtol = parse_num(key, v)?,
            "inner_rtol" => self.inner_rtol = parse_num(key, v)?,
            "maxit" => self.maxit = parse_num(key, v)?,
            "coarsening" => self.coarsening = parse_num(key, v)?,
            "threads" => self.threads = optional(v).map(|x| parse_num(key, x)).transpose()?,
            "seed" => self.seed = parse_num(key, v)?,
            "time_budget" => {
                self.time_budget = optional(v).map(|x| parse_num(key, x)).transpose()?
            }
            "dump_spectra" => self.dump_spectra = parse_bool(key, v)?,
            "out" | "out_dir" => self.out_dir = optional(v).map(PathBuf::from),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key '{other}'"
                )));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key = value", no + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_str(&fs::read_to_string(path)?)
    }

    /// Serializes back to the `key = value` format.
    pub fn to_config_string(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("problem", self.problem.clone());
        map.insert("beta", self.beta.to_string());
        map.insert("r", self.r.to_string());
        map.insert("M", self.m.to_string());
        map.insert("N", self.n.to_string());
        map.insert("method", self.method.tag().to_string());
        map.insert("alpha", opt_str(self.alpha));
        map.insert("rtol", self.rtol.to_string());
        map.insert("newton_rtol", self.newton_rtol.to_string());
        map.insert("inner_rtol", self.inner_rtol.to_string());
        map.insert("maxit", self.maxit.to_string());
        map.insert("coarsening", self.coarsening.to_string());
        map.insert("threads", opt_str(self.threads));
        map.insert("seed", self.seed.to_string());
        map.insert("time_budget", opt_str(self.time_budget));
        map.insert("dump_spectra", self.dump_spectra.to_string());
        map.insert(
            "out",
            self.out_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return bad(format!("r must be >= 1, got {}", self.r));
        }
        if self.m < 2 {
            return bad(format!("M must be >= 2, got {}", self.m));
        }
        if self.n < 2 {
            return bad(format!("N must be >= 2, got {}", self.n));
        }
        for (name, v) in [
            ("rtol", self.rtol),
            ("newton_rtol", self.newton_rtol),
            ("inner_rtol", self.inner_rtol),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return bad(format!("alpha must lie in (0, 1], got {a}"));
            }
        }
        if self.maxit == 0 || self.coarsening == 0 {
            return bad("maxit and coarsening must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return bad(format!("time budget must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub config: RunConfig,
    pub m0: usize,
    /// Linear all-at-once methods: BiCGSTAB iterations per subproblem.
    pub iter: Option<(f64, f64)>,
    /// Semilinear all-at-once methods.
    pub iter_outer: Option<(usize, usize)>,
    pub iter_inner: Option<(f64, f64)>,
    /// Sequential marching on a semilinear problem.
    pub iter1: Option<f64>,
    pub time_s: f64,
    /// Max-norm error at the final time level, when an exact solution exists.
    pub error_final: Option<f64>,
    /// Max-norm error over all time levels.
    pub error_all: Option<f64>,
    /// More than `maxit` iterations, breakdown or Newton failure.
    pub dagger: bool,
    /// Time budget exceeded.
    pub dash: bool,
    pub alpha: Option<f64>,
    /// Field at the final time, interior nodes in x-fastest order.
    pub final_field: Vec<f64>,
    pub note: Option<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        !self.dagger && !self.dash
    }

    /// One-line human readable summary.
    pub fn summary(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "{} method={} beta={} r={} M={} N={} M0={}",
            c.problem, c.method, c.beta, c.r, c.m, c.n, self.m0
        );
        if self.dash {
            s.push_str(" --");
            return s;
        }
        if self.dagger {
            s.push_str(" \u{2020}");
        }
        if let Some((a, b)) = self.iter {
            s.push_str(&format!(" Iter=({a:.1}, {b:.1})"));
        }
        if let (Some((a, b)), Some((x, y))) = (self.iter_outer, self.iter_inner) {
            s.push_str(&format!(" IterO=({a}, {b}) IterI=({x:.1}, {y:.1})"));
        }
        if let Some(i) = self.iter1 {
            s.push_str(&format!(" Iter1={i:.1}"));
        }
        s.push_str(&format!(" Time={:.3}s", self.time_s));
        if let Some(e) = self.error_final {
            s.push_str(&format!(" err(T)={e:.3e}"));
        }
        if let Some(n) = &self.note {
            s.push_str(&format!(" [{n}]"));
        }
        s
    }
}

#[derive(Serialize)]
struct RunRow {
    problem: String,
    method: String,
    beta: f64,
    r: f64,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M0")]
    m0: usize,
    alpha: Option<f64>,
    rtol: f64,
    newton_rtol: f64,
    inner_rtol: f64,
    coarsening: usize,
    threads: Option<usize>,
    seed: u64,
    iter_1: Option<f64>,
    iter_2: Option<f64>,
    iter_o1: Option<usize>,
    iter_o2: Option<usize>,
    iter_i1: Option<f64>,
    iter_i2: Option<f64>,
    iter1: Option<f64>,
    time_s: f64,
    error_final: Option<f64>,
    error_all: Option<f64>,
    dagger: bool,
    dash: bool,
}

impl From<&SolveReport> for RunRow {
    fn from(r: &SolveReport) -> Self {
        let c = &r.config;
        Self {
            problem: c.problem.clone(),
            method: c.method.tag().into(),
            beta: c.beta,
            r: c.r,
            m: c.m,
            n: c.n,
            m0: r.m0,
            alpha: r.alpha,
            rtol: c.rtol,
            newton_rtol: c.newton_rtol,
            inner_rtol: c.inner_rtol,
            coarsening: c.coarsening,
            threads: c.threads,
            seed: c.seed,
            iter_1: r.iter.map(|x| x.0),
            iter_2: r.iter.map(|x| x.1),
            iter_o1: r.iter_outer.map(|x| x.0),
            iter_o2: r.iter_outer.map(|x| x.1),
            iter_i1: r.iter_inner.map(|x| x.0),
            iter_i2: r.iter_inner.map(|x| x.1),
            iter1: r.iter1,
            time_s: r.time_s,
            error_final: r.error_final,
            error_all: r.error_all,
            dagger: r.dagger,
            dash: r.dash,
        }
    }
}

/// Appends one row to `dir/runs.csv`, writing the header for a new file.
pub fn append_run_csv(dir: &Path, report: &SolveReport) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("runs.csv");
    let fresh = !path.exists() || fs::metadata(&path)?.len() == 0;
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    w.serialize(RunRow::from(report))?;
    w.flush()?;
    Ok(path)
}

/// Writes the four spectra, the decay profile and the bound summary.
pub fn write_diagnostics(dir: &Path, sys: &AllAtOnceSystem, alpha: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for tag in [
        SpectrumTag::M11,
        SpectrumTag::P1InvM11,
        SpectrumTag::M22,
        SpectrumTag::PAlphaInvM22,
    ] {
        if sys.m2() == 0 && matches!(tag, SpectrumTag::M22 | SpectrumTag::PAlphaInvM22) {
            continue;
        }
        let dump = spectrum(sys, tag, alpha)?;
        let path = dir.join(format!("spectra_{}.csv", tag.name()));
        write_spectrum_csv(&path, &dump)?;
        written.push(path);
    }
    let path = dir.join("decay.csv");
    write_decay_csv(&path, &decay_profile(sys))?;
    written.push(path);
    if sys.m2() >= 2 {
        let path = dir.join("bound.csv");
        write_bound_csv(&path, &[bound_report(sys, alpha)?])?;
        written.push(path);
    }
    Ok(written)
}

fn errors_against(
    problem: &Problem,
    sys: &AllAtOnceSystem,
    sol: &crate::system::BlockVector,
) -> (Option<f64>, Option<f64>) {
    let Some(exact) = &problem.exact else {
        return (None, None);
    };
    let mut all: f64 = 0.0;
    let mut last = 0.0;
    for k in 0..sys.m() {
        let t = sys.mesh.points[k + 1];
        let u = sys.op.sample(|x, y| exact(x, y, t));
        let e = u
            .iter()
            .zip(sol.block(k))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        all = all.max(e);
        last = e;
    }
    (Some(last), Some(all))
}

/// Runs one configuration with the built-in problems.
pub fn run(config: &RunConfig) -> Result<SolveReport> {
    run_with(config, &ProblemRegistry::with_builtins())
}

/// Runs one configuration, resolving the problem name in `registry`.
/// Non-convergence is reported through the flags, not as an error.
pub fn run_with(config: &RunConfig, registry: &ProblemRegistry) -> Result<SolveReport> {
    config.validate()?;
    let problem = registry.get(&config.problem, config.beta)?;
    let mut sys = problem.system(config.beta, config.r, config.m, config.n)?;
    sys.store_forcing();
    let deadline = config
        .time_budget
        .map(|s| Instant::now() + Duration::from_secs_f64(s));
    let krylov = KrylovConfig {
        rtol: config.rtol,
        maxit: config.maxit,
        record_history: false,
        deadline,
    };
    let mut report = SolveReport {
        config: config.clone(),
        m0: sys.m0(),
        iter: None,
        iter_outer: None,
        iter_inner: None,
        iter1: None,
        time_s: 0.0,
        error_final: None,
        error_all: None,
        dagger: false,
        dash: false,
        alpha: None,
        final_field: Vec::new(),
        note: None,
    };
    let start = Instant::now();
    let solution = match (config.method, &problem.nonlinearity) {
        (Method::Bfsm, None) => bfsm_linear_until(&sys, deadline),
        (Method::Bfsm, Some(g)) => {
            let step = StepNewtonConfig {
                rtol: config.newton_rtol,
                max_iter: 200,
            };
            match bfsm_semilinear_until(&sys, g, step, deadline) {
                Ok(Some(rep)) => {
                    report.iter1 = Some(rep.iter1());
                    Some(rep.solution)
                }
                Ok(None) => None,
                Err(e @ Error::NewtonDiverged { .. }) => {
                    report.dagger = true;
                    report.note = Some(e.to_string());
                    None
                }
                Err(e) => return Err(e),
            }
        }
        (method, None) => {
            let pre = method == Method::Preconditioned;
            match solve_linear(&sys, pre, config.alpha, &krylov) {
                Ok(rep) => {
                    report.iter = Some(rep.iterations);
                    report.alpha = rep.alpha;
                    report.dagger = !rep.converged();
                    if let Some(b) = &rep.breakdown {
                        report.note = Some(format!("breakdown: {b:?}"));
                        report.dash = *b == Breakdown::Deadline;
                    }
                    Some(rep.solution)
                }
                Err(Error::TimeBudget) => None,
                Err(e @ Error::Breakdown(_)) => {
                    report.dagger = true;
                    report.note = Some(e.to_string());
                    None
                }
                Err(e) => return Err(e),
            }
        }
        (method, Some(g)) => {
            let cfg = NewtonConfig {
                step_rtol: config.newton_rtol,
                max_outer: 200,
                inner: KrylovConfig {
                    rtol: config.inner_rtol,
                    ..krylov
                },
                coarsening: config.coarsening,
                preconditioned: method == Method::Preconditioned,
                alpha: config.alpha,
            };
            match solve_semilinear(&sys, g, &cfg) {
                Ok((u, rep)) => {
                    report.iter_outer = Some(rep.iter_outer);
                    report.iter_inner = Some(rep.iter_inner_avg);
                    report.alpha = rep.alpha;
                    report.dagger = !(rep.converged.0 && rep.converged.1) || rep.inner_failed;
                    Some(u)
                }
                Err(Error::TimeBudget) => None,
                Err(e @ (Error::NewtonDiverged { .. } | Error::Breakdown(_))) => {
                    report.dagger = true;
                    report.note = Some(e.to_string());
                    None
                }
                Err(e) => return Err(e),
            }
        }
    };
    report.time_s = start.elapsed().as_secs_f64();
    match solution {
        Some(u) => {
            let (ef, ea) = errors_against(&problem, &sys, &u);
            report.error_final = ef;
            report.error_all = ea;
            report.final_field = u.block(sys.m() - 1).to_vec();
        }
        None if !report.dagger => {
            report.dash = true;
        }
        None => {}
    }
    if report.dash {
        report.dagger = false;
    }
    if let Some(dir) = &config.out_dir {
        append_run_csv(dir, &report)?;
        if config.dump_spectra {
            let alpha = config
                .alpha
                .unwrap_or_else(|| default_alpha(sys.mesh.tau_tilde));
            write_diagnostics(dir, &sys, alpha)?;
        }
    }
    Ok(report)
}
