//! `subdiff`: run one solver configuration, or check the fast kernels.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::{rngs::StdRng, Rng, SeedableRng};
use subdiff_core::diagnostics::fast_path_check;
use subdiff_core::precond::default_alpha;
use subdiff_core::problems::ProblemRegistry;
use subdiff_core::runner::{run, RunConfig};
use subdiff_core::Error;

const EXIT_NONCONVERGED: u8 = 2;
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(
    name = "subdiff",
    version,
    about = "All-at-once solver for 2D subdiffusion problems"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Compare fast operator paths against direct or dense references on random vectors.
    Check(CheckArgs),
    /// Print the resolved configuration in key = value form and exit.
    ShowConfig(RunArgs),
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// key = value file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem name (example1, example2).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// Mesh grading exponent.
    #[arg(long)]
    r: Option<f64>,
    /// Number of time steps.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Spatial intervals per direction.
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long, value_parser = ["bfsm", "i", "p"])]
    method: Option<String>,
    /// α for the circulant preconditioner (default min(1e-4, τ̃/2)).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    newton_rtol: Option<f64>,
    #[arg(long)]
    inner_rtol: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    #[arg(long)]
    coarsening: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-time budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Also write spectra, decay and bound CSVs (needs --out).
    #[arg(long)]
    dump_spectra: bool,
    /// Output directory for runs.csv and diagnostics.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of random vectors.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Pass threshold on the relative max-norm deviation.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let mut over = |key: &str, v: Option<String>| match v {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        };
        over("problem", self.problem.clone())?;
        over("beta", self.beta.map(|x| x.to_string()))?;
        over("r", self.r.map(|x| x.to_string()))?;
        over("m", self.m.map(|x| x.to_string()))?;
        over("n", self.n.map(|x| x.to_string()))?;
        over("method", self.method.clone())?;
        over("alpha", self.alpha.map(|x| x.to_string()))?;
        over("rtol", self.rtol.map(|x| x.to_string()))?;
        over("newton_rtol", self.newton_rtol.map(|x| x.to_string()))?;
        over("inner_rtol", self.inner_rtol.map(|x| x.to_string()))?;
        over("maxit", self.maxit.map(|x| x.to_string()))?;
        over("coarsening", self.coarsening.map(|x| x.to_string()))?;
        over("threads", self.threads.map(|x| x.to_string()))?;
        over("seed", self.seed.map(|x| x.to_string()))?;
        over("time_budget", self.time_budget.map(|x| x.to_string()))?;
        if self.dump_spectra {
            over("dump_spectra", Some("true".into()))?;
        }
        over("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        cfg.validate()?;
        if cfg.dump_spectra && cfg.out_dir.is_none() {
            return Err(Error::InvalidArgument("--dump-spectra needs --out".into()));
        }
        Ok(cfg)
    }
}

fn init_threads(cfg: &RunConfig) -> anyhow::Result<()> {
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn solve(cfg: &RunConfig) -> anyhow::Result<u8> {
    init_threads(cfg)?;
    let report = run(cfg)?;
    println!("{}", report.summary());
    if let Some(dir) = &cfg.out_dir {
        println!("wrote {}", dir.join("runs.csv").display());
    }
    Ok(if report.converged() {
        0
    } else {
        EXIT_NONCONVERGED
    })
}

fn check(cfg: &RunConfig, samples: usize, tol: f64) -> anyhow::Result<u8> {
    init_threads(cfg)?;
    let problem = ProblemRegistry::with_builtins().get(&cfg.problem, cfg.beta)?;
    let sys = problem.system(cfg.beta, cfg.r, cfg.m, cfg.n)?;
    let alpha = cfg
        .alpha
        .unwrap_or_else(|| default_alpha(sys.mesh.tau_tilde));
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let rep = fast_path_check(&sys, alpha, samples, |len| {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    })?;
    let line = |name: &str, v: Option<f64>| match v {
        Some(v) => println!("{} {name}: {v:.3e}", if v <= tol { "PASS" } else { "FAIL" }),
        None => println!("SKIP {name}: instance too large for a dense reference"),
    };
    println!(
        "{} samples, seed {}, M={} M0={} N={} alpha={alpha:e}",
        rep.samples,
        cfg.seed,
        sys.m(),
        sys.m0(),
        cfg.n
    );
    line("M22 fft vs direct", Some(rep.m22_fft_vs_direct));
    line("P_alpha inverse vs dense LU", rep.p_alpha_vs_dense);
    line("P1 inverse vs dense LU", rep.p1_vs_dense);
    line("half vs full spectrum", Some(rep.half_vs_full));
    Ok(if rep.worst() <= tol {
        0
    } else {
        EXIT_NONCONVERGED
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        None => cli
            .run
            .resolve()
            .map_err(Into::into)
            .and_then(|c| solve(&c)),
        Some(Command::Check(a)) => a
            .run
            .resolve()
            .map_err(Into::into)
            .and_then(|c| check(&c, a.samples, a.tol)),
        Some(Command::ShowConfig(a)) => a.resolve().map_err(Into::into).map(|c| {
            print!("{}", c.to_config_string());
            0
        }),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = matches!(e.downcast_ref::<Error>(), Some(Error::InvalidArgument(_)));
            ExitCode::from(if invalid { EXIT_INVALID } else { 1 })
        }
    }
}
