//! Problem definitions and a name-based registry.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::mesh::TimeMesh;
use crate::spatial::{Rect, SpatialOperator};
use crate::system::{AllAtOnceSystem, Forcing};
use crate::{Error, Result};

pub type InitialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Componentwise nonlinearity `g(u)`.
pub type Nonlinearity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub domain: Rect,
    pub t_final: f64,
    pub kappa: f64,
    pub initial: InitialFn,
    pub source: Option<SpaceTimeFn>,
    pub exact: Option<SpaceTimeFn>,
    pub nonlinearity: Option<Nonlinearity>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("t_final", &self.t_final)
            .field("kappa", &self.kappa)
            .field("has_source", &self.source.is_some())
            .field("has_exact", &self.exact.is_some())
            .field("semilinear", &self.nonlinearity.is_some())
            .finish()
    }
}

impl Problem {
    pub fn is_semilinear(&self) -> bool {
        self.nonlinearity.is_some()
    }

    /// Assembles the all-at-once system on a given time mesh with `N x N` intervals.
    pub fn system_on(&self, mesh: TimeMesh, beta: f64, n: usize) -> Result<AllAtOnceSystem> {
        let op = SpatialOperator::new(n, n, self.domain, self.kappa)?;
        let u0 = op.sample(|x, y| (self.initial)(x, y));
        let forcing = match &self.source {
            Some(f) => Forcing::Function(f.clone()),
            None => Forcing::Zero,
        };
        AllAtOnceSystem::new(mesh, beta, op, u0, forcing)
    }

    /// System on the default hybrid mesh with `M` steps and grading `r`.
    pub fn system(&self, beta: f64, r: f64, m: usize, n: usize) -> Result<AllAtOnceSystem> {
        let mesh = TimeMesh::with_default_split(self.t_final, m, r)?;
        self.system_on(mesh, beta, n)
    }
}

/// `ξ_γ(t)` extended by zero at `t = 0` (valid for `γ > 1`).
fn xi0(gamma_order: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t.powf(gamma_order - 1.0) / statrs::function::gamma::gamma(gamma_order)
    }
}

fn two_bumps(x: f64, y: f64) -> (f64, f64) {
    let r1 = x * x + y * y;
    let r2 = (x - 3.0).powi(2) + (y - 3.0).powi(2);
    (r1, r2)
}

/// Two Gaussian bumps on `[-4, 10]²`, `T = 1`, `κ = 1`, with the manufactured
/// solution `u = (1 + ξ_{1+σ}(t)) / √(2π) [e^{-r₁²/2} + e^{-r₂²/2}]`, `σ = 2.2 - β`.
pub fn problem_example1(beta: f64) -> Result<Problem> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fractional order must lie in (0, 1), got {beta}"
        )));
    }
    let sigma = 2.2 - beta;
    let kappa = 1.0;
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    let exact: SpaceTimeFn = Arc::new(move |x, y, t| {
        let (r1, r2) = two_bumps(x, y);
        (1.0 + xi0(1.0 + sigma, t)) * inv_sqrt_2pi * ((-r1 / 2.0).exp() + (-r2 / 2.0).exp())
    });
    let source: SpaceTimeFn = Arc::new(move |x, y, t| {
        let (r1, r2) = two_bumps(x, y);
        let (e1, e2) = ((-r1 / 2.0).exp(), (-r2 / 2.0).exp());
        xi0(1.0 + sigma - beta, t) * inv_sqrt_2pi * (e1 + e2)
            - kappa
                * (1.0 + xi0(1.0 + sigma, t))
                * inv_sqrt_2pi
                * ((r1 - 2.0) * e1 + (r2 - 2.0) * e2)
    });
    let initial_exact = exact.clone();
    Ok(Problem {
        name: "example1".into(),
        domain: Rect::square(-4.0, 10.0),
        t_final: 1.0,
        kappa,
        initial: Arc::new(move |x, y| initial_exact(x, y, 0.0)),
        source: Some(source),
        exact: Some(exact),
        nonlinearity: None,
    })
}

/// Time-fractional Fisher equation on `[0, π]²`: `g(u) = u(1 - u)`,
/// `u_0 = sin x sin y`, no source.
pub fn problem_example2() -> Problem {
    Problem {
        name: "example2".into(),
        domain: Rect::square(0.0, PI),
        t_final: 1.0,
        kappa: 1.0,
        initial: Arc::new(|x: f64, y: f64| x.sin() * y.sin()),
        source: None,
        exact: None,
        nonlinearity: Some(Arc::new(|u| u * (1.0 - u))),
    }
}

type Factory = Arc<dyn Fn(f64) -> Result<Problem> + Send + Sync>;

/// Maps problem names to constructors taking the fractional order `β`.
#[derive(Clone)]
pub struct ProblemRegistry {
    entries: BTreeMap<String, Factory>,
}

impl Default for ProblemRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProblemRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register("example1", problem_example1);
        reg.register("example2", |_| Ok(problem_example2()));
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(f64) -> Result<Problem> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str, beta: f64) -> Result<Problem> {
        let factory = self.entries.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown problem '{name}', known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        factory(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn example1_initial_value() {
        let p = problem_example1(0.5).unwrap();
        let expected = (1.0 + (-9.0f64).exp()) / (2.0 * PI).sqrt();
        assert_relative_eq!((p.initial)(0.0, 0.0), expected, max_relative = 1e-15);
        let exact = p.exact.as_ref().unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_relative_eq!(exact(0.0, 0.0, t), exact(3.0, 3.0, t), max_relative = 1e-15);
        }
    }

    #[test]
    fn example1_source_matches_manufactured_solution() {
        // high-precision check of the source at (0, 0, 1), β = 0.5, σ = 1.7
        let p = problem_example1(0.5).unwrap();
        let f = p.source.as_ref().unwrap();
        let v = f(0.0, 0.0, 1.0);
        assert_relative_eq!(v, 1.675_248_197_087_433_9, max_relative = 1e-12);
    }

    #[test]
    fn example2_data() {
        let p = problem_example2();
        assert_relative_eq!((p.initial)(PI / 2.0, PI / 2.0), 1.0, max_relative = 1e-15);
        assert!((p.initial)(0.0, 1.0).abs() < 1e-15 && (p.initial)(PI, 2.0).abs() < 1e-15);
        let g = p.nonlinearity.as_ref().unwrap();
        assert_eq!(g(0.0), 0.0);
        assert_eq!(g(1.0), 0.0);
    }

    #[test]
    fn registry_lookup() {
        let mut reg = ProblemRegistry::with_builtins();
        assert!(reg.get("example1", 0.5).is_ok());
        assert!(reg.get("nope", 0.5).is_err());
        reg.register("heat", |_| {
            let mut p = problem_example2();
            p.name = "heat".into();
            p.nonlinearity = None;
            Ok(p)
        });
        assert_eq!(reg.get("heat", 0.3).unwrap().name, "heat");
    }
}
