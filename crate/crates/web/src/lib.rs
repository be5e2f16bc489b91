//! Browser bindings: mesh and weight decay, the spectrum of the
//! circulant-preconditioned uniform block, and a small all-at-once solve.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use subdiff_core::bfsm::{bfsm_linear, bfsm_semilinear, StepNewtonConfig};
use subdiff_core::diagnostics::{decay_profile, spectrum, SpectrumTag};
use subdiff_core::newton::{solve_semilinear, NewtonConfig};
use subdiff_core::precond::default_alpha;
use subdiff_core::problems::ProblemRegistry;
use subdiff_core::solve::{solve_linear, Method};
use subdiff_core::{KrylovConfig, Result, TimeMesh};
use wasm_bindgen::prelude::*;

/// Spatial grid used by the mesh and spectrum views.
const PROBE_N: usize = 4;

#[wasm_bindgen]
pub struct MeshView {
    points: Vec<f64>,
    decay: Vec<f64>,
    m0: usize,
}

#[wasm_bindgen]
impl MeshView {
    /// `t_0 ..= t_M`.
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    /// Largest `|A11|` entry on each sub-diagonal of the graded block.
    #[wasm_bindgen(getter)]
    pub fn decay(&self) -> Vec<f64> {
        self.decay.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn m0(&self) -> usize {
        self.m0
    }
}

pub fn mesh_view_impl(beta: f64, r: f64, m: usize) -> Result<MeshView> {
    let problem = ProblemRegistry::with_builtins().get("example1", beta)?;
    let sys = problem.system(beta, r, m, PROBE_N)?;
    Ok(MeshView {
        points: sys.mesh.points.clone(),
        decay: decay_profile(&sys),
        m0: sys.m0(),
    })
}

#[wasm_bindgen]
pub fn mesh_view(beta: f64, r: f64, m: usize) -> std::result::Result<MeshView, JsError> {
    mesh_view_impl(beta, r, m).map_err(|e| JsError::new(&e.to_string()))
}

/// Eigenvalues of `P_α⁻¹ M22` interleaved as `re, im, re, im, ...`.
/// A non-positive `alpha` selects the default.
pub fn spectrum_impl(beta: f64, r: f64, m: usize, n: usize, alpha: f64) -> Result<Vec<f64>> {
    let problem = ProblemRegistry::with_builtins().get("example1", beta)?;
    let sys = problem.system(beta, r, m, n)?;
    let alpha = if alpha > 0.0 {
        alpha
    } else {
        default_alpha(sys.mesh.tau_tilde)
    };
    let dump = spectrum(&sys, SpectrumTag::PAlphaInvM22, alpha)?;
    Ok(dump.eigenvalues.iter().flat_map(|z| [z.re, z.im]).collect())
}

#[wasm_bindgen]
pub fn preconditioned_spectrum(
    beta: f64,
    r: f64,
    m: usize,
    n: usize,
    alpha: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    spectrum_impl(beta, r, m, n, alpha).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct SolveView {
    field: Vec<f64>,
    side: usize,
    iterations: Vec<f64>,
    error: Option<f64>,
    converged: bool,
}

#[wasm_bindgen]
impl SolveView {
    /// Final-time interior values, x fastest.
    #[wasm_bindgen(getter)]
    pub fn field(&self) -> Vec<f64> {
        self.field.clone()
    }

    /// Interior points per direction.
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Krylov counts per subproblem for linear problems; outer then average
    /// inner counts for semilinear ones; average Newton steps for stepping.
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> Vec<f64> {
        self.iterations.clone()
    }

    /// Final-time max-norm error when an exact solution is known.
    #[wasm_bindgen(getter)]
    pub fn error(&self) -> Option<f64> {
        self.error
    }

    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

pub fn solve_impl(
    problem: &str,
    method: &str,
    beta: f64,
    r: f64,
    m: usize,
    n: usize,
) -> Result<SolveView> {
    let method: Method = method.parse()?;
    let problem = ProblemRegistry::with_builtins().get(problem, beta)?;
    let mut sys = problem.system(beta, r, m, n)?;
    sys.store_forcing();
    let (u, iterations, converged) = match (&problem.nonlinearity, method) {
        (None, Method::Bfsm) => (bfsm_linear(&sys), Vec::new(), true),
        (Some(g), Method::Bfsm) => {
            let rep = bfsm_semilinear(&sys, g, StepNewtonConfig::default())?;
            let it = vec![rep.iter1()];
            (rep.solution, it, true)
        }
        (None, _) => {
            let pre = method == Method::Preconditioned;
            let rep = solve_linear(&sys, pre, None, &KrylovConfig::default())?;
            let ok = rep.converged();
            (rep.solution, vec![rep.iterations.0, rep.iterations.1], ok)
        }
        (Some(g), _) => {
            let cfg = NewtonConfig {
                preconditioned: method == Method::Preconditioned,
                ..NewtonConfig::default()
            };
            let (u, rep) = solve_semilinear(&sys, g, &cfg)?;
            let it = vec![
                rep.iter_outer.0 as f64,
                rep.iter_outer.1 as f64,
                rep.iter_inner_avg.0,
                rep.iter_inner_avg.1,
            ];
            let ok = rep.converged.0 && rep.converged.1 && !rep.inner_failed;
            (u, it, ok)
        }
    };
    let field = u.block(sys.m() - 1).to_vec();
    let error = problem.exact.as_ref().map(|exact| {
        sys.op
            .sample(|x, y| exact(x, y, problem.t_final))
            .iter()
            .zip(&field)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    Ok(SolveView {
        field,
        side: n - 1,
        iterations,
        error,
        converged,
    })
}

#[wasm_bindgen]
pub fn solve(
    problem: &str,
    method: &str,
    beta: f64,
    r: f64,
    m: usize,
    n: usize,
) -> std::result::Result<SolveView, JsError> {
    solve_impl(problem, method, beta, r, m, n).map_err(|e| JsError::new(&e.to_string()))
}

/// Graded-then-uniform mesh points alone, without building a system.
#[wasm_bindgen]
pub fn mesh_points(r: f64, m: usize) -> Vec<f64> {
    TimeMesh::with_default_split(1.0, m, r)
        .map(|mesh| mesh.points)
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_view_shapes() {
        let v = mesh_view_impl(0.5, 2.0, 32).unwrap();
        assert_eq!(v.points.len(), 33);
        assert_eq!(v.decay.len(), v.m0);
        assert!(v.decay.windows(2).skip(1).all(|w| w[1] <= w[0]));
        assert_eq!(mesh_points(2.0, 32), v.points);
        assert!(mesh_points(2.0, 1).is_empty());
    }

    #[test]
    fn spectrum_clusters_at_one() {
        let s = spectrum_impl(0.5, 2.0, 16, 4, 0.0).unwrap();
        assert_eq!(s.len() % 2, 0);
        for z in s.chunks(2) {
            assert!((z[0] - 1.0).hypot(z[1]) < 1e-2, "{z:?}");
        }
    }

    #[test]
    fn solve_linear_and_semilinear() {
        let p = solve_impl("example1", "p", 0.5, 2.0, 16, 8).unwrap();
        assert!(p.converged);
        assert_eq!(p.field.len(), 49);
        assert_eq!(p.iterations.len(), 2);
        let b = solve_impl("example1", "bfsm", 0.5, 2.0, 16, 8).unwrap();
        let diff = p
            .field
            .iter()
            .zip(&b.field)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6);
        assert!(p.error.unwrap() < 0.3);

        let f = solve_impl("example2", "p", 0.9, 2.0, 16, 8).unwrap();
        assert!(f.converged && f.error.is_none());
        assert_eq!(f.iterations.len(), 4);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(solve_impl("example1", "q", 0.5, 2.0, 16, 8).is_err());
        assert!(solve_impl("nope", "p", 0.5, 2.0, 16, 8).is_err());
        assert!(spectrum_impl(1.5, 2.0, 16, 4, 0.0).is_err());
    }
}
