//! Step-by-step time marching. Slow for long horizons but simple, and used
//! as the reference every all-at-once solve is checked against.

use std::time::Instant;

use crate::problems::Nonlinearity;
use crate::system::{AllAtOnceSystem, BlockVector};
use crate::{Error, Result};

/// Per-step modified Newton settings.
#[derive(Debug, Clone, Copy)]
pub struct StepNewtonConfig {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for StepNewtonConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfsmReport {
    pub solution: BlockVector,
    /// Newton iterations used at each step (all ones for linear problems).
    pub newton_counts: Vec<usize>,
}

impl BfsmReport {
    /// Mean Newton count over all steps.
    pub fn iter1(&self) -> f64 {
        if self.newton_counts.is_empty() {
            return 0.0;
        }
        self.newton_counts.iter().sum::<usize>() as f64 / self.newton_counts.len() as f64
    }
}

/// Known part of step `k`: `η_k + f_k - Σ_{l<k} A[k,l] u^l`.
pub(crate) fn known_terms(
    sys: &AllAtOnceSystem,
    k: usize,
    eta: &BlockVector,
    forcing: &BlockVector,
    sol: &BlockVector,
    out: &mut [f64],
) {
    for ((o, e), f) in out.iter_mut().zip(eta.block(k)).zip(forcing.block(k)) {
        *o = e + f;
    }
    for l in 0..k {
        let a = sys.weights.a(k, l);
        for (o, u) in out.iter_mut().zip(sol.block(l)) {
            *o -= a * u;
        }
    }
}

pub(crate) fn stacked_data(sys: &AllAtOnceSystem) -> (BlockVector, BlockVector) {
    let (e1, e2) = sys.rhs_eta();
    let (f1, f2) = sys.assemble_forcing();
    (BlockVector::concat(&e1, &e2), BlockVector::concat(&f1, &f2))
}

fn past_deadline(deadline: Option<Instant>) -> bool {
    deadline.is_some_and(|d| Instant::now() >= d)
}

/// Linear marching: `(a_0^{(k)} I - B) u^k = known terms` for `k = 1..M`.
pub fn bfsm_linear(sys: &AllAtOnceSystem) -> BlockVector {
    bfsm_linear_until(sys, None).expect("no deadline set")
}

/// As [`bfsm_linear`], returning `None` once `deadline` passes.
pub fn bfsm_linear_until(sys: &AllAtOnceSystem, deadline: Option<Instant>) -> Option<BlockVector> {
    let (eta, forcing) = stacked_data(sys);
    let mut sol = BlockVector::zeros(sys.m(), sys.block_len());
    let mut rhs = vec![0.0; sys.block_len()];
    for k in 0..sys.m() {
        if past_deadline(deadline) {
            return None;
        }
        known_terms(sys, k, &eta, &forcing, &sol, &mut rhs);
        sys.op.shifted_solve_in_place(sys.weights.a(k, k), &mut rhs);
        sol.block_mut(k).copy_from_slice(&rhs);
    }
    Some(sol)
}

/// Semilinear marching with `g` applied componentwise.
///
/// Step `k` solves `(a_0 I - B) u - g(u) = known` by the frozen-Jacobian
/// iteration started from `u^{k-1}`, stopping when `‖ΔU‖ ≤ rtol ‖u^(0)‖`
/// (absolute when the start is zero).
pub fn bfsm_semilinear(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    cfg: StepNewtonConfig,
) -> Result<BfsmReport> {
    bfsm_semilinear_until(sys, g, cfg, None)?
        .ok_or_else(|| Error::Breakdown("time budget exceeded".into()))
}

pub fn bfsm_semilinear_until(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    cfg: StepNewtonConfig,
    deadline: Option<Instant>,
) -> Result<Option<BfsmReport>> {
    if cfg.rtol <= 0.0 || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "newton tolerance and iteration cap must be positive".into(),
        ));
    }
    let s = sys.block_len();
    let (eta, forcing) = stacked_data(sys);
    let mut sol = BlockVector::zeros(sys.m(), s);
    let mut known = vec![0.0; s];
    let mut u = sys.u0.clone();
    let mut next = vec![0.0; s];
    let mut counts = Vec::with_capacity(sys.m());
    for k in 0..sys.m() {
        if past_deadline(deadline) {
            return Ok(None);
        }
        known_terms(sys, k, &eta, &forcing, &sol, &mut known);
        let shift = sys.weights.a(k, k);
        let start_norm = norm(&u);
        let scale = if start_norm > 0.0 { start_norm } else { 1.0 };
        let mut iters = 0;
        loop {
            iters += 1;
            // u - (a_0 I - B)^{-1}[(a_0 I - B)u - g(u) - known] = (a_0 I - B)^{-1}[g(u) + known]
            for ((n, &x), &c) in next.iter_mut().zip(&u).zip(&known) {
                *n = g(x) + c;
            }
            sys.op.shifted_solve_in_place(shift, &mut next);
            let delta = u
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            std::mem::swap(&mut u, &mut next);
            let ratio = delta / scale;
            if !ratio.is_finite() {
                return Err(Error::NewtonDiverged {
                    iterations: iters,
                    ratio,
                    step: Some(k + 1),
                });
            }
            if ratio <= cfg.rtol {
                break;
            }
            if iters >= cfg.max_iter {
                return Err(Error::NewtonDiverged {
                    iterations: iters,
                    ratio,
                    step: Some(k + 1),
                });
            }
        }
        sol.block_mut(k).copy_from_slice(&u);
        counts.push(iters);
    }
    Ok(Some(BfsmReport {
        solution: sol,
        newton_counts: counts,
    }))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TimeMesh;
    use crate::spatial::{Rect, SpatialOperator};
    use crate::system::Forcing;
    use std::sync::Arc;

    fn small_system(m: usize, n: usize, forcing: Forcing, u0_zero: bool) -> AllAtOnceSystem {
        let mesh = TimeMesh::with_default_split(1.0, m, 2.0).unwrap();
        let op = SpatialOperator::new(n, n, Rect::square(0.0, 1.0), 1.0).unwrap();
        let u0 = if u0_zero {
            vec![0.0; op.size()]
        } else {
            op.sample(|x, y| (std::f64::consts::PI * x).sin() * y * (1.0 - y))
        };
        AllAtOnceSystem::new(mesh, 0.6, op, u0, forcing).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let sys = small_system(6, 5, Forcing::Zero, true);
        assert_eq!(bfsm_linear(&sys).max_abs(), 0.0);
    }

    #[test]
    fn single_step_formula() {
        // the first step only sees u^0, so its block obeys the one-step formula
        let mesh = TimeMesh::new(1.0, 0.5, 2, 1, 1.0).unwrap();
        let op = SpatialOperator::new(4, 4, Rect::square(0.0, 1.0), 0.5).unwrap();
        let u0 = op.sample(|x, y| x * (1.0 - x) + y);
        let f: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync> = Arc::new(|x, y, t| x * y + t);
        let sys = AllAtOnceSystem::new(mesh, 0.4, op, u0.clone(), Forcing::Function(f)).unwrap();
        let u = bfsm_linear(&sys);
        let a0 = sys.weights.a(0, 0);
        let mut lhs = vec![0.0; u0.len()];
        sys.op.apply_b_into(u.block(0), &mut lhs);
        let f1 = sys.op.sample(|x, y| x * y + 0.5);
        for i in 0..u0.len() {
            let r = a0 * u.block(0)[i] - lhs[i] - f1[i] - a0 * u0[i];
            assert!(r.abs() < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn linear_march_solves_all_at_once_system() {
        let f: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync> =
            Arc::new(|x, y, t| (x + y) * t.sqrt());
        let sys = small_system(10, 6, Forcing::Function(f), false);
        let u = bfsm_linear(&sys);
        let mu = sys.apply_m(&u).unwrap();
        let rhs = sys.rhs_full();
        let mut diff = mu.clone();
        diff.axpy(-1.0, &rhs);
        assert!(
            diff.max_abs() <= 1e-11 * rhs.max_abs(),
            "{}",
            diff.max_abs()
        );
    }

    #[test]
    fn zero_nonlinearity_matches_linear() {
        let sys = small_system(8, 5, Forcing::Zero, false);
        let g: Nonlinearity = Arc::new(|_| 0.0);
        let rep = bfsm_semilinear(&sys, &g, StepNewtonConfig::default()).unwrap();
        let lin = bfsm_linear(&sys);
        let mut d = rep.solution.clone();
        d.axpy(-1.0, &lin);
        assert!(d.max_abs() < 1e-14);
        assert!(rep.newton_counts.iter().all(|&c| c <= 2));
    }

    #[test]
    fn semilinear_step_residual() {
        let sys = small_system(6, 5, Forcing::Zero, false);
        let g: Nonlinearity = Arc::new(|u| u * (1.0 - u));
        let rep = bfsm_semilinear(&sys, &g, StepNewtonConfig::default()).unwrap();
        let u = &rep.solution;
        let mut mu = sys.apply_m(u).unwrap();
        let rhs = sys.rhs_full();
        for (x, (r, v)) in mu
            .as_mut_slice()
            .iter_mut()
            .zip(rhs.as_slice().iter().zip(u.as_slice()))
        {
            *x -= r + v * (1.0 - v);
        }
        assert!(mu.max_abs() < 1e-8, "{}", mu.max_abs());
        assert!(rep.iter1() > 1.0);
    }

    #[test]
    fn divergence_reports_step() {
        let sys = small_system(4, 4, Forcing::Zero, false);
        let g: Nonlinearity = Arc::new(|u| 50.0 * u * u * u + 1e3 * u);
        let err = bfsm_semilinear(&sys, &g, StepNewtonConfig::default()).unwrap_err();
        assert!(
            matches!(err, Error::NewtonDiverged { step: Some(1), .. }),
            "{err}"
        );
    }
}
