//! All-at-once modified Newton for `M u = G(u) + η + f`, where `G` applies a
//! nonlinearity `g` componentwise. The Jacobian is frozen at the linear part,
//! so every outer step is one preconditioned linear solve with `M11` or `M22`.

use std::time::Instant;

use crate::bfsm::{known_terms, stacked_data};
use crate::krylov::{Breakdown, KrylovConfig, KrylovResult};
use crate::mesh::TimeMesh;
use crate::problems::Nonlinearity;
use crate::solve::{solve_block1, solve_block2, Preconditioners};
use crate::system::{AllAtOnceSystem, BlockVector, Forcing};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    /// Stop once `‖U‖₂ ≤ step_rtol ‖u^(0)‖₂`.
    pub step_rtol: f64,
    pub max_outer: usize,
    pub inner: KrylovConfig,
    /// Time coarsening factor of the initial guess; 1 uses the fine mesh.
    pub coarsening: usize,
    /// Use `P1` / `P_α` inside BiCGSTAB.
    pub preconditioned: bool,
    /// `None` picks the default `α`.
    pub alpha: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            step_rtol: 1e-10,
            max_outer: 200,
            inner: KrylovConfig::newton_inner(),
            coarsening: 2,
            preconditioned: true,
            alpha: None,
        }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_rtol > 0.0) || self.max_outer == 0 || self.coarsening == 0 {
            return Err(Error::InvalidArgument(
                "newton tolerance, iteration cap and coarsening factor must be positive".into(),
            ));
        }
        if !(self.inner.rtol > 0.0 && self.inner.rtol < 1.0) || self.inner.maxit == 0 {
            return Err(Error::InvalidArgument(
                "inner tolerance must lie in (0, 1) with maxit >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemResult {
    pub solution: BlockVector,
    pub outer: usize,
    /// BiCGSTAB iterations of every outer step.
    pub inner_counts: Vec<f64>,
    pub converged: bool,
    /// Final `‖U‖ / ‖u^(0)‖`.
    pub last_ratio: f64,
    /// Set when an inner solve exceeded `maxit`.
    pub inner_failed: bool,
}

impl SubproblemResult {
    pub fn inner_avg(&self) -> f64 {
        if self.inner_counts.is_empty() {
            0.0
        } else {
            self.inner_counts.iter().sum::<f64>() / self.inner_counts.len() as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iter_outer: (usize, usize),
    pub iter_inner_avg: (f64, f64),
    pub converged: (bool, bool),
    /// Some inner BiCGSTAB solve ran past its iteration cap.
    pub inner_failed: bool,
    pub alpha: Option<f64>,
}

fn interpolate_in_time(
    src_times: &[f64],
    src: &BlockVector,
    start: &[f64],
    dst_times: &[f64],
) -> BlockVector {
    // src_times[0] = 0 carries `start`; src block k sits at src_times[k + 1]
    let s = start.len();
    let at = |k: usize| if k == 0 { start } else { src.block(k - 1) };
    let mut out = BlockVector::zeros(dst_times.len(), s);
    let last = src_times.len() - 1;
    for (i, &t) in dst_times.iter().enumerate() {
        let j = src_times.partition_point(|&x| x <= t).clamp(1, last);
        let (t0, t1) = (src_times[j - 1], src_times[j]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (a, b) = (at(j - 1), at(j));
        for ((o, x), y) in out.block_mut(i).iter_mut().zip(a).zip(b) {
            *o = (1.0 - w) * x + w * y;
        }
    }
    out
}

/// Sequential linearized scheme `(a_0 - B) u^k = known + g(u^{k-1})`.
fn linearized_march(sys: &AllAtOnceSystem, g: &Nonlinearity) -> BlockVector {
    let s = sys.block_len();
    let (eta, forcing) = stacked_data(sys);
    let mut sol = BlockVector::zeros(sys.m(), s);
    let mut rhs = vec![0.0; s];
    for k in 0..sys.m() {
        known_terms(sys, k, &eta, &forcing, &sol, &mut rhs);
        let prev = if k == 0 {
            &sys.u0[..]
        } else {
            sol.block(k - 1)
        };
        for (r, &u) in rhs.iter_mut().zip(prev) {
            *r += g(u);
        }
        sys.op.shifted_solve_in_place(sys.weights.a(k, k), &mut rhs);
        sol.block_mut(k).copy_from_slice(&rhs);
    }
    sol
}

/// Initial guess from the linearized scheme on a mesh coarsened in time by
/// `factor`, interpolated linearly onto the fine mesh. Falls back to zero
/// when either part of the mesh has fewer than two steps.
pub fn coarse_initial_guess(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    factor: usize,
) -> Result<(BlockVector, BlockVector)> {
    let (m, m0, s) = (sys.m(), sys.m0(), sys.block_len());
    if m0 < 2 || m - m0 < 2 {
        return Ok((BlockVector::zeros(m0, s), BlockVector::zeros(m - m0, s)));
    }
    if factor <= 1 {
        return Ok(linearized_march(sys, g).split_at(m0));
    }
    let m0c = m0.div_ceil(factor);
    let mc = (m0c + 1).max(m.div_ceil(factor));
    let mesh = &sys.mesh;
    let coarse_mesh = TimeMesh::new(mesh.t_final, mesh.t_split, mc, m0c, mesh.grading)?;
    let forcing = match &sys.forcing {
        Forcing::Stored(f) => Forcing::Stored(interpolate_in_time(
            &mesh.points,
            f,
            f.block(0),
            &coarse_mesh.points[1..],
        )),
        other => other.clone(),
    };
    let coarse = AllAtOnceSystem::new(
        coarse_mesh,
        sys.beta(),
        sys.op.clone(),
        sys.u0.clone(),
        forcing,
    )?;
    let coarse_sol = linearized_march(&coarse, g);
    let fine = interpolate_in_time(&coarse.mesh.points, &coarse_sol, &sys.u0, &mesh.points[1..]);
    Ok(fine.split_at(m0))
}

fn add_g(u: &BlockVector, g: &Nonlinearity, out: &mut BlockVector) {
    for (o, &x) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
        *o += g(x);
    }
}

/// Shared outer loop: `residual(u)` must return `M u - G(u) - rhs`.
fn modified_newton(
    guess: BlockVector,
    cfg: &NewtonConfig,
    mut residual: impl FnMut(&BlockVector) -> Result<BlockVector>,
    mut solve: impl FnMut(&BlockVector) -> Result<KrylovResult>,
) -> Result<SubproblemResult> {
    let mut u = guess;
    let start = u.norm();
    let scale = if start > 0.0 { start } else { 1.0 };
    let mut counts = Vec::new();
    let mut inner_failed = false;
    let mut ratio = f64::INFINITY;
    for outer in 1..=cfg.max_outer {
        let res = residual(&u)?;
        let kr = solve(&res)?;
        match kr.breakdown {
            Some(Breakdown::Deadline) => return Err(Error::TimeBudget),
            Some(Breakdown::MaxIterations) => inner_failed = true,
            _ => {}
        }
        counts.push(kr.iterations);
        u.axpy(-1.0, &kr.solution);
        ratio = kr.solution.norm() / scale;
        if !ratio.is_finite() {
            return Err(Error::NewtonDiverged {
                iterations: outer,
                ratio,
                step: None,
            });
        }
        if ratio <= cfg.step_rtol {
            return Ok(SubproblemResult {
                solution: u,
                outer,
                inner_counts: counts,
                converged: true,
                last_ratio: ratio,
                inner_failed,
            });
        }
    }
    Ok(SubproblemResult {
        solution: u,
        outer: cfg.max_outer,
        inner_counts: counts,
        converged: false,
        last_ratio: ratio,
        inner_failed,
    })
}

/// Newton on `M11 u1 - G(u1) = η1 + f1`.
pub fn newton_subproblem1(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    guess: BlockVector,
    pre: Option<&Preconditioners>,
    cfg: &NewtonConfig,
) -> Result<SubproblemResult> {
    let rhs = sys.rhs1();
    modified_newton(
        guess,
        cfg,
        |u| {
            let mut r = sys.apply_m11(u)?;
            r.axpy(-1.0, &rhs);
            let mut gu = BlockVector::zeros(u.nblocks(), u.block_len());
            add_g(u, g, &mut gu);
            r.axpy(-1.0, &gu);
            Ok(r)
        },
        |r| Ok(solve_block1(sys, pre, r, &cfg.inner)),
    )
}

/// Newton on `M22 u2 - G(u2) = η2 + f2 - M21 u1`.
pub fn newton_subproblem2(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    u1: &BlockVector,
    guess: BlockVector,
    pre: Option<&Preconditioners>,
    cfg: &NewtonConfig,
) -> Result<SubproblemResult> {
    let rhs = sys.rhs2(u1)?;
    modified_newton(
        guess,
        cfg,
        |u| {
            let mut r = sys.apply_m22(u)?;
            r.axpy(-1.0, &rhs);
            let mut gu = BlockVector::zeros(u.nblocks(), u.block_len());
            add_g(u, g, &mut gu);
            r.axpy(-1.0, &gu);
            Ok(r)
        },
        |r| solve_block2(sys, pre, r, &cfg.inner),
    )
}

/// Solves both subproblems in sequence. Non-convergence is reported through
/// the flags rather than as an error.
pub fn solve_semilinear(
    sys: &AllAtOnceSystem,
    g: &Nonlinearity,
    cfg: &NewtonConfig,
) -> Result<(BlockVector, NewtonReport)> {
    cfg.validate()?;
    let pre = if cfg.preconditioned {
        Some(Preconditioners::new(sys, cfg.alpha)?)
    } else {
        None
    };
    let (g1, g2) = coarse_initial_guess(sys, g, cfg.coarsening)?;
    let r1 = newton_subproblem1(sys, g, g1, pre.as_ref(), cfg)?;
    let r2 = if sys.m2() > 0 {
        newton_subproblem2(sys, g, &r1.solution, g2, pre.as_ref(), cfg)?
    } else {
        SubproblemResult {
            solution: g2,
            outer: 0,
            inner_counts: Vec::new(),
            converged: true,
            last_ratio: 0.0,
            inner_failed: false,
        }
    };
    let report = NewtonReport {
        iter_outer: (r1.outer, r2.outer),
        iter_inner_avg: (r1.inner_avg(), r2.inner_avg()),
        converged: (r1.converged, r2.converged),
        inner_failed: r1.inner_failed || r2.inner_failed,
        alpha: pre.as_ref().and_then(Preconditioners::alpha),
    };
    Ok((BlockVector::concat(&r1.solution, &r2.solution), report))
}

/// Convenience deadline for [`NewtonConfig::inner`].
pub fn with_deadline(mut cfg: NewtonConfig, deadline: Option<Instant>) -> NewtonConfig {
    cfg.inner.deadline = deadline;
    cfg
}
