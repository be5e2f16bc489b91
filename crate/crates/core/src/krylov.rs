//! Right-preconditioned BiCGSTAB on [`BlockVector`]s.
//!
//! The preconditioner is applied to the search directions, so the recurrence
//! tracks the true residual `b - A x` and the stopping rule
//! `‖r_k‖₂ / ‖r_0‖₂ ≤ rtol` (with `x_0 = 0`) is preconditioner independent.

use std::time::Instant;

use crate::system::BlockVector;

/// Matrix-free operator `y = A x`.
pub trait LinearOperator {
    fn apply(&self, x: &BlockVector, y: &mut BlockVector);
}

impl<F> LinearOperator for F
where
    F: Fn(&BlockVector, &mut BlockVector),
{
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    pub rtol: f64,
    pub maxit: usize,
    pub record_history: bool,
    /// Abort once this instant has passed.
    pub deadline: Option<Instant>,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            maxit: 1000,
            record_history: false,
            deadline: None,
        }
    }
}

impl KrylovConfig {
    /// Inner tolerance used inside the Newton iterations.
    pub fn newton_inner() -> Self {
        Self {
            rtol: 1e-6,
            ..Self::default()
        }
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Breakdown {
    /// `(r̂, r) = 0` or `(r̂, v) = 0`.
    Rho,
    /// `ω = 0` or `(t, t) = 0`.
    Omega,
    /// More than `maxit` iterations were needed.
    MaxIterations,
    /// The configured deadline passed.
    Deadline,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub solution: BlockVector,
    /// Completed BiCGSTAB steps. A step that converges after its first half
    /// still counts as one.
    pub iterations: f64,
    pub converged: bool,
    /// Relative residuals, one per half step, when requested.
    pub residual_history: Vec<f64>,
    pub relative_residual: f64,
    pub breakdown: Option<Breakdown>,
}

pub fn bicgstab(
    a: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    b: &BlockVector,
    config: &KrylovConfig,
) -> KrylovResult {
    let mut x = BlockVector::zeros(b.nblocks(), b.block_len());
    let mut history = Vec::new();
    let norm_b = b.norm();
    let done = |x: BlockVector, it: usize, converged, rel, brk, history| KrylovResult {
        solution: x,
        iterations: it as f64,
        converged,
        residual_history: history,
        relative_residual: rel,
        breakdown: brk,
    };
    if norm_b == 0.0 {
        return done(x, 0, true, 0.0, None, history);
    }
    if !norm_b.is_finite() {
        return done(x, 0, false, f64::NAN, Some(Breakdown::NonFinite), history);
    }
    let tol = config.rtol * norm_b;
    let mut r = b.clone();
    let r_hat = b.clone();
    let mut p = BlockVector::zeros(b.nblocks(), b.block_len());
    let mut v = p.clone();
    let mut p_hat = p.clone();
    let mut s_hat = p.clone();
    let mut t = p.clone();
    let (mut rho_prev, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut rel = 1.0;

    let precondition = |src: &BlockVector, dst: &mut BlockVector| match precond {
        Some(m) => m.apply(src, dst),
        None => dst.copy_from(src),
    };

    for it in 1..=config.maxit {
        if config.deadline.is_some_and(|d| Instant::now() > d) {
            return done(x, it - 1, false, rel, Some(Breakdown::Deadline), history);
        }
        let rho = r_hat.dot(&r);
        if rho == 0.0 || !rho.is_finite() {
            return done(x, it - 1, false, rel, Some(Breakdown::Rho), history);
        }
        if it == 1 {
            p.copy_from(&r);
        } else {
            let beta = (rho / rho_prev) * (alpha / omega);
            // p = r + β (p - ω v)
            p.axpy(-omega, &v);
            p.scale(beta);
            p.axpy(1.0, &r);
        }
        precondition(&p, &mut p_hat);
        a.apply(&p_hat, &mut v);
        let rv = r_hat.dot(&v);
        if rv == 0.0 || !rv.is_finite() {
            return done(x, it - 1, false, rel, Some(Breakdown::Rho), history);
        }
        alpha = rho / rv;
        // s overwrites r
        r.axpy(-alpha, &v);
        x.axpy(alpha, &p_hat);
        let s_norm = r.norm();
        rel = s_norm / norm_b;
        if config.record_history {
            history.push(rel);
        }
        if s_norm <= tol {
            return done(x, it, true, rel, None, history);
        }
        precondition(&r, &mut s_hat);
        a.apply(&s_hat, &mut t);
        let tt = t.dot(&t);
        if tt == 0.0 {
            return done(x, it, false, rel, Some(Breakdown::Omega), history);
        }
        omega = t.dot(&r) / tt;
        x.axpy(omega, &s_hat);
        r.axpy(-omega, &t);
        let r_norm = r.norm();
        rel = r_norm / norm_b;
        if config.record_history {
            history.push(rel);
        }
        if !r_norm.is_finite() {
            return done(x, it, false, rel, Some(Breakdown::NonFinite), history);
        }
        if r_norm <= tol {
            return done(x, it, true, rel, None, history);
        }
        if omega == 0.0 {
            return done(x, it, false, rel, Some(Breakdown::Omega), history);
        }
        rho_prev = rho;
    }
    done(
        x,
        config.maxit,
        false,
        rel,
        Some(Breakdown::MaxIterations),
        history,
    )
}
