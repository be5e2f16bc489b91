//! All-at-once solution of the linear system: first the graded block
//! `M11 u1 = η1 + f1`, then the Toeplitz block `M22 u2 = η2 + f2 - M21 u1`.

use std::fmt;
use std::str::FromStr;

use crate::krylov::{bicgstab, Breakdown, KrylovConfig, KrylovResult, LinearOperator};
use crate::precond::{default_alpha, P1Preconditioner, PAlphaPreconditioner};
use crate::system::{AllAtOnceSystem, BlockVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Sequential time marching.
    Bfsm,
    /// All-at-once BiCGSTAB without preconditioning.
    Unpreconditioned,
    /// All-at-once BiCGSTAB with `P1` and `P_α`.
    Preconditioned,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Bfsm => "bfsm",
            Method::Unpreconditioned => "i",
            Method::Preconditioned => "p",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bfsm" => Ok(Method::Bfsm),
            "i" | "unpreconditioned" => Ok(Method::Unpreconditioned),
            "p" | "preconditioned" => Ok(Method::Preconditioned),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected bfsm, i or p)"
            ))),
        }
    }
}

/// Preconditioners for both subproblems, built once per system.
pub struct Preconditioners {
    pub p1: P1Preconditioner,
    pub p_alpha: Option<PAlphaPreconditioner>,
}

impl Preconditioners {
    /// `alpha = None` picks `min(1e-4, τ̃/2)`.
    pub fn new(sys: &AllAtOnceSystem, alpha: Option<f64>) -> Result<Self> {
        let p1 = P1Preconditioner::new(&sys.weights, &sys.op)?;
        let p_alpha = if sys.m2() > 0 {
            let alpha = alpha.unwrap_or_else(|| default_alpha(sys.mesh.tau_tilde));
            Some(PAlphaPreconditioner::new(&sys.weights, &sys.op, alpha)?)
        } else {
            None
        };
        Ok(Self { p1, p_alpha })
    }

    pub fn alpha(&self) -> Option<f64> {
        self.p_alpha.as_ref().map(|p| p.alpha)
    }
}

pub(crate) struct M11<'a>(pub &'a AllAtOnceSystem);
pub(crate) struct M22<'a>(pub &'a AllAtOnceSystem);

impl LinearOperator for M11<'_> {
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self.0.apply_m11_into(x.as_slice(), y.as_mut_slice());
    }
}

impl LinearOperator for M22<'_> {
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self.0.apply_m22_into(x.as_slice(), y.as_mut_slice());
    }
}

/// BiCGSTAB on `M11 x = b`.
pub(crate) fn solve_block1(
    sys: &AllAtOnceSystem,
    pre: Option<&Preconditioners>,
    b: &BlockVector,
    cfg: &KrylovConfig,
) -> KrylovResult {
    match pre {
        // tri(A11) = A11, so one preconditioner application is exact
        Some(p) if sys.m0() <= 3 => {
            let solution =
                p.p1.apply_inverse(b)
                    .expect("block shape checked by caller");
            let done = b.norm() > 0.0;
            KrylovResult {
                solution,
                iterations: if done { 1.0 } else { 0.0 },
                converged: true,
                residual_history: Vec::new(),
                relative_residual: 0.0,
                breakdown: None,
            }
        }
        _ => bicgstab(&M11(sys), pre.map(|p| &p.p1 as &dyn LinearOperator), b, cfg),
    }
}

/// BiCGSTAB on `M22 x = b`; fails if the `P_α` solve lost accuracy.
pub(crate) fn solve_block2(
    sys: &AllAtOnceSystem,
    pre: Option<&Preconditioners>,
    b: &BlockVector,
    cfg: &KrylovConfig,
) -> Result<KrylovResult> {
    let pa = pre.and_then(|p| p.p_alpha.as_ref());
    let res = bicgstab(&M22(sys), pa.map(|p| p as &dyn LinearOperator), b, cfg);
    if pa.is_some_and(|p| p.take_breakdown()) {
        return Err(Error::Breakdown(
            "alpha-circulant preconditioner left a large imaginary part".into(),
        ));
    }
    Ok(res)
}

#[derive(Debug, Clone)]
pub struct LinearSolveReport {
    pub solution: BlockVector,
    /// BiCGSTAB iterations of the two subproblems.
    pub iterations: (f64, f64),
    pub converged: (bool, bool),
    /// First breakdown reason met, if any.
    pub breakdown: Option<Breakdown>,
    pub alpha: Option<f64>,
}

impl LinearSolveReport {
    pub fn converged(&self) -> bool {
        self.converged.0 && self.converged.1
    }
}

/// Solves the full linear system block by block. With
/// `preconditioned = false` both subproblems run plain BiCGSTAB.
pub fn solve_linear(
    sys: &AllAtOnceSystem,
    preconditioned: bool,
    alpha: Option<f64>,
    cfg: &KrylovConfig,
) -> Result<LinearSolveReport> {
    let pre = if preconditioned {
        Some(Preconditioners::new(sys, alpha)?)
    } else {
        None
    };
    let r1 = solve_block1(sys, pre.as_ref(), &sys.rhs1(), cfg);
    if r1.breakdown == Some(Breakdown::Deadline) {
        return Err(Error::TimeBudget);
    }
    let (u2, it2, conv2, brk2) = if sys.m2() > 0 {
        let rhs2 = sys.rhs2(&r1.solution)?;
        let r2 = solve_block2(sys, pre.as_ref(), &rhs2, cfg)?;
        if r2.breakdown == Some(Breakdown::Deadline) {
            return Err(Error::TimeBudget);
        }
        (r2.solution, r2.iterations, r2.converged, r2.breakdown)
    } else {
        (BlockVector::zeros(0, sys.block_len()), 0.0, true, None)
    };
    Ok(LinearSolveReport {
        solution: BlockVector::concat(&r1.solution, &u2),
        iterations: (r1.iterations, it2),
        converged: (r1.converged, conv2),
        breakdown: r1.breakdown.or(brk2),
        alpha: pre.as_ref().and_then(Preconditioners::alpha),
    })
}
