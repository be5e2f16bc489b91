//! All-at-once solver for two-dimensional Volterra subdiffusion equations.
//!
//! The time interval `[0, T]` is split at `T0`: a graded L1 mesh resolves the
//! initial layer on `[0, T0]` and a uniform mesh covers `[T0, T]`. The resulting
//! space-time system is split into a dense graded block and a block Toeplitz
//! block, which are solved by preconditioned BiCGSTAB with a block lower
//! tridiagonal preconditioner and an α-circulant parallel-in-time
//! preconditioner, respectively. Semilinear problems are handled by a frozen
//! Jacobian Newton iteration around the same linear solvers.
//!
//! Module map:
//!
//! * [`mesh`] – hybrid time mesh and L1 quadrature weights
//! * [`spatial`] – five-point Laplacian and its sine-transform diagonalization
//! * [`system`] – block vectors, the all-at-once system and its fast matvecs
//! * [`precond`] – the two preconditioners as inverse operators
//! * [`krylov`] – right-preconditioned BiCGSTAB
//! * [`solve`] – all-at-once linear solves
//! * [`bfsm`] – sequential time marching, the reference solver
//! * [`newton`] – all-at-once modified Newton for semilinear problems
//! * [`diagnostics`] – dense oracles, spectra and preconditioner bounds
//! * [`problems`] / [`runner`] – problem registry and run orchestration

pub mod bfsm;
pub mod diagnostics;
mod dst;
mod error;
pub mod krylov;
pub mod mesh;
pub mod newton;
mod par;
pub mod precond;
pub mod problems;
pub mod runner;
pub mod solve;
pub mod spatial;
pub mod system;

pub use error::{Error, Result};
pub use krylov::{bicgstab, KrylovConfig, KrylovResult};
pub use mesh::{TimeMesh, WeightTable};
pub use spatial::{Rect, SpatialOperator};
pub use system::{AllAtOnceSystem, BlockVector, Forcing};
