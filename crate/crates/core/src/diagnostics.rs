//! Dense oracles and spectral diagnostics for small instances.
//!
//! Everything here assembles explicit matrices or per-mode time matrices and
//! is meant for desk-scale checks only; production solves never call it.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::mesh::WeightTable;
use crate::precond::{P1Preconditioner, PAlphaPreconditioner};
use crate::spatial::SpatialOperator;
use crate::system::{AllAtOnceSystem, BlockVector};
use crate::{Error, Result};

/// Largest `M` accepted by dense assembly.
pub const DENSE_MAX_STEPS: usize = 64;
/// Largest spatial block accepted by dense assembly.
pub const DENSE_MAX_BLOCK: usize = 1024;
/// Largest total dimension accepted by dense assembly.
pub const DENSE_MAX_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockTag {
    M11,
    M21,
    M22,
    /// The whole system matrix.
    Full,
    P1,
    /// `P_α` for the given `α`.
    PAlpha(f64),
}

fn guard(sys: &AllAtOnceSystem, rows: usize) -> Result<()> {
    let s = sys.block_len();
    if sys.m() > DENSE_MAX_STEPS || s > DENSE_MAX_BLOCK || rows * s > DENSE_MAX_DIM {
        return Err(Error::TooLarge(format!(
            "M = {}, block size {s}, dimension {} (limits {DENSE_MAX_STEPS}, {DENSE_MAX_BLOCK}, {DENSE_MAX_DIM})",
            sys.m(),
            rows * s
        )));
    }
    Ok(())
}

/// Dense `B`, assembled column by column from the stencil.
pub fn dense_b(op: &SpatialOperator) -> DMatrix<f64> {
    let s = op.size();
    let mut b = DMatrix::zeros(s, s);
    let mut e = vec![0.0; s];
    let mut col = vec![0.0; s];
    for j in 0..s {
        e[j] = 1.0;
        op.apply_b_into(&e, &mut col);
        b.set_column(j, &DVector::from_column_slice(&col));
        e[j] = 0.0;
    }
    b
}

/// `T ⊗ I_s - shift_b · (I ⊗ B)` with `T` given entrywise.
fn kron_time(
    rows: usize,
    cols: usize,
    t: impl Fn(usize, usize) -> f64,
    b: Option<&DMatrix<f64>>,
    s: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows * s, cols * s);
    for i in 0..rows {
        for j in 0..cols {
            let c = t(i, j);
            if c != 0.0 {
                for p in 0..s {
                    out[(i * s + p, j * s + p)] = c;
                }
            }
        }
    }
    if let Some(b) = b {
        for k in 0..rows.min(cols) {
            let mut blk = out.view_mut((k * s, k * s), (s, s));
            blk -= b;
        }
    }
    out
}

/// Dense `A22 + α Ã` (lower Toeplitz plus scaled wrap-around).
pub fn alpha_circulant_matrix(omega: &[f64], alpha: f64) -> DMatrix<f64> {
    let n = omega.len();
    DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            omega[i - j]
        } else {
            alpha * omega[n + i - j]
        }
    })
}

/// Dense lower-triangular Toeplitz `A22`.
pub fn toeplitz_matrix(omega: &[f64]) -> DMatrix<f64> {
    alpha_circulant_matrix(omega, 0.0)
}

/// Explicit Kronecker assembly of one block of the system.
pub fn dense_assemble(sys: &AllAtOnceSystem, which: BlockTag) -> Result<DMatrix<f64>> {
    let (m, m0, m2, s) = (sys.m(), sys.m0(), sys.m2(), sys.block_len());
    let rows = match which {
        BlockTag::M11 | BlockTag::P1 => m0,
        BlockTag::M21 | BlockTag::M22 | BlockTag::PAlpha(_) => m2,
        BlockTag::Full => m,
    };
    guard(sys, rows)?;
    let b = dense_b(&sys.op);
    let w = &sys.weights;
    Ok(match which {
        BlockTag::M11 => kron_time(m0, m0, |i, j| w.a(i, j), Some(&b), s),
        BlockTag::M21 => kron_time(m2, m0, |i, j| w.a(i + m0, j), None, s),
        BlockTag::M22 => kron_time(m2, m2, |i, j| w.a(i + m0, j + m0), Some(&b), s),
        BlockTag::Full => kron_time(m, m, |i, j| w.a(i, j), Some(&b), s),
        BlockTag::P1 => kron_time(
            m0,
            m0,
            |i, j| if i >= j && i - j <= 2 { w.a(i, j) } else { 0.0 },
            Some(&b),
            s,
        ),
        BlockTag::PAlpha(alpha) => {
            let a = alpha_circulant_matrix(&w.omega, alpha);
            kron_time(m2, m2, |i, j| a[(i, j)], Some(&b), s)
        }
    })
}

/// Dense product with a [`BlockVector`].
pub fn dense_apply(a: &DMatrix<f64>, v: &BlockVector) -> BlockVector {
    let y = a * DVector::from_column_slice(v.as_slice());
    BlockVector::from_vec(v.block_len(), y.as_slice().to_vec()).expect("shape preserved")
}

/// Dense LU solve, `None` if singular.
pub fn dense_solve(a: &DMatrix<f64>, v: &BlockVector) -> Option<BlockVector> {
    let x = a
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(v.as_slice()))?;
    BlockVector::from_vec(v.block_len(), x.as_slice().to_vec()).ok()
}

#[derive(Debug, Clone, Copy)]
pub struct NilpotencyReport {
    /// `max |λ - 1|` over the eigenvalues of `P1⁻¹ M11`.
    pub max_eig_deviation: f64,
    /// `‖(P1⁻¹M11 - I)^p‖_F / ‖P1⁻¹M11‖_F`.
    pub nilpotent_norm: f64,
    pub power_used: usize,
}

/// Dense `P1⁻¹ M11`, formed column by column with the fast inverse.
pub fn preconditioned_m11(sys: &AllAtOnceSystem, p1: &P1Preconditioner) -> Result<DMatrix<f64>> {
    let m11 = dense_assemble(sys, BlockTag::M11)?;
    let s = sys.block_len();
    let dim = m11.nrows();
    let mut out = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let col = BlockVector::from_vec(s, m11.column(j).iter().copied().collect())?;
        let z = p1.apply_inverse(&col)?;
        out.set_column(j, &DVector::from_column_slice(z.as_slice()));
    }
    Ok(out)
}

/// Checks that `P1⁻¹ M11 - I` is nilpotent of index at most `⌈M0/3⌉`.
///
/// The product is block lower triangular with exactly zero upper blocks, so
/// its eigenvalues are those of the diagonal blocks. Taking them blockwise
/// avoids the `ε^{1/p}` spreading a dense eigensolver shows on Jordan blocks.
pub fn nilpotency_check(sys: &AllAtOnceSystem, p1: &P1Preconditioner) -> Result<NilpotencyReport> {
    let x = preconditioned_m11(sys, p1)?;
    let (m0, s) = (sys.m0(), sys.block_len());
    let mut dev: f64 = 0.0;
    for k in 0..m0 {
        // eigenvalues of (block - I), which avoids a tight cluster at 1
        let blk = x.view((k * s, k * s), (s, s)).clone_owned() - DMatrix::identity(s, s);
        for ev in blk.complex_eigenvalues().iter() {
            dev = dev.max(ev.norm());
        }
    }
    let power = m0.div_ceil(3).max(1);
    let e = &x - DMatrix::identity(x.nrows(), x.ncols());
    let mut p = e.clone();
    for _ in 1..power {
        p = &p * &e;
    }
    Ok(NilpotencyReport {
        max_eig_deviation: dev,
        nilpotent_norm: p.norm() / x.norm(),
        power_used: power,
    })
}

/// `‖(I ⊗ Qᵀ) W (I ⊗ Q)‖_∞` for a dense `W` with `nblocks` time blocks.
pub fn q_inf_norm(op: &SpatialOperator, w: &DMatrix<f64>) -> Result<f64> {
    let s = op.size();
    if w.nrows() != w.ncols() || w.nrows() % s != 0 {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: w.nrows(),
        });
    }
    let nb = w.nrows() / s;
    let q = DMatrix::from_fn(s, s, |p, r| op.q_entry(p, r));
    let mut conj = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..nb {
        for j in 0..nb {
            let blk = w.view((i * s, j * s), (s, s));
            let c = q.transpose() * blk * &q;
            conj.view_mut((i * s, j * s), (s, s)).copy_from(&c);
        }
    }
    Ok(inf_norm(&conj))
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `(A22^α - μ)⁻¹ (A22 - μ)` for one sine mode `μ`.
fn palpha_m22_mode(omega: &[f64], alpha: f64, mu: f64) -> Result<DMatrix<f64>> {
    let n = omega.len();
    let shift = DMatrix::identity(n, n) * mu;
    let pa = alpha_circulant_matrix(omega, alpha) - &shift;
    let m22 = toeplitz_matrix(omega) - shift;
    pa.lu()
        .solve(&m22)
        .ok_or_else(|| Error::Invariant("singular alpha-circulant mode matrix".into()))
}

/// `‖I - P_α⁻¹ M22‖_{Q,∞}` through the sine basis: the conjugated matrix
/// decouples into one `(M - M0) x (M - M0)` time matrix per mode.
pub fn q_inf_norm_palpha(sys: &AllAtOnceSystem, alpha: f64) -> Result<f64> {
    let omega = &sys.weights.omega;
    let n = omega.len();
    let mut modes: Vec<f64> = sys.op.eig_full.clone();
    modes.sort_by(f64::total_cmp);
    modes.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    let mut best: f64 = 0.0;
    for mu in modes {
        let t = DMatrix::identity(n, n) - palpha_m22_mode(omega, alpha, mu)?;
        best = best.max(inf_norm(&t));
    }
    Ok(best)
}

/// Dense counterpart of [`q_inf_norm_palpha`].
pub fn q_inf_norm_palpha_dense(sys: &AllAtOnceSystem, alpha: f64) -> Result<f64> {
    let pa = dense_assemble(sys, BlockTag::PAlpha(alpha))?;
    let m22 = dense_assemble(sys, BlockTag::M22)?;
    let x = pa
        .lu()
        .solve(&m22)
        .ok_or_else(|| Error::Invariant("singular P_alpha".into()))?;
    let w = DMatrix::identity(x.nrows(), x.ncols()) - x;
    q_inf_norm(&sys.op, &w)
}

/// Pieces of the `C α` bound on `‖I - P_α⁻¹M22‖_{Q,∞}`.
#[derive(Debug, Clone, Copy)]
pub struct BoundConstant {
    /// `-ω_1 / ω_0`.
    pub epsilon_max: f64,
    /// `max z̃_n / R(n,n)` over `min (1 - h̃_n / R(n,n))` for `R = L_ε A22^α`.
    pub inverse_factor: f64,
    /// Closed-form double sum `Σ_n ε^n Σ_{k ≥ n'-n} |ω_k|`.
    pub tail_closed_form: f64,
    /// Exact row-sum norm `‖L_ε Ã‖_∞`.
    pub tail_exact: f64,
}

impl BoundConstant {
    /// `C` with the closed-form tail.
    pub fn c(&self) -> f64 {
        self.inverse_factor * self.tail_closed_form
    }

    /// `C` with the exact tail. The closed form drops the first row of
    /// `L_ε Ã`, which carries no power of `ε`, and can undershoot.
    pub fn c_corrected(&self) -> f64 {
        self.inverse_factor * self.tail_exact
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub epsilon_max: f64,
    pub c: f64,
    pub c_corrected: f64,
    /// Measured `‖I - P_α⁻¹M22‖_{Q,∞}`.
    pub lhs: f64,
    /// `C α`.
    pub rhs: f64,
    pub alpha: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }

    pub fn holds_corrected(&self) -> bool {
        self.lhs <= self.c_corrected * self.alpha
    }
}

/// `z̃_n` and `h̃_n` of a square matrix.
fn zh_recursions(w: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = w.nrows();
    let mut z = vec![0.0; n];
    let mut h = vec![0.0; n];
    for i in 0..n {
        let mut zi = 1.0;
        let mut hi: f64 = (i + 1..n).map(|k| w[(i, k)].abs()).sum();
        for k in 0..i {
            let f = w[(i, k)].abs() / w[(k, k)].abs();
            zi += f * z[k];
            hi += f * h[k];
        }
        z[i] = zi;
        h[i] = hi;
    }
    (z, h)
}

/// Evaluates the constant of the `C α` bound for the uniform block.
pub fn bound_constant(weights: &WeightTable, alpha: f64) -> Result<BoundConstant> {
    let omega = &weights.omega;
    let n = omega.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the bound needs at least two uniform steps".into(),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let eps = -omega[1] / omega[0];
    let l = DMatrix::from_fn(n, n, |i, j| {
        if j <= i {
            eps.powi((i - j) as i32)
        } else {
            0.0
        }
    });
    let r = &l * alpha_circulant_matrix(omega, alpha);
    let (z, h) = zh_recursions(&r);
    let mut num: f64 = 0.0;
    let mut den = f64::INFINITY;
    for i in 0..n {
        let d = r[(i, i)];
        num = num.max(z[i] / d);
        let margin = 1.0 - h[i] / d;
        if !(margin > 0.0) {
            return Err(Error::NotDiagonallyDominant {
                row: i + 1,
                value: margin,
            });
        }
        den = den.min(margin);
    }
    let tail_closed_form: f64 = (1..n)
        .map(|p| eps.powi(p as i32) * omega[n - p..n].iter().map(|w| w.abs()).sum::<f64>())
        .sum();
    let wrap = alpha_circulant_matrix(omega, 1.0) - toeplitz_matrix(omega);
    let tail_exact = inf_norm(&(l * wrap));
    Ok(BoundConstant {
        epsilon_max: eps,
        inverse_factor: num / den,
        tail_closed_form,
        tail_exact,
    })
}

/// Evaluates both sides of the `C α` bound on a system.
pub fn bound_report(sys: &AllAtOnceSystem, alpha: f64) -> Result<BoundReport> {
    let bc = bound_constant(&sys.weights, alpha)?;
    let lhs = q_inf_norm_palpha(sys, alpha)?;
    Ok(BoundReport {
        epsilon_max: bc.epsilon_max,
        c: bc.c(),
        c_corrected: bc.c_corrected(),
        lhs,
        rhs: bc.c() * alpha,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumTag {
    M11,
    P1InvM11,
    M22,
    PAlphaInvM22,
}

impl SpectrumTag {
    pub fn name(self) -> &'static str {
        match self {
            SpectrumTag::M11 => "M11",
            SpectrumTag::P1InvM11 => "P1invM11",
            SpectrumTag::M22 => "M22",
            SpectrumTag::PAlphaInvM22 => "PalphaInvM22",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumDump {
    pub tag: SpectrumTag,
    pub eigenvalues: Vec<Complex64>,
    pub beta: f64,
    pub r: f64,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
}

/// Eigenvalues through the sine basis. `M11` and `M22` are block lower
/// triangular with diagonal blocks `a_0 - μ`; `P1⁻¹M11` has only the
/// eigenvalue 1; `P_α⁻¹M22` needs one small eigenproblem per mode.
pub fn spectrum(sys: &AllAtOnceSystem, tag: SpectrumTag, alpha: f64) -> Result<SpectrumDump> {
    let w = &sys.weights;
    let mus = &sys.op.eig_full;
    let eigenvalues = match tag {
        SpectrumTag::M11 => mus
            .iter()
            .flat_map(|&mu| (0..sys.m0()).map(move |k| Complex64::new(w.a(k, k) - mu, 0.0)))
            .collect(),
        SpectrumTag::P1InvM11 => vec![Complex64::new(1.0, 0.0); sys.m0() * mus.len()],
        SpectrumTag::M22 => mus
            .iter()
            .flat_map(|&mu| std::iter::repeat_n(Complex64::new(w.omega[0] - mu, 0.0), sys.m2()))
            .collect(),
        SpectrumTag::PAlphaInvM22 => {
            let mut out = Vec::with_capacity(sys.m2() * mus.len());
            // P_α⁻¹M22 = I - α (A22^α - μ)⁻¹ Ã per mode. The bracket has
            // well separated eigenvalues; the product itself clusters so
            // tightly at 1 that the Schur iteration stalls on it.
            let n = w.omega.len();
            let wrap = alpha_circulant_matrix(&w.omega, 1.0) - toeplitz_matrix(&w.omega);
            for &mu in mus {
                let shifted =
                    alpha_circulant_matrix(&w.omega, alpha) - DMatrix::<f64>::identity(n, n) * mu;
                let e = shifted.lu().solve(&wrap).ok_or_else(|| {
                    Error::Invariant("singular alpha-circulant mode matrix".into())
                })?;
                out.extend(
                    e.complex_eigenvalues()
                        .iter()
                        .map(|z| Complex64::new(1.0, 0.0) - z * alpha),
                );
            }
            out
        }
    };
    Ok(SpectrumDump {
        tag,
        eigenvalues,
        beta: w.beta,
        r: sys.mesh.grading,
        m: sys.m(),
        n: sys.op.nx,
        alpha,
    })
}

/// Largest `|A11[k, k-d]|` for each sub-diagonal `d = 0..M0`.
pub fn decay_profile(sys: &AllAtOnceSystem) -> Vec<f64> {
    let m0 = sys.m0();
    (0..m0)
        .map(|d| {
            (d..m0)
                .map(|k| sys.weights.a11(k, k - d).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Worst relative max-norm deviations between fast paths and their
/// references, over all sampled vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct EquivalenceReport {
    pub samples: usize,
    /// FFT product with `M22` vs direct Toeplitz traversal.
    pub m22_fft_vs_direct: f64,
    /// Fast `P_α⁻¹` vs dense LU; `None` when the instance is too large.
    pub p_alpha_vs_dense: Option<f64>,
    /// Fast `P1⁻¹` vs dense LU; `None` when the instance is too large.
    pub p1_vs_dense: Option<f64>,
    /// Half-spectrum frequency solve vs solving every frequency.
    pub half_vs_full: f64,
}

impl EquivalenceReport {
    pub fn worst(&self) -> f64 {
        [
            Some(self.m22_fft_vs_direct),
            self.p_alpha_vs_dense,
            self.p1_vs_dense,
            Some(self.half_vs_full),
        ]
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
    }
}

fn rel_dev(a: &BlockVector, b: &BlockVector) -> f64 {
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    diff / b.max_abs().max(f64::MIN_POSITIVE)
}

/// Compares every fast path against its reference on `samples` vectors
/// drawn from `draw(len)`.
pub fn fast_path_check(
    sys: &AllAtOnceSystem,
    alpha: f64,
    samples: usize,
    mut draw: impl FnMut(usize) -> Vec<f64>,
) -> Result<EquivalenceReport> {
    let s = sys.block_len();
    let (m0, m2) = (sys.m0(), sys.m2());
    let p1 = P1Preconditioner::new(&sys.weights, &sys.op)?;
    let half = PAlphaPreconditioner::new(&sys.weights, &sys.op, alpha)?;
    let full = PAlphaPreconditioner::new(&sys.weights, &sys.op, alpha)?.with_full_spectrum();
    let lu = |tag| match dense_assemble(sys, tag) {
        Ok(a) => Ok(Some(a.lu())),
        Err(Error::TooLarge(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let p1_lu = lu(BlockTag::P1)?;
    let pa_lu = lu(BlockTag::PAlpha(alpha))?;
    let solve = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, v: &BlockVector| {
        lu.solve(&DVector::from_column_slice(v.as_slice()))
            .and_then(|x| BlockVector::from_vec(s, x.as_slice().to_vec()).ok())
            .ok_or_else(|| Error::Breakdown("dense reference is singular".into()))
    };
    let mut rep = EquivalenceReport {
        samples,
        p1_vs_dense: p1_lu.as_ref().map(|_| 0.0),
        p_alpha_vs_dense: pa_lu.as_ref().map(|_| 0.0),
        ..Default::default()
    };
    for _ in 0..samples {
        let v1 = BlockVector::from_vec(s, draw(m0 * s))?;
        let v2 = BlockVector::from_vec(s, draw(m2 * s))?;
        let fft = sys.apply_m22_fft(&v2)?;
        let direct = sys.apply_m22_direct(&v2)?;
        rep.m22_fft_vs_direct = rep.m22_fft_vs_direct.max(rel_dev(&fft, &direct));
        let fast = half.apply_inverse(&v2)?;
        rep.half_vs_full = rep
            .half_vs_full
            .max(rel_dev(&fast, &full.apply_inverse(&v2)?));
        if let (Some(lu), Some(worst)) = (&pa_lu, rep.p_alpha_vs_dense.as_mut()) {
            *worst = worst.max(rel_dev(&fast, &solve(lu, &v2)?));
        }
        if let (Some(lu), Some(worst)) = (&p1_lu, rep.p1_vs_dense.as_mut()) {
            *worst = worst.max(rel_dev(&p1.apply_inverse(&v1)?, &solve(lu, &v1)?));
        }
    }
    Ok(rep)
}

pub fn write_spectrum_csv(path: &Path, dump: &SpectrumDump) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["re", "im"])?;
    for z in &dump.eigenvalues {
        w.write_record([z.re.to_string(), z.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_decay_csv(path: &Path, profile: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["diagonal_index", "max_abs"])?;
    for (d, v) in profile.iter().enumerate() {
        w.write_record([d.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound_csv(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "alpha,epsilon_max,c,c_corrected,lhs,rhs,holds,holds_corrected"
    )?;
    for r in reports {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.alpha,
            r.epsilon_max,
            r.c,
            r.c_corrected,
            r.lhs,
            r.rhs,
            r.holds(),
            r.holds_corrected()
        )?;
    }
    Ok(())
}
