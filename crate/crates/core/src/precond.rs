//! Preconditioners for the two subproblems, applied as inverse operators.
//!
//! * [`P1Preconditioner`] keeps the main and first two sub-diagonals of `A11`:
//!   `P1 = tri(A11) ⊗ I_s - I ⊗ B`. In the sine basis every block is diagonal,
//!   so `P1⁻¹` is a block forward substitution with pointwise divisions.
//! * [`PAlphaPreconditioner`] replaces the Toeplitz `A22` by the α-circulant
//!   `A22 + α Ã`, which `Θ_α⁻¹` and a DFT in time diagonalize. Each frequency
//!   then needs one shifted spatial solve `(λ_n I - B) z = r`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::check_len;
use crate::krylov::LinearOperator;
use crate::mesh::WeightTable;
use crate::par::for_each_chunk;
use crate::spatial::SpatialOperator;
use crate::system::{BlockVector, LANE_GROUP};
use crate::{Error, Result};

/// Relative size of the discarded imaginary part above which an α-circulant
/// solve is reported as a breakdown.
pub const IMAG_DISCARD_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct P1Preconditioner {
    /// `a_0^(k,β)`, `k = 1..=M0`.
    pub diag: Vec<f64>,
    /// `A11[k, k-1]`; entry 0 is unused and zero.
    pub sub1: Vec<f64>,
    /// `A11[k, k-2]`; entries 0 and 1 are unused and zero.
    pub sub2: Vec<f64>,
    op: SpatialOperator,
}

impl P1Preconditioner {
    pub fn new(weights: &WeightTable, op: &SpatialOperator) -> Result<Self> {
        let m0 = weights.m0;
        if m0 == 0 {
            return Err(Error::InvalidArgument("P1 needs M0 >= 1".into()));
        }
        let diag: Vec<f64> = (0..m0).map(|k| weights.a11(k, k)).collect();
        let sub1 = (0..m0)
            .map(|k| if k >= 1 { weights.a11(k, k - 1) } else { 0.0 })
            .collect();
        let sub2 = (0..m0)
            .map(|k| if k >= 2 { weights.a11(k, k - 2) } else { 0.0 })
            .collect();
        if let Some(k) = diag.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Invariant(format!(
                "non-positive diagonal weight at graded step {}",
                k + 1
            )));
        }
        Ok(Self {
            diag,
            sub1,
            sub2,
            op: op.clone(),
        })
    }

    pub fn m0(&self) -> usize {
        self.diag.len()
    }

    /// Dense `tri(A11)`, row-major `M0 x M0`.
    pub fn tri_matrix(&self) -> Vec<f64> {
        let m0 = self.m0();
        let mut t = vec![0.0; m0 * m0];
        for k in 0..m0 {
            t[k * m0 + k] = self.diag[k];
            if k >= 1 {
                t[k * m0 + k - 1] = self.sub1[k];
            }
            if k >= 2 {
                t[k * m0 + k - 2] = self.sub2[k];
            }
        }
        t
    }

    pub(crate) fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]) {
        let s = self.op.size();
        out.copy_from_slice(v);
        self.op.dst2_blocks(out);
        let mu = &self.op.eig_full;
        for k in 0..self.m0() {
            let (done, rest) = out.split_at_mut(k * s);
            let cur = &mut rest[..s];
            let (d, s1, s2) = (self.diag[k], self.sub1[k], self.sub2[k]);
            match k {
                0 => {
                    for (z, m) in cur.iter_mut().zip(mu) {
                        *z /= d - m;
                    }
                }
                1 => {
                    let p1 = &done[0..s];
                    for ((z, m), a) in cur.iter_mut().zip(mu).zip(p1) {
                        *z = (*z - s1 * a) / (d - m);
                    }
                }
                _ => {
                    let p1 = &done[(k - 1) * s..k * s];
                    let p2 = &done[(k - 2) * s..(k - 1) * s];
                    for (((z, m), a), b) in cur.iter_mut().zip(mu).zip(p1).zip(p2) {
                        *z = (*z - s1 * a - s2 * b) / (d - m);
                    }
                }
            }
        }
        self.op.dst2_blocks(out);
    }

    /// `P1⁻¹ v`.
    pub fn apply_inverse(&self, v: &BlockVector) -> Result<BlockVector> {
        check_len(self.op.size(), v.block_len())?;
        check_len(self.m0(), v.nblocks())?;
        let mut out = BlockVector::zeros(v.nblocks(), v.block_len());
        self.apply_inverse_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `P1 v`.
    pub fn apply(&self, v: &BlockVector) -> Result<BlockVector> {
        check_len(self.op.size(), v.block_len())?;
        check_len(self.m0(), v.nblocks())?;
        let s = v.block_len();
        let mut out = BlockVector::zeros(v.nblocks(), s);
        for k in 0..self.m0() {
            let mut y = self.op.apply_b(v.block(k))?;
            y.iter_mut().for_each(|x| *x = -*x);
            for (lag, coeff) in [(0, self.diag[k]), (1, self.sub1[k]), (2, self.sub2[k])] {
                if lag <= k {
                    for (o, x) in y.iter_mut().zip(v.block(k - lag)) {
                        *o += coeff * x;
                    }
                }
            }
            out.block_mut(k).copy_from_slice(&y);
        }
        Ok(out)
    }
}

impl LinearOperator for P1Preconditioner {
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self.apply_inverse_into(x.as_slice(), y.as_mut_slice());
    }
}

pub fn build_p1(weights: &WeightTable, op: &SpatialOperator) -> Result<P1Preconditioner> {
    P1Preconditioner::new(weights, op)
}

pub fn apply_p1_inverse(p1: &P1Preconditioner, v: &BlockVector) -> Result<BlockVector> {
    p1.apply_inverse(v)
}

/// Default α: `min(1e-4, τ̃ / 2)`.
pub fn default_alpha(tau_tilde: f64) -> f64 {
    1e-4f64.min(0.5 * tau_tilde)
}

pub struct PAlphaPreconditioner {
    pub alpha: f64,
    /// Eigenvalues of the α-circulant `A22^α`, in forward-DFT order.
    pub lambda: Vec<Complex64>,
    /// `α^(k/n)` for `k = 0..n`, i.e. the diagonal of `Θ_α⁻¹`.
    pub theta_inv: Vec<f64>,
    /// First column of `A22`, kept for the forward product.
    pub omega: Vec<f64>,
    /// Solve only half of the frequencies and fill the rest by conjugate symmetry.
    pub half_spectrum: bool,
    op: SpatialOperator,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    breakdown: AtomicBool,
}

impl std::fmt::Debug for PAlphaPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PAlphaPreconditioner")
            .field("alpha", &self.alpha)
            .field("n", &self.lambda.len())
            .field("half_spectrum", &self.half_spectrum)
            .finish()
    }
}

/// `λ_j = Σ_k e^{-2πi jk/n} α^{k/n} ω_k`.
pub fn alpha_circulant_eigenvalues(omega: &[f64], alpha: f64) -> Vec<Complex64> {
    let n = omega.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = omega
        .iter()
        .enumerate()
        .map(|(k, &w)| Complex64::new(alpha.powf(k as f64 / n as f64) * w, 0.0))
        .collect();
    fft.process(&mut buf);
    buf
}

impl PAlphaPreconditioner {
    pub fn new(weights: &WeightTable, op: &SpatialOperator, alpha: f64) -> Result<Self> {
        let n = weights.omega.len();
        if n == 0 {
            return Err(Error::InvalidArgument("P_alpha needs M - M0 >= 1".into()));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let lambda = alpha_circulant_eigenvalues(&weights.omega, alpha);
        if let Some(j) = lambda.iter().position(|l| !(l.re > 0.0)) {
            return Err(Error::Invariant(format!(
                "eigenvalue {j} of the alpha-circulant block has non-positive real part {}",
                lambda[j].re
            )));
        }
        let theta_inv = (0..n).map(|k| alpha.powf(k as f64 / n as f64)).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            alpha,
            lambda,
            theta_inv,
            omega: weights.omega.clone(),
            half_spectrum: true,
            op: op.clone(),
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            breakdown: AtomicBool::new(false),
        })
    }

    pub fn with_full_spectrum(mut self) -> Self {
        self.half_spectrum = false;
        self
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Number of frequencies actually solved in Step (b).
    pub fn solved_frequencies(&self) -> usize {
        if self.half_spectrum {
            (self.n() + 2) / 2
        } else {
            self.n()
        }
    }

    /// Solves `(λ_j - μ_m) z = r` for every time frequency `j` of every
    /// sine mode `m`. `lanes` is mode-major with `n` entries per mode.
    /// Returns the number of frequencies solved per mode.
    pub fn full_spectrum_solve(&self, lanes: &mut [Complex64]) -> usize {
        let n = self.n();
        let mu = &self.op.eig_full;
        for_each_chunk(lanes, n, |m, lane| {
            for (z, l) in lane.iter_mut().zip(&self.lambda) {
                *z /= l - mu[m];
            }
        });
        n
    }

    /// Like [`Self::full_spectrum_solve`] but solves only frequencies
    /// `0..⌈(n+1)/2⌉` and reconstructs the rest as complex conjugates, which
    /// is exact when the lanes are DFTs of real sequences.
    pub fn half_spectrum_solve(&self, lanes: &mut [Complex64]) -> usize {
        let n = self.n();
        let half = (n + 2) / 2;
        let mu = &self.op.eig_full;
        for_each_chunk(lanes, n, |m, lane| {
            for j in 0..half {
                lane[j] /= self.lambda[j] - mu[m];
            }
            for j in half..n {
                lane[j] = lane[n - j].conj();
            }
        });
        half
    }

    pub(crate) fn apply_inverse_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n();
        let s = self.op.size();
        // Step (a): Θ_α⁻¹ scaling; the sine transform commutes with the time DFT
        // and is done on real data first.
        out.copy_from_slice(v);
        for_each_chunk(out, s, |k, block| {
            let c = self.theta_inv[k];
            block.iter_mut().for_each(|x| *x *= c);
        });
        self.op.dst2_blocks(out);
        let mut lanes = vec![Complex64::new(0.0, 0.0); n * s];
        let staged: &[f64] = out;
        for_each_chunk(&mut lanes, LANE_GROUP * n, |g, group| {
            let m0 = g * LANE_GROUP;
            let count = group.len() / n;
            for k in 0..n {
                let row = &staged[k * s + m0..k * s + m0 + count];
                for (q, &x) in row.iter().enumerate() {
                    group[q * n + k] = Complex64::new(x, 0.0);
                }
            }
            let mut scratch =
                vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
            self.forward.process_with_scratch(group, &mut scratch);
        });
        // Step (b)
        if self.half_spectrum {
            self.half_spectrum_solve(&mut lanes);
        } else {
            self.full_spectrum_solve(&mut lanes);
        }
        // Step (c)
        let inv_n = 1.0 / n as f64;
        for_each_chunk(&mut lanes, LANE_GROUP * n, |_, group| {
            let mut scratch =
                vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
            self.inverse.process_with_scratch(group, &mut scratch);
            group.iter_mut().for_each(|z| *z *= inv_n);
        });
        let mut imag = 0.0;
        let mut real = 0.0;
        for (m, lane) in lanes.chunks_exact(n).enumerate() {
            for (k, z) in lane.iter().enumerate() {
                out[k * s + m] = z.re;
                imag += z.im * z.im;
                real += z.re * z.re;
            }
        }
        self.op.dst2_blocks(out);
        for_each_chunk(out, s, |k, block| {
            let c = 1.0 / self.theta_inv[k];
            block.iter_mut().for_each(|x| *x *= c);
        });
        if imag.sqrt() > IMAG_DISCARD_TOL * real.sqrt() {
            return Err(Error::Breakdown(format!(
                "alpha-circulant solve left an imaginary part of relative size {:e}",
                (imag / real).sqrt()
            )));
        }
        Ok(())
    }

    /// `P_α⁻¹ v`.
    pub fn apply_inverse(&self, v: &BlockVector) -> Result<BlockVector> {
        check_len(self.op.size(), v.block_len())?;
        check_len(self.n(), v.nblocks())?;
        let mut out = BlockVector::zeros(v.nblocks(), v.block_len());
        self.apply_inverse_into(v.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// `P_α v` by direct traversal of the α-circulant.
    pub fn apply(&self, v: &BlockVector) -> Result<BlockVector> {
        check_len(self.op.size(), v.block_len())?;
        check_len(self.n(), v.nblocks())?;
        let n = self.n();
        let s = v.block_len();
        let mut out = BlockVector::zeros(n, s);
        for i in 0..n {
            let mut y = self.op.apply_b(v.block(i))?;
            y.iter_mut().for_each(|x| *x = -*x);
            for j in 0..n {
                let c = if j <= i {
                    self.omega[i - j]
                } else {
                    self.alpha * self.omega[n + i - j]
                };
                for (o, x) in y.iter_mut().zip(v.block(j)) {
                    *o += c * x;
                }
            }
            out.block_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Whether any application through [`LinearOperator`] hit the
    /// imaginary-part threshold since the last call. Clears the flag.
    pub fn take_breakdown(&self) -> bool {
        self.breakdown.swap(false, Ordering::Relaxed)
    }
}

impl LinearOperator for PAlphaPreconditioner {
    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        if self
            .apply_inverse_into(x.as_slice(), y.as_mut_slice())
            .is_err()
        {
            self.breakdown.store(true, Ordering::Relaxed);
        }
    }
}

pub fn build_p_alpha(
    weights: &WeightTable,
    op: &SpatialOperator,
    alpha: f64,
) -> Result<PAlphaPreconditioner> {
    PAlphaPreconditioner::new(weights, op, alpha)
}

pub fn apply_p_alpha_inverse(pa: &PAlphaPreconditioner, v: &BlockVector) -> Result<BlockVector> {
    pa.apply_inverse(v)
}
