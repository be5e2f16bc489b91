//! Hybrid graded/uniform time mesh and the L1 quadrature weights.
//!
//! The mesh is graded, `t_k = T0 (k/M0)^r`, on `[0, T0]` and uniform with step
//! `τ̃ = (T - T0)/(M - M0)` on `[T0, T]`. The L1 weights on that mesh fill the
//! lower-triangular time matrix `A`, which splits as
//!
//! ```text
//! A = [ A11   0  ]
//!     [ A21  A22 ]
//! ```
//!
//! with `A11` dense (graded part), `A21` dense coupling, and `A22` lower
//! triangular Toeplitz with generator `ω`.

use statrs::function::gamma::gamma;

use crate::{Error, Result};

/// `ξ_γ(t) = t^(γ-1) / Γ(γ)` for `t > 0`.
pub fn kernel_xi(gamma_order: f64, t: f64) -> Result<f64> {
    if !(gamma_order > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel order must be positive, got {gamma_order}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(t));
    }
    Ok(t.powf(gamma_order - 1.0) / gamma(gamma_order))
}

/// `(y + d)^p - y^p` without cancellation when `d << y`.
fn pow_increment(y: f64, d: f64, p: f64) -> f64 {
    if y == 0.0 {
        d.powf(p)
    } else {
        y.powf(p) * (p * (d / y).ln_1p()).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    pub t_final: f64,
    pub t_split: f64,
    pub m: usize,
    pub m0: usize,
    pub grading: f64,
    /// `t_0 ..= t_M`.
    pub points: Vec<f64>,
    /// `τ_1 ..= τ_M`, stored at indices `0..M`.
    pub steps: Vec<f64>,
    pub tau_tilde: f64,
}

impl TimeMesh {
    pub fn new(t_final: f64, t_split: f64, m: usize, m0: usize, grading: f64) -> Result<Self> {
        if !(t_split > 0.0 && t_split < t_final) {
            return Err(Error::InvalidArgument(format!(
                "split time must satisfy 0 < T0 < T, got T0 = {t_split}, T = {t_final}"
            )));
        }
        if m0 < 1 || m0 >= m {
            return Err(Error::InvalidArgument(format!(
                "graded step count must satisfy 1 <= M0 < M, got M0 = {m0}, M = {m}"
            )));
        }
        if !(grading >= 1.0) || !grading.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grading exponent must be >= 1, got {grading}"
            )));
        }
        let tau_tilde = (t_final - t_split) / (m - m0) as f64;
        let mut points = Vec::with_capacity(m + 1);
        for k in 0..=m0 {
            points.push(t_split * (k as f64 / m0 as f64).powf(grading));
        }
        points[m0] = t_split;
        for k in 1..=(m - m0) {
            points.push(t_split + k as f64 * tau_tilde);
        }
        points[m] = t_final;
        let steps = points.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            t_final,
            t_split,
            m,
            m0,
            grading,
            points,
            steps,
            tau_tilde,
        })
    }

    /// Mesh with the default split of [`default_split`], `T0` scaled by `T`.
    pub fn with_default_split(t_final: f64, m: usize, grading: f64) -> Result<Self> {
        let (t0, m0) = default_split(m, grading)?;
        Self::new(t_final, t0 * t_final, m, m0, grading)
    }

    /// Number of uniform steps, `M - M0`.
    pub fn uniform_steps(&self) -> usize {
        self.m - self.m0
    }
}

pub fn build_mesh(
    t_final: f64,
    t_split: f64,
    m: usize,
    m0: usize,
    grading: f64,
) -> Result<TimeMesh> {
    TimeMesh::new(t_final, t_split, m, m0, grading)
}

/// Split recipe used in the numerical experiments: `T0 = 2^-r` and
/// `M0 = ⌈r M / (2^r - 1 + r)⌉`, clamped to `[1, M - 1]`.
pub fn default_split(m: usize, grading: f64) -> Result<(f64, usize)> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need M >= 2, got {m}")));
    }
    if !(grading >= 1.0) || !grading.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "grading exponent must be >= 1, got {grading}"
        )));
    }
    let t0 = 2f64.powf(-grading);
    let ratio = grading * m as f64 / (2f64.powf(grading) - 1.0 + grading);
    // Guard against ratios that are integers up to rounding.
    let m0 = (ratio - 1e-9).ceil().max(1.0) as usize;
    Ok((t0, m0.clamp(1, m - 1)))
}

/// L1 weights `a_j^(k,β)` for `j = 0..k`, i.e. entry `j` belongs to the
/// interval `[t_{k-j-1}, t_{k-j}]`. `k` is 1-based and must lie in `1..=M`.
pub fn graded_weights(mesh: &TimeMesh, beta: f64, k: usize) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if k < 1 || k > mesh.m {
        return Err(Error::InvalidArgument(format!(
            "step index must lie in 1..={}, got {k}",
            mesh.m
        )));
    }
    let p = 1.0 - beta;
    let scale = 1.0 / gamma(2.0 - beta);
    let tk = mesh.points[k];
    let row = (0..k)
        .map(|j| {
            let l = k - j;
            let tau = mesh.steps[l - 1];
            // distance from t_k to the right end of interval l; ξ_{2-β}(0) = 0
            let y = if l == k { 0.0 } else { tk - mesh.points[l] };
            scale * pow_increment(y, tau, p) / tau
        })
        .collect();
    Ok(row)
}

/// Uniform-mesh weights `ω_0 ..= ω_{n-1}` with `ω_0 = b_0`, `ω_l = b_l - b_{l-1}`.
pub fn uniform_weights(beta: f64, tau_tilde: f64, n: usize) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if !(tau_tilde > 0.0) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need τ̃ > 0 and n >= 1, got τ̃ = {tau_tilde}, n = {n}"
        )));
    }
    let b = uniform_b(beta, tau_tilde, n);
    let mut omega = Vec::with_capacity(n);
    omega.push(b[0]);
    omega.extend(b.windows(2).map(|w| w[1] - w[0]));
    Ok(omega)
}

/// `b_l = τ̃^-β / Γ(2-β) [(l+1)^(1-β) - l^(1-β)]`, `l = 0..n`.
pub fn uniform_b(beta: f64, tau_tilde: f64, n: usize) -> Vec<f64> {
    let p = 1.0 - beta;
    let scale = tau_tilde.powf(-beta) / gamma(2.0 - beta);
    (0..n)
        .map(|l| scale * pow_increment(l as f64, 1.0, p))
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "fractional order must lie in (0, 1), got {beta}"
        )))
    }
}

/// Entries of row `k` (1-based) of the full time matrix `A`, columns `1..=k`.
fn a_row(mesh: &TimeMesh, beta: f64, k: usize) -> Result<(Vec<f64>, f64)> {
    let a = graded_weights(mesh, beta, k)?;
    let mut row = vec![0.0; k];
    for l in 1..k {
        row[l - 1] = a[k - l] - a[k - l - 1];
    }
    row[k - 1] = a[0];
    Ok((row, a[k - 1]))
}

/// All coefficients of the time matrix `A`, stored by block.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub beta: f64,
    pub m: usize,
    pub m0: usize,
    /// `M0 x M0`, row-major, lower triangular.
    pub a11: Vec<f64>,
    /// `(M - M0) x M0`, row-major.
    pub a21: Vec<f64>,
    /// First column of the Toeplitz block `A22`.
    pub omega: Vec<f64>,
    /// `a_{k-1}^(k,β)` for `k = 1..=M`: multipliers of `u^0` in `η`.
    pub eta_coeffs: Vec<f64>,
}

impl WeightTable {
    pub fn new(mesh: &TimeMesh, beta: f64) -> Result<Self> {
        let (m, m0) = (mesh.m, mesh.m0);
        let n2 = m - m0;
        let mut a11 = vec![0.0; m0 * m0];
        let mut a21 = vec![0.0; n2 * m0];
        let mut eta_coeffs = Vec::with_capacity(m);
        let omega = uniform_weights(beta, mesh.tau_tilde, n2)?;
        for k in 1..=m {
            let (row, eta) = a_row(mesh, beta, k)?;
            eta_coeffs.push(eta);
            if k <= m0 {
                a11[(k - 1) * m0..(k - 1) * m0 + k].copy_from_slice(&row);
            } else {
                let i = k - m0 - 1;
                a21[i * m0..(i + 1) * m0].copy_from_slice(&row[..m0]);
                debug_assert!(row[m0..].iter().enumerate().all(|(c, &v)| {
                    let w = omega[k - m0 - 1 - c];
                    (v - w).abs() <= 1e-9 * omega[0]
                }));
            }
        }
        Ok(Self {
            beta,
            m,
            m0,
            a11,
            a21,
            omega,
            eta_coeffs,
        })
    }

    pub fn a11(&self, k: usize, l: usize) -> f64 {
        self.a11[k * self.m0 + l]
    }

    pub fn a21(&self, k: usize, l: usize) -> f64 {
        self.a21[k * self.m0 + l]
    }

    /// Entry `A[k, l]` of the full time matrix, both indices 0-based.
    pub fn a(&self, k: usize, l: usize) -> f64 {
        let m0 = self.m0;
        if l > k {
            0.0
        } else if k < m0 {
            self.a11(k, l)
        } else if l < m0 {
            self.a21(k - m0, l)
        } else {
            self.omega[k - l]
        }
    }

    /// Diagonal of `A11`, `a_0^(k,β)` for `k = 1..=M0`.
    pub fn a11_diagonal(&self) -> Vec<f64> {
        (0..self.m0).map(|k| self.a11(k, k)).collect()
    }

    /// Full `M x M` time matrix, row-major. Intended for small oracles.
    pub fn dense_a(&self) -> Vec<f64> {
        let (m, m0) = (self.m, self.m0);
        let mut a = vec![0.0; m * m];
        for k in 0..m0 {
            a[k * m..k * m + m0].copy_from_slice(&self.a11[k * m0..(k + 1) * m0]);
        }
        for i in 0..m - m0 {
            let k = m0 + i;
            a[k * m..k * m + m0].copy_from_slice(&self.a21[i * m0..(i + 1) * m0]);
            for j in 0..=i {
                a[k * m + m0 + j] = self.omega[i - j];
            }
        }
        a
    }
}

pub fn assemble_weight_table(mesh: &TimeMesh, beta: f64) -> Result<WeightTable> {
    WeightTable::new(mesh, beta)
}
