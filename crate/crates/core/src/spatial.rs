//! Five-point Laplacian `B = κ (I_y ⊗ B_x + B_y ⊗ I_x)` with homogeneous
//! Dirichlet boundaries and its sine-basis diagonalization `B = Q D_B Qᵀ`.
//!
//! Fields are stored x-fastest: entry `(j - 1)(Nx - 1) + (i - 1)` holds the
//! value at interior node `(x_i, y_j)`.

use std::f64::consts::PI;

use crate::dst::Dst2;
use crate::error::check_len;
use crate::par::for_each_chunk;
use crate::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, lo, hi)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialOperator {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rect,
    pub hx: f64,
    pub hy: f64,
    pub kappa: f64,
    /// `λ_i^{Bx}`, `i = 1..Nx`, κ included.
    pub eig_x: Vec<f64>,
    pub eig_y: Vec<f64>,
    /// `λ_i^{Bx} + λ_j^{By}` in x-fastest order.
    pub eig_full: Vec<f64>,
    dst: Dst2,
}

fn laplacian_eigs(n: usize, h: f64, kappa: f64) -> Vec<f64> {
    (1..n)
        .map(|i| {
            let s = (i as f64 * PI / (2.0 * n as f64)).sin();
            -4.0 * kappa / (h * h) * s * s
        })
        .collect()
}

impl SpatialOperator {
    pub fn new(nx: usize, ny: usize, domain: Rect, kappa: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two intervals per direction, got Nx = {nx}, Ny = {ny}"
            )));
        }
        let (wx, wy) = (domain.x1 - domain.x0, domain.y1 - domain.y0);
        if !(wx > 0.0 && wy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain must have positive width and height, got {wx} x {wy}"
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diffusion coefficient must be positive, got {kappa}"
            )));
        }
        let hx = wx / nx as f64;
        let hy = wy / ny as f64;
        let eig_x = laplacian_eigs(nx, hx, kappa);
        let eig_y = laplacian_eigs(ny, hy, kappa);
        let eig_full = eig_y
            .iter()
            .flat_map(|&ly| eig_x.iter().map(move |&lx| lx + ly))
            .collect();
        Ok(Self {
            nx,
            ny,
            domain,
            hx,
            hy,
            kappa,
            eig_x,
            eig_y,
            eig_full,
            dst: Dst2::new(nx, ny),
        })
    }

    /// Number of interior unknowns `(Nx - 1)(Ny - 1)`.
    pub fn size(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    /// Coordinates of interior node `(i, j)`, both 1-based.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.domain.x0 + i as f64 * self.hx,
            self.domain.y0 + j as f64 * self.hy,
        )
    }

    /// Evaluates `f` at all interior nodes in field order.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size());
        for j in 1..self.ny {
            for i in 1..self.nx {
                let (x, y) = self.node(i, j);
                out.push(f(x, y));
            }
        }
        out
    }

    /// `out = B v`.
    pub fn apply_b_into(&self, v: &[f64], out: &mut [f64]) {
        let mx = self.nx - 1;
        let my = self.ny - 1;
        let cx = self.kappa / (self.hx * self.hx);
        let cy = self.kappa / (self.hy * self.hy);
        for j in 0..my {
            for i in 0..mx {
                let c = v[j * mx + i];
                let w = if i > 0 { v[j * mx + i - 1] } else { 0.0 };
                let e = if i + 1 < mx { v[j * mx + i + 1] } else { 0.0 };
                let s = if j > 0 { v[(j - 1) * mx + i] } else { 0.0 };
                let n = if j + 1 < my { v[(j + 1) * mx + i] } else { 0.0 };
                out[j * mx + i] = cx * (w - 2.0 * c + e) + cy * (s - 2.0 * c + n);
            }
        }
    }

    pub fn apply_b(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.apply_b_into(v, &mut out);
        Ok(out)
    }

    /// Applies `Q` in place. `Q` is orthogonal and symmetric, so this is also `Qᵀ`.
    pub fn dst2_in_place(&self, v: &mut [f64]) {
        let mut ws = self.dst.workspace();
        self.dst.apply(v, &mut ws);
    }

    pub fn dst2(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        let mut out = v.to_vec();
        self.dst2_in_place(&mut out);
        Ok(out)
    }

    /// Applies `Q` to every block of a block-major buffer, in parallel over blocks.
    pub fn dst2_blocks(&self, data: &mut [f64]) {
        let s = self.size();
        for_each_chunk(data, s, |_, block| {
            let mut ws = self.dst.workspace();
            self.dst.apply(block, &mut ws);
        });
    }

    /// Solves `(shift I - B) z = v` in place through the sine basis.
    pub fn shifted_solve_in_place(&self, shift: f64, v: &mut [f64]) {
        self.dst2_in_place(v);
        for (x, &mu) in v.iter_mut().zip(&self.eig_full) {
            *x /= shift - mu;
        }
        self.dst2_in_place(v);
    }

    /// Dense `Q` entry for field indices `p`, `q`.
    pub fn q_entry(&self, p: usize, q: usize) -> f64 {
        let mx = self.nx - 1;
        let (ip, jp) = (p % mx + 1, p / mx + 1);
        let (iq, jq) = (q % mx + 1, q / mx + 1);
        let qx = (2.0 / self.nx as f64).sqrt() * (PI * (ip * iq) as f64 / self.nx as f64).sin();
        let qy = (2.0 / self.ny as f64).sqrt() * (PI * (jp * jq) as f64 / self.ny as f64).sin();
        qx * qy
    }
}

pub fn build_operator(nx: usize, ny: usize, domain: Rect, kappa: f64) -> Result<SpatialOperator> {
    SpatialOperator::new(nx, ny, domain, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn tridiag(n: usize, h: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0 / (h * h)
            } else if i.abs_diff(j) == 1 {
                1.0 / (h * h)
            } else {
                0.0
            }
        })
    }

    /// Kronecker assembly of `B`, independent of the stencil loop.
    fn dense_b(op: &SpatialOperator) -> DMatrix<f64> {
        let bx = tridiag(op.nx - 1, op.hx);
        let by = tridiag(op.ny - 1, op.hy);
        let ix = DMatrix::<f64>::identity(op.nx - 1, op.nx - 1);
        let iy = DMatrix::<f64>::identity(op.ny - 1, op.ny - 1);
        (iy.kronecker(&bx) + by.kronecker(&ix)) * op.kappa
    }

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn closed_form_eigenvalues() {
        let op = SpatialOperator::new(2, 2, Rect::square(0.0, 2.0), 1.0).unwrap();
        assert_relative_eq!(op.eig_x[0], -2.0, max_relative = 1e-14);
        let op = SpatialOperator::new(4, 4, Rect::square(0.0, 4.0), 1.0).unwrap();
        assert_relative_eq!(op.eig_x[1], -2.0, max_relative = 1e-14);
        assert!(op.eig_full.iter().all(|&l| l < 0.0));
    }

    #[test]
    fn eigenvalues_match_dense_decomposition() {
        let op = SpatialOperator::new(3, 3, Rect::square(0.0, 1.0), 1.3).unwrap();
        assert_eq!(op.eig_full.len(), 4);
        let b = dense_b(&op);
        let mut dense: Vec<f64> = b.symmetric_eigen().eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ours = op.eig_full.clone();
        ours.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ours.iter().zip(&dense) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let lambda1 = -4.0 * 1.3 / (op.hx * op.hx) * (PI / 6.0).sin().powi(2);
        assert_relative_eq!(ours[3], 2.0 * lambda1, max_relative = 1e-12);
    }

    #[test]
    fn stencil_matches_kronecker_assembly() {
        let op = SpatialOperator::new(4, 5, Rect::new(-1.0, 2.0, 0.0, 1.5), 0.7).unwrap();
        let v = random(op.size(), 3);
        let ours = op.apply_b(&v).unwrap();
        let dense = dense_b(&op) * nalgebra::DVector::from_vec(v);
        for (a, b) in ours.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-13 * dense.amax().max(1.0));
        }
        assert!(op
            .apply_b(&vec![0.0; op.size()])
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn sine_mode_is_eigenvector() {
        let op = SpatialOperator::new(3, 3, Rect::square(0.0, 1.0), 1.0).unwrap();
        let v = op.sample(|x, y| (PI * x).sin() * (PI * y).sin());
        let bv = op.apply_b(&v).unwrap();
        let lambda = op.eig_x[0] + op.eig_y[0];
        for (a, b) in bv.iter().zip(&v) {
            assert_relative_eq!(*a, lambda * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_is_orthogonal_involution() {
        for (nx, ny) in [(2, 2), (4, 4), (7, 5), (16, 9)] {
            let op = SpatialOperator::new(nx, ny, Rect::square(0.0, 1.0), 1.0).unwrap();
            let v = random(op.size(), (nx * ny) as u64);
            let once = op.dst2(&v).unwrap();
            let twice = op.dst2(&once).unwrap();
            assert_relative_eq!(norm(&once), norm(&v), max_relative = 1e-12);
            for (a, b) in twice.iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_matches_dense_q_and_diagonalizes() {
        let op = SpatialOperator::new(4, 4, Rect::square(0.0, 3.0), 1.0).unwrap();
        let s = op.size();
        let q = DMatrix::from_fn(s, s, |p, r| op.q_entry(p, r));
        let v = random(s, 11);
        let fast = op.dst2(&v).unwrap();
        let dense = &q * nalgebra::DVector::from_vec(v.clone());
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
        let d = op
            .dst2(&op.apply_b(&op.dst2(&v).unwrap()).unwrap())
            .unwrap();
        for ((a, b), l) in d.iter().zip(&v).zip(&op.eig_full) {
            assert!((a - l * b).abs() < 1e-12 * l.abs().max(1.0));
        }
    }

    #[test]
    fn b_is_symmetric() {
        let op = SpatialOperator::new(6, 5, Rect::square(0.0, 1.0), 2.0).unwrap();
        let v = random(op.size(), 1);
        let w = random(op.size(), 2);
        let bv = op.apply_b(&v).unwrap();
        let bw = op.apply_b(&w).unwrap();
        let l: f64 = bv.iter().zip(&w).map(|(a, b)| a * b).sum();
        let r: f64 = v.iter().zip(&bw).map(|(a, b)| a * b).sum();
        assert_relative_eq!(l, r, max_relative = 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(SpatialOperator::new(4, 4, Rect::new(0.0, 0.0, 0.0, 1.0), 1.0).is_err());
        assert!(SpatialOperator::new(1, 4, Rect::square(0.0, 1.0), 1.0).is_err());
        assert!(SpatialOperator::new(4, 4, Rect::square(0.0, 1.0), 0.0).is_err());
        let op = SpatialOperator::new(4, 4, Rect::square(0.0, 1.0), 1.0).unwrap();
        assert!(op.apply_b(&[1.0; 3]).is_err());
        assert!(op.dst2(&[1.0; 10]).is_err());
    }
}
