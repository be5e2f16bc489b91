//! The all-at-once space-time system `M u = η + f` with
//! `M = A ⊗ I_s - I_t ⊗ B`, split into the graded block row
//! `M11 = A11 ⊗ I_s - I ⊗ B` and the uniform block row
//! `[M21 | M22] = [A21 ⊗ I_s | A22 ⊗ I_s - I ⊗ B]`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::check_len;
use crate::mesh::{TimeMesh, WeightTable};
use crate::par::for_each_chunk;
use crate::spatial::SpatialOperator;
use crate::{Error, Result};

/// Below this many uniform steps `M22` is applied by direct traversal.
pub const TOEPLITZ_FFT_THRESHOLD: usize = 128;

/// Complex lanes transformed per batched FFT call.
pub(crate) const LANE_GROUP: usize = 32;

/// A sequence of spatial fields stored contiguously, block-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    block_len: usize,
    data: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(nblocks: usize, block_len: usize) -> Self {
        Self {
            block_len,
            data: vec![0.0; nblocks * block_len],
        }
    }

    pub fn from_vec(block_len: usize, data: Vec<f64>) -> Result<Self> {
        if block_len == 0 || data.len() % block_len != 0 {
            return Err(Error::InvalidArgument(format!(
                "buffer of length {} is not a whole number of blocks of length {block_len}",
                data.len()
            )));
        }
        Ok(Self { block_len, data })
    }

    /// Repeats `block` `nblocks` times.
    pub fn repeat(block: &[f64], nblocks: usize) -> Self {
        Self {
            block_len: block.len(),
            data: block.repeat(nblocks),
        }
    }

    pub fn nblocks(&self) -> usize {
        if self.block_len == 0 {
            0
        } else {
            self.data.len() / self.block_len
        }
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.data[k * self.block_len..(k + 1) * self.block_len]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.block_len..(k + 1) * self.block_len]
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.block_len)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.block_len == other.block_len && self.data.len() == other.data.len()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += a x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn copy_from(&mut self, other: &Self) {
        self.data.copy_from_slice(&other.data);
    }

    /// Splits into the first `k` blocks and the rest.
    pub fn split_at(&self, k: usize) -> (Self, Self) {
        let (a, b) = self.data.split_at(k * self.block_len);
        (
            Self {
                block_len: self.block_len,
                data: a.to_vec(),
            },
            Self {
                block_len: self.block_len,
                data: b.to_vec(),
            },
        )
    }

    pub fn concat(first: &Self, second: &Self) -> Self {
        let mut data = first.data.clone();
        data.extend_from_slice(&second.data);
        Self {
            block_len: first.block_len.max(second.block_len),
            data,
        }
    }
}

/// Source term of the linear problem.
#[derive(Clone)]
pub enum Forcing {
    Zero,
    /// `f(x, y, t)`, evaluated lazily whenever a right-hand side is built.
    Function(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
    /// Precomputed `f^1 ..= f^M`.
    Stored(BlockVector),
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forcing::Zero => write!(f, "Zero"),
            Forcing::Function(_) => write!(f, "Function(..)"),
            Forcing::Stored(v) => write!(f, "Stored({} blocks)", v.nblocks()),
        }
    }
}

/// FFT data for the lower-triangular Toeplitz product with generator `ω`.
#[derive(Clone)]
struct ToeplitzFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    symbol: Vec<Complex64>,
}

impl ToeplitzFft {
    fn new(omega: &[f64]) -> Self {
        let len = 2 * omega.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let mut symbol = vec![Complex64::new(0.0, 0.0); len];
        for (s, &w) in symbol.iter_mut().zip(omega) {
            s.re = w;
        }
        forward.process(&mut symbol);
        let inv_len = 1.0 / len as f64;
        symbol.iter_mut().for_each(|s| *s *= inv_len);
        Self {
            len,
            forward,
            inverse,
            symbol,
        }
    }
}

#[derive(Clone)]
pub struct AllAtOnceSystem {
    pub mesh: TimeMesh,
    pub weights: WeightTable,
    pub op: SpatialOperator,
    pub u0: Vec<f64>,
    pub forcing: Forcing,
    toeplitz: ToeplitzFft,
}

impl std::fmt::Debug for AllAtOnceSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AllAtOnceSystem")
            .field("m", &self.mesh.m)
            .field("m0", &self.mesh.m0)
            .field("beta", &self.weights.beta)
            .field("nx", &self.op.nx)
            .field("ny", &self.op.ny)
            .field("forcing", &self.forcing)
            .finish()
    }
}

impl AllAtOnceSystem {
    pub fn new(
        mesh: TimeMesh,
        beta: f64,
        op: SpatialOperator,
        u0: Vec<f64>,
        forcing: Forcing,
    ) -> Result<Self> {
        check_len(op.size(), u0.len())?;
        if let Forcing::Stored(f) = &forcing {
            check_len(mesh.m * op.size(), f.len())?;
        }
        let weights = WeightTable::new(&mesh, beta)?;
        let toeplitz = ToeplitzFft::new(&weights.omega);
        Ok(Self {
            mesh,
            weights,
            op,
            u0,
            forcing,
            toeplitz,
        })
    }

    pub fn beta(&self) -> f64 {
        self.weights.beta
    }

    /// Spatial block size `(Nx - 1)(Ny - 1)`.
    pub fn block_len(&self) -> usize {
        self.op.size()
    }

    pub fn m(&self) -> usize {
        self.mesh.m
    }

    pub fn m0(&self) -> usize {
        self.mesh.m0
    }

    pub fn m2(&self) -> usize {
        self.mesh.m - self.mesh.m0
    }

    /// Evaluates a functional source once and keeps the samples.
    pub fn store_forcing(&mut self) {
        if let Forcing::Function(_) = self.forcing {
            let (f1, f2) = self.assemble_forcing();
            self.forcing = Forcing::Stored(BlockVector::concat(&f1, &f2));
        }
    }

    /// `η1` (first `M0` blocks) and `η2` (remaining blocks).
    pub fn rhs_eta(&self) -> (BlockVector, BlockVector) {
        let s = self.block_len();
        let mut eta = BlockVector::zeros(self.m(), s);
        for (k, &c) in self.weights.eta_coeffs.iter().enumerate() {
            for (e, u) in eta.block_mut(k).iter_mut().zip(&self.u0) {
                *e = c * u;
            }
        }
        eta.split_at(self.m0())
    }

    /// `f^k` sampled at the interior nodes, split like [`Self::rhs_eta`].
    pub fn assemble_forcing(&self) -> (BlockVector, BlockVector) {
        let s = self.block_len();
        let full = match &self.forcing {
            Forcing::Zero => BlockVector::zeros(self.m(), s),
            Forcing::Stored(f) => f.clone(),
            Forcing::Function(f) => {
                let mut out = BlockVector::zeros(self.m(), s);
                let times = &self.mesh.points;
                for_each_chunk(out.as_mut_slice(), s, |k, block| {
                    let t = times[k + 1];
                    let vals = self.op.sample(|x, y| f(x, y, t));
                    block.copy_from_slice(&vals);
                });
                out
            }
        };
        full.split_at(self.m0())
    }

    /// Right-hand side of the first subproblem, `η1 + f1`.
    pub fn rhs1(&self) -> BlockVector {
        let (mut eta1, _) = self.rhs_eta();
        let (f1, _) = self.assemble_forcing();
        eta1.axpy(1.0, &f1);
        eta1
    }

    /// Right-hand side of the second subproblem, `η2 + f2 - M21 u1`.
    pub fn rhs2(&self, u1: &BlockVector) -> Result<BlockVector> {
        let (_, mut eta2) = self.rhs_eta();
        let (_, f2) = self.assemble_forcing();
        eta2.axpy(1.0, &f2);
        let coupling = self.apply_m21(u1)?;
        eta2.axpy(-1.0, &coupling);
        Ok(eta2)
    }

    fn check_blocks(&self, v: &BlockVector, nblocks: usize) -> Result<()> {
        check_len(self.block_len(), v.block_len())?;
        check_len(nblocks, v.nblocks())
    }

    pub(crate) fn apply_m11_into(&self, v: &[f64], out: &mut [f64]) {
        let s = self.block_len();
        let m0 = self.m0();
        let w = &self.weights;
        for_each_chunk(out, s, |k, block| {
            self.op.apply_b_into(&v[k * s..(k + 1) * s], block);
            block.iter_mut().for_each(|x| *x = -*x);
            for l in 0..=k {
                let a = w.a11[k * m0 + l];
                for (o, x) in block.iter_mut().zip(&v[l * s..(l + 1) * s]) {
                    *o += a * x;
                }
            }
        });
    }

    pub fn apply_m11(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m0())?;
        let mut out = BlockVector::zeros(self.m0(), self.block_len());
        self.apply_m11_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn apply_m21_into(&self, v: &[f64], out: &mut [f64]) {
        let s = self.block_len();
        let m0 = self.m0();
        let w = &self.weights;
        for_each_chunk(out, s, |k, block| {
            block.iter_mut().for_each(|x| *x = 0.0);
            for l in 0..m0 {
                let a = w.a21[k * m0 + l];
                for (o, x) in block.iter_mut().zip(&v[l * s..(l + 1) * s]) {
                    *o += a * x;
                }
            }
        });
    }

    pub fn apply_m21(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m0())?;
        let mut out = BlockVector::zeros(self.m2(), self.block_len());
        self.apply_m21_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `out = (A22 ⊗ I) v` by direct lower-triangular traversal.
    fn toeplitz_direct(&self, v: &[f64], out: &mut [f64]) {
        let s = self.block_len();
        let omega = &self.weights.omega;
        for_each_chunk(out, s, |k, block| {
            block.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..=k {
                let a = omega[k - j];
                for (o, x) in block.iter_mut().zip(&v[j * s..(j + 1) * s]) {
                    *o += a * x;
                }
            }
        });
    }

    /// `out = (A22 ⊗ I) v` by circulant embedding, two spatial points per
    /// complex lane and `LANE_GROUP` lanes per batched transform.
    fn toeplitz_fft(&self, v: &[f64], out: &mut [f64]) {
        let s = self.block_len();
        let n = self.m2();
        let tf = &self.toeplitz;
        let len = tf.len;
        let pairs = s.div_ceil(2);
        let mut buf = vec![Complex64::new(0.0, 0.0); pairs * len];
        for_each_chunk(&mut buf, LANE_GROUP * len, |g, group| {
            let p0 = g * LANE_GROUP;
            let lanes = group.len() / len;
            // gather row by row so reads from `v` stay contiguous
            for j in 0..n {
                let row = &v[j * s..(j + 1) * s];
                for q in 0..lanes {
                    let a = 2 * (p0 + q);
                    let im = if a + 1 < s { row[a + 1] } else { 0.0 };
                    group[q * len + j] = Complex64::new(row[a], im);
                }
            }
            let scratch_len = tf
                .forward
                .get_inplace_scratch_len()
                .max(tf.inverse.get_inplace_scratch_len());
            let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
            tf.forward.process_with_scratch(group, &mut scratch);
            for lane in group.chunks_exact_mut(len) {
                for (z, w) in lane.iter_mut().zip(&tf.symbol) {
                    *z *= w;
                }
            }
            tf.inverse.process_with_scratch(group, &mut scratch);
        });
        for_each_chunk(out, s, |j, block| {
            for (m, o) in block.iter_mut().enumerate() {
                let z = buf[(m / 2) * len + j];
                *o = if m % 2 == 0 { z.re } else { z.im };
            }
        });
    }

    fn subtract_b(&self, v: &[f64], out: &mut [f64]) {
        let s = self.block_len();
        for_each_chunk(out, s, |k, block| {
            let mut bv = vec![0.0; s];
            self.op.apply_b_into(&v[k * s..(k + 1) * s], &mut bv);
            for (o, b) in block.iter_mut().zip(&bv) {
                *o -= b;
            }
        });
    }

    pub(crate) fn apply_m22_into(&self, v: &[f64], out: &mut [f64]) {
        if self.m2() < TOEPLITZ_FFT_THRESHOLD {
            self.toeplitz_direct(v, out);
        } else {
            self.toeplitz_fft(v, out);
        }
        self.subtract_b(v, out);
    }

    pub fn apply_m22(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m2())?;
        let mut out = BlockVector::zeros(self.m2(), self.block_len());
        self.apply_m22_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `M22 v` by direct traversal regardless of size.
    pub fn apply_m22_direct(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m2())?;
        let mut out = BlockVector::zeros(self.m2(), self.block_len());
        self.toeplitz_direct(v.as_slice(), out.as_mut_slice());
        self.subtract_b(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `M22 v` through the FFT path regardless of size.
    pub fn apply_m22_fft(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m2())?;
        let mut out = BlockVector::zeros(self.m2(), self.block_len());
        self.toeplitz_fft(v.as_slice(), out.as_mut_slice());
        self.subtract_b(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// Full product `M v` for `v` with `M` blocks.
    pub fn apply_m(&self, v: &BlockVector) -> Result<BlockVector> {
        self.check_blocks(v, self.m())?;
        let (v1, v2) = v.split_at(self.m0());
        let y1 = self.apply_m11(&v1)?;
        let mut y2 = self.apply_m22(&v2)?;
        y2.axpy(1.0, &self.apply_m21(&v1)?);
        Ok(BlockVector::concat(&y1, &y2))
    }

    /// `η + f` for the unsplit system.
    pub fn rhs_full(&self) -> BlockVector {
        let (e1, e2) = self.rhs_eta();
        let (f1, f2) = self.assemble_forcing();
        let mut rhs = BlockVector::concat(&e1, &e2);
        rhs.axpy(1.0, &BlockVector::concat(&f1, &f2));
        rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::Rect;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn system(m: usize, m0: usize, r: f64, beta: f64, n: usize) -> AllAtOnceSystem {
        let mesh = TimeMesh::new(1.0, 0.25, m, m0, r).unwrap();
        let op = SpatialOperator::new(n, n, Rect::square(0.0, 1.0), 1.0).unwrap();
        let u0 = op.sample(|x, y| x * (1.0 - x) * y * (1.0 - y) + 0.3);
        AllAtOnceSystem::new(mesh, beta, op, u0, Forcing::Zero).unwrap()
    }

    fn random(nblocks: usize, s: usize, seed: u64) -> BlockVector {
        let mut rng = StdRng::seed_from_u64(seed);
        BlockVector::from_vec(
            s,
            (0..nblocks * s)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    /// `A ⊗ I - I ⊗ B` assembled from the dense time matrix and a stencil-free `B`.
    fn dense_m(sys: &AllAtOnceSystem) -> DMatrix<f64> {
        let m = sys.m();
        let a = DMatrix::from_row_slice(m, m, &sys.weights.dense_a());
        let s = sys.block_len();
        let b = DMatrix::from_fn(s, s, |p, q| {
            let mut e = vec![0.0; s];
            e[q] = 1.0;
            sys.op.apply_b(&e).unwrap()[p]
        });
        a.kronecker(&DMatrix::identity(s, s)) - DMatrix::<f64>::identity(m, m).kronecker(&b)
    }

    fn close(a: &BlockVector, b: &[f64], tol: f64) {
        let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.as_slice().iter().zip(b) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn block_products_match_dense_assembly() {
        let sys = system(8, 4, 2.0, 0.5, 4);
        let s = sys.block_len();
        let v = random(8, s, 7);
        let dense = dense_m(&sys) * DVector::from_column_slice(v.as_slice());
        close(&sys.apply_m(&v).unwrap(), dense.as_slice(), 1e-11);
        let (v1, _) = v.split_at(4);
        let m11 = sys.apply_m11(&v1).unwrap();
        close(&m11, &dense.as_slice()[..4 * s], 1e-12);
    }

    #[test]
    fn m21_reduces_to_scalar_product() {
        let sys = system(8, 4, 2.0, 0.5, 2);
        let v = random(4, 1, 3);
        let y = sys.apply_m21(&v).unwrap();
        for k in 0..4 {
            let expected: f64 = (0..4).map(|l| sys.weights.a21(k, l) * v.block(l)[0]).sum();
            assert_relative_eq!(y.block(k)[0], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_vectors_map_to_zero() {
        let sys = system(8, 4, 2.0, 0.5, 4);
        let s = sys.block_len();
        assert_eq!(
            sys.apply_m11(&BlockVector::zeros(4, s)).unwrap().max_abs(),
            0.0
        );
        assert_eq!(
            sys.apply_m21(&BlockVector::zeros(4, s)).unwrap().max_abs(),
            0.0
        );
        assert_eq!(
            sys.apply_m22(&BlockVector::zeros(4, s)).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn single_block_cases() {
        let sys = system(5, 1, 2.0, 0.3, 4);
        let s = sys.block_len();
        let v = random(1, s, 5);
        let y = sys.apply_m11(&v).unwrap();
        let bv = sys.op.apply_b(v.as_slice()).unwrap();
        let a0 = sys.weights.a11(0, 0);
        for ((yi, vi), bi) in y.as_slice().iter().zip(v.as_slice()).zip(&bv) {
            assert_relative_eq!(*yi, a0 * vi - bi, epsilon = 1e-13);
        }
        let sys = system(5, 4, 2.0, 0.3, 4);
        let y = sys.apply_m22(&v).unwrap();
        let w0 = sys.weights.omega[0];
        for ((yi, vi), bi) in y.as_slice().iter().zip(v.as_slice()).zip(&bv) {
            assert_relative_eq!(*yi, w0 * vi - bi, epsilon = 1e-13);
        }
    }

    #[test]
    fn toeplitz_fft_matches_direct() {
        for (m, n) in [(12, 4), (24, 5), (40, 3)] {
            let sys = system(m, 4, 2.0, 0.7, n);
            let v = random(m - 4, sys.block_len(), m as u64);
            let fast = sys.apply_m22_fft(&v).unwrap();
            let direct = sys.apply_m22_direct(&v).unwrap();
            close(&fast, direct.as_slice(), 1e-11);
        }
    }

    #[test]
    fn eta_and_forcing() {
        let sys = system(8, 1, 2.0, 0.5, 3);
        let (eta1, eta2) = sys.rhs_eta();
        assert_eq!(eta1.nblocks(), 1);
        assert_eq!(eta2.nblocks(), 7);
        let a0 = sys.weights.a11(0, 0);
        for (e, u) in eta1.as_slice().iter().zip(&sys.u0) {
            assert_relative_eq!(*e, a0 * u, max_relative = 1e-15);
        }
        let mut ones = sys.clone();
        ones.forcing = Forcing::Function(Arc::new(|_, _, _| 1.0));
        let (f1, f2) = ones.assemble_forcing();
        assert!(f1.as_slice().iter().chain(f2.as_slice()).all(|&x| x == 1.0));
        let (f1, f2) = sys.assemble_forcing();
        assert_eq!(f1.max_abs() + f2.max_abs(), 0.0);
        ones.store_forcing();
        assert!(matches!(ones.forcing, Forcing::Stored(_)));
    }

    #[test]
    fn eta_matches_first_column_of_a() {
        let sys = system(8, 4, 2.0, 0.5, 3);
        let (e1, e2) = sys.rhs_eta();
        let eta = BlockVector::concat(&e1, &e2);
        // u^0 enters as -a_{k-1}^{(k)} u^0 in δ_t^β, i.e. the "column 0" coefficient.
        let mesh = &sys.mesh;
        for k in 1..=8 {
            let a = crate::mesh::graded_weights(mesh, 0.5, k).unwrap();
            for (e, u) in eta.block(k - 1).iter().zip(&sys.u0) {
                assert_relative_eq!(*e, a[k - 1] * u, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn rejects_mismatched_blocks() {
        let sys = system(8, 4, 2.0, 0.5, 3);
        assert!(sys.apply_m11(&BlockVector::zeros(3, 4)).is_err());
        assert!(sys.apply_m22(&BlockVector::zeros(4, 5)).is_err());
        assert!(BlockVector::from_vec(3, vec![0.0; 7]).is_err());
    }
}
