//! Orthonormal type-I discrete sine transform via an odd-extension FFT.
//!
//! For `n = N - 1` samples the transform is
//! `X_k = sqrt(2/N) Σ_j x_j sin(π j k / N)`, which is symmetric and its own
//! inverse. Two real sequences are transformed per complex FFT of length `2N`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Dst1 {
    /// Number of intervals `N`; the transform length is `N - 1`.
    intervals: usize,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Dst1 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dst1")
            .field("intervals", &self.intervals)
            .finish()
    }
}

impl Dst1 {
    pub(crate) fn new(intervals: usize, planner: &mut FftPlanner<f64>) -> Self {
        Self {
            intervals,
            fft: planner.plan_fft_forward(2 * intervals),
            scale: (2.0 / intervals as f64).sqrt(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.intervals - 1
    }

    pub(crate) fn buffer_len(&self) -> usize {
        2 * self.intervals
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.fft.get_inplace_scratch_len()
    }

    /// Transforms `a` and (optionally) `b` in place. `buf` must hold
    /// `buffer_len()` entries and `scratch` at least `scratch_len()`.
    pub(crate) fn transform_pair(
        &self,
        a: &mut [f64],
        b: Option<&mut [f64]>,
        buf: &mut [Complex64],
        scratch: &mut [Complex64],
    ) {
        let n = self.len();
        let big = self.intervals;
        debug_assert_eq!(a.len(), n);
        buf[0] = Complex64::new(0.0, 0.0);
        buf[big] = Complex64::new(0.0, 0.0);
        match &b {
            Some(b) => {
                for j in 0..n {
                    let z = Complex64::new(a[j], b[j]);
                    buf[j + 1] = z;
                    buf[2 * big - j - 1] = -z;
                }
            }
            None => {
                for j in 0..n {
                    let z = Complex64::new(a[j], 0.0);
                    buf[j + 1] = z;
                    buf[2 * big - j - 1] = -z;
                }
            }
        }
        self.fft.process_with_scratch(buf, scratch);
        // FFT of an odd real sequence is -2i S; the imaginary lane contributes +2 S.
        let half = 0.5 * self.scale;
        for k in 0..n {
            a[k] = -buf[k + 1].im * half;
        }
        if let Some(b) = b {
            for k in 0..n {
                b[k] = buf[k + 1].re * half;
            }
        }
    }
}

/// Two-dimensional transform `Q = Q_y ⊗ Q_x` on x-fastest fields.
#[derive(Debug, Clone)]
pub(crate) struct Dst2 {
    x: Dst1,
    y: Dst1,
}

pub(crate) struct Dst2Workspace {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    col_a: Vec<f64>,
    col_b: Vec<f64>,
}

impl Dst2 {
    pub(crate) fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            x: Dst1::new(nx, &mut planner),
            y: Dst1::new(ny, &mut planner),
        }
    }

    pub(crate) fn workspace(&self) -> Dst2Workspace {
        let buf = self.x.buffer_len().max(self.y.buffer_len());
        let scratch = self.x.scratch_len().max(self.y.scratch_len());
        Dst2Workspace {
            buf: vec![Complex64::new(0.0, 0.0); buf],
            scratch: vec![Complex64::new(0.0, 0.0); scratch],
            col_a: vec![0.0; self.y.len()],
            col_b: vec![0.0; self.y.len()],
        }
    }

    pub(crate) fn apply(&self, field: &mut [f64], ws: &mut Dst2Workspace) {
        let nx = self.x.len();
        let ny = self.y.len();
        debug_assert_eq!(field.len(), nx * ny);
        let xbuf = &mut ws.buf[..self.x.buffer_len()];
        let xscratch = &mut ws.scratch[..self.x.scratch_len()];
        let mut rows = field.chunks_exact_mut(nx);
        loop {
            match (rows.next(), rows.next()) {
                (Some(a), Some(b)) => self.x.transform_pair(a, Some(b), xbuf, xscratch),
                (Some(a), None) => self.x.transform_pair(a, None, xbuf, xscratch),
                _ => break,
            }
        }
        let ybuf = &mut ws.buf[..self.y.buffer_len()];
        let yscratch = &mut ws.scratch[..self.y.scratch_len()];
        let mut i = 0;
        while i < nx {
            let paired = i + 1 < nx;
            for j in 0..ny {
                ws.col_a[j] = field[j * nx + i];
                if paired {
                    ws.col_b[j] = field[j * nx + i + 1];
                }
            }
            if paired {
                self.y
                    .transform_pair(&mut ws.col_a, Some(&mut ws.col_b), ybuf, yscratch);
            } else {
                self.y.transform_pair(&mut ws.col_a, None, ybuf, yscratch);
            }
            for j in 0..ny {
                field[j * nx + i] = ws.col_a[j];
                if paired {
                    field[j * nx + i + 1] = ws.col_b[j];
                }
            }
            i += 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], big: usize) -> Vec<f64> {
        let s = (2.0 / big as f64).sqrt();
        (1..big)
            .map(|k| {
                s * (1..big)
                    .map(|j| x[j - 1] * (std::f64::consts::PI * (j * k) as f64 / big as f64).sin())
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let mut planner = FftPlanner::new();
        for big in [2, 3, 5, 8, 13] {
            let plan = Dst1::new(big, &mut planner);
            let a: Vec<f64> = (0..big - 1).map(|j| (j as f64 * 0.7).sin() + 0.1).collect();
            let b: Vec<f64> = (0..big - 1).map(|j| (j as f64 * 1.3).cos()).collect();
            let (mut ta, mut tb) = (a.clone(), b.clone());
            let mut buf = vec![Complex64::default(); plan.buffer_len()];
            let mut scratch = vec![Complex64::default(); plan.scratch_len()];
            plan.transform_pair(&mut ta, Some(&mut tb), &mut buf, &mut scratch);
            for (u, v) in ta.iter().zip(naive(&a, big)) {
                assert!((u - v).abs() < 1e-13);
            }
            for (u, v) in tb.iter().zip(naive(&b, big)) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }
}
