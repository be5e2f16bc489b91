//! Independent references: the L1 rows rebuilt from hat-function Caputo
//! integrals, and dense direct solves of the assembled system.

use statrs::function::gamma::gamma;
use subdiff_core::diagnostics::{dense_assemble, dense_solve, BlockTag};
use subdiff_core::problems::problem_example1;
use subdiff_core::solve::solve_linear;
use subdiff_core::{KrylovConfig, TimeMesh, WeightTable};

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton on `P_n`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let w = 2.0 / ((1.0 - x * x) * dp * dp);
                    return (x, w);
                }
            }
        })
        .collect()
}

/// `∫_a^b (t - s)^(-β) ds` for `b <= t`. The last interval (`b == t`) is
/// mapped by `s = t - (t - a) y^(1/(1-β))`, which removes the singularity.
fn kernel_integral(t: f64, a: f64, b: f64, beta: f64, gl: &[(f64, f64)]) -> f64 {
    if b >= t {
        let q = 1.0 / (1.0 - beta);
        let len = t - a;
        return gl
            .iter()
            .map(|&(x, w)| {
                let y = 0.5 * (x + 1.0);
                let s = t - len * y.powf(q);
                let jac = len * q * y.powf(q - 1.0);
                0.5 * w * (t - s).powf(-beta) * jac
            })
            .sum();
    }
    // smooth: composite rule over a few panels
    let panels = 8;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * h;
            gl.iter()
                .map(|&(x, w)| 0.5 * h * w * (t - (lo + 0.5 * h * (x + 1.0))).powf(-beta))
                .sum::<f64>()
        })
        .sum()
}

/// Caputo derivative at `t_k` of the piecewise-linear hat at node `l`.
fn hat_derivative(mesh: &TimeMesh, beta: f64, k: usize, l: usize, gl: &[(f64, f64)]) -> f64 {
    let t = &mesh.points;
    let mut acc = 0.0;
    if l >= 1 {
        acc += kernel_integral(t[k], t[l - 1], t[l], beta, gl) / (t[l] - t[l - 1]);
    }
    if l < k {
        acc -= kernel_integral(t[k], t[l], t[l + 1], beta, gl) / (t[l + 1] - t[l]);
    }
    acc / gamma(1.0 - beta)
}

#[test]
fn l1_rows_match_quadrature() {
    let gl = gauss_legendre(20);
    for (beta, m, m0, r) in [(0.5, 8, 4, 2.0), (0.1, 10, 5, 3.0), (0.9, 12, 5, 2.0)] {
        let t0 = 2f64.powf(-r);
        let mesh = TimeMesh::new(1.0, t0, m, m0, r).unwrap();
        let w = WeightTable::new(&mesh, beta).unwrap();
        for k in 1..=m {
            for l in 1..=k {
                let want = hat_derivative(&mesh, beta, k, l, &gl);
                let got = w.a(k - 1, l - 1);
                assert!(
                    (got - want).abs() <= 1e-11 * want.abs().max(1.0),
                    "beta {beta} row {k} col {l}: {got} vs {want}"
                );
            }
            // the u^0 coefficient enters the right-hand side with a flipped sign
            let want0 = -hat_derivative(&mesh, beta, k, 0, &gl);
            let got0 = w.eta_coeffs[k - 1];
            assert!((got0 - want0).abs() <= 1e-11 * want0.abs().max(1.0));
        }
    }
}

#[test]
fn quadrature_row_six_at_m8() {
    // row 6 straddles the junction: two graded columns, then uniform ones
    let gl = gauss_legendre(20);
    let mesh = TimeMesh::with_default_split(1.0, 8, 2.0).unwrap();
    assert_eq!(mesh.m0, 4);
    let w = WeightTable::new(&mesh, 0.5).unwrap();
    let row: Vec<f64> = (1..=6)
        .map(|l| hat_derivative(&mesh, 0.5, 6, l, &gl))
        .collect();
    for (l, want) in row.iter().enumerate() {
        assert!((w.a(5, l) - want).abs() < 1e-11 * want.abs().max(1.0));
    }
    assert!(row[5] > 0.0 && row[..5].iter().all(|&x| x < 0.0));
}

#[test]
fn all_at_once_matches_dense_direct_solve() {
    let cfg = KrylovConfig::default();
    for (beta, r) in [(0.1, 2.0), (0.5, 3.0), (0.9, 2.0)] {
        let sys = problem_example1(beta)
            .unwrap()
            .system(beta, r, 8, 5)
            .unwrap();
        let dense = dense_assemble(&sys, BlockTag::Full).unwrap();
        let reference = dense_solve(&dense, &sys.rhs_full()).unwrap();
        let rep = solve_linear(&sys, true, None, &cfg).unwrap();
        assert!(rep.converged());
        let err = rep
            .solution
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-7 * reference.max_abs(), "beta {beta}: {err}");
    }
}
