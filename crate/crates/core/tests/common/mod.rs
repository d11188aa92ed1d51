//! Reference computations that avoid the library's own linear-algebra paths.
#![allow(dead_code)]

use factmle::data_io::{generate_synthetic, SeededSampler};
use factmle::{CovarianceInput, SyntheticSpec};
use nalgebra::{DMatrix, DVector};

/// `log max(1, λ) − max(1, λ) + 1`.
pub fn g(lambda: f64) -> f64 {
    let m = lambda.max(1.0);
    m.ln() - m + 1.0
}

/// Eigenvalues of the non-symmetric product `S Φ`, descending by real part.
///
/// These coincide with those of `Φ^{1/2} S Φ^{1/2}` but are computed through a
/// real Schur form instead of a symmetric solver.
pub fn product_eigenvalues(s: &DMatrix<f64>, phi: &DVector<f64>) -> Vec<f64> {
    let sp = s * DMatrix::from_diagonal(phi);
    let mut vals: Vec<f64> = sp.complex_eigenvalues().iter().map(|z| z.re).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals
}

/// `f(φ)` evaluated from the product eigenvalues.
pub fn f_oracle(s: &DMatrix<f64>, phi: &DVector<f64>, r: usize) -> f64 {
    let f1: f64 = (0..phi.len()).map(|i| -phi[i].ln() + s[(i, i)] * phi[i]).sum();
    let lambda = product_eigenvalues(s, phi);
    f1 + lambda.iter().take(r).map(|&l| g(l)).sum::<f64>()
}

/// `f₂(φ) = −Σ_{i≤r} g(λᵢ)` from the product eigenvalues.
pub fn f2_oracle(s: &DMatrix<f64>, phi: &DVector<f64>, r: usize) -> f64 {
    -product_eigenvalues(s, phi).iter().take(r).map(|&l| g(l)).sum::<f64>()
}

/// `log det Σ + tr(Σ⁻¹ S)` through an LU determinant and an explicit inverse.
pub fn dense_neg_loglik(s: &DMatrix<f64>, psi: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let sigma = DMatrix::from_diagonal(psi) + l * l.transpose();
    let det = sigma.clone().lu().determinant();
    let inv = sigma.try_inverse().expect("implied covariance is invertible");
    det.ln() + (inv * s).trace()
}

/// Golden-section minimiser of a unimodal function on `[a, b]`.
pub fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Golden section in `log φ` over `(lo, hi]`, robust across many decades.
pub fn golden_section_log(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    golden_section(lo.ln(), hi.ln(), |t| f(t.exp())).exp()
}

/// Minimiser of a convex function on `[lo, hi]` from the sign of its derivative.
///
/// Bisects in `log x`, so it resolves the argmin to full precision where a
/// value-based search stalls at about `√ε_mach` relative.
pub fn convex_argmin_log(lo: f64, hi: f64, df: impl Fn(f64) -> f64) -> f64 {
    if df(hi) <= 0.0 {
        return hi;
    }
    if df(lo) >= 0.0 {
        return lo;
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if df(m.exp()) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    (0.5 * (a + b)).exp()
}

/// Largest eigenvalue of a symmetric 3×3 matrix by the trigonometric formula.
pub fn sym3_max_eigenvalue(m: &[[f64; 3]; 3]) -> f64 {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        return m[0][0].max(m[1][1]).max(m[2][2]);
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    q + 2.0 * p * (r.acos() / 3.0).cos()
}

/// Minimum of `f` for `p = 3`, `r = 1` over a `res³` log-spaced grid on `[ε, 1/ε]³`.
pub fn grid_min_p3(s: &DMatrix<f64>, eps: f64, res: usize) -> f64 {
    let (lo, hi) = (eps.ln(), (1.0 / eps).ln());
    let grid: Vec<f64> = (0..res)
        .map(|k| (lo + (hi - lo) * k as f64 / (res - 1) as f64).exp())
        .collect();
    let sqrt_grid: Vec<f64> = grid.iter().map(|v| v.sqrt()).collect();
    let mut best = f64::INFINITY;
    for a in 0..res {
        let (pa, ha) = (grid[a], sqrt_grid[a]);
        let ta = -pa.ln() + s[(0, 0)] * pa;
        for b in 0..res {
            let (pb, hb) = (grid[b], sqrt_grid[b]);
            let tb = ta - pb.ln() + s[(1, 1)] * pb;
            let m01 = s[(0, 1)] * ha * hb;
            for c in 0..res {
                let (pc, hc) = (grid[c], sqrt_grid[c]);
                let m = [
                    [s[(0, 0)] * pa, m01, s[(0, 2)] * ha * hc],
                    [m01, s[(1, 1)] * pb, s[(1, 2)] * hb * hc],
                    [s[(0, 2)] * ha * hc, s[(1, 2)] * hb * hc, s[(2, 2)] * pc],
                ];
                let f = tb - pc.ln() + s[(2, 2)] * pc + g(sym3_max_eigenvalue(&m));
                if f < best {
                    best = f;
                }
            }
        }
    }
    best
}

/// Central difference of `f` along coordinate `i`, with relative step.
pub fn central_difference(phi: &DVector<f64>, i: usize, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    let h = 1e-6 * phi[i].abs().max(1e-3);
    let mut plus = phi.clone();
    let mut minus = phi.clone();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `X` with `n` rows drawn from a random `r0`-factor model, centered.
pub fn factor_data(p: usize, n: usize, r0: usize, seed: u64) -> CovarianceInput {
    let spec = SyntheticSpec {
        p,
        n,
        r0,
        loading_mean: 0.0,
        loading_var: 1.0,
        uniqueness_mean: 1.0,
        seed,
    };
    generate_synthetic(&spec).expect("valid synthetic spec").0
}

/// Figure-1 style regime: loadings `N(10, 1)`, uniquenesses exponential with mean 10.
pub fn figure_one_data(p: usize, n: usize, r0: usize, seed: u64) -> CovarianceInput {
    let spec = SyntheticSpec {
        p,
        n,
        r0,
        loading_mean: 10.0,
        loading_var: 1.0,
        uniqueness_mean: 10.0,
        seed,
    };
    generate_synthetic(&spec).expect("valid synthetic spec").0
}

/// Random symmetric positive definite matrix `A Aᵀ / p + δ I`.
pub fn random_spd(p: usize, seed: u64, ridge: f64) -> DMatrix<f64> {
    let mut rng = SeededSampler::new(seed);
    let a = DMatrix::from_fn(p, p, |_, _| rng.standard_normal());
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * ridge
}

pub fn dense_cov(s: DMatrix<f64>) -> CovarianceInput {
    CovarianceInput::from_covariance(s, None).expect("valid covariance")
}

/// Uniform draw in `[lo, hi)` on a log scale.
pub fn log_uniform(rng: &mut SeededSampler, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.uniform()).exp()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
