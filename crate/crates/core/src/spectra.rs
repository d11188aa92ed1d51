//! Leading eigenpairs of the scaled covariance `S* = Φ^{1/2} S Φ^{1/2}`.
//!
//! Since `λ(Φ^{1/2} S Φ^{1/2}) = λ(SΦ)`, the solver only ever needs this symmetric
//! form. Three routes are available:
//!
//! - [`SpectrumStrategy::DenseFull`]: form `S*` and run a dense symmetric eigensolver.
//! - [`SpectrumStrategy::GramThin`]: for `n < p`, eigendecompose the `n×n` matrix
//!   `(1/n)(XΦ^{1/2})(XΦ^{1/2})ᵀ` and map eigenvectors back through
//!   `v = Φ^{1/2}Xᵀw / (√n σ)`; nothing of size `p×p` is formed.
//! - [`SpectrumStrategy::IterativeLowRank`]: block power (subspace) iteration with a
//!   Rayleigh–Ritz step, stopped when every returned pair has residual below
//!   `tol · max(1, λ₁)`.
//!
//! One guard pair beyond the requested rank is returned when available so callers
//! can see ties at the rank boundary.

use nalgebra::{DMatrix, DVector};

use crate::data_io::{CovarianceInput, SeededSampler};
use crate::error::{domain, numerical, Result};
use crate::linalg::{canonical_signs, orthonormalize, scale_rows, scale_sym, sym_eig_desc};
use crate::objective::UniquenessPrecision;

/// Largest `p` for which the dense route is picked automatically.
pub const DENSE_MAX_P: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpectrumStrategy {
    DenseFull,
    GramThin,
    IterativeLowRank,
}

#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// Forces a route; `None` picks one from the shape of the input.
    pub strategy: Option<SpectrumStrategy>,
    /// Seed of the random start block of the iterative route.
    pub seed: u64,
    pub tol: f64,
    pub max_matvecs: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            strategy: None,
            seed: 0x5EED_F00D,
            tol: 1e-10,
            max_matvecs: 5000,
        }
    }
}

/// Top eigenpairs of `S*`, eigenvalues descending and clamped at zero.
#[derive(Debug, Clone)]
pub struct ScaledSpectrum {
    pub eigenvalues: DVector<f64>,
    /// `p×q`, orthonormal columns, largest-magnitude entry of each column positive.
    pub eigenvectors: DMatrix<f64>,
    pub strategy: SpectrumStrategy,
}

impl ScaledSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The `i`-th eigenvalue, zero past the end (eigenvalues the route could not
    /// resolve are numerically zero).
    pub fn value(&self, i: usize) -> f64 {
        self.eigenvalues.get(i).copied().unwrap_or(0.0)
    }

    /// `‖S*uᵢ − λᵢuᵢ‖₂` for every returned pair.
    pub fn residuals(&self, cov: &CovarianceInput, phi: &DVector<f64>) -> Vec<f64> {
        let h = phi.map(f64::sqrt);
        let au = apply_scaled(cov, &h, &self.eigenvectors);
        (0..self.len())
            .map(|i| (au.column(i) - self.eigenvectors.column(i) * self.eigenvalues[i]).norm())
            .collect()
    }
}

/// `r` leading eigenpairs of `Φ^{1/2} S Φ^{1/2}` (plus one guard pair), route picked
/// automatically.
pub fn eig_top(cov: &CovarianceInput, phi: &UniquenessPrecision, r: usize) -> Result<ScaledSpectrum> {
    eig_top_with(cov, phi.phi(), r, &SpectrumOptions::default())
}

/// The route [`eig_top`] would take for this input.
pub fn auto_strategy(cov: &CovarianceInput) -> SpectrumStrategy {
    match (cov.data(), cov.covariance()) {
        (Some(x), _) if x.nrows() < x.ncols() => SpectrumStrategy::GramThin,
        (_, Some(_)) if cov.p() <= DENSE_MAX_P => SpectrumStrategy::DenseFull,
        _ => SpectrumStrategy::IterativeLowRank,
    }
}

pub fn eig_top_with(
    cov: &CovarianceInput,
    phi: &DVector<f64>,
    r: usize,
    opts: &SpectrumOptions,
) -> Result<ScaledSpectrum> {
    let p = cov.p();
    if phi.len() != p {
        return domain(format!("phi has length {}, expected {p}", phi.len()));
    }
    if r == 0 || r >= p {
        return domain(format!("rank r = {r} must satisfy 1 <= r < p = {p}"));
    }
    if phi.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return domain("phi must be strictly positive and finite");
    }
    let q = (r + 1).min(p);
    let h = phi.map(f64::sqrt);
    let strategy = opts.strategy.unwrap_or_else(|| auto_strategy(cov));
    let (mut values, mut vectors) = match strategy {
        SpectrumStrategy::DenseFull => dense_top(cov, &h, q),
        SpectrumStrategy::GramThin => gram_top(cov, &h, q)?,
        SpectrumStrategy::IterativeLowRank => block_power_top(cov, &h, q, r, opts)?,
    };
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    canonical_signs(&mut vectors);
    Ok(ScaledSpectrum {
        eigenvalues: values,
        eigenvectors: vectors,
        strategy,
    })
}

/// Dense `S* = Φ^{1/2} S Φ^{1/2}`.
pub fn scaled_matrix(cov: &CovarianceInput, phi: &DVector<f64>) -> DMatrix<f64> {
    let h = phi.map(f64::sqrt);
    match cov.covariance() {
        Some(s) => scale_sym(s, &h),
        None => scale_sym(&cov.covariance_dense(), &h),
    }
}

/// `S* v` through `S` or `X`, where `h = √φ`.
pub(crate) fn apply_scaled(cov: &CovarianceInput, h: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut hv = v.clone();
    scale_rows(&mut hv, h);
    let mut out = cov.mul_cov(&hv);
    scale_rows(&mut out, h);
    out
}

fn dense_top(cov: &CovarianceInput, h: &DVector<f64>, q: usize) -> (DVector<f64>, DMatrix<f64>) {
    let s_star = match cov.covariance() {
        Some(s) => scale_sym(s, h),
        None => scale_sym(&cov.covariance_dense(), h),
    };
    let (values, vectors) = sym_eig_desc(s_star);
    (values.rows(0, q).into_owned(), vectors.columns(0, q).into_owned())
}

fn gram_top(cov: &CovarianceInput, h: &DVector<f64>, q: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let Some(x) = cov.data() else {
        return domain("the Gram route needs the data matrix");
    };
    let n = x.nrows();
    let mut y = x.clone();
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col *= h[j] / (n as f64).sqrt();
    }
    let gram = &y * y.transpose();
    let (values, w) = sym_eig_desc(gram);
    let floor = 1e-10 * values[0].max(0.0);
    let keep = (0..q.min(n))
        .take_while(|&i| values[i] > floor && values[i] > 0.0)
        .count();
    let mut vectors = y.tr_mul(&w.columns(0, keep));
    for (i, mut col) in vectors.column_iter_mut().enumerate() {
        col /= values[i].sqrt();
    }
    Ok((values.rows(0, keep).into_owned(), vectors))
}

fn block_power_top(
    cov: &CovarianceInput,
    h: &DVector<f64>,
    q: usize,
    r: usize,
    opts: &SpectrumOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = cov.p();
    let width = (q + q.max(8)).min(p);
    let mut rng = SeededSampler::new(opts.seed);
    let start = DMatrix::from_fn(p, width, |_, _| rng.standard_normal());
    let mut basis = orthonormalize(start);
    let mut matvecs = 0usize;
    loop {
        let image = apply_scaled(cov, h, &basis);
        matvecs += width;
        let small = basis.tr_mul(&image);
        let small = (&small + small.transpose()) * 0.5;
        let (theta, z) = sym_eig_desc(small);
        let ritz = &basis * &z;
        let ritz_image = &image * &z;
        let scale = theta[0].max(1.0);
        let converged = (0..q)
            .take_while(|&i| {
                let res = (ritz_image.column(i) - ritz.column(i) * theta[i]).norm();
                res <= opts.tol * scale
            })
            .count();
        if converged >= q {
            return Ok((theta.rows(0, q).into_owned(), ritz.columns(0, q).into_owned()));
        }
        if matvecs + width > opts.max_matvecs {
            // The guard pair only serves tie detection; return without it.
            if converged >= r {
                return Ok((theta.rows(0, r).into_owned(), ritz.columns(0, r).into_owned()));
            }
            return numerical(format!(
                "block power iteration did not converge within {} matvecs ({converged} of {q} pairs)",
                opts.max_matvecs
            ));
        }
        basis = orthonormalize(image);
    }
}
