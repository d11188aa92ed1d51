//! The split objective `f = f₁ − f₂` over uniqueness precisions and the
//! subgradient of its convex part `f₂`.

use nalgebra::{DMatrix, DVector};

use crate::data_io::CovarianceInput;
use crate::error::{domain, Result};
use crate::linalg::{scale_rows, sym_eig_desc, unscale_rows};
use crate::spectra::{eig_top, scaled_matrix, ScaledSpectrum};

/// Eigenvalues this close to one count as exactly one.
pub const UNIT_BAND: f64 = 1e-12;

/// Relative gap below which `λ_r` and `λ_{r+1}` are reported as tied.
pub const TIE_TOL: f64 = 1e-9;

/// Precisions `φᵢ = 1/ψᵢ` in the box `0 < φᵢ ≤ 1/ε`.
///
/// `eps == 0` marks an unbounded precision (ridge variant), where only `φᵢ > 0`
/// is required.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessPrecision {
    phi: DVector<f64>,
    eps: f64,
}

impl UniquenessPrecision {
    pub fn new(phi: DVector<f64>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return domain(format!("eps must be positive and finite, got {eps}"));
        }
        let upper = 1.0 / eps;
        if let Some(i) = phi.iter().position(|&v| !(v > 0.0) || v > upper) {
            return domain(format!(
                "phi[{i}] = {} lies outside (0, 1/eps = {upper}]",
                phi[i]
            ));
        }
        Ok(Self { phi, eps })
    }

    /// Precision with no upper bound.
    pub fn unbounded(phi: DVector<f64>) -> Result<Self> {
        if let Some(i) = phi.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return domain(format!("phi[{i}] = {} must be positive and finite", phi[i]));
        }
        Ok(Self { phi, eps: 0.0 })
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.phi
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `1/ε`, infinite for unbounded precisions.
    pub fn upper(&self) -> f64 {
        if self.eps > 0.0 {
            1.0 / self.eps
        } else {
            f64::INFINITY
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Uniquenesses `ψᵢ = 1/φᵢ`.
    pub fn psi(&self) -> DVector<f64> {
        self.phi.map(|v| 1.0 / v)
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
    /// The top-`r` eigenvalues entering `f₂`.
    pub lambda_star: DVector<f64>,
}

/// A subgradient of `f₂` together with the weights that produced it.
#[derive(Debug, Clone)]
pub struct SubgradientWorkspace {
    pub grad: DVector<f64>,
    /// `δᵢ = max(0, 1 − 1/λᵢ)` for `i ≤ r`.
    pub delta: DVector<f64>,
    /// `λ_r` and `λ_{r+1}` coincide, so the subgradient is not unique.
    pub tie_flag: bool,
}

/// `log max(1, λ) − max(1, λ) + 1`, which is `≤ 0`.
pub(crate) fn spectral_term(lambda: f64) -> f64 {
    let m = lambda.max(1.0);
    m.ln() - m + 1.0
}

pub(crate) fn delta_weight(lambda: f64) -> f64 {
    if lambda <= 1.0 + UNIT_BAND {
        0.0
    } else {
        1.0 - 1.0 / lambda
    }
}

pub(crate) fn check_dims(cov: &CovarianceInput, phi: &UniquenessPrecision, r: usize) -> Result<()> {
    let p = cov.p();
    if phi.len() != p {
        return domain(format!("phi has length {}, expected {p}", phi.len()));
    }
    if r == 0 || r >= p {
        return domain(format!("rank r = {r} must satisfy 1 <= r < p = {p}"));
    }
    Ok(())
}

/// `f₁(φ) = Σᵢ (−log φᵢ + sᵢᵢ φᵢ)`.
pub fn f1_value(diag: &DVector<f64>, phi: &DVector<f64>) -> f64 {
    phi.iter()
        .zip(diag.iter())
        .map(|(&v, &s)| -v.ln() + s * v)
        .sum()
}

pub fn objective(cov: &CovarianceInput, phi: &UniquenessPrecision, r: usize) -> Result<ObjectiveValue> {
    check_dims(cov, phi, r)?;
    let spectrum = eig_top(cov, phi, r)?;
    Ok(objective_from_spectrum(cov, phi, r, &spectrum))
}

/// Evaluates `f` from an already computed spectrum at `φ`.
pub fn objective_from_spectrum(
    cov: &CovarianceInput,
    phi: &UniquenessPrecision,
    r: usize,
    spectrum: &ScaledSpectrum,
) -> ObjectiveValue {
    let f1 = f1_value(cov.diag(), phi.phi());
    let lambda_star = DVector::from_fn(r, |i, _| spectrum.value(i));
    let f2 = -lambda_star.iter().map(|&l| spectral_term(l)).sum::<f64>();
    ObjectiveValue {
        f: f1 - f2,
        f1,
        f2,
        lambda_star,
    }
}

/// `f̄(φ) = Σᵢ (−log λᵢ + λᵢ) + Σ_{i≤r} (log max(1,λᵢ) − max(1,λᵢ) + 1)` over all
/// `p` eigenvalues of `S*`; equals `f(φ) − log det S` for positive definite `S`.
pub fn full_rank_objective(cov: &CovarianceInput, phi: &UniquenessPrecision, r: usize) -> Result<f64> {
    check_dims(cov, phi, r)?;
    let (s_eig, _) = sym_eig_desc(cov.covariance_dense());
    let largest = s_eig[0];
    let smallest = s_eig[s_eig.len() - 1];
    if !(smallest > 1e-10 * largest) {
        return domain(format!(
            "covariance is numerically singular (eigenvalues {smallest:e} .. {largest:e})"
        ));
    }
    let (lambda, _) = sym_eig_desc(scaled_matrix(cov, phi.phi()));
    let smooth: f64 = lambda.iter().map(|&l| -l.ln() + l).sum();
    let top: f64 = lambda.iter().take(r).map(|&l| spectral_term(l)).sum();
    Ok(smooth + top)
}

/// A subgradient of `f₂` at `φ`: the diagonal of `Φ^{-1/2} U D₁ Uᵀ Φ^{1/2} S`.
///
/// Computed as row-wise products of `T₁ = Φ^{-1/2} U D₁` and `(Uᵀ Φ^{1/2} S)ᵀ`, so
/// the cost beyond one product with `S` is `O(p r)`.
pub fn subgradient_f2(
    cov: &CovarianceInput,
    phi: &UniquenessPrecision,
    r: usize,
    spectrum: &ScaledSpectrum,
) -> SubgradientWorkspace {
    let h = phi.phi().map(f64::sqrt);
    subgradient_with_root(cov, &h, r, spectrum)
}

pub(crate) fn subgradient_with_root(
    cov: &CovarianceInput,
    h: &DVector<f64>,
    r: usize,
    spectrum: &ScaledSpectrum,
) -> SubgradientWorkspace {
    let delta = DVector::from_fn(r, |i, _| delta_weight(spectrum.value(i)));
    let tie_flag = spectrum.len() > r && {
        let a = spectrum.value(r - 1);
        let b = spectrum.value(r);
        (a - b).abs() <= TIE_TOL * a.abs().max(f64::MIN_POSITIVE)
    };
    let active = delta.iter().take_while(|&&d| d > 0.0).count();
    let mut grad = DVector::zeros(cov.p());
    if active > 0 {
        let (t1, m) = low_rank_factors(cov, h, spectrum, &delta, active);
        row_dots(&t1, &m, &mut grad);
    }
    SubgradientWorkspace { grad, delta, tie_flag }
}

/// `T₁ = Φ^{-1/2} U_k D₁` and `S Φ^{1/2} U_k` for the `k` active eigenpairs.
pub(crate) fn low_rank_factors(
    cov: &CovarianceInput,
    h: &DVector<f64>,
    spectrum: &ScaledSpectrum,
    delta: &DVector<f64>,
    active: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = spectrum.eigenvectors.columns(0, active).into_owned();
    let mut t1 = u.clone();
    for (j, mut col) in t1.column_iter_mut().enumerate() {
        col *= delta[j];
    }
    unscale_rows(&mut t1, h);
    let mut hu = u;
    scale_rows(&mut hu, h);
    let m = cov.mul_cov(&hu);
    (t1, m)
}

/// `out_i = Σ_j a_ij b_ij`, accumulated in ascending `j`.
pub(crate) fn row_dots(a: &DMatrix<f64>, b: &DMatrix<f64>, out: &mut DVector<f64>) {
    for i in 0..a.nrows() {
        let mut acc = 0.0;
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(i, j)];
        }
        out[i] = acc;
    }
}
