//! Loading recovery and the Gaussian negative log-likelihood.
//!
//! For a fixed precision `φ`, the best loadings are `L = Ψ^{1/2} [z₁ … z_r]` with
//! `zᵢ` the eigenvector of `S*` for `λᵢ`, scaled to `‖zᵢ‖² = max(1, λᵢ) − 1`. The
//! likelihood is evaluated in factored form, never inverting a `p × p` matrix.
//!
//! Loadings are identifiable only up to an orthogonal rotation; the returned basis
//! is the eigenvector basis with the sign convention of [`crate::spectra`].

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::data_io::{matrix_rows, CovarianceInput};
use crate::error::{domain, numerical, Result};
use crate::linalg::unscale_rows;
use crate::objective::UniquenessPrecision;
use crate::spectra::{eig_top, ScaledSpectrum, DENSE_MAX_P};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub psi: DVector<f64>,
    /// `p × r`; columns past `rank_used` are zero.
    pub loadings: DMatrix<f64>,
    pub neg_loglik: f64,
    pub rank_used: usize,
}

impl FactorModel {
    /// Builds a model from its parts and evaluates the likelihood against `cov`.
    pub fn from_parts(cov: &CovarianceInput, psi: DVector<f64>, loadings: DMatrix<f64>) -> Result<Self> {
        let neg_loglik = neg_loglik_parts(cov, &psi, &loadings)?;
        let rank_used = loadings
            .column_iter()
            .filter(|c| c.iter().any(|&v| v != 0.0))
            .count();
        Ok(Self {
            psi,
            loadings,
            neg_loglik,
            rank_used,
        })
    }

    pub fn p(&self) -> usize {
        self.psi.len()
    }

    pub fn rank(&self) -> usize {
        self.loadings.ncols()
    }

    /// Dense `diag(Ψ) + L Lᵀ`.
    pub fn implied_covariance(&self) -> Result<DMatrix<f64>> {
        if self.p() > DENSE_MAX_P {
            return domain(format!(
                "refusing to materialise a {p} x {p} covariance (limit {DENSE_MAX_P})",
                p = self.p()
            ));
        }
        let mut sigma = &self.loadings * self.loadings.transpose();
        for i in 0..self.p() {
            sigma[(i, i)] += self.psi[i];
        }
        Ok(sigma)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema": 1,
            "psi": self.psi.as_slice(),
            "loadings": matrix_rows(&self.loadings),
            "neg_loglik": self.neg_loglik,
            "rank_used": self.rank_used,
            "r": self.rank(),
            "p": self.p(),
        })
    }
}

/// Optimal loadings for the precision `phi` and the resulting model.
pub fn recover_loadings(cov: &CovarianceInput, phi: &UniquenessPrecision, r: usize) -> Result<FactorModel> {
    let spectrum = eig_top(cov, phi, r)?;
    loadings_from_spectrum(cov, phi.phi(), r, &spectrum)
}

pub(crate) fn loadings_from_spectrum(
    cov: &CovarianceInput,
    phi: &DVector<f64>,
    r: usize,
    spectrum: &ScaledSpectrum,
) -> Result<FactorModel> {
    let p = cov.p();
    let mut loadings = DMatrix::zeros(p, r);
    for j in 0..r.min(spectrum.len()) {
        let lambda = spectrum.value(j);
        if lambda > 1.0 {
            let scale = (lambda - 1.0).sqrt();
            loadings.set_column(j, &(spectrum.eigenvectors.column(j) * scale));
        }
    }
    let h = phi.map(f64::sqrt);
    unscale_rows(&mut loadings, &h);
    let psi = phi.map(|v| 1.0 / v);
    FactorModel::from_parts(cov, psi, loadings)
}

/// `ℒ(Σ) = log det Σ + tr(Σ⁻¹ S)` for `Σ = diag(Ψ) + L Lᵀ` of `model`.
pub fn neg_loglik(cov: &CovarianceInput, model: &FactorModel) -> Result<f64> {
    neg_loglik_parts(cov, &model.psi, &model.loadings)
}

/// Woodbury evaluation: with `A = Ψ⁻¹ L` and `M = I + Lᵀ A`,
/// `log det Σ = Σ log ψᵢ + log det M` and `tr(Σ⁻¹S) = Σ sᵢᵢ/ψᵢ − tr(M⁻¹ Aᵀ S A)`.
pub fn neg_loglik_parts(cov: &CovarianceInput, psi: &DVector<f64>, loadings: &DMatrix<f64>) -> Result<f64> {
    let p = cov.p();
    if psi.len() != p || loadings.nrows() != p {
        return domain(format!(
            "model has p = {} / {} rows, covariance has p = {p}",
            psi.len(),
            loadings.nrows()
        ));
    }
    if psi.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return domain("uniquenesses must be strictly positive and finite");
    }
    let k = loadings.ncols();
    let mut a = loadings.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row /= psi[i];
    }
    let m = DMatrix::identity(k, k) + loadings.tr_mul(&a);
    let Some(chol) = m.cholesky() else {
        return numerical("I + Lᵀ Ψ⁻¹ L is not positive definite");
    };
    let logdet_m = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let logdet = psi.iter().map(|v| v.ln()).sum::<f64>() + logdet_m;
    let diag_term: f64 = cov.diag().iter().zip(psi.iter()).map(|(s, v)| s / v).sum();
    let correction = if k == 0 {
        0.0
    } else {
        let sa = cov.mul_cov(&a);
        let core = a.tr_mul(&sa);
        chol.solve(&core).trace()
    };
    Ok(logdet + diag_term - correction)
}
