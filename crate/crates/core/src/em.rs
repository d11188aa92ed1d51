//! Expectation-maximisation for the factor model, used as a benchmark baseline.
//!
//! E-step moments with `β = (I + Lᵀ Ψ⁻¹ L)⁻¹ Lᵀ Ψ⁻¹`:
//! `E[z zᵀ] = I − β L + β S βᵀ`. M-step: `L ← S βᵀ E[z zᵀ]⁻¹` and
//! `ψᵢ ← sᵢᵢ − (L S βᵀ)ᵢᵢ`, floored. Only products with `S` are needed, so data
//! input with `n < p` never forms the covariance.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::data_io::CovarianceInput;
use crate::error::{domain, numerical, Result};
use crate::model::{neg_loglik_parts, FactorModel};
use crate::objective::row_dots;
use crate::solver::{validate_loop, SolverTrace, Termination};
use crate::spectra::{eig_top_with, SpectrumOptions};

/// Relative likelihood increase treated as a failed EM step.
pub const EM_ASCENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub rank: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Seeds the iterative eigensolver used for initialisation.
    pub seed: u64,
    pub psi_floor: f64,
}

impl EmConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_iters: 2000,
            tol: 1e-8,
            seed: SpectrumOptions::default().seed,
            psi_floor: 1e-10,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.psi_floor > 0.0) {
            return domain("psi_floor must be positive");
        }
        validate_loop(self.rank, self.tol, self.max_iters, p)
    }
}

/// `Ψ = diag(S)/2`, `L = U_r diag(√max(λ − ψ̄, 0))` from the top eigenpairs of `S`.
pub fn em_init(cov: &CovarianceInput, config: &EmConfig) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = cov.p();
    let r = config.rank;
    let psi = cov.diag() * 0.5;
    let psi_bar = psi.mean();
    let opts = SpectrumOptions {
        seed: config.seed,
        ..SpectrumOptions::default()
    };
    let spectrum = eig_top_with(cov, &DVector::from_element(p, 1.0), r, &opts)?;
    let mut l = DMatrix::zeros(p, r);
    for j in 0..r.min(spectrum.len()) {
        let scale = (spectrum.value(j) - psi_bar).max(0.0).sqrt();
        l.set_column(j, &(spectrum.eigenvectors.column(j) * scale));
    }
    Ok((psi.map(|v| v.max(config.psi_floor)), l))
}

/// One EM update of `(Ψ, L)`.
pub fn em_step(
    cov: &CovarianceInput,
    psi: &DVector<f64>,
    l: &DMatrix<f64>,
    psi_floor: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = l.ncols();
    let mut a = l.clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row /= psi[i];
    }
    let m = DMatrix::identity(k, k) + l.tr_mul(&a);
    let Some(m_chol) = m.cholesky() else {
        return numerical("I + Lᵀ Ψ⁻¹ L lost positive definiteness");
    };
    // βᵀ = A M⁻¹, since M is symmetric.
    let beta_t = m_chol.solve(&a.transpose()).transpose();
    let sb = cov.mul_cov(&beta_t);
    let ezz = DMatrix::identity(k, k) - beta_t.tr_mul(l) + beta_t.tr_mul(&sb);
    let ezz = (&ezz + ezz.transpose()) * 0.5;
    let Some(ezz_chol) = ezz.cholesky() else {
        return numerical("posterior second moment is not positive definite");
    };
    let l_new = ezz_chol.solve(&sb.transpose()).transpose();
    let mut explained = DVector::zeros(psi.len());
    row_dots(&l_new, &sb, &mut explained);
    let psi_new = DVector::from_fn(psi.len(), |i, _| (cov.diag()[i] - explained[i]).max(psi_floor));
    Ok((psi_new, l_new))
}

/// Runs EM until the relative change in `ℒ` drops below `tol`.
pub fn solve_em(cov: &CovarianceInput, config: &EmConfig) -> Result<(FactorModel, SolverTrace)> {
    config.validate(cov.p())?;
    let start = Instant::now();
    let (mut psi, mut l) = em_init(cov, config)?;
    let mut ll = neg_loglik_parts(cov, &psi, &l)?;
    let mut trace = SolverTrace {
        objectives: vec![ll],
        step_norms: Vec::new(),
        elapsed: vec![start.elapsed().as_secs_f64()],
        termination: Termination::MaxIters,
        iterations: 0,
        rho: 0.0,
        tie_iterations: 0,
    };
    for _ in 0..config.max_iters {
        let (psi_new, l_new) = em_step(cov, &psi, &l, config.psi_floor)?;
        let ll_new = neg_loglik_parts(cov, &psi_new, &l_new)?;
        let scale = ll_new.abs().max(1.0);
        if ll_new - ll > EM_ASCENT_TOL * scale {
            return numerical(format!(
                "EM increased the negative log-likelihood from {ll} to {ll_new} at iteration {}",
                trace.iterations + 1
            ));
        }
        trace.step_norms.push((&psi_new - &psi).norm());
        trace.objectives.push(ll_new);
        trace.elapsed.push(start.elapsed().as_secs_f64());
        trace.iterations += 1;
        let converged = ll - ll_new < config.tol * scale;
        psi = psi_new;
        l = l_new;
        ll = ll_new;
        if converged {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok((FactorModel::from_parts(cov, psi, l)?, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_converges_to_unit_uniquenesses() {
        let cov = CovarianceInput::from_covariance(DMatrix::identity(4, 4), None).unwrap();
        let (model, trace) = solve_em(&cov, &EmConfig::new(1)).unwrap();
        assert!((model.neg_loglik - 4.0).abs() < 1e-6);
        assert!(model.psi.iter().all(|&v| v >= 1e-10));
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0)));
    }

    #[test]
    fn floor_is_respected() {
        let cov = CovarianceInput::from_covariance(DMatrix::from_row_slice(2, 2, &[4., 0., 0., 1.]), None).unwrap();
        let (psi, l) = em_init(&cov, &EmConfig::new(1)).unwrap();
        let (psi, _) = em_step(&cov, &psi, &l, 0.25).unwrap();
        assert!(psi.iter().all(|&v| v >= 0.25));
    }
}
