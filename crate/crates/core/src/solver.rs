//! The difference-of-convex iteration.
//!
//! Each iteration linearises `f₂` at the current precision and minimises the
//! separable surrogate `Σᵢ (−log φᵢ + (sᵢᵢ − ∇ᵢ) φᵢ)` over the box `(0, 1/ε]`, which
//! has the closed form `φᵢ ← min(1/(sᵢᵢ − ∇ᵢ), 1/ε)`. One eigendecomposition per
//! iteration serves both the objective value and the next subgradient.
//!
//! Every step satisfies `f(φᵏ) − f(φᵏ⁺¹) ≥ (ρ/2)‖φᵏ⁺¹ − φᵏ‖²` with `ρ = ε²`, the
//! strong-convexity modulus of `−log φ` on the box; [`certify_descent`] checks that
//! inequality and the averaged rate it implies on a recorded trace.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data_io::{CovarianceInput, SeededSampler};
use crate::error::{domain, numerical, FaError, Result};
use crate::objective::{
    f1_value, spectral_term, subgradient_with_root, SubgradientWorkspace, UniquenessPrecision,
};
use crate::spectra::{eig_top_with, ScaledSpectrum, SpectrumOptions};

/// `sᵢᵢ − ∇ᵢ` below `−PSD_TOL · max(1, sᵢᵢ)` means the eigenpairs are wrong.
pub const PSD_TOL: f64 = 1e-6;

/// Relative objective increase treated as a failed descent.
pub const STALL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `φᵢ = min(2/sᵢᵢ, 1/ε)`, i.e. `ψ` starts at half the marginal variance.
    HalfDiagonal,
    /// `φᵢ` uniform on `(0, 1]`, clipped to the box.
    UniformRandom(u64),
    WarmStart(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// `f(φᵏ) − f(φᵏ⁺¹) < η · max(1, |f(φᵏ⁺¹)|)`.
    ObjectiveRelative,
    /// `‖φᵏ⁺¹ − φᵏ‖ < η ‖φᵏ‖`.
    IterateRelative,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rank: usize,
    pub eps: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub init: Init,
    pub stop_rule: StopRule,
    pub spectrum: SpectrumOptions,
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            eps: 1e-7,
            tol: 1e-8,
            max_iters: 2000,
            init: Init::HalfDiagonal,
            stop_rule: StopRule::ObjectiveRelative,
            spectrum: SpectrumOptions::default(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return domain(format!("eps must be positive, got {}", self.eps));
        }
        validate_loop(self.rank, self.tol, self.max_iters, p)
    }
}

pub(crate) fn validate_loop(rank: usize, tol: f64, max_iters: usize, p: usize) -> Result<()> {
    if rank == 0 || rank >= p {
        return domain(format!("rank r = {rank} must satisfy 1 <= r < p = {p}"));
    }
    if !(tol >= 0.0) || !tol.is_finite() {
        return domain(format!("tolerance must be non-negative, got {tol}"));
    }
    if max_iters == 0 {
        return domain("max_iters must be at least 1");
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIters,
    Stalled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverTrace {
    /// `f(φ¹), f(φ²), …`; one entry more than `step_norms`.
    pub objectives: Vec<f64>,
    /// `‖φᵏ⁺¹ − φᵏ‖₂`.
    pub step_norms: Vec<f64>,
    /// Seconds since the start of the solve at which each objective was known.
    pub elapsed: Vec<f64>,
    pub termination: Termination,
    pub iterations: usize,
    /// Strong-convexity constant used by [`certify_descent`].
    pub rho: f64,
    /// Iterations at which `λ_r ≈ λ_{r+1}`.
    pub tie_iterations: usize,
}

impl SolverTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().expect("trace holds at least one objective")
    }
}

pub(crate) struct LoopControl {
    pub rank: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub stop_rule: StopRule,
    pub rho: f64,
    pub spectrum: SpectrumOptions,
}

/// State exposed to the per-iteration update.
pub(crate) struct IterState<'a> {
    pub phi: &'a DVector<f64>,
    pub workspace: &'a SubgradientWorkspace,
}

fn eval_objective(cov: &CovarianceInput, phi: &DVector<f64>, r: usize, spectrum: &ScaledSpectrum) -> f64 {
    let f1 = f1_value(cov.diag(), phi);
    let top: f64 = (0..r).map(|i| spectral_term(spectrum.value(i))).sum();
    f1 + top
}

/// Runs the DC loop from `phi0` with the given coordinate update and an additive
/// penalty on the traced objective.
pub(crate) fn run_dc<U, P>(
    cov: &CovarianceInput,
    phi0: DVector<f64>,
    ctl: &LoopControl,
    mut update: U,
    penalty: P,
) -> Result<(DVector<f64>, SolverTrace)>
where
    U: FnMut(IterState<'_>) -> Result<DVector<f64>>,
    P: Fn(&DVector<f64>) -> f64,
{
    let start = Instant::now();
    let r = ctl.rank;
    let mut phi = phi0;
    let mut spectrum = eig_top_with(cov, &phi, r, &ctl.spectrum)?;
    let mut f = eval_objective(cov, &phi, r, &spectrum) + penalty(&phi);
    let mut trace = SolverTrace {
        objectives: vec![f],
        step_norms: Vec::new(),
        elapsed: vec![start.elapsed().as_secs_f64()],
        termination: Termination::MaxIters,
        iterations: 0,
        rho: ctl.rho,
        tie_iterations: 0,
    };

    for _ in 0..ctl.max_iters {
        let h = phi.map(f64::sqrt);
        let workspace = subgradient_with_root(cov, &h, r, &spectrum);
        if workspace.tie_flag {
            trace.tie_iterations += 1;
        }
        let next = update(IterState {
            phi: &phi,
            workspace: &workspace,
        })?;
        let step = (&next - &phi).norm();
        let next_spectrum = eig_top_with(cov, &next, r, &ctl.spectrum)?;
        let f_next = eval_objective(cov, &next, r, &next_spectrum) + penalty(&next);
        let scale = f_next.abs().max(1.0);

        // An increase within rounding means no further progress is resolvable;
        // keep the current iterate and leave the step out of the trace.
        if f_next > f && f_next - f <= STALL_TOL * scale {
            trace.termination = Termination::Converged;
            break;
        }

        trace.objectives.push(f_next);
        trace.step_norms.push(step);
        trace.elapsed.push(start.elapsed().as_secs_f64());
        trace.iterations += 1;

        if f_next - f > STALL_TOL * scale {
            trace.termination = Termination::Stalled;
            return Ok((next, trace));
        }
        let converged = step == 0.0
            || match ctl.stop_rule {
                StopRule::ObjectiveRelative => f - f_next < ctl.tol * scale,
                StopRule::IterateRelative => step < ctl.tol * phi.norm(),
            };
        phi = next;
        spectrum = next_spectrum;
        f = f_next;
        if converged {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok((phi, trace))
}

/// Closed-form minimiser of `−log φ + d φ` over `(0, upper]`, where `d = sᵢᵢ − ∇ᵢ`.
pub(crate) fn box_coordinate(s_ii: f64, grad_i: f64, eps: f64, upper: f64, i: usize) -> Result<f64> {
    let d = s_ii - grad_i;
    if d < -PSD_TOL * s_ii.max(1.0) {
        return numerical(format!(
            "s_ii - grad_i = {d:e} < 0 at coordinate {i}; eigenpairs are inaccurate"
        ));
    }
    Ok(if d <= eps { upper } else { (1.0 / d).min(upper) })
}

/// One DC update `φᵢ ← min(1/(sᵢᵢ − ∇ᵢ), 1/ε)`.
pub fn dc_step(
    cov: &CovarianceInput,
    phi: &UniquenessPrecision,
    workspace: &SubgradientWorkspace,
) -> Result<UniquenessPrecision> {
    let eps = phi.eps();
    if !(eps > 0.0) {
        return domain("the box update needs eps > 0");
    }
    let upper = phi.upper();
    let diag = cov.diag();
    let mut next = DVector::zeros(phi.len());
    for i in 0..phi.len() {
        next[i] = box_coordinate(diag[i], workspace.grad[i], eps, upper, i)?;
    }
    UniquenessPrecision::new(next, eps)
}

pub(crate) fn initial_phi(cov: &CovarianceInput, init: &Init, upper: f64) -> Result<DVector<f64>> {
    let p = cov.p();
    match init {
        Init::HalfDiagonal => Ok(cov.diag().map(|s| (1.0 / (0.5 * s)).min(upper))),
        Init::UniformRandom(seed) => {
            let mut rng = SeededSampler::new(*seed);
            Ok(DVector::from_fn(p, |_, _| (1.0 - rng.uniform()).min(upper)))
        }
        Init::WarmStart(phi0) => {
            if phi0.len() != p {
                return domain(format!("warm start has length {}, expected {p}", phi0.len()));
            }
            if phi0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return domain("warm start must be positive and finite");
            }
            Ok(phi0.map(|v| v.min(upper)))
        }
    }
}

/// Runs the DC iteration to convergence.
pub fn solve(cov: &CovarianceInput, config: &SolverConfig) -> Result<(UniquenessPrecision, SolverTrace)> {
    solve_restricted(cov, config, None)
}

/// Like [`solve`], leaving coordinates flagged in `fixed` at their initial values.
pub(crate) fn solve_restricted(
    cov: &CovarianceInput,
    config: &SolverConfig,
    fixed: Option<&[bool]>,
) -> Result<(UniquenessPrecision, SolverTrace)> {
    config.validate(cov.p())?;
    let eps = config.eps;
    let upper = 1.0 / eps;
    let phi0 = match (fixed, &config.init) {
        // Pinned coordinates may sit outside the current box.
        (Some(mask), Init::WarmStart(w)) => {
            let mut phi = initial_phi(cov, &config.init, upper)?;
            for (i, &pinned) in mask.iter().enumerate() {
                if pinned {
                    phi[i] = w[i];
                }
            }
            phi
        }
        _ => initial_phi(cov, &config.init, upper)?,
    };
    let ctl = LoopControl {
        rank: config.rank,
        tol: config.tol,
        max_iters: config.max_iters,
        stop_rule: config.stop_rule,
        rho: eps * eps,
        spectrum: config.spectrum.clone(),
    };
    let diag = cov.diag().clone();
    let (phi, trace) = run_dc(
        cov,
        phi0,
        &ctl,
        |state| {
            let mut next = state.phi.clone();
            for i in 0..next.len() {
                if fixed.is_some_and(|m| m[i]) {
                    continue;
                }
                next[i] = box_coordinate(diag[i], state.workspace.grad[i], eps, upper, i)?;
            }
            Ok(next)
        },
        |_| 0.0,
    )?;
    let phi = if fixed.is_some() {
        UniquenessPrecision::unbounded(phi)?
    } else {
        UniquenessPrecision::new(phi, eps)?
    };
    Ok((phi, trace))
}


/// Summary of a passed descent certificate.
#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub iterations: usize,
    /// Smallest `(f(φᵏ) − f(φᵏ⁺¹)) − (ρ/2)‖Δₖ‖²` over the trace.
    pub worst_margin: f64,
    /// `min_k ρ‖Δₖ‖²`.
    pub min_scaled_step: f64,
    /// `(2/K)(f(φ¹) − f(φᴷ⁺¹))`.
    pub rate_bound: f64,
}

/// Checks the sufficient-decrease inequality on every recorded step and the
/// `O(1/K)` rate bound it implies, using the final objective in place of the limit.
///
/// Iterations are numbered from 1: iteration `k` compares `f(φᵏ)` with `f(φᵏ⁺¹)`.
pub fn certify_descent(trace: &SolverTrace) -> Result<DescentReport> {
    let k_total = trace.step_norms.len();
    if trace.objectives.len() != k_total + 1 {
        return domain("trace must hold one more objective than step norms");
    }
    let rho = trace.rho;
    let f_first = trace.objectives[0];
    let slack_of = |f: f64| 1e-9 * f.abs().max(1.0);
    let mut worst_margin = f64::INFINITY;
    let mut min_scaled_step = f64::INFINITY;
    for k in 0..k_total {
        let decrease = trace.objectives[k] - trace.objectives[k + 1];
        let required = 0.5 * rho * trace.step_norms[k].powi(2);
        let margin = decrease - required;
        if margin < -slack_of(trace.objectives[k]) {
            return Err(FaError::Certification {
                iteration: k + 1,
                detail: format!("decrease {decrease:e} < (rho/2)|step|^2 = {required:e}"),
            });
        }
        worst_margin = worst_margin.min(margin);
        min_scaled_step = min_scaled_step.min(rho * trace.step_norms[k].powi(2));
    }
    let rate_bound = if k_total == 0 {
        0.0
    } else {
        2.0 / k_total as f64 * (f_first - trace.objectives[k_total])
    };
    if k_total > 0 && min_scaled_step > rate_bound + 2.0 * slack_of(f_first) {
        return Err(FaError::Certification {
            iteration: k_total,
            detail: format!("min rho|step|^2 = {min_scaled_step:e} exceeds rate bound {rate_bound:e}"),
        });
    }
    Ok(DescentReport {
        iterations: k_total,
        worst_margin: if k_total == 0 { 0.0 } else { worst_margin },
        min_scaled_step: if k_total == 0 { 0.0 } else { min_scaled_step },
        rate_bound,
    })
}
