//! Ridge-penalised iteration, ε-continuation with pinning, and rank paths.

use nalgebra::DVector;

use crate::data_io::CovarianceInput;
use crate::error::{domain, Result};
use crate::model::{recover_loadings, FactorModel};
use crate::objective::{SubgradientWorkspace, UniquenessPrecision};
use crate::solver::{
    initial_phi, run_dc, solve_restricted, validate_loop, Init, LoopControl, SolverConfig, SolverTrace, StopRule,
};
use crate::spectra::SpectrumOptions;

/// Solver settings for `f(φ) + γ Σ φᵢ²` over `φ > 0`.
#[derive(Debug, Clone)]
pub struct RidgeConfig {
    pub gamma: f64,
    pub rank: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub init: Init,
    pub stop_rule: StopRule,
    pub spectrum: SpectrumOptions,
}

impl RidgeConfig {
    pub fn new(rank: usize, gamma: f64) -> Self {
        let base = SolverConfig::new(rank);
        Self {
            gamma,
            rank,
            tol: base.tol,
            max_iters: base.max_iters,
            init: base.init,
            stop_rule: base.stop_rule,
            spectrum: base.spectrum,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return domain(format!("gamma must be positive, got {}", self.gamma));
        }
        validate_loop(self.rank, self.tol, self.max_iters, p)
    }
}

/// Minimiser of `−log φ + d φ + γ φ²` over `φ > 0`.
///
/// Equals `(−d + √(d² + 8γ)) / 4γ`; the second branch avoids cancellation for
/// large positive `d`.
pub(crate) fn ridge_coordinate(d: f64, gamma: f64) -> f64 {
    let root = (d * d + 8.0 * gamma).sqrt();
    if d > 0.0 {
        2.0 / (d + root)
    } else {
        (root - d) / (4.0 * gamma)
    }
}

/// One ridge update; every output satisfies `ψᵢ ≥ √(2γ)`.
pub fn ridge_step(
    cov: &CovarianceInput,
    phi: &UniquenessPrecision,
    workspace: &SubgradientWorkspace,
    gamma: f64,
) -> Result<UniquenessPrecision> {
    if !(gamma > 0.0) {
        return domain(format!("gamma must be positive, got {gamma}"));
    }
    if phi.len() != cov.p() || workspace.grad.len() != cov.p() {
        return domain("dimension mismatch between phi, subgradient and covariance");
    }
    let diag = cov.diag();
    let next = DVector::from_fn(phi.len(), |i, _| ridge_coordinate(diag[i] - workspace.grad[i], gamma));
    UniquenessPrecision::unbounded(next)
}

/// Runs the ridge-penalised iteration; the trace records the penalised objective.
pub fn solve_ridge(cov: &CovarianceInput, config: &RidgeConfig) -> Result<(UniquenessPrecision, SolverTrace)> {
    config.validate(cov.p())?;
    let gamma = config.gamma;
    let phi0 = initial_phi(cov, &config.init, f64::INFINITY)?;
    let ctl = LoopControl {
        rank: config.rank,
        tol: config.tol,
        max_iters: config.max_iters,
        stop_rule: config.stop_rule,
        rho: 2.0 * gamma,
        spectrum: config.spectrum.clone(),
    };
    let diag = cov.diag().clone();
    let (phi, trace) = run_dc(
        cov,
        phi0,
        &ctl,
        |state| {
            Ok(DVector::from_fn(diag.len(), |i, _| {
                ridge_coordinate(diag[i] - state.workspace.grad[i], gamma)
            }))
        },
        |phi| gamma * phi.norm_squared(),
    )?;
    Ok((UniquenessPrecision::unbounded(phi)?, trace))
}

/// Ridge solves along a decreasing `γ` schedule, each warm-started from the last.
pub fn solve_ridge_continuation(
    cov: &CovarianceInput,
    config: &RidgeConfig,
    gammas: &[f64],
) -> Result<(UniquenessPrecision, Vec<SolverTrace>)> {
    check_schedule(gammas)?;
    let mut cfg = config.clone();
    let mut traces = Vec::with_capacity(gammas.len());
    let mut last = None;
    for &gamma in gammas {
        cfg.gamma = gamma;
        let (phi, trace) = solve_ridge(cov, &cfg)?;
        cfg.init = Init::WarmStart(phi.phi().clone());
        traces.push(trace);
        last = Some(phi);
    }
    Ok((last.expect("schedule is non-empty"), traces))
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return domain("schedule must not be empty");
    }
    if schedule.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return domain("schedule entries must be positive and finite");
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return domain("schedule must be strictly decreasing");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ContinuationConfig {
    /// Strictly decreasing; the last entry is the target `ε′`.
    pub eps_schedule: Vec<f64>,
    /// A coordinate is pinned when `ψᵢ ≤ pin_factor · ε` after a schedule step.
    pub pin_factor: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            eps_schedule: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            pin_factor: 1.001,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        check_schedule(&self.eps_schedule)?;
        if !(self.pin_factor >= 1.0) {
            return domain("pin_factor must be at least 1");
        }
        Ok(())
    }

    pub fn target_eps(&self) -> f64 {
        *self.eps_schedule.last().expect("validated schedule is non-empty")
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub phi: UniquenessPrecision,
    /// Indices with `ψᵢ` held at `ε′`, ascending.
    pub pinned: Vec<usize>,
    /// One trace per schedule step.
    pub traces: Vec<SolverTrace>,
}

/// Box solves along the `ε` schedule.
///
/// Between steps, every free coordinate with `ψᵢ ≤ pin_factor · ε` is moved to
/// `ψᵢ = ε′` and excluded from later updates. Coordinates on the final boundary
/// are reported as pinned as well.
pub fn solve_continuation(
    cov: &CovarianceInput,
    config: &SolverConfig,
    cc: &ContinuationConfig,
) -> Result<ContinuationOutcome> {
    cc.validate()?;
    let target = cc.target_eps();
    let p = cov.p();
    let mut mask = vec![false; p];
    let mut cfg = config.clone();
    let mut traces = Vec::with_capacity(cc.eps_schedule.len());
    let mut phi = DVector::zeros(0);
    let last = cc.eps_schedule.len() - 1;
    for (t, &eps) in cc.eps_schedule.iter().enumerate() {
        cfg.eps = eps;
        let fixed = mask.iter().any(|&m| m).then_some(mask.as_slice());
        let (solved, trace) = solve_restricted(cov, &cfg, fixed)?;
        traces.push(trace);
        phi = solved.into_inner();
        for i in 0..p {
            if !mask[i] && 1.0 / phi[i] <= cc.pin_factor * eps {
                mask[i] = true;
                if t < last {
                    phi[i] = 1.0 / target;
                }
            }
        }
        cfg.init = Init::WarmStart(phi.clone());
    }
    let pinned = (0..p).filter(|&i| mask[i]).collect();
    Ok(ContinuationOutcome {
        phi: UniquenessPrecision::new(phi, target)?,
        pinned,
        traces,
    })
}

#[derive(Debug, Clone)]
pub struct PathEntry {
    pub rank: usize,
    pub phi: UniquenessPrecision,
    pub model: FactorModel,
    pub trace: SolverTrace,
}

/// Solves for each rank in turn, warm-starting from the previous precision.
pub fn solve_path(cov: &CovarianceInput, ranks: &[usize], config: &SolverConfig) -> Result<Vec<PathEntry>> {
    if ranks.is_empty() {
        return domain("rank list must not be empty");
    }
    if ranks.windows(2).any(|w| w[1] <= w[0]) {
        return domain("ranks must be strictly increasing");
    }
    let mut cfg = config.clone();
    let mut path = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        cfg.rank = rank;
        let (phi, trace) = solve_restricted(cov, &cfg, None)?;
        let model = recover_loadings(cov, &phi, rank)?;
        cfg.init = Init::WarmStart(phi.phi().clone());
        path.push(PathEntry {
            rank,
            phi,
            model,
            trace,
        });
    }
    Ok(path)
}
