//! Maximum-likelihood factor analysis.
//!
//! The model is `Σ = Ψ + L Lᵀ` with diagonal `Ψ ⪰ εI` and `L` of rank at most `r`.
//! Minimising the Gaussian negative log-likelihood over `L` in closed form leaves a
//! problem in the uniqueness precisions `φᵢ = 1/ψᵢ` only:
//!
//! ```text
//! f(φ) = Σᵢ (−log φᵢ + sᵢᵢ φᵢ)  −  ( −Σ_{i≤r} (log max(1,λᵢ) − max(1,λᵢ) + 1) )
//!        \_______ f₁ _______/          \_______________ f₂ _______________/
//! ```
//!
//! where `λ` are the eigenvalues of `Φ^{1/2} S Φ^{1/2}`. Both `f₁` and `f₂` are
//! convex, so `f` is minimised by linearising `f₂` at the current iterate and
//! solving the separable convex surrogate exactly ([`solver::solve`]).
//!
//! Module map:
//! - [`data_io`]: CSV ingestion, centering, synthetic factor-model data.
//! - [`spectra`]: top eigenpairs of the scaled covariance (dense, Gram, block power).
//! - [`objective`]: the split objective and the subgradient of its concave part.
//! - [`solver`]: the DC iteration, its trace and the descent certificate.
//! - [`variants`]: ridge penalty, ε-continuation with pinning, warm-started rank paths.
//! - [`model`]: loading recovery and the Woodbury-based likelihood.
//! - [`em`]: a plain EM baseline for benchmarking.
//! - [`blockdiag`]: block-diagonal precision variant.

pub mod blockdiag;
pub mod data_io;
pub mod em;
pub mod error;
mod linalg;
pub mod model;
pub mod objective;
pub mod solver;
pub mod spectra;
pub mod variants;

pub use data_io::{CovarianceInput, GroundTruth, InputMode, SyntheticSpec};
pub use error::{FaError, Result};
pub use model::FactorModel;
pub use objective::{ObjectiveValue, SubgradientWorkspace, UniquenessPrecision};
pub use solver::{Init, SolverConfig, SolverTrace, StopRule, Termination};
pub use spectra::{ScaledSpectrum, SpectrumStrategy};
