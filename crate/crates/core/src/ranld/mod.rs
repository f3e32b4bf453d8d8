//! Non-Lipschitz direction analysis: per-state cross-entropy input
//! gradients, the sensitivity matrix `L(S) = (1/n)·Σ gᵢgᵢᵀ`, its principal
//! direction, feature correlation quotients and the derived diagnostics.

mod analysis;
mod collect;
mod loss;
mod search;
mod sensitivity;
mod stateset;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::envs::EnvError;
use crate::numerics::NumericsError;
use crate::qnet::ModelError;

pub use analysis::{
    analyze, correlation_report, fourier_spectrum, gradient_norm_trace, AnalysisConfig,
    AnalysisReport, CorrelationReport, CorrelationRow, GradientTrace, PrincipalSummary, Spectrum,
    REPORT_SCHEMA_VERSION,
};
pub use collect::{collect_states, model_id, Perturbation};
pub use loss::{
    cross_entropy, cross_entropy_from_q, cross_entropy_upstream, label_gradient, nld_gradient,
    softmax_policy, Temperature,
};
pub use search::{epsilon_nld_search, NldSearch};
pub use sensitivity::{
    accumulate_l, accumulate_l_with, correlation_quotient, correlation_quotient_with,
    principal_direction, state_gradients, GradientMode, PrincipalDirection, SensitivityMatrix,
};
pub use stateset::{StateSet, StateSetProvenance, STATESET_MAGIC, STATESET_VERSION};

#[derive(Debug, Error)]
pub enum RanldError {
    #[error("state set is empty")]
    EmptySet,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("correlation quotient undefined: baseline top eigenvalue is {0}")]
    UndefinedQuotient(f64),
    #[error("episode count must be at least 1")]
    NoEpisodes,
    #[error("corrupt state-set archive: {0}")]
    Archive(String),
    #[error("unsupported state-set archive version {found} (supported {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
