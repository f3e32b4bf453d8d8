//! Robustness diagnostics for Q-network policies on pixel-observation toy
//! MDPs: training, adversarial and natural observation perturbations, and
//! principal non-Lipschitz direction analysis.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod envs;
pub mod io;
pub mod numerics;
pub mod obs;
pub mod qnet;
pub mod ranld;
pub mod training;
pub mod transforms;

pub use envs::{EnvKind, EnvSpec, Latent, LatentState};
pub use numerics::{Matrix, Rng};
pub use obs::Obs;
pub use qnet::{Provenance, QNetwork};
