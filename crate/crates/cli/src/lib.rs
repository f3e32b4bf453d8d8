//! Pipeline driver for the robustness diagnostics: train a Q-network, collect
//! encountered state sets under attacks and transforms, analyze them and
//! render heatmaps.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod render;

use thiserror::Error;

pub use commands::{
    archive_path, cmd_analyze, cmd_collect, cmd_render, cmd_train, load_model, model_path,
    run_pipeline, AnalysisOutputs, PipelineOutputs, TrainOutputs,
};
pub use config::{AnalysisSettings, NamedAttack, RunConfig, CONFIG_SCHEMA_VERSION};
pub use render::RenderKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }
}
