use std::path::{Path, PathBuf};

use ranld_core::attacks::AttackConfig;
use ranld_core::envs::EnvSpec;
use ranld_core::ranld::{GradientMode, Temperature};
use ranld_core::training::TrainConfig;
use ranld_core::transforms::TransformConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAttack {
    pub tag: String,
    #[serde(flatten)]
    pub config: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub temperature: Temperature,
    pub gradient_mode: GradientMode,
    /// Episodes per collected state set.
    pub episodes: usize,
    /// Seed of the baseline set S.
    pub base_seed: u64,
    /// Seed of the independent untransformed set Ŝ.
    pub hat_seed: u64,
    /// Seed of the perturbed sets S^Ψ.
    pub probe_seed: u64,
    /// Scale transforms down until they are no more perceptible than the
    /// attacks (median perceptual similarity).
    pub calibrate_transforms: bool,
    /// Clean states used for calibration.
    pub calibration_states: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            temperature: Temperature::default(),
            gradient_mode: GradientMode::Raw,
            episodes: 10,
            base_seed: 101,
            hat_seed: 202,
            probe_seed: 202,
            calibrate_transforms: true,
            calibration_states: 30,
        }
    }
}

fn default_attacks() -> Vec<NamedAttack> {
    AttackConfig::portfolio()
        .into_iter()
        .map(|(tag, config)| NamedAttack { tag, config })
        .collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<NamedAttack>,
    #[serde(default = "TransformConfig::defaults")]
    pub transforms: Vec<TransformConfig>,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Catch 12×12 with every default.
    pub fn catch_default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            env: EnvSpec::catch(12, 12),
            train: TrainConfig::default(),
            attacks: default_attacks(),
            transforms: TransformConfig::defaults(),
            analysis: AnalysisSettings::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return err(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.env
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for a in &self.attacks {
            a.config
                .validate()
                .map_err(|e| CliError::Config(format!("attack {}: {e}", a.tag)))?;
        }
        for t in &self.transforms {
            t.validate()
                .map_err(|e| CliError::Config(format!("transform {}: {e}", t.tag())))?;
        }
        let mut tags: Vec<String> = self.tags();
        tags.sort();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return err("perturbation tags must be unique".into());
        }
        if self.analysis.episodes == 0 {
            return err("analysis.episodes must be at least 1".into());
        }
        Ok(())
    }

    /// `none` followed by every configured attack and transform tag.
    pub fn tags(&self) -> Vec<String> {
        std::iter::once("none".to_string())
            .chain(self.attacks.iter().map(|a| a.tag.clone()))
            .chain(self.transforms.iter().map(|t| t.tag().to_string()))
            .collect()
    }

    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_json());
        u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::catch_default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(cfg.tags()[0], "none");
        assert_eq!(cfg.tags().len(), 11);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = RunConfig::parse(
            r#"{"schema_version":1,"env":{"kind":"catch","height":12,"width":12}}"#,
        )
        .unwrap();
        assert_eq!(cfg, RunConfig::catch_default());
    }

    #[test]
    fn bad_configs_rejected() {
        for text in [
            r#"{"schema_version":2,"env":{"kind":"catch","height":12,"width":12}}"#,
            r#"{"schema_version":1,"env":{"kind":"catch","height":1,"width":12}}"#,
            r#"{"schema_version":1,"env":{"kind":"catch","height":12,"width":12},"bogus":1}"#,
            r#"{"schema_version":1,"env":{"kind":"catch","height":12,"width":12},"analysis":{"episodes":0}}"#,
            "not json",
        ] {
            assert!(
                matches!(RunConfig::parse(text), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::catch_default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
