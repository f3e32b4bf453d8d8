use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RanldError, StateSet, StateSetProvenance};
use crate::attacks::{attack, AttackConfig};
use crate::envs::EnvSpec;
use crate::numerics::{fnv1a, Rng};
use crate::obs::Obs;
use crate::qnet::QNetwork;
use crate::transforms::TransformConfig;

/// What the policy sees instead of the clean observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Perturbation {
    None,
    Attack {
        tag: String,
        config: AttackConfig,
    },
    /// `scale` records the calibration factor that produced `config`.
    Transform {
        config: TransformConfig,
        scale: f64,
    },
}

impl Perturbation {
    pub fn tag(&self) -> String {
        match self {
            Self::None => "none".into(),
            Self::Attack { tag, .. } => tag.clone(),
            Self::Transform { config, .. } => config.tag().into(),
        }
    }

    fn apply(&self, net: &QNetwork, s: &Obs, rng: &mut Rng) -> Result<Obs, RanldError> {
        Ok(match self {
            Self::None => s.clone(),
            Self::Attack { config, .. } => attack(net, s, config, rng)?.s_adv,
            Self::Transform { config, .. } => config.apply(s),
        })
    }
}

/// Hex fingerprint of a serialized model.
pub fn model_id(net: &QNetwork) -> String {
    format!("{:016x}", fnv1a(&net.to_bytes()))
}

/// Rolls out the greedy policy acting on perturbed observations for
/// `episodes` episodes and records what it consumed. Episode `k` draws its
/// start state from substream `("episode", k)` of `seed`, so episodes are
/// independent and may run concurrently.
pub fn collect_states(
    net: &QNetwork,
    env: &EnvSpec,
    perturbation: &Perturbation,
    episodes: usize,
    seed: u64,
    config_hash: u64,
) -> Result<StateSet, RanldError> {
    if episodes == 0 {
        return Err(RanldError::NoEpisodes);
    }
    env.validate()?;
    if (env.height, env.width) != (net.height(), net.width()) {
        return Err(RanldError::Shape {
            expected: (net.height(), net.width()),
            found: (env.height, env.width),
        });
    }
    let root = Rng::new(seed);
    let runs: Vec<(Vec<Obs>, Vec<Obs>)> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut ep_rng = root.substream_indexed("episode", k as u64);
            let mut atk_rng = root.substream_indexed("perturbation", k as u64);
            let (mut state, mut obs) = env.reset(&mut ep_rng);
            let mut seen = Vec::new();
            let mut clean = Vec::new();
            loop {
                let view = perturbation.apply(net, &obs, &mut atk_rng)?;
                let a = net.greedy_action(&view)?;
                seen.push(view);
                clean.push(obs);
                let out = env.step(&state, a)?;
                if out.done {
                    break;
                }
                state = out.state;
                obs = out.obs;
            }
            Ok((seen, clean))
        })
        .collect::<Result<_, RanldError>>()?;

    let lengths = runs.iter().map(|(s, _)| s.len()).collect();
    let (mut seen, mut clean) = (Vec::new(), Vec::new());
    for (s, c) in runs {
        seen.extend(s);
        clean.extend(c);
    }
    let provenance = StateSetProvenance {
        model_id: model_id(net),
        env: Some(env.clone()),
        tag: perturbation.tag(),
        perturbation: serde_json::to_value(perturbation).expect("perturbation serializes"),
        episodes,
        seed,
        config_hash,
    };
    let clean = (*perturbation != Perturbation::None).then_some(clean);
    StateSet::new(seen, clean, lengths, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catch_collection_is_reproducible() {
        let env = EnvSpec::catch(6, 5);
        let net = QNetwork::new(6, 5, &[8], 3, &mut Rng::new(1));
        let a = collect_states(&net, &env, &Perturbation::None, 3, 11, 0).unwrap();
        let b = collect_states(&net, &env, &Perturbation::None, 3, 11, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episode_lengths(), &[5, 5, 5]);
        assert!(a.clean().is_none());
        assert!(matches!(
            collect_states(&net, &env, &Perturbation::None, 0, 11, 0),
            Err(RanldError::NoEpisodes)
        ));
    }

    #[test]
    fn perturbed_collection_keeps_clean_counterparts() {
        let env = EnvSpec::catch(6, 5);
        let net = QNetwork::new(6, 5, &[8], 3, &mut Rng::new(2));
        let p = Perturbation::Attack {
            tag: "ifgsm".into(),
            config: AttackConfig::ifgsm(),
        };
        let set = collect_states(&net, &env, &p, 2, 3, 0).unwrap();
        let clean = set.clean().unwrap();
        for (s, c) in set.observations().iter().zip(clean) {
            let linf = s
                .pixels()
                .iter()
                .zip(c.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(linf <= 0.05 + 1e-12);
        }
        assert_eq!(set.provenance.tag, "ifgsm");
    }
}
