use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RanldError;
use crate::envs::EnvSpec;
use crate::io::{write_atomic, Reader, Writer};
use crate::obs::Obs;

pub const STATESET_MAGIC: &[u8; 8] = b"RNLDSSET";
pub const STATESET_VERSION: u32 = 1;

/// Where a state set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSetProvenance {
    pub model_id: String,
    pub env: Option<EnvSpec>,
    /// Perturbation tag, `"none"` for untransformed collections.
    pub tag: String,
    /// Full perturbation description (attack or calibrated transform).
    #[serde(default)]
    pub perturbation: serde_json::Value,
    pub episodes: usize,
    pub seed: u64,
    pub config_hash: u64,
}

impl StateSetProvenance {
    pub fn untracked(tag: &str) -> Self {
        Self {
            model_id: String::new(),
            env: None,
            tag: tag.to_string(),
            perturbation: serde_json::Value::Null,
            episodes: 1,
            seed: 0,
            config_hash: 0,
        }
    }
}

/// Ordered observations encountered by a policy, grouped into episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub provenance: StateSetProvenance,
    observations: Vec<Obs>,
    /// Unperturbed counterparts of `observations`, when a perturbation was
    /// applied during collection.
    clean: Option<Vec<Obs>>,
    episode_lengths: Vec<usize>,
}

impl StateSet {
    pub fn new(
        observations: Vec<Obs>,
        clean: Option<Vec<Obs>>,
        episode_lengths: Vec<usize>,
        provenance: StateSetProvenance,
    ) -> Result<Self, RanldError> {
        let first = observations.first().ok_or(RanldError::EmptySet)?;
        let shape = (first.height(), first.width());
        let check = |o: &Obs| {
            if (o.height(), o.width()) == shape {
                Ok(())
            } else {
                Err(RanldError::Shape {
                    expected: shape,
                    found: (o.height(), o.width()),
                })
            }
        };
        observations.iter().try_for_each(check)?;
        if let Some(c) = &clean {
            if c.len() != observations.len() {
                return Err(RanldError::Archive(
                    "clean/perturbed length mismatch".into(),
                ));
            }
            c.iter().try_for_each(check)?;
        }
        if episode_lengths.iter().sum::<usize>() != observations.len()
            || episode_lengths.contains(&0)
        {
            return Err(RanldError::Archive(
                "episode lengths do not partition the set".into(),
            ));
        }
        Ok(Self {
            provenance,
            observations,
            clean,
            episode_lengths,
        })
    }

    /// A single-episode set without provenance, for ad hoc analysis.
    pub fn from_observations(observations: Vec<Obs>) -> Result<Self, RanldError> {
        let n = observations.len();
        Self::new(
            observations,
            None,
            vec![n],
            StateSetProvenance::untracked("none"),
        )
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn height(&self) -> usize {
        self.observations[0].height()
    }

    pub fn width(&self) -> usize {
        self.observations[0].width()
    }

    pub fn dim(&self) -> usize {
        self.observations[0].dim()
    }

    pub fn observations(&self) -> &[Obs] {
        &self.observations
    }

    pub fn clean(&self) -> Option<&[Obs]> {
        self.clean.as_deref()
    }

    pub fn episode_lengths(&self) -> &[usize] {
        &self.episode_lengths
    }

    /// Index ranges of the episodes in visit order.
    pub fn episode_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.episode_lengths
            .iter()
            .map(|len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(STATESET_MAGIC);
        w.u32(STATESET_VERSION);
        w.str(&serde_json::to_string(&self.provenance).expect("provenance serializes"));
        w.u32(self.height() as u32);
        w.u32(self.width() as u32);
        w.u64(self.len() as u64);
        w.u32(self.episode_lengths.len() as u32);
        for len in &self.episode_lengths {
            w.u64(*len as u64);
        }
        w.u8(self.clean.is_some() as u8);
        let blocks = std::iter::once(&self.observations).chain(self.clean.as_ref());
        for block in blocks {
            for o in block {
                o.pixels().iter().for_each(|p| w.f64(*p));
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RanldError> {
        let bad = |m: &str| RanldError::Archive(m.to_string());
        let mut r = Reader::new(bytes);
        if r.take(8) != Some(STATESET_MAGIC.as_slice()) {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != STATESET_VERSION {
            return Err(RanldError::UnsupportedVersion {
                found: version,
                supported: STATESET_VERSION,
            });
        }
        let prov_text = r.str().ok_or_else(|| bad("truncated provenance"))?;
        let provenance: StateSetProvenance =
            serde_json::from_str(&prov_text).map_err(|e| bad(&format!("provenance: {e}")))?;
        let h = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let w = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let n = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
        let n_ep = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let mut lengths = Vec::with_capacity(n_ep.min(1 << 20));
        for _ in 0..n_ep {
            lengths.push(r.u64().ok_or_else(|| bad("truncated episode table"))? as usize);
        }
        let has_clean = match r.u8() {
            Some(0) => false,
            Some(1) => true,
            _ => return Err(bad("bad clean flag")),
        };
        let blocks = if has_clean { 2 } else { 1 };
        let d = h.checked_mul(w).ok_or_else(|| bad("dimension overflow"))?;
        let need = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(8 * blocks))
            .ok_or_else(|| bad("size overflow"))?;
        if r.remaining() != need {
            return Err(bad("payload size mismatch"));
        }
        let mut read_block = || -> Result<Vec<Obs>, RanldError> {
            (0..n)
                .map(|_| {
                    let px: Vec<f64> = (0..d).map(|_| r.f64().unwrap()).collect();
                    Obs::new(h, w, px).map_err(|e| bad(&e.to_string()))
                })
                .collect()
        };
        let observations = read_block()?;
        let clean = if has_clean { Some(read_block()?) } else { None };
        Self::new(observations, clean, lengths, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<(), RanldError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, RanldError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StateSet {
        let obs: Vec<Obs> = (0..5)
            .map(|i| Obs::new(2, 3, vec![i as f64 / 10.0; 6]).unwrap())
            .collect();
        let clean: Vec<Obs> = (0..5).map(|_| Obs::zeros(2, 3)).collect();
        let mut prov = StateSetProvenance::untracked("blur");
        prov.env = Some(EnvSpec::catch(2, 3));
        prov.seed = 9;
        StateSet::new(obs, Some(clean), vec![2, 3], prov).unwrap()
    }

    #[test]
    fn archive_round_trip() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], STATESET_MAGIC);
        assert_eq!(StateSet::from_bytes(&bytes).unwrap(), s);
        assert_eq!(s.episode_ranges(), vec![0..2, 2..5]);
    }

    #[test]
    fn archive_rejects_damage() {
        let bytes = sample().to_bytes();
        assert!(StateSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(StateSet::from_bytes(&extra).is_err());
        let mut future = bytes.clone();
        future[8] = 9;
        assert!(matches!(
            StateSet::from_bytes(&future),
            Err(RanldError::UnsupportedVersion { found: 9, .. })
        ));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(StateSet::from_bytes(&magic).is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(
            StateSet::from_observations(vec![]),
            Err(RanldError::EmptySet)
        ));
        let mixed = vec![Obs::zeros(2, 2), Obs::zeros(2, 3)];
        assert!(matches!(
            StateSet::from_observations(mixed),
            Err(RanldError::Shape { .. })
        ));
        let obs = vec![Obs::zeros(2, 2); 3];
        assert!(
            StateSet::new(obs, None, vec![1, 1], StateSetProvenance::untracked("none")).is_err()
        );
    }
}
