use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetworkInstance;
use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Layers considered when no limit is configured.
pub const DEFAULT_MAX_LAYERS: usize = 128;

/// Which weight(s) to take from each eligible layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum IndexRule {
    /// Index `round(p * (len - 1))` of every layer segment, `p` in `[0, 1]`.
    RelativeIndex { p: f64 },
    /// One uniformly random index per layer.
    Random { seed: u64 },
    /// `k` distinct uniformly random indices per layer (all of them if the layer is smaller).
    KPerLayer { k: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub rule: IndexRule,
    pub max_layers: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            rule: IndexRule::RelativeIndex { p: 0.0 },
            max_layers: DEFAULT_MAX_LAYERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamEntry {
    /// Node id of the owning layer.
    pub layer: NodeId,
    /// Flat index inside that layer's weight segment.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSelection {
    pub entries: Vec<ParamEntry>,
    pub policy: SamplingPolicy,
}

impl ParamSelection {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl NetworkInstance {
    /// Samples parameters from the first `max_layers` weighted, non-batchnorm layers.
    pub fn select_params(&self, policy: &SamplingPolicy) -> Result<ParamSelection> {
        if policy.max_layers == 0 {
            return Err(Error::InvalidPolicy("max_layers must be positive".into()));
        }
        let eligible: Vec<(NodeId, usize)> = self
            .layers()
            .iter()
            .filter(|(&id, _)| self.graph().nodes[id].op.is_weighted())
            .map(|(&id, r)| (id, r.len()))
            .take(policy.max_layers)
            .collect();
        if eligible.is_empty() {
            return Err(Error::NoEligibleLayers);
        }
        let mut entries = Vec::new();
        match policy.rule {
            IndexRule::RelativeIndex { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidPolicy(format!("relative index {p} outside [0, 1]")));
                }
                for (layer, len) in eligible {
                    let index = (p * (len - 1) as f64).round() as usize;
                    entries.push(ParamEntry { layer, index });
                }
            }
            IndexRule::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for (layer, len) in eligible {
                    entries.push(ParamEntry {
                        layer,
                        index: rng.random_range(0..len),
                    });
                }
            }
            IndexRule::KPerLayer { k, seed } => {
                if k == 0 {
                    return Err(Error::InvalidPolicy("k must be positive".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for (layer, len) in eligible {
                    let mut picked = index::sample(&mut rng, len, k.min(len)).into_vec();
                    picked.sort_unstable();
                    entries.extend(picked.into_iter().map(|index| ParamEntry { layer, index }));
                }
            }
        }
        Ok(ParamSelection {
            entries,
            policy: *policy,
        })
    }

    /// Every parameter of every weighted layer, in layout order.
    pub fn select_all_weighted(&self) -> Result<ParamSelection> {
        let policy = SamplingPolicy {
            rule: IndexRule::KPerLayer { k: usize::MAX, seed: 0 },
            max_layers: usize::MAX,
        };
        self.select_params(&policy)
    }
}
