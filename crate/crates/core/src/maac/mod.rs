//! SF/TP allocation inside each channel group by multi-agent soft
//! actor-critic with attention critics. Training is centralised (one shared
//! critic per group sees every agent's observation and action); execution
//! is distributed (each device's actor reads only its own observation).

pub mod agent;
pub mod checkpoint;
pub mod critic;
pub mod env;
pub mod nn;
pub mod replay;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SpreadingFactor;

pub use agent::{AgentBundle, UpdateStats};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use critic::{AttentionCritic, JointBatch};
pub use env::{GroupEnv, Observation, StepOutcome};
pub use replay::{ReplayBuffer, Transition};
pub use train::{execute_policy, train, train_group, CurvePoint, GroupPolicy, GroupTraining, TrainingOutcome};

/// Which device count normalises the counterfactual reward term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardScope {
    /// Size of the device's own channel group.
    #[default]
    Group,
    /// Total device count of the network.
    Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaacConfig {
    pub episodes: usize,
    pub slots_per_episode: usize,
    pub update_every: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub target_rate: f64,
    pub attention_heads: usize,
    pub temperature: f64,
    pub power_levels: usize,
    pub embed_dim: usize,
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub grad_clip: f64,
    pub pdr_threshold: f64,
    pub reward_scope: RewardScope,
    /// Weight of the channel-EE term; `None` uses `1 / N_c`.
    pub ee_weight: Option<f64>,
    /// Rewards are channel EE divided by the EE scale times this gain.
    pub reward_gain: f64,
    /// Greedy rollout length used to read out the final allocation.
    pub execution_slots: usize,
}

impl Default for MaacConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            slots_per_episode: 30,
            update_every: 4,
            buffer_capacity: 100_000,
            batch_size: 1024,
            learning_rate: 1e-3,
            discount: 0.99,
            target_rate: 1e-3,
            attention_heads: 2,
            temperature: 0.05,
            power_levels: 10,
            embed_dim: 64,
            critic_hidden: vec![64, 64],
            actor_hidden: vec![64, 64],
            grad_clip: 10.0,
            pdr_threshold: 0.5,
            reward_scope: RewardScope::Group,
            ee_weight: None,
            reward_gain: 100.0,
            execution_slots: 30,
        }
    }
}

impl MaacConfig {
    pub fn action_count(&self) -> usize {
        SpreadingFactor::ALL.len() * self.power_levels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.slots_per_episode == 0 || self.update_every == 0 || self.execution_slots == 0 {
            return bad("slot counts must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity <= self.batch_size {
            return bad("replay capacity must exceed a positive batch size");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return bad("target rate must lie in (0, 1]");
        }
        if self.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        if !(self.reward_gain > 0.0 && self.reward_gain.is_finite()) {
            return bad("reward gain must be positive");
        }
        if self.power_levels < 2 {
            return bad("at least two power levels are required");
        }
        if self.attention_heads == 0 || !self.embed_dim.is_multiple_of(self.attention_heads) {
            return bad("embedding width must be a multiple of the attention head count");
        }
        if !(0.0..=1.0).contains(&self.pdr_threshold) {
            return bad("PDR threshold must lie in [0, 1]");
        }
        if let Some(w) = self.ee_weight {
            if !(0.0..=1.0).contains(&w) {
                return bad("EE weight must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Arithmetic grid of `levels` transmit powers from `min_dbm` to `max_dbm`.
pub fn power_levels(min_dbm: f64, max_dbm: f64, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 || !(min_dbm < max_dbm) {
        return Err(Error::InvalidParameter(format!(
            "power grid needs at least two levels and min < max, got {levels} levels over [{min_dbm}, {max_dbm}]"
        )));
    }
    let step = (max_dbm - min_dbm) / (levels - 1) as f64;
    Ok((0..levels).map(|j| if j + 1 == levels { max_dbm } else { min_dbm + j as f64 * step }).collect())
}

/// Flat index over the SF x power-level grid, SF-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionIndex(usize);

impl ActionIndex {
    pub fn new(index: usize, levels: usize) -> Result<Self> {
        if index < SpreadingFactor::ALL.len() * levels {
            Ok(Self(index))
        } else {
            Err(Error::InvalidParameter(format!("action {index} outside a grid of {levels} power levels")))
        }
    }

    pub fn encode(sf: SpreadingFactor, level: usize, levels: usize) -> Result<Self> {
        if level >= levels {
            return Err(Error::InvalidParameter(format!("power level {level} of {levels}")));
        }
        Ok(Self(sf.index() * levels + level))
    }

    pub fn decode(self, levels: usize) -> (SpreadingFactor, usize) {
        (SpreadingFactor::from_index(self.0 / levels), self.0 % levels)
    }

    pub fn value(self) -> usize {
        self.0
    }
}
