//! JSON checkpoints of trained group policies. Every tensor is stored with
//! its shape so a reader can check the layout before use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::Parameters;
use super::train::GroupPolicy;
use super::MaacConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: MaacConfig,
    pub groups: Vec<GroupPolicy>,
}

impl Checkpoint {
    pub fn new(config: MaacConfig, groups: Vec<GroupPolicy>) -> Self {
        Self { version: CHECKPOINT_VERSION, config, groups }
    }

    /// Rejects unknown versions and target networks whose shapes differ
    /// from their online counterparts.
    pub fn check(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {} is not {CHECKPOINT_VERSION}", self.version)));
        }
        for g in &self.groups {
            let b = &g.bundle;
            let shapes = |t: Vec<&ndarray::Array2<f64>>| t.iter().map(|x| x.dim()).collect::<Vec<_>>();
            if shapes(b.actors.tensors()) != shapes(b.target_actors.tensors())
                || shapes(b.critic.tensors()) != shapes(b.target_critic.tensors())
            {
                return Err(Error::Format(format!("channel {}: target shapes differ from online shapes", g.channel)));
            }
            if b.agents() != g.members.len() || b.critic.agents() != g.members.len() {
                return Err(Error::Format(format!("channel {}: agent count mismatch", g.channel)));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string(checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    c.check()?;
    Ok(c)
}
