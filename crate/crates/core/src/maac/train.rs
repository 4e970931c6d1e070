//! Episode loop per channel group and greedy read-out of the final
//! allocation. Groups are independent and train in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agent::{AgentBundle, UpdateStats};
use super::env::{GroupEnv, Observation};
use super::replay::{ReplayBuffer, Transition};
use super::MaacConfig;
use crate::analytical::AnalyticalModel;
use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::model::{Assignment, ChannelPlan, NetworkScenario, SpreadingFactor};

/// Per-episode training statistics. Losses are `None` in episodes without
/// an update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Mean scaled reward over slots and agents.
    pub mean_reward: f64,
    /// Mean over slots of the summed EE, bits/J.
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
}

/// Trained learner of one channel group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPolicy {
    pub channel: usize,
    pub members: Vec<usize>,
    pub bundle: AgentBundle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTraining {
    pub policy: GroupPolicy,
    pub curve: Vec<CurvePoint>,
    pub updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub groups: Vec<GroupTraining>,
    /// Network-level curve: rewards averaged over all agents, EE summed
    /// over groups.
    pub curve: Vec<CurvePoint>,
    pub assignment: Assignment,
}

impl TrainingOutcome {
    pub fn policies(&self) -> Vec<GroupPolicy> {
        self.groups.iter().map(|g| g.policy.clone()).collect()
    }
}

fn group_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

fn features(obs: &[Observation]) -> Vec<Vec<f64>> {
    obs.iter().map(Observation::features).collect()
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Trains the learner of one channel group.
pub fn train_group(
    model: &AnalyticalModel,
    channel: usize,
    members: Vec<usize>,
    radius_m: f64,
    cfg: &MaacConfig,
    seed: u64,
) -> Result<GroupTraining> {
    cfg.validate()?;
    let mut env = GroupEnv::new(model, channel, members.clone(), radius_m, cfg)?;
    let mut rng = group_rng(seed, channel);
    let n = env.agents();
    let mut bundle = AgentBundle::new(n, env.obs_dim(), env.action_count(), cfg, &mut rng);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut steps = 0usize;
    let mut updates = 0usize;

    for episode in 0..cfg.episodes {
        let mut obs = features(&env.reset());
        let (mut reward_sum, mut ee_sum, mut pdr_sum) = (0.0, 0.0, 0.0);
        let mut stats: Vec<UpdateStats> = Vec::new();
        for slot in 0..cfg.slots_per_episode {
            let actions = bundle.act(&obs, &mut rng);
            let out = env.step(&actions);
            reward_sum += out.rewards.iter().sum::<f64>();
            ee_sum += out.channel_ee;
            pdr_sum += out.pdr.iter().sum::<f64>();
            let next = features(&env.observations());
            buffer.push(Transition { obs, actions, rewards: out.rewards, next_obs: next.clone() });
            obs = next;
            steps += 1;
            if steps.is_multiple_of(cfg.update_every) && buffer.len() > cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut rng).expect("buffer holds a full batch");
                let s = bundle.update(&batch, &mut rng).map_err(|e| match e {
                    Error::Divergence(msg) => Error::Divergence(format!(
                        "channel {channel}, episode {episode}, slot {slot}, update {updates}: {msg}"
                    )),
                    other => other,
                })?;
                stats.push(s);
                updates += 1;
            }
        }
        let slots = cfg.slots_per_episode as f64;
        curve.push(CurvePoint {
            episode,
            mean_reward: reward_sum / (slots * n as f64),
            system_ee: ee_sum / slots,
            mean_pdr: pdr_sum / (slots * n as f64),
            actor_loss: mean_of(&stats.iter().map(|s| s.actor_loss).collect::<Vec<_>>()),
            critic_loss: mean_of(&stats.iter().map(|s| s.critic_loss).collect::<Vec<_>>()),
        });
        log::debug!("channel {channel} episode {episode}: {:?}", curve.last());
    }
    Ok(GroupTraining { policy: GroupPolicy { channel, members, bundle }, curve, updates })
}

/// Combines per-group curves: rewards and PDR weighted by group size, EE
/// summed, losses averaged over groups that updated.
fn merge_curves(groups: &[GroupTraining]) -> Vec<CurvePoint> {
    let episodes = groups.iter().map(|g| g.curve.len()).min().unwrap_or(0);
    let total: usize = groups.iter().map(|g| g.policy.members.len()).sum();
    (0..episodes)
        .map(|e| {
            let weighted = |f: fn(&CurvePoint) -> f64| {
                groups.iter().map(|g| f(&g.curve[e]) * g.policy.members.len() as f64).sum::<f64>() / total.max(1) as f64
            };
            let losses = |f: fn(&CurvePoint) -> Option<f64>| {
                mean_of(&groups.iter().filter_map(|g| f(&g.curve[e])).collect::<Vec<_>>())
            };
            CurvePoint {
                episode: e,
                mean_reward: weighted(|c| c.mean_reward),
                system_ee: groups.iter().map(|g| g.curve[e].system_ee).sum(),
                mean_pdr: weighted(|c| c.mean_pdr),
                actor_loss: losses(|c| c.actor_loss),
                critic_loss: losses(|c| c.critic_loss),
            }
        })
        .collect()
}

/// Trains one learner per non-empty channel of `matching` and reads out
/// the greedy allocation.
pub fn train(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    matching: &Matching,
    cfg: &MaacConfig,
    seed: u64,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if matching.device_count() != scenario.device_count() || matching.channel_count() != plan.channel_count() {
        return Err(Error::InvalidParameter("matching does not fit the scenario and plan".into()));
    }
    let model = AnalyticalModel::new(scenario, plan)?;
    let radius = scenario.geometry.cell_radius_m;
    let groups: Vec<GroupTraining> = (0..plan.channel_count())
        .filter(|&c| !matching.members(c).is_empty())
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|c| train_group(&model, c, matching.members(c).to_vec(), radius, cfg, seed))
        .collect::<Result<_>>()?;
    let policies: Vec<GroupPolicy> = groups.iter().map(|g| g.policy.clone()).collect();
    let assignment = execute_policy(&policies, scenario, plan, cfg)?;
    Ok(TrainingOutcome { curve: merge_curves(&groups), groups, assignment })
}

/// Distributed execution: every device repeatedly picks the most probable
/// action of its own actor given only its own observation; the allocation
/// after `execution_slots` slots is returned.
pub fn execute_policy(
    policies: &[GroupPolicy],
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    cfg: &MaacConfig,
) -> Result<Assignment> {
    let model = AnalyticalModel::new(scenario, plan)?;
    let n = scenario.device_count();
    let mut channel = vec![usize::MAX; n];
    let mut sf = vec![SpreadingFactor::from_index(0); n];
    let mut tp = vec![scenario.radio.tp_max_dbm; n];
    for p in policies {
        if p.bundle.agents() != p.members.len() {
            return Err(Error::LengthMismatch { left: p.bundle.agents(), right: p.members.len() });
        }
        let mut env = GroupEnv::new(&model, p.channel, p.members.clone(), scenario.geometry.cell_radius_m, cfg)?;
        let mut obs = env.reset();
        let mut actions = vec![0; env.agents()];
        for _ in 0..cfg.execution_slots {
            for (m, o) in obs.iter().enumerate() {
                actions[m] = p.bundle.greedy_action(m, &o.features());
            }
            env.step(&actions);
            obs = env.observations();
        }
        for (m, &i) in p.members.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidParameter(format!("device {i} is not in the scenario")));
            }
            let (s, t) = env.decode(actions[m]);
            channel[i] = p.channel;
            sf[i] = s;
            tp[i] = t;
        }
    }
    if let Some(i) = channel.iter().position(|&c| c == usize::MAX) {
        return Err(Error::InvalidParameter(format!("device {i} belongs to no trained group")));
    }
    let assignment = Assignment::new(channel, sf, tp)?;
    assignment.validate(scenario, plan)?;
    Ok(assignment)
}
