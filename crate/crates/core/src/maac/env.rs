//! Training environment for one channel group. Each slot the agents pick an
//! (SF, power level) pair, the analytical model scores the group, and every
//! agent observes its own PDR and EE from that slot at the next one.

use serde::{Deserialize, Serialize};

use super::{power_levels, ActionIndex, MaacConfig, RewardScope};
use crate::analytical::{AnalyticalModel, Transmitter};
use crate::error::{Error, Result};
use crate::model::SpreadingFactor;

/// Local view of one device: last slot's PDR, last slot's EE divided by the
/// EE scale, and the distance to every gateway divided by the cell radius
/// (capped at 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub pdr: f64,
    pub ee: f64,
    pub distances: Vec<f64>,
}

impl Observation {
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.distances.len());
        v.push(self.pdr);
        v.push(self.ee);
        v.extend_from_slice(&self.distances);
        v
    }

    pub fn len(&self) -> usize {
        2 + self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Undoes the EE normalisation.
    pub fn ee_bits_per_joule(&self, ee_scale: f64) -> f64 {
        self.ee * ee_scale
    }
}

/// Analytics and rewards of one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub pdr: Vec<f64>,
    pub ee: Vec<f64>,
    pub channel_ee: f64,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GroupEnv<'a> {
    model: &'a AnalyticalModel,
    members: Vec<usize>,
    bandwidth_hz: f64,
    levels: Vec<f64>,
    distances: Vec<Vec<f64>>,
    ee_scale: f64,
    pdr_threshold: f64,
    ee_weight: Option<f64>,
    reward_unit: f64,
    normaliser: usize,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

/// Upper-bound EE scale: payload bits over the energy of the shortest,
/// cheapest transmission on a channel of the given bandwidth.
pub fn ee_scale(model: &AnalyticalModel, bandwidth_hz: f64) -> f64 {
    let sf7 = SpreadingFactor::from_index(0);
    let power = model.energy().power_w(model.radio().tp_min_dbm);
    model.payload_bits() / (power * model.airtime(sf7, bandwidth_hz))
}

impl<'a> GroupEnv<'a> {
    pub fn new(
        model: &'a AnalyticalModel,
        channel: usize,
        members: Vec<usize>,
        radius_m: f64,
        cfg: &MaacConfig,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter(format!("channel {channel} has no devices")));
        }
        if channel >= model.plan().channel_count() {
            return Err(Error::InvalidParameter(format!("channel {channel} is not in the plan")));
        }
        let radio = model.radio();
        let levels = power_levels(radio.tp_min_dbm, radio.tp_max_dbm, cfg.power_levels)?;
        let bandwidth_hz = model.plan().bandwidth(channel);
        let distances = members
            .iter()
            .map(|&i| model.link().distances(i).iter().map(|d| (d / radius_m).min(1.0)).collect())
            .collect();
        let normaliser = match cfg.reward_scope {
            RewardScope::Group => members.len(),
            RewardScope::Network => model.device_count(),
        };
        Ok(Self {
            model,
            members,
            bandwidth_hz,
            levels,
            distances,
            ee_scale: ee_scale(model, bandwidth_hz),
            pdr_threshold: cfg.pdr_threshold,
            ee_weight: cfg.ee_weight,
            reward_unit: ee_scale(model, bandwidth_hz) / cfg.reward_gain,
            normaliser,
            last: None,
        })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn agents(&self) -> usize {
        self.members.len()
    }

    pub fn obs_dim(&self) -> usize {
        2 + self.model.gateway_count()
    }

    pub fn action_count(&self) -> usize {
        SpreadingFactor::ALL.len() * self.levels.len()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn ee_scale(&self) -> f64 {
        self.ee_scale
    }

    /// EE in bits/J that corresponds to one unit of reward.
    pub fn reward_unit(&self) -> f64 {
        self.reward_unit
    }

    /// Forgets the slot history; observations restart from zero PDR and EE.
    pub fn reset(&mut self) -> Vec<Observation> {
        self.last = None;
        self.observations()
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.agents())
            .map(|m| {
                let (pdr, ee) = self.last.as_ref().map_or((0.0, 0.0), |(d, e)| (d[m], e[m] / self.ee_scale));
                Observation { pdr, ee, distances: self.distances[m].clone() }
            })
            .collect()
    }

    pub fn decode(&self, action: usize) -> (SpreadingFactor, f64) {
        let (sf, level) = ActionIndex(action).decode(self.levels.len());
        (sf, self.levels[level])
    }

    pub fn transmitters(&self, actions: &[usize]) -> Vec<Transmitter> {
        self.members
            .iter()
            .zip(actions)
            .map(|(&i, &a)| {
                let (sf, tp) = self.decode(a);
                self.model.transmitter(i, sf, tp, self.bandwidth_hz)
            })
            .collect()
    }

    /// Scores `actions` without advancing the slot history.
    pub fn score(&self, actions: &[usize]) -> StepOutcome {
        assert_eq!(actions.len(), self.agents(), "one action per agent");
        let txs = self.transmitters(actions);
        let outcome = self.model.evaluate_group(&txs);
        let channel_ee: f64 = outcome.ee.iter().sum();
        let rewards = (0..txs.len())
            .map(|m| {
                if outcome.pdr[m] < self.pdr_threshold {
                    return 0.0;
                }
                let counterfactual = if txs.len() > 1 { Some(without(self.model, &txs, m)) } else { None };
                self.shaped_reward(channel_ee, counterfactual) / self.reward_unit
            })
            .collect();
        StepOutcome { pdr: outcome.pdr, ee: outcome.ee, channel_ee, rewards }
    }

    /// `rho * EE_c + (1 - rho) * (EE_c / N - EE_c,-i / (N - 1))`, with the
    /// difference term dropped for a lone device.
    fn shaped_reward(&self, channel_ee: f64, counterfactual: Option<f64>) -> f64 {
        let n = self.normaliser as f64;
        let rho = self.ee_weight.unwrap_or(1.0 / n);
        let diff = match counterfactual {
            Some(rest) if self.normaliser > 1 => channel_ee / n - rest / (n - 1.0),
            _ => 0.0,
        };
        rho * channel_ee + (1.0 - rho) * diff
    }

    /// Applies one slot and returns its analytics and rewards; the next
    /// observations reflect this slot.
    pub fn step(&mut self, actions: &[usize]) -> StepOutcome {
        let out = self.score(actions);
        self.last = Some((out.pdr.clone(), out.ee.clone()));
        out
    }
}

/// Channel EE with member `skip` removed.
fn without(model: &AnalyticalModel, txs: &[Transmitter], skip: usize) -> f64 {
    let rest: Vec<Transmitter> = txs.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, t)| t.clone()).collect();
    model.evaluate_group(&rest).ee.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Assignment, ChannelPlan, NetworkScenario, Point};

    fn toy() -> (NetworkScenario, ChannelPlan) {
        let s = NetworkScenario::from_positions(
            0,
            vec![Point::new(0.0, 0.0), Point::new(15_000.0, 0.0)],
            vec![Point::new(500.0, 0.0), Point::new(0.0, 900.0), Point::new(3000.0, 0.0)],
        )
        .unwrap();
        let p = ChannelPlan::uniform(2, 125e3, 3, 3).unwrap();
        (s, p)
    }

    #[test]
    fn reset_observation_is_zero_history() {
        let (s, p) = toy();
        let m = AnalyticalModel::new(&s, &p).unwrap();
        let mut env = GroupEnv::new(&m, 0, vec![0, 2], s.geometry.cell_radius_m, &MaacConfig::default()).unwrap();
        let obs = env.reset();
        assert_eq!(obs[0].len(), 4);
        assert_eq!((obs[0].pdr, obs[0].ee), (0.0, 0.0));
        assert!(obs.iter().flat_map(|o| o.distances.iter()).all(|&d| (0.0..=1.0).contains(&d)));
        // the far gateway is beyond R for every device
        assert_eq!(obs[0].distances[1], 1.0);
        env.step(&[0, 0]);
        let next = env.observations();
        assert!(next[0].pdr > 0.0 && next[0].ee > 0.0);
    }

    #[test]
    fn two_device_reward_matches_full_evaluation() {
        let (s, p) = toy();
        let m = AnalyticalModel::new(&s, &p).unwrap();
        let cfg = MaacConfig { pdr_threshold: 0.0, ..MaacConfig::default() };
        let env = GroupEnv::new(&m, 0, vec![0, 2], s.geometry.cell_radius_m, &cfg).unwrap();
        let actions = [9, 15];
        let out = env.score(&actions);
        let (sf0, tp0) = env.decode(9);
        let (sf2, tp2) = env.decode(15);
        let sf1 = SpreadingFactor::new(12).unwrap();
        let both = Assignment::new(vec![0, 1, 0], vec![sf0, sf1, sf2], vec![tp0, 20.0, tp2]).unwrap();
        let ev = m.evaluate(&both).unwrap();
        let ee_c = ev.ee.per_channel[0];
        // device 2 alone on channel 0
        let alone = Assignment::new(vec![1, 1, 0], vec![sf0, sf1, sf2], vec![tp0, 20.0, tp2]).unwrap();
        let ee_rest = m.evaluate(&alone).unwrap().ee.per_channel[0];
        let expected = (0.5 * ee_c + 0.5 * (ee_c / 2.0 - ee_rest / 1.0)) / env.reward_unit();
        assert!((out.rewards[0] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        assert!((out.channel_ee - ee_c).abs() < 1e-9 * ee_c);
    }

    #[test]
    fn reward_gate_and_lone_device() {
        let (s, p) = toy();
        let m = AnalyticalModel::new(&s, &p).unwrap();
        let strict = MaacConfig { pdr_threshold: 1.0, ..MaacConfig::default() };
        let env = GroupEnv::new(&m, 0, vec![0, 1, 2], s.geometry.cell_radius_m, &strict).unwrap();
        let out = env.score(&[0, 0, 0]);
        assert!(out.pdr.iter().all(|&d| d < 1.0));
        assert!(out.rewards.iter().all(|&r| r == 0.0));

        let cfg = MaacConfig { pdr_threshold: 0.0, ..MaacConfig::default() };
        let lone = GroupEnv::new(&m, 1, vec![1], s.geometry.cell_radius_m, &cfg).unwrap();
        let out = lone.score(&[59]);
        assert!((out.rewards[0] - out.channel_ee / lone.reward_unit()).abs() < 1e-12);
    }

    #[test]
    fn ee_scale_bounds_every_device_ee() {
        let (s, p) = toy();
        let m = AnalyticalModel::new(&s, &p).unwrap();
        let env = GroupEnv::new(&m, 0, vec![0], s.geometry.cell_radius_m, &MaacConfig::default()).unwrap();
        for a in 0..60 {
            assert!(env.score(&[a]).ee[0] <= env.ee_scale() * (1.0 + 1e-12));
        }
    }
}
