//! Channel assignment by many-to-one swap matching with externalities.
//!
//! Devices carry fixed stage-one parameters (distance-table SF, maximum
//! power). A device's utility is its EE, a channel's utility the sum of its
//! members' EE. Two devices on different channels swap when no one of the
//! four players loses and at least one gains; scans repeat until a full pass
//! finds no such pair, which is a two-sided exchange-stable matching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytical::{combine_gateways, AnalyticalModel, Transmitter};
use crate::error::{Error, Result};
use crate::model::{default_sf_by_distance, Assignment, ChannelPlan, NetworkScenario, SpreadingFactor};

/// Minimum relative gain that counts as a strict improvement.
pub const SWAP_EPSILON: f64 = 1e-9;

/// Full scans allowed per device before the run is flagged as not converged.
pub const SCANS_PER_DEVICE: usize = 10;

/// Device-to-channel matching under a per-channel quota.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    channel_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    quota: usize,
}

impl Matching {
    pub fn from_channels(channel_of: Vec<usize>, channels: usize, quota: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); channels];
        for (i, &c) in channel_of.iter().enumerate() {
            if c >= channels {
                return Err(Error::InvalidParameter(format!("device {i} on unknown channel {c}")));
            }
            members[c].push(i);
        }
        if let Some((c, m)) = members.iter().enumerate().find(|(_, m)| m.len() > quota) {
            return Err(Error::InvalidParameter(format!("channel {c} holds {} devices, quota {quota}", m.len())));
        }
        Ok(Self { channel_of, members, quota })
    }

    pub fn channel(&self, device: usize) -> usize {
        self.channel_of[device]
    }

    pub fn channels(&self) -> &[usize] {
        &self.channel_of
    }

    /// Members of `channel` in ascending device order.
    pub fn members(&self, channel: usize) -> &[usize] {
        &self.members[channel]
    }

    pub fn channel_count(&self) -> usize {
        self.members.len()
    }

    pub fn device_count(&self) -> usize {
        self.channel_of.len()
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    /// Exchanges the channels of two devices.
    pub fn swap(&mut self, a: usize, b: usize) {
        let (ca, cb) = (self.channel_of[a], self.channel_of[b]);
        if ca == cb {
            return;
        }
        self.channel_of[a] = cb;
        self.channel_of[b] = ca;
        for (c, out, into) in [(ca, a, b), (cb, b, a)] {
            let m = &mut self.members[c];
            m.retain(|&x| x != out);
            let pos = m.partition_point(|&x| x < into);
            m.insert(pos, into);
        }
    }

    pub fn to_assignment(&self, sf: &[SpreadingFactor], tp_dbm: &[f64]) -> Result<Assignment> {
        Assignment::new(self.channel_of.clone(), sf.to_vec(), tp_dbm.to_vec())
    }
}

/// Utilities of the four players around one candidate swap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub iteration: usize,
    pub i: usize,
    pub i_prime: usize,
    pub c: usize,
    pub c_prime: usize,
    /// `[U_i, U_i', U_c, U_c']` before the swap.
    pub before: [f64; 4],
    pub after: [f64; 4],
    pub system_ee_before: f64,
    pub system_ee_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingOutcome {
    pub matching: Matching,
    pub swaps: Vec<SwapRecord>,
    /// Full scans performed, including the final swap-free one.
    pub scans: usize,
    pub converged: bool,
    pub initial_system_ee: f64,
    pub final_system_ee: f64,
}

/// Per-channel EE of every member, in member order.
#[derive(Clone, Debug, PartialEq)]
struct GroupUtility {
    per_member: Vec<f64>,
    total: f64,
}

/// Stage-one evaluator. Pairwise survival factors and sensitivity terms are
/// precomputed per channel so group evaluation is lookups and products,
/// multiplied in the same order as [`AnalyticalModel::evaluate_group`].
pub struct SwapMatcher {
    model: AnalyticalModel,
    txs: Vec<Vec<Transmitter>>,
    /// `[channel][target][interferer][gateway]`
    factor: Vec<Vec<f64>>,
    /// `[channel][target][gateway]`
    sens: Vec<Vec<f64>>,
    devices: usize,
    gateways: usize,
}

impl SwapMatcher {
    pub fn new(scenario: &NetworkScenario, plan: &ChannelPlan) -> Result<Self> {
        let model = AnalyticalModel::new(scenario, plan)?;
        let n = scenario.device_count();
        let k_count = scenario.gateway_count();
        let sfs = stage_one_sf(scenario)?;
        let tp = scenario.radio.tp_max_dbm;
        let mut txs = Vec::new();
        let mut factor = Vec::new();
        let mut sens = Vec::new();
        for c in 0..plan.channel_count() {
            let bw = plan.bandwidth(c);
            let row: Vec<Transmitter> = (0..n).map(|i| model.transmitter(i, sfs[i], tp, bw)).collect();
            let mut f = vec![1.0; n * n * k_count];
            let mut s = vec![0.0; n * k_count];
            for (t, target) in row.iter().enumerate() {
                for k in 0..k_count {
                    s[t * k_count + k] = model.sensitivity_factor(target, k);
                }
                for (j, interferer) in row.iter().enumerate() {
                    if j == t {
                        continue;
                    }
                    let h = model.interferer_activity(target, interferer);
                    for k in 0..k_count {
                        f[(t * n + j) * k_count + k] =
                            model.interference_factor(h, model.capture_probability(target, interferer, k));
                    }
                }
            }
            txs.push(row);
            factor.push(f);
            sens.push(s);
        }
        Ok(Self { model, txs, factor, sens, devices: n, gateways: k_count })
    }

    pub fn model(&self) -> &AnalyticalModel {
        &self.model
    }

    /// Stage-one SF per device.
    pub fn stage_one_sf(&self) -> Vec<SpreadingFactor> {
        self.txs.first().map(|row| row.iter().map(|t| t.sf).collect()).unwrap_or_default()
    }

    pub fn stage_one_assignment(&self, matching: &Matching) -> Result<Assignment> {
        let tp = vec![self.model.radio().tp_max_dbm; self.devices];
        matching.to_assignment(&self.stage_one_sf(), &tp)
    }

    fn group(&self, channel: usize, members: &[usize]) -> GroupUtility {
        let k_count = self.gateways;
        let n = self.devices;
        let f = &self.factor[channel];
        let s = &self.sens[channel];
        let mut row = vec![0.0; k_count];
        let mut per_member = Vec::with_capacity(members.len());
        for &t in members {
            for (k, slot) in row.iter_mut().enumerate() {
                let mut d = s[t * k_count + k];
                for &j in members {
                    if j != t {
                        d *= f[(t * n + j) * k_count + k];
                    }
                }
                *slot = d;
            }
            let pdr = combine_gateways(&row);
            per_member.push(self.model.ee_from_pdr(&self.txs[channel][t], pdr));
        }
        GroupUtility { total: per_member.iter().sum(), per_member }
    }

    /// `U_i`: EE of `device` under `matching`.
    pub fn utility_ed(&self, matching: &Matching, device: usize) -> f64 {
        let c = matching.channel(device);
        let members = matching.members(c);
        let pos = members.iter().position(|&x| x == device).expect("device listed in its channel");
        self.group(c, members).per_member[pos]
    }

    /// `U_c`: summed EE of the channel's members.
    pub fn utility_ch(&self, matching: &Matching, channel: usize) -> f64 {
        self.group(channel, matching.members(channel)).total
    }

    pub fn system_ee(&self, matching: &Matching) -> f64 {
        (0..matching.channel_count()).map(|c| self.utility_ch(matching, c)).sum()
    }

    /// Whether exchanging `i` and `i_prime` is a swap-blocking pair, with the
    /// utilities on both sides. Same-channel pairs are never blocking.
    pub fn is_swap_blocking(&self, matching: &Matching, i: usize, i_prime: usize) -> (bool, SwapRecord) {
        let (c, c_prime) = (matching.channel(i), matching.channel(i_prime));
        let mut record = SwapRecord {
            iteration: 0,
            i,
            i_prime,
            c,
            c_prime,
            before: [0.0; 4],
            after: [0.0; 4],
            system_ee_before: 0.0,
            system_ee_after: 0.0,
        };
        if c == c_prime {
            return (false, record);
        }
        let old_c = matching.members(c);
        let old_cp = matching.members(c_prime);
        let before_c = self.group(c, old_c);
        let before_cp = self.group(c_prime, old_cp);
        let new_c = replaced(old_c, i, i_prime);
        let new_cp = replaced(old_cp, i_prime, i);
        let after_c = self.group(c, &new_c);
        let after_cp = self.group(c_prime, &new_cp);

        let at = |members: &[usize], g: &GroupUtility, d: usize| {
            g.per_member[members.iter().position(|&x| x == d).expect("member present")]
        };
        record.before = [at(old_c, &before_c, i), at(old_cp, &before_cp, i_prime), before_c.total, before_cp.total];
        record.after = [at(&new_cp, &after_cp, i), at(&new_c, &after_c, i_prime), after_c.total, after_cp.total];
        record.system_ee_before = before_c.total + before_cp.total;
        record.system_ee_after = after_c.total + after_cp.total;

        let weakly = record.before.iter().zip(&record.after).all(|(b, a)| a >= b);
        let strictly = record
            .before
            .iter()
            .zip(&record.after)
            .any(|(b, a)| *a > b + SWAP_EPSILON * b.abs().max(f64::MIN_POSITIVE));
        (weakly && strictly, record)
    }

    /// No swap-blocking pair exists.
    pub fn verify_2es(&self, matching: &Matching) -> bool {
        let n = matching.device_count();
        for i in 0..n {
            for j in (i + 1)..n {
                if matching.channel(i) != matching.channel(j) && self.is_swap_blocking(matching, i, j).0 {
                    return false;
                }
            }
        }
        true
    }

    /// Scans pairs in device-index order, executing every blocking swap,
    /// until a full scan is swap-free or the scan cap is reached.
    pub fn run_from(&self, initial: Matching) -> MatchingOutcome {
        let n = initial.device_count();
        let cap = (SCANS_PER_DEVICE * n).max(1);
        let initial_system_ee = self.system_ee(&initial);
        let mut matching = initial;
        let mut swaps = Vec::new();
        let mut scans = 0;
        let mut converged = false;
        while scans < cap {
            scans += 1;
            let mut swapped = false;
            for i in 0..n {
                for j in (i + 1)..n {
                    if matching.channel(i) == matching.channel(j) {
                        continue;
                    }
                    let (blocking, mut record) = self.is_swap_blocking(&matching, i, j);
                    if blocking {
                        record.iteration = scans;
                        matching.swap(i, j);
                        swaps.push(record);
                        swapped = true;
                    }
                }
            }
            if !swapped {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("swap matching hit the scan cap of {cap} without converging");
        }
        MatchingOutcome {
            final_system_ee: self.system_ee(&matching),
            matching,
            swaps,
            scans,
            converged,
            initial_system_ee,
        }
    }

    pub fn run(&self, plan: &ChannelPlan, seed: u64) -> Result<MatchingOutcome> {
        Ok(self.run_from(init_matching(self.devices, plan, seed)?))
    }
}

fn replaced(members: &[usize], out: usize, into: usize) -> Vec<usize> {
    let mut v: Vec<usize> = members.iter().copied().filter(|&x| x != out).collect();
    let pos = v.partition_point(|&x| x < into);
    v.insert(pos, into);
    v
}

/// Distance-table SF against the nearest gateway for every device.
pub fn stage_one_sf(scenario: &NetworkScenario) -> Result<Vec<SpreadingFactor>> {
    (0..scenario.device_count()).map(|i| default_sf_by_distance(scenario.nearest_gateway_distance(i))).collect()
}

/// Uniformly random feasible matching: devices take distinct random slots
/// out of `quota` slots per channel.
pub fn init_matching(devices: usize, plan: &ChannelPlan, seed: u64) -> Result<Matching> {
    let (channels, quota) = (plan.channel_count(), plan.quota());
    if quota * channels < devices {
        return Err(Error::InfeasibleQuota { devices, channels, quota });
    }
    let mut slots: Vec<usize> = (0..channels).flat_map(|c| std::iter::repeat_n(c, quota)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    slots.truncate(devices);
    Matching::from_channels(slots, channels, quota)
}

pub fn run_matching(scenario: &NetworkScenario, plan: &ChannelPlan, seed: u64) -> Result<MatchingOutcome> {
    SwapMatcher::new(scenario, plan)?.run(plan, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_scenario, PlacementRules, Point};
    use approx::assert_relative_eq;

    fn small(seed: u64, gateways: usize, devices: usize) -> NetworkScenario {
        generate_scenario(seed, gateways, devices, &PlacementRules::default()).unwrap()
    }

    /// Swap verdict from two full evaluations of explicit assignments.
    fn oracle_blocking(s: &NetworkScenario, plan: &ChannelPlan, channels: &[usize], i: usize, j: usize) -> bool {
        let model = AnalyticalModel::new(s, plan).unwrap();
        let sf = stage_one_sf(s).unwrap();
        let tp = vec![s.radio.tp_max_dbm; channels.len()];
        let before = model.evaluate(&Assignment::new(channels.to_vec(), sf.clone(), tp.clone()).unwrap()).unwrap();
        let mut swapped = channels.to_vec();
        swapped.swap(i, j);
        let after = model.evaluate(&Assignment::new(swapped, sf, tp).unwrap()).unwrap();
        let (c, cp) = (channels[i], channels[j]);
        let b = [before.ee.per_device[i], before.ee.per_device[j], before.ee.per_channel[c], before.ee.per_channel[cp]];
        let a = [after.ee.per_device[i], after.ee.per_device[j], after.ee.per_channel[c], after.ee.per_channel[cp]];
        b.iter().zip(&a).all(|(x, y)| y >= x) && b.iter().zip(&a).any(|(x, y)| *y > x + 1e-9 * x.abs())
    }

    #[test]
    fn tight_quota_fills_every_channel() {
        let plan = ChannelPlan::tight(4, 125e3, 160).unwrap();
        let m = init_matching(160, &plan, 3).unwrap();
        for c in 0..4 {
            assert_eq!(m.members(c).len(), 40);
        }
        assert_eq!(m, init_matching(160, &plan, 3).unwrap());
    }

    #[test]
    fn unit_quota_is_a_permutation() {
        let plan = ChannelPlan::tight(5, 125e3, 5).unwrap();
        let m = init_matching(5, &plan, 11).unwrap();
        let mut c = m.channels().to_vec();
        c.sort_unstable();
        assert_eq!(c, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn infeasible_quota_is_rejected() {
        let plan = ChannelPlan::tight(2, 125e3, 4).unwrap();
        assert!(matches!(init_matching(5, &plan, 0), Err(Error::InfeasibleQuota { .. })));
    }

    #[test]
    fn channel_utility_is_member_sum() {
        let s = small(2, 2, 9);
        let plan = ChannelPlan::tight(3, 125e3, 9).unwrap();
        let matcher = SwapMatcher::new(&s, &plan).unwrap();
        let m = init_matching(9, &plan, 5).unwrap();
        for c in 0..3 {
            let sum: f64 = m.members(c).iter().map(|&i| matcher.utility_ed(&m, i)).sum();
            assert_relative_eq!(matcher.utility_ch(&m, c), sum, max_relative = 1e-9);
        }
        let single = Matching::from_channels(vec![0, 1, 1], 2, 2).unwrap();
        let s3 = small(2, 1, 3);
        let plan3 = ChannelPlan::uniform(3, 125e3, 2, 3).unwrap();
        let m3 = SwapMatcher::new(&s3, &plan3).unwrap();
        let single = Matching::from_channels(single.channels().to_vec(), 3, 2).unwrap();
        assert_eq!(m3.utility_ch(&single, 2), 0.0);
        assert_eq!(m3.utility_ch(&single, 0), m3.utility_ed(&single, 0));
    }

    #[test]
    fn cached_utilities_match_the_evaluator_exactly() {
        let s = small(4, 3, 30);
        let plan = ChannelPlan::tight(3, 125e3, 30).unwrap();
        let matcher = SwapMatcher::new(&s, &plan).unwrap();
        let m = init_matching(30, &plan, 1).unwrap();
        let eval = matcher.model().evaluate(&matcher.stage_one_assignment(&m).unwrap()).unwrap();
        for i in 0..30 {
            assert_eq!(matcher.utility_ed(&m, i), eval.ee.per_device[i]);
        }
    }

    #[test]
    fn identical_devices_never_block() {
        let s = NetworkScenario::from_positions(
            0,
            vec![Point::new(0.0, 0.0)],
            vec![Point::new(3000.0, 0.0), Point::new(3000.0, 0.0), Point::new(500.0, 0.0), Point::new(0.0, 7000.0)],
        )
        .unwrap();
        let plan = ChannelPlan::tight(2, 125e3, 4).unwrap();
        let matcher = SwapMatcher::new(&s, &plan).unwrap();
        let m = Matching::from_channels(vec![0, 1, 0, 1], 2, 2).unwrap();
        assert!(!matcher.is_swap_blocking(&m, 0, 1).0);
    }

    #[test]
    fn verdict_matches_oracle_and_is_symmetric() {
        let mut found_blocking = false;
        for seed in 0..20 {
            // heavier traffic makes blocking pairs common in tiny networks
            let mut s = small(seed, 2, 8);
            s.traffic.send_rate = 0.02;
            let plan = ChannelPlan::tight(2, 125e3, 8).unwrap();
            let matcher = SwapMatcher::new(&s, &plan).unwrap();
            let m = init_matching(8, &plan, seed).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    if m.channel(i) == m.channel(j) {
                        continue;
                    }
                    let verdict = matcher.is_swap_blocking(&m, i, j).0;
                    assert_eq!(verdict, matcher.is_swap_blocking(&m, j, i).0);
                    assert_eq!(verdict, oracle_blocking(&s, &plan, m.channels(), i, j), "seed {seed} pair ({i},{j})");
                    found_blocking |= verdict;
                }
            }
        }
        assert!(found_blocking, "no blocking pair among the sampled instances");
    }

    #[test]
    fn single_channel_is_vacuously_stable() {
        let s = small(1, 1, 5);
        let plan = ChannelPlan::tight(1, 125e3, 5).unwrap();
        let matcher = SwapMatcher::new(&s, &plan).unwrap();
        let out = matcher.run(&plan, 0).unwrap();
        assert!(matcher.verify_2es(&out.matching));
        assert!(out.swaps.is_empty());
    }

    #[test]
    fn lone_device_is_returned_unchanged() {
        let s = small(1, 1, 1);
        let plan = ChannelPlan::tight(3, 125e3, 1).unwrap();
        let init = init_matching(1, &plan, 7).unwrap();
        let out = run_matching(&s, &plan, 7).unwrap();
        assert_eq!(out.matching, init);
        assert!(out.swaps.is_empty() && out.converged);
    }

    #[test]
    fn run_reaches_a_stable_matching_with_monotone_ee() {
        let s = small(9, 3, 40);
        let plan = ChannelPlan::tight(4, 125e3, 40).unwrap();
        let matcher = SwapMatcher::new(&s, &plan).unwrap();
        let out = matcher.run(&plan, 9).unwrap();
        assert!(out.converged);
        assert!(matcher.verify_2es(&out.matching));
        for r in &out.swaps {
            assert!(r.system_ee_after >= r.system_ee_before);
        }
        assert!(out.final_system_ee >= out.initial_system_ee);
        for c in 0..4 {
            assert!(out.matching.members(c).len() <= plan.quota());
        }
    }

    #[test]
    fn swap_keeps_member_lists_sorted() {
        let mut m = Matching::from_channels(vec![0, 1, 0, 1, 0], 2, 3).unwrap();
        m.swap(0, 3);
        assert_eq!(m.members(0), &[2, 3, 4]);
        assert_eq!(m.members(1), &[0, 1]);
        assert_eq!(m.channels(), &[1, 1, 0, 0, 0]);
    }
}
