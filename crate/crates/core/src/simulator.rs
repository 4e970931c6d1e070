//! Packet-level Monte-Carlo simulator used as ground truth for the
//! analytical model.
//!
//! Each device runs a Poisson arrival process; arrivals during the
//! duty-cycle off time are dropped. Every transmission gets one Exp(1)
//! fading draw per gateway. Reception at a gateway needs the faded power
//! above sensitivity and, against every co-channel packet overlapping the
//! critical part of the frame, an instantaneous SIR above the matrix
//! threshold. A packet is delivered when any gateway decodes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytical::{AnalyticalModel, Transmitter, CRITICAL_PREAMBLE_SYMBOLS};
use crate::error::{Error, Result};
use crate::model::{Assignment, ChannelPlan, NetworkScenario, SpreadingFactor};

/// Below this many expected packets per device the estimate is flagged.
pub const MIN_PACKETS_PER_DEVICE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon_s: f64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransmissionEvent {
    pub device: usize,
    pub start_s: f64,
    pub toa_s: f64,
    pub channel: usize,
    pub sf: SpreadingFactor,
    pub tp_dbm: f64,
}

impl TransmissionEvent {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.toa_s
    }
}

/// All transmissions of one replication, sorted by `(channel, start)`, with
/// the per-gateway fading draws stored row-major `[event][gateway]`.
#[derive(Clone, Debug)]
pub struct Traffic {
    pub events: Vec<TransmissionEvent>,
    pub gateways: usize,
    pub fading: Vec<f64>,
    pub horizon_s: f64,
}

impl Traffic {
    pub fn fading(&self, event: usize, gateway: usize) -> f64 {
        self.fading[event * self.gateways + gateway]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceptionOutcome {
    Received,
    BelowSensitivity,
    Collision,
    /// Gateway excluded from this judgement.
    Disabled,
}

impl ReceptionOutcome {
    pub fn ok(self) -> bool {
        self == ReceptionOutcome::Received
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub sent: Vec<u64>,
    pub delivered: Vec<u64>,
    /// `[device][gateway]` decoded counts, row-major.
    pub delivered_per_gateway: Vec<u64>,
    pub gateways: usize,
    pub pdr: Vec<f64>,
    /// Empirical bits per joule: delivered bits over spent transmit energy.
    pub ee: Vec<f64>,
    pub airtime_s: Vec<f64>,
    pub horizon_s: f64,
    pub replications: usize,
    pub undersampled: bool,
}

impl SimStats {
    pub fn pdr_gateway(&self, device: usize, gateway: usize) -> f64 {
        if self.sent[device] == 0 {
            0.0
        } else {
            self.delivered_per_gateway[device * self.gateways + gateway] as f64 / self.sent[device] as f64
        }
    }

    pub fn mean_pdr(&self) -> f64 {
        if self.pdr.is_empty() {
            0.0
        } else {
            self.pdr.iter().sum::<f64>() / self.pdr.len() as f64
        }
    }

    pub fn system_ee(&self) -> f64 {
        self.ee.iter().sum()
    }
}

/// Horizon giving every device at least `packets` transmissions on average.
pub fn horizon_for_packets(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    assignment: &Assignment,
    packets: f64,
) -> Result<f64> {
    let model = AnalyticalModel::new(scenario, plan)?;
    let longest = model.transmitters(assignment).iter().map(|t| t.toa_s).fold(0.0, f64::max);
    let t = &scenario.traffic;
    Ok(packets * (1.0 / t.send_rate + longest / t.duty_cycle))
}

pub struct Simulator {
    model: AnalyticalModel,
}

impl Simulator {
    pub fn new(scenario: &NetworkScenario, plan: &ChannelPlan) -> Result<Self> {
        Ok(Self { model: AnalyticalModel::new(scenario, plan)? })
    }

    pub fn gateway_count(&self) -> usize {
        self.model.gateway_count()
    }

    fn check(&self, assignment: &Assignment) -> Result<Vec<Transmitter>> {
        // reuse the evaluator's input checks
        if assignment.len() != self.model.device_count() {
            return Err(Error::LengthMismatch { left: assignment.len(), right: self.model.device_count() });
        }
        if let Some(&c) = assignment.channel.iter().find(|&&c| c >= self.model.plan().channel_count()) {
            return Err(Error::InvalidParameter(format!("channel {c} not in plan")));
        }
        Ok(self.model.transmitters(assignment))
    }

    /// Poisson arrivals per device with duty-cycle thinning and per-gateway
    /// fading draws. Deterministic in `rng`.
    pub fn generate_traffic<R: Rng>(&self, assignment: &Assignment, horizon_s: f64, rng: &mut R) -> Result<Traffic> {
        if !(horizon_s > 0.0 && horizon_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon_s}")));
        }
        let txs = self.check(assignment)?;
        let traffic = self.model.traffic();
        let mut events = Vec::new();
        if traffic.send_rate > 0.0 {
            let gap = Exp::new(traffic.send_rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for tx in &txs {
                let off = tx.toa_s / traffic.duty_cycle;
                let mut t = 0.0;
                let mut free_at = 0.0;
                loop {
                    t += gap.sample(rng);
                    if t >= horizon_s {
                        break;
                    }
                    if t < free_at {
                        continue;
                    }
                    events.push(TransmissionEvent {
                        device: tx.device,
                        start_s: t,
                        toa_s: tx.toa_s,
                        channel: assignment.channel[tx.device],
                        sf: tx.sf,
                        tp_dbm: tx.tp_dbm,
                    });
                    free_at = t + off;
                }
            }
        }
        events.sort_by(|a, b| a.channel.cmp(&b.channel).then(a.start_s.total_cmp(&b.start_s)));
        let gateways = self.gateway_count();
        let fading = (0..events.len() * gateways).map(|_| Exp1.sample(rng)).collect();
        Ok(Traffic { events, gateways, fading, horizon_s })
    }

    /// Outcome for every `(event, gateway)`, row-major. Gateways with
    /// `active[k] == false` are reported as `Disabled`.
    pub fn judge(&self, assignment: &Assignment, traffic: &Traffic, active: &[bool]) -> Result<Vec<ReceptionOutcome>> {
        let txs = self.check(assignment)?;
        let k_count = traffic.gateways;
        if active.len() != k_count {
            return Err(Error::LengthMismatch { left: active.len(), right: k_count });
        }
        let disposable = f64::from(self.model.radio().preamble_symbols.saturating_sub(CRITICAL_PREAMBLE_SYMBOLS));
        let events = &traffic.events;
        let mut outcomes = vec![ReceptionOutcome::Disabled; events.len() * k_count];

        let mut block_start = 0;
        while block_start < events.len() {
            let channel = events[block_start].channel;
            let block_end = block_start + events[block_start..].iter().take_while(|e| e.channel == channel).count();
            let longest = events[block_start..block_end].iter().map(|e| e.toa_s).fold(0.0, f64::max);
            let mut overlapping = Vec::new();
            for i in block_start..block_end {
                let e = &events[i];
                let tx = &txs[e.device];
                let critical_start = e.start_s + disposable * tx.symbol_time_s;
                let end = e.end_s();
                overlapping.clear();
                // interferers that started earlier and reach into the critical part
                let mut j = i;
                while j > block_start {
                    j -= 1;
                    if events[j].start_s + longest <= critical_start {
                        break;
                    }
                    if events[j].end_s() > critical_start {
                        overlapping.push(j);
                    }
                }
                for (j, other) in events.iter().enumerate().take(block_end).skip(i + 1) {
                    if other.start_s >= end {
                        break;
                    }
                    overlapping.push(j);
                }
                for k in 0..k_count {
                    if !active[k] {
                        continue;
                    }
                    outcomes[i * k_count + k] = self.judge_reception(&txs, traffic, i, k, &overlapping);
                }
            }
            block_start = block_end;
        }
        Ok(outcomes)
    }

    /// Sensitivity test, then pairwise capture against every interferer in
    /// `overlapping` at gateway `k`.
    pub fn judge_reception(
        &self,
        txs: &[Transmitter],
        traffic: &Traffic,
        event: usize,
        k: usize,
        overlapping: &[usize],
    ) -> ReceptionOutcome {
        let e = &traffic.events[event];
        let tx = &txs[e.device];
        let signal = self.model.received_mw(tx, k) * traffic.fading(event, k);
        if signal < self.model.sensitivity().sensitivity_mw(tx.sf) {
            return ReceptionOutcome::BelowSensitivity;
        }
        for &j in overlapping {
            let other = &traffic.events[j];
            let interference = self.model.received_mw(&txs[other.device], k) * traffic.fading(j, k);
            if signal < self.model.sir().threshold(tx.sf, other.sf) * interference {
                return ReceptionOutcome::Collision;
            }
        }
        ReceptionOutcome::Received
    }

    /// Counts per device for one replication, restricted to `active` gateways.
    pub fn replicate(&self, assignment: &Assignment, traffic: &Traffic, active: &[bool]) -> Result<SimStats> {
        let outcomes = self.judge(assignment, traffic, active)?;
        let n = assignment.len();
        let k_count = traffic.gateways;
        let mut sent = vec![0u64; n];
        let mut delivered = vec![0u64; n];
        let mut per_gateway = vec![0u64; n * k_count];
        let mut airtime = vec![0.0; n];
        for (idx, e) in traffic.events.iter().enumerate() {
            sent[e.device] += 1;
            airtime[e.device] += e.toa_s;
            let row = &outcomes[idx * k_count..(idx + 1) * k_count];
            let mut any = false;
            for (k, o) in row.iter().enumerate() {
                if o.ok() {
                    per_gateway[e.device * k_count + k] += 1;
                    any = true;
                }
            }
            if any {
                delivered[e.device] += 1;
            }
        }
        Ok(self.stats(assignment, sent, delivered, per_gateway, airtime, traffic.horizon_s, 1))
    }

    #[allow(clippy::too_many_arguments)]
    fn stats(
        &self,
        assignment: &Assignment,
        sent: Vec<u64>,
        delivered: Vec<u64>,
        delivered_per_gateway: Vec<u64>,
        airtime_s: Vec<f64>,
        horizon_s: f64,
        replications: usize,
    ) -> SimStats {
        let txs = self.model.transmitters(assignment);
        let bits = self.model.payload_bits();
        let pdr: Vec<f64> =
            sent.iter().zip(&delivered).map(|(&s, &d)| if s == 0 { 0.0 } else { d as f64 / s as f64 }).collect();
        let ee = (0..sent.len())
            .map(|i| {
                if sent[i] == 0 {
                    0.0
                } else {
                    bits * delivered[i] as f64 / (sent[i] as f64 * txs[i].power_w * txs[i].toa_s)
                }
            })
            .collect();
        let t = self.model.traffic();
        let longest = txs.iter().map(|t| t.toa_s).fold(0.0, f64::max);
        let expected_packets = horizon_s * replications as f64 / (1.0 / t.send_rate + longest / t.duty_cycle);
        SimStats {
            sent,
            delivered,
            delivered_per_gateway,
            gateways: self.gateway_count(),
            pdr,
            ee,
            airtime_s,
            horizon_s,
            replications,
            undersampled: !txs.is_empty() && expected_packets < MIN_PACKETS_PER_DEVICE,
        }
    }

    /// Independent replications with seeds derived from `config.seed`,
    /// merged by summing counts.
    pub fn run(&self, assignment: &Assignment, config: &SimConfig) -> Result<SimStats> {
        self.run_masked(assignment, config, &vec![true; self.gateway_count()])
    }

    pub fn run_masked(&self, assignment: &Assignment, config: &SimConfig, active: &[bool]) -> Result<SimStats> {
        if config.replications == 0 {
            return Err(Error::InvalidParameter("at least one replication is required".into()));
        }
        let parts: Vec<SimStats> = (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(config.seed, r);
                let traffic = self.generate_traffic(assignment, config.horizon_s, &mut rng)?;
                self.replicate(assignment, &traffic, active)
            })
            .collect::<Result<_>>()?;
        let n = assignment.len();
        let k_count = self.gateway_count();
        let mut sent = vec![0u64; n];
        let mut delivered = vec![0u64; n];
        let mut per_gateway = vec![0u64; n * k_count];
        let mut airtime = vec![0.0; n];
        for p in &parts {
            for i in 0..n {
                sent[i] += p.sent[i];
                delivered[i] += p.delivered[i];
                airtime[i] += p.airtime_s[i];
            }
            for (acc, v) in per_gateway.iter_mut().zip(&p.delivered_per_gateway) {
                *acc += v;
            }
        }
        let stats =
            self.stats(assignment, sent, delivered, per_gateway, airtime, config.horizon_s, config.replications);
        if stats.undersampled {
            log::warn!("simulation horizon gives fewer than {MIN_PACKETS_PER_DEVICE} packets per device");
        }
        Ok(stats)
    }
}

/// RNG for replication `r` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

pub fn generate_traffic(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    assignment: &Assignment,
    horizon_s: f64,
    seed: u64,
) -> Result<Traffic> {
    Simulator::new(scenario, plan)?.generate_traffic(assignment, horizon_s, &mut replication_rng(seed, 0))
}

pub fn run_simulation(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    assignment: &Assignment,
    config: &SimConfig,
) -> Result<SimStats> {
    Simulator::new(scenario, plan)?.run(assignment, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Point, SensitivityTable, LIGHT_SPEED};
    use crate::units::dbm_to_mw;

    fn sf(v: u8) -> SpreadingFactor {
        SpreadingFactor::new(v).unwrap()
    }

    fn scenario(devices: &[(f64, f64)]) -> NetworkScenario {
        NetworkScenario::from_positions(
            5,
            vec![Point::new(0.0, 0.0)],
            devices.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
        .unwrap()
    }

    fn binomial_3sigma(p: f64, n: u64) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn silent_network_has_no_events() {
        let mut s = scenario(&[(100.0, 0.0)]);
        s.traffic.send_rate = 1e-300;
        let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
        let t = generate_traffic(&s, &plan, &Assignment::uniform(1, 0, sf(7), 14.0), 1e5, 1).unwrap();
        assert!(t.events.is_empty());
    }

    #[test]
    fn event_count_matches_poisson_rate_when_thinning_is_negligible() {
        let mut s = scenario(&[(100.0, 0.0), (200.0, 0.0), (300.0, 0.0)]);
        s.traffic.duty_cycle = 1.0;
        let plan = ChannelPlan::tight(1, 125e3, 3).unwrap();
        let a = Assignment::uniform(3, 0, sf(7), 14.0);
        let horizon = 2e5;
        // mean cycle: 1/λ plus one airtime of dead time
        let toa = AnalyticalModel::new(&s, &plan).unwrap().airtime(sf(7), 125e3);
        let mean = 3.0 * horizon / (1000.0 + toa);
        for seed in 0..30 {
            let n = generate_traffic(&s, &plan, &a, horizon, seed).unwrap().events.len() as f64;
            assert!((n - mean).abs() <= 3.0 * mean.sqrt() + 1.0, "seed {seed}: {n} vs {mean}");
        }
    }

    #[test]
    fn duty_cycle_caps_airtime() {
        let mut s = scenario(&[(9000.0, 0.0), (11_000.0, 0.0)]);
        s.traffic.send_rate = 0.05;
        let plan = ChannelPlan::tight(1, 125e3, 2).unwrap();
        let a = Assignment::uniform(2, 0, sf(12), 14.0);
        let horizon = 2e5;
        let t = generate_traffic(&s, &plan, &a, horizon, 3).unwrap();
        let toa = t.events[0].toa_s;
        for d in 0..2 {
            let mut starts: Vec<f64> = t.events.iter().filter(|e| e.device == d).map(|e| e.start_s).collect();
            starts.sort_by(f64::total_cmp);
            for w in starts.windows(2) {
                assert!(w[1] - w[0] >= toa / 0.01 - 1e-9);
            }
            let airtime = starts.len() as f64 * toa;
            assert!(airtime / horizon <= 0.01 + 0.001);
        }
    }

    #[test]
    fn close_lone_device_always_delivers() {
        let s = scenario(&[(100.0, 0.0)]);
        let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
        let a = Assignment::uniform(1, 0, sf(7), 20.0);
        let cfg = SimConfig { horizon_s: 2e6, replications: 2, seed: 9 };
        let st = run_simulation(&s, &plan, &a, &cfg).unwrap();
        assert!(st.sent[0] > 1000);
        assert!(st.pdr[0] > 0.999);
    }

    #[test]
    fn unit_margin_converges_to_inverse_e() {
        let ratio = dbm_to_mw(14.0).unwrap() / SensitivityTable::default().sensitivity_mw(sf(12));
        let d = LIGHT_SPEED / (4.0 * std::f64::consts::PI * 868e6) * ratio.powf(1.0 / 2.7);
        let s = scenario(&[(d, 0.0)]);
        let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
        let a = Assignment::uniform(1, 0, sf(12), 14.0);
        let horizon = horizon_for_packets(&s, &plan, &a, 1e5).unwrap();
        let st = run_simulation(&s, &plan, &a, &SimConfig { horizon_s: horizon, replications: 1, seed: 4 }).unwrap();
        let e = (-1.0f64).exp();
        assert!(st.sent[0] > 90_000);
        assert!((st.pdr[0] - e).abs() <= binomial_3sigma(e, st.sent[0]), "pdr {}", st.pdr[0]);
    }

    fn two_events(offset_s: f64, fading: [f64; 2]) -> (Simulator, Assignment, Traffic) {
        let s = scenario(&[(1000.0, 0.0), (0.0, 1000.0)]);
        let plan = ChannelPlan::tight(1, 125e3, 2).unwrap();
        let sim = Simulator::new(&s, &plan).unwrap();
        let a = Assignment::uniform(2, 0, sf(7), 14.0);
        let toa = sim.model.airtime(sf(7), 125e3);
        let events = vec![
            TransmissionEvent { device: 0, start_s: 10.0, toa_s: toa, channel: 0, sf: sf(7), tp_dbm: 14.0 },
            TransmissionEvent { device: 1, start_s: 10.0 + offset_s, toa_s: toa, channel: 0, sf: sf(7), tp_dbm: 14.0 },
        ];
        let traffic = Traffic { events, gateways: 1, fading: fading.to_vec(), horizon_s: 100.0 };
        (sim, a, traffic)
    }

    #[test]
    fn equal_power_same_sf_collision_kills_both() {
        let (sim, a, t) = two_events(0.01, [1.0, 1.0]);
        let o = sim.judge(&a, &t, &[true]).unwrap();
        assert_eq!(o, vec![ReceptionOutcome::Collision, ReceptionOutcome::Collision]);
    }

    #[test]
    fn capture_is_directional() {
        let (sim, a, t) = two_events(0.01, [10.0, 1.0]);
        let o = sim.judge(&a, &t, &[true]).unwrap();
        assert_eq!(o, vec![ReceptionOutcome::Received, ReceptionOutcome::Collision]);
    }

    #[test]
    fn overlap_in_disposable_preamble_is_harmless() {
        // interferer ends 2.5 symbols into the target's preamble
        let (sim, a, mut t) = two_events(0.0, [1.0, 1.0]);
        let toa = t.events[0].toa_s;
        t.events[0].start_s = 10.0;
        t.events[1].start_s = 10.0 - toa + 2.5 * 1.024e-3;
        t.events.swap(0, 1);
        t.fading = vec![1.0, 1.0];
        let o = sim.judge(&a, &t, &[true]).unwrap();
        // event 1 (device 0) is the target; event 0 overlaps only its first three symbols
        assert_eq!(o[1], ReceptionOutcome::Received);
        assert_eq!(o[0], ReceptionOutcome::Collision);
    }

    #[test]
    fn disjoint_packets_both_received() {
        let (sim, a, t) = two_events(1.0, [1.0, 1.0]);
        let o = sim.judge(&a, &t, &[true]).unwrap();
        assert!(o.iter().all(|x| x.ok()));
    }

    #[test]
    fn deterministic_per_seed() {
        let s = crate::model::generate_scenario(8, 2, 20, &crate::model::PlacementRules::default()).unwrap();
        let plan = ChannelPlan::tight(1, 125e3, 20).unwrap();
        let a = Assignment::uniform(20, 0, sf(12), 14.0);
        let cfg = SimConfig { horizon_s: 3e5, replications: 3, seed: 77 };
        assert_eq!(run_simulation(&s, &plan, &a, &cfg).unwrap(), run_simulation(&s, &plan, &a, &cfg).unwrap());
    }

    #[test]
    fn gateway_subset_never_delivers_more() {
        let s = crate::model::generate_scenario(12, 3, 30, &crate::model::PlacementRules::default()).unwrap();
        let plan = ChannelPlan::tight(1, 125e3, 30).unwrap();
        let a = Assignment::uniform(30, 0, sf(12), 14.0);
        let sim = Simulator::new(&s, &plan).unwrap();
        let t = sim.generate_traffic(&a, 5e5, &mut replication_rng(2, 0)).unwrap();
        let all = sim.replicate(&a, &t, &[true, true, true]).unwrap();
        for mask in [[true, false, false], [false, true, true], [true, false, true]] {
            let sub = sim.replicate(&a, &t, &mask).unwrap();
            for i in 0..30 {
                assert!(sub.delivered[i] <= all.delivered[i]);
            }
        }
    }

    #[test]
    fn undersampling_is_flagged() {
        let s = scenario(&[(100.0, 0.0)]);
        let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
        let a = Assignment::uniform(1, 0, sf(7), 14.0);
        let st = run_simulation(&s, &plan, &a, &SimConfig { horizon_s: 1e4, replications: 1, seed: 1 }).unwrap();
        assert!(st.undersampled);
    }
}
