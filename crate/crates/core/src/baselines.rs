//! Comparison allocators: uniformly random (RCST), SNR-floor adaptive data
//! rate (ADR), and a greedy max-min EE heuristic in the spirit of EF-LoRa.
//! The greedy heuristic is an approximation of that scheme, not a
//! reproduction of its published internals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytical::{path_loss, AnalyticalModel, Transmitter};
use crate::error::{Error, Result};
use crate::maac::power_levels;
use crate::model::{Assignment, ChannelPlan, NetworkScenario, SpreadingFactor};
use crate::units::mw_to_dbm;

/// Relative gain a greedy step must achieve to count as an improvement.
pub const GREEDY_EPSILON: f64 = 1e-9;

fn check_quota(devices: usize, plan: &ChannelPlan) -> Result<()> {
    if plan.channel_count() * plan.quota() < devices {
        Err(Error::InfeasibleQuota { devices, channels: plan.channel_count(), quota: plan.quota() })
    } else {
        Ok(())
    }
}

/// Random channel (uniform over free quota slots), SF and power level per
/// device.
pub fn rcst_assign(scenario: &NetworkScenario, plan: &ChannelPlan, levels: usize, seed: u64) -> Result<Assignment> {
    let n = scenario.device_count();
    check_quota(n, plan)?;
    let grid = power_levels(scenario.radio.tp_min_dbm, scenario.radio.tp_max_dbm, levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..plan.channel_count()).flat_map(|c| std::iter::repeat_n(c, plan.quota())).collect();
    slots.shuffle(&mut rng);
    slots.truncate(n);
    let sf = (0..n).map(|_| SpreadingFactor::from_index(rng.random_range(0..SpreadingFactor::ALL.len()))).collect();
    let tp = (0..n).map(|_| grid[rng.random_range(0..grid.len())]).collect();
    let a = Assignment::new(slots, sf, tp)?;
    a.validate(scenario, plan)?;
    Ok(a)
}

/// Per-SF SNR demodulation floors, dB, SF7 first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemodFloorTable(pub [f64; 6]);

impl Default for DemodFloorTable {
    fn default() -> Self {
        Self([-7.5, -10.0, -12.5, -15.0, -17.5, -20.0])
    }
}

impl DemodFloorTable {
    pub fn floor_db(&self, sf: SpreadingFactor) -> f64 {
        self.0[sf.index()]
    }

    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdrConfig {
    pub floors: DemodFloorTable,
    pub noise_figure_db: f64,
    /// Extra SNR headroom demanded above the floor.
    pub margin_db: f64,
    pub power_levels: usize,
}

impl Default for AdrConfig {
    fn default() -> Self {
        Self { floors: DemodFloorTable::default(), noise_figure_db: 6.0, margin_db: 10.0, power_levels: 10 }
    }
}

impl AdrConfig {
    pub fn noise_dbm(&self, bandwidth_hz: f64) -> f64 {
        -174.0 + 10.0 * bandwidth_hz.log10() + self.noise_figure_db
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdrOutcome {
    pub assignment: Assignment,
    /// Devices for which no SF/TP met floor plus margin; they get SF12 at
    /// maximum power.
    pub flagged: Vec<usize>,
}

/// Smallest SF, then smallest grid power, whose mean SNR at the nearest
/// gateway clears the demodulation floor plus margin. Channels are dealt
/// round-robin by device index.
pub fn adr_assign(scenario: &NetworkScenario, plan: &ChannelPlan, cfg: &AdrConfig) -> Result<AdrOutcome> {
    let n = scenario.device_count();
    check_quota(n, plan)?;
    let grid = power_levels(scenario.radio.tp_min_dbm, scenario.radio.tp_max_dbm, cfg.power_levels)?;
    let radio = &scenario.radio;
    let channels = plan.channel_count();
    let (mut channel, mut sf, mut tp, mut flagged) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let c = i % channels;
        let gain_db = mw_to_dbm(path_loss(
            scenario.nearest_gateway_distance(i),
            radio.carrier_frequency_hz,
            radio.path_loss_exponent,
        )?)?;
        let noise = cfg.noise_dbm(plan.bandwidth(c));
        let snr = |p: f64| p + gain_db - noise;
        let choice = SpreadingFactor::ALL.into_iter().find_map(|s| {
            let need = cfg.floors.floor_db(s) + cfg.margin_db;
            grid.iter().copied().find(|&p| snr(p) >= need).map(|p| (s, p))
        });
        let (s, p) = choice.unwrap_or_else(|| {
            flagged.push(i);
            (SpreadingFactor::from_index(5), radio.tp_max_dbm)
        });
        channel.push(c);
        sf.push(s);
        tp.push(p);
    }
    let assignment = Assignment::new(channel, sf, tp)?;
    assignment.validate(scenario, plan)?;
    Ok(AdrOutcome { assignment, flagged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub assignment: Assignment,
    /// Minimum device EE before the first and after every accepted step.
    pub min_ee_trace: Vec<f64>,
    /// True when the step cap stopped the loop before a fixed point.
    pub capped: bool,
}

/// Incremental evaluator over channel groups: a single-device change only
/// re-scores the channels it leaves and joins.
struct GroupState<'a> {
    model: &'a AnalyticalModel,
    assignment: Assignment,
    ee: Vec<f64>,
    channel_min: Vec<f64>,
    counts: Vec<usize>,
}

impl<'a> GroupState<'a> {
    fn new(model: &'a AnalyticalModel, assignment: Assignment) -> Self {
        let channels = model.plan().channel_count();
        let mut s = Self {
            model,
            ee: vec![0.0; assignment.len()],
            channel_min: vec![f64::INFINITY; channels],
            counts: vec![0; channels],
            assignment,
        };
        for c in 0..channels {
            s.counts[c] = s.assignment.channel_members(c).len();
            let (members, ee) = s.score_channel(&s.assignment, c);
            s.store(c, &members, &ee);
        }
        s
    }

    fn score_channel(&self, a: &Assignment, c: usize) -> (Vec<usize>, Vec<f64>) {
        let members = a.channel_members(c);
        let bw = self.model.plan().bandwidth(c);
        let txs: Vec<Transmitter> =
            members.iter().map(|&i| self.model.transmitter(i, a.sf[i], a.tp_dbm[i], bw)).collect();
        (members, self.model.evaluate_group(&txs).ee)
    }

    fn store(&mut self, c: usize, members: &[usize], ee: &[f64]) {
        for (&i, &e) in members.iter().zip(ee) {
            self.ee[i] = e;
        }
        self.channel_min[c] = ee.iter().copied().fold(f64::INFINITY, f64::min);
    }

    fn min_ee(&self) -> f64 {
        self.ee.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum EE if device `i` moved to `(c, sf, tp)`.
    fn min_after(&self, i: usize, c: usize, sf: SpreadingFactor, tp: f64) -> f64 {
        let mut a = self.assignment.clone();
        let old = a.channel[i];
        a.channel[i] = c;
        a.sf[i] = sf;
        a.tp_dbm[i] = tp;
        let mut min = f64::INFINITY;
        for ch in 0..self.channel_min.len() {
            if ch == old || ch == c {
                min = min.min(self.score_channel(&a, ch).1.iter().copied().fold(f64::INFINITY, f64::min));
            } else {
                min = min.min(self.channel_min[ch]);
            }
        }
        min
    }

    fn apply(&mut self, i: usize, c: usize, sf: SpreadingFactor, tp: f64) {
        let old = self.assignment.channel[i];
        self.assignment.channel[i] = c;
        self.assignment.sf[i] = sf;
        self.assignment.tp_dbm[i] = tp;
        self.counts[old] -= 1;
        self.counts[c] += 1;
        for ch in [old, c] {
            let (members, ee) = self.score_channel(&self.assignment, ch);
            self.store(ch, &members, &ee);
        }
    }

    /// Best single change of device `i` and the resulting minimum EE.
    fn best_move(&self, i: usize, grid: &[f64]) -> (f64, (usize, SpreadingFactor, f64)) {
        let quota = self.model.plan().quota();
        let current = self.assignment.channel[i];
        let mut best = (f64::NEG_INFINITY, (current, self.assignment.sf[i], self.assignment.tp_dbm[i]));
        for c in 0..self.counts.len() {
            if c != current && self.counts[c] >= quota {
                continue;
            }
            for sf in SpreadingFactor::ALL {
                for &tp in grid {
                    let m = self.min_after(i, c, sf, tp);
                    if m > best.0 {
                        best = (m, (c, sf, tp));
                    }
                }
            }
        }
        best
    }
}

fn improves(new: f64, old: f64) -> bool {
    new > old + GREEDY_EPSILON * old.abs().max(f64::MIN_POSITIVE)
}

/// Greedy max-min EE: starting from the distance-table SF at maximum power
/// with round-robin channels, repeatedly give the worst device its best
/// (channel, SF, power) choice. When the worst device cannot raise the
/// minimum, the other devices are tried in index order; the loop stops when
/// no single-device change raises the minimum or after `max_steps` steps.
pub fn eflora_assign(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    levels: usize,
    max_steps: usize,
) -> Result<GreedyOutcome> {
    let n = scenario.device_count();
    check_quota(n, plan)?;
    let grid = power_levels(scenario.radio.tp_min_dbm, scenario.radio.tp_max_dbm, levels)?;
    let model = AnalyticalModel::new(scenario, plan)?;
    let channels = plan.channel_count();
    let start = Assignment::new(
        (0..n).map(|i| i % channels).collect(),
        (0..n)
            .map(|i| crate::model::default_sf_by_distance(scenario.nearest_gateway_distance(i)))
            .collect::<Result<_>>()?,
        vec![scenario.radio.tp_max_dbm; n],
    )?;
    let mut state = GroupState::new(&model, start);
    let mut trace = vec![state.min_ee()];
    let mut steps = 0;
    let mut capped = false;
    'outer: loop {
        if n == 0 {
            break;
        }
        let current = state.min_ee();
        let worst = (0..n).fold(0, |w, i| if state.ee[i] < state.ee[w] { i } else { w });
        let order = std::iter::once(worst).chain((0..n).filter(|&i| i != worst));
        for i in order {
            let (m, (c, sf, tp)) = state.best_move(i, &grid);
            if improves(m, current) {
                if steps == max_steps {
                    capped = true;
                    break 'outer;
                }
                state.apply(i, c, sf, tp);
                steps += 1;
                trace.push(state.min_ee());
                continue 'outer;
            }
        }
        break;
    }
    if capped {
        log::warn!("greedy max-min EE stopped at the step cap of {max_steps}");
    }
    state.assignment.validate(scenario, plan)?;
    Ok(GreedyOutcome { assignment: state.assignment, min_ee_trace: trace, capped })
}
