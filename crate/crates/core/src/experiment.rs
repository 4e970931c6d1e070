//! Sweep runners and summary statistics shared by the CLI and the
//! acceptance suite.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use std::time::Instant;

use crate::analytical::{mae, AnalyticalModel, Evaluation, FadingMode};
use crate::baselines::{adr_assign, eflora_assign, rcst_assign, AdrConfig};
use crate::error::{Error, Result};
use crate::maac::{train, MaacConfig, TrainingOutcome};
use crate::matching::{run_matching, MatchingOutcome};
use crate::model::{
    default_sf_by_distance, generate_scenario, Assignment, ChannelPlan, NetworkScenario, PlacementRules,
    SpreadingFactor,
};
use crate::simulator::{horizon_for_packets, SimConfig, Simulator};

/// Mean and 95% Student-t half-width. `None` for fewer than two samples.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).ok()?.inverse_cdf(0.975);
    Some((mean, t * (var / n).sqrt()))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// How devices pick their SF in a validation run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SfPolicy {
    Fixed(SpreadingFactor),
    /// Distance-table SF against the nearest gateway.
    Distance,
}

/// One analytical-versus-simulated configuration. All devices share one
/// channel and transmit at maximum power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationCase {
    pub label: String,
    pub gateways: usize,
    pub devices: usize,
    pub sf: SfPolicy,
    pub bandwidth_hz: f64,
    pub coding_rate: u8,
}

impl ValidationCase {
    pub fn new(label: impl Into<String>, gateways: usize, devices: usize, sf: SfPolicy) -> Self {
        Self { label: label.into(), gateways, devices, sf, bandwidth_hz: 125e3, coding_rate: 5 }
    }

    /// Transmission presets: shortest airtime, most robust, common deployment.
    pub fn parameter_settings(gateways: usize, devices: usize) -> Vec<Self> {
        let sf7 = SpreadingFactor::new(7).expect("valid SF");
        let sf12 = SpreadingFactor::new(12).expect("valid SF");
        vec![
            Self {
                label: "PS1".into(),
                gateways,
                devices,
                sf: SfPolicy::Fixed(sf7),
                bandwidth_hz: 500e3,
                coding_rate: 5,
            },
            Self {
                label: "PS2".into(),
                gateways,
                devices,
                sf: SfPolicy::Fixed(sf12),
                bandwidth_hz: 125e3,
                coding_rate: 8,
            },
            Self {
                label: "PS3".into(),
                gateways,
                devices,
                sf: SfPolicy::Fixed(sf12),
                bandwidth_hz: 125e3,
                coding_rate: 5,
            },
        ]
    }

    pub fn scenario(&self, seed: u64, rules: &PlacementRules) -> Result<NetworkScenario> {
        let mut s = generate_scenario(seed, self.gateways, self.devices, rules)?;
        s.radio.coding_rate = self.coding_rate;
        s.validate()?;
        Ok(s)
    }

    pub fn assignment(&self, scenario: &NetworkScenario) -> Result<Assignment> {
        let n = scenario.device_count();
        let sf = match self.sf {
            SfPolicy::Fixed(sf) => vec![sf; n],
            SfPolicy::Distance => {
                (0..n).map(|i| default_sf_by_distance(scenario.nearest_gateway_distance(i))).collect::<Result<_>>()?
            }
        };
        Assignment::new(vec![0; n], sf, vec![scenario.radio.tp_max_dbm; n])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub label: String,
    pub seed: u64,
    pub gateways: usize,
    pub devices: usize,
    pub mae: f64,
    pub analytical_mean_pdr: f64,
    pub simulated_mean_pdr: f64,
    pub min_packets: u64,
    pub undersampled: bool,
}

/// Runs the analytical model and the simulator on the same deployment and
/// reports their per-device MAE.
pub fn validate_case(
    case: &ValidationCase,
    seed: u64,
    packets_per_device: f64,
    fading: FadingMode,
    rules: &PlacementRules,
) -> Result<ValidationRow> {
    let scenario = case.scenario(seed, rules)?;
    let plan = ChannelPlan::new(vec![case.bandwidth_hz], case.devices.max(1), case.devices)?;
    let assignment = case.assignment(&scenario)?;
    let analytical = AnalyticalModel::new(&scenario, &plan)?.with_fading(fading).evaluate(&assignment)?;
    let horizon = horizon_for_packets(&scenario, &plan, &assignment, packets_per_device)?;
    let sim = Simulator::new(&scenario, &plan)?
        .run(&assignment, &SimConfig { horizon_s: horizon, replications: 1, seed: seed ^ 0x5eed })?;
    Ok(ValidationRow {
        label: case.label.clone(),
        seed,
        gateways: case.gateways,
        devices: case.devices,
        mae: mae(&analytical.pdr.per_device, &sim.pdr)?,
        analytical_mean_pdr: analytical.pdr.mean(),
        simulated_mean_pdr: sim.mean_pdr(),
        min_packets: sim.sent.iter().copied().min().unwrap_or(0),
        undersampled: sim.undersampled,
    })
}

/// Aggregate of one sweep cell across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub samples: usize,
    pub mean: f64,
    pub ci95: Option<f64>,
}

pub fn summarize(label: &str, values: &[f64]) -> CellSummary {
    CellSummary {
        label: label.to_string(),
        samples: values.len(),
        mean: mean(values),
        ci95: mean_ci95(values).map(|(_, h)| h),
    }
}

pub fn require_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        Err(Error::InvalidParameter("at least one seed is required".into()))
    } else {
        Ok(())
    }
}

/// One stage of the optimisation pipeline with its wall-clock span,
/// seconds since the pipeline started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub started_s: f64,
    pub finished_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutcome {
    pub matching: MatchingOutcome,
    pub training: TrainingOutcome,
    pub assignment: Assignment,
    pub evaluation: Evaluation,
    /// Devices whose analytical PDR ends below the threshold.
    pub below_threshold: Vec<usize>,
    pub stage_log: Vec<StageEntry>,
}

/// Channel matching followed by per-channel SF/TP learning.
pub fn run_pipeline(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    cfg: &MaacConfig,
    seed: u64,
) -> Result<PipelineOutcome> {
    let clock = Instant::now();
    let mut stage_log = Vec::new();
    let stage = |name: &str, start: f64, log: &mut Vec<StageEntry>| {
        log.push(StageEntry { stage: name.into(), started_s: start, finished_s: clock.elapsed().as_secs_f64() });
    };
    let t0 = clock.elapsed().as_secs_f64();
    let matching = run_matching(scenario, plan, seed).map_err(|e| e.in_stage("matching"))?;
    stage("matching", t0, &mut stage_log);
    let t1 = clock.elapsed().as_secs_f64();
    let training = train(scenario, plan, &matching.matching, cfg, seed).map_err(|e| e.in_stage("allocation"))?;
    stage("allocation", t1, &mut stage_log);
    let assignment = training.assignment.clone();
    let evaluation = AnalyticalModel::new(scenario, plan)?.evaluate(&assignment)?;
    let below_threshold = below(&evaluation, cfg.pdr_threshold);
    Ok(PipelineOutcome { matching, training, assignment, evaluation, below_threshold, stage_log })
}

fn below(evaluation: &Evaluation, threshold: f64) -> Vec<usize> {
    evaluation.pdr.per_device.iter().enumerate().filter(|(_, &d)| d < threshold).map(|(i, _)| i).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mmalora,
    Adr,
    EfLora,
    Rcst,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Mmalora, Algorithm::Adr, Algorithm::EfLora, Algorithm::Rcst];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mmalora => "mmalora",
            Algorithm::Adr => "adr",
            Algorithm::EfLora => "ef-lora",
            Algorithm::Rcst => "rcst",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub maac: MaacConfig,
    pub adr: AdrConfig,
    pub greedy_max_steps: usize,
    /// Packets per device for a simulated PDR column; `None` skips it.
    pub sim_packets: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { maac: MaacConfig::default(), adr: AdrConfig::default(), greedy_max_steps: 10_000, sim_packets: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub gateways: usize,
    pub devices: usize,
    pub algorithm: Algorithm,
    pub system_ee: f64,
    pub mean_pdr: f64,
    pub simulated_pdr: Option<f64>,
    pub below_threshold: usize,
    /// Devices the allocator itself flagged (ADR floor misses, greedy cap).
    pub flagged: usize,
}

/// Scores MMALoRa and the three baselines on one deployment.
pub fn compare_algorithms(
    scenario: &NetworkScenario,
    plan: &ChannelPlan,
    cfg: &CompareConfig,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let model = AnalyticalModel::new(scenario, plan)?;
    let levels = cfg.maac.power_levels;
    let mut rows = Vec::with_capacity(Algorithm::ALL.len());
    for algorithm in Algorithm::ALL {
        let (assignment, flagged) = match algorithm {
            Algorithm::Mmalora => (run_pipeline(scenario, plan, &cfg.maac, seed)?.assignment, 0),
            Algorithm::Adr => {
                let out = adr_assign(scenario, plan, &cfg.adr)?;
                (out.assignment, out.flagged.len())
            }
            Algorithm::EfLora => {
                let out = eflora_assign(scenario, plan, levels, cfg.greedy_max_steps)?;
                let capped = usize::from(out.capped);
                (out.assignment, capped)
            }
            Algorithm::Rcst => (rcst_assign(scenario, plan, levels, seed)?, 0),
        };
        let ev = model.evaluate(&assignment)?;
        let simulated_pdr = match cfg.sim_packets {
            Some(packets) => {
                let horizon = horizon_for_packets(scenario, plan, &assignment, packets)?;
                let stats = Simulator::new(scenario, plan)?
                    .run(&assignment, &SimConfig { horizon_s: horizon, replications: 1, seed: seed ^ 0x5eed })?;
                Some(stats.mean_pdr())
            }
            None => None,
        };
        rows.push(ComparisonRow {
            seed,
            gateways: scenario.gateway_count(),
            devices: scenario.device_count(),
            algorithm,
            system_ee: ev.ee.system,
            mean_pdr: ev.pdr.mean(),
            simulated_pdr,
            below_threshold: below(&ev, cfg.maac.pdr_threshold).len(),
            flagged,
        });
    }
    Ok(rows)
}
