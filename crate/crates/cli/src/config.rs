//! Command-line flags and the optional TOML experiment file they override.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mmalora::analytical::FadingMode;
use mmalora::baselines::AdrConfig;
use mmalora::maac::MaacConfig;
use mmalora::model::ChannelPlan;
use mmalora::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "mmalora",
    version,
    about = "Energy-efficiency modelling and optimisation for multi-gateway LoRa uplinks"
)]
pub struct Cli {
    /// TOML experiment file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single seed; replaces the seed list of the experiment file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: Option<u16>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Random deployment: scenario file plus a positions CSV.
    Generate(GenerateArgs),
    /// Analytical PDR and EE of an assignment.
    Analyze(AnalyzeArgs),
    /// Packet-level Monte-Carlo estimate of an assignment.
    Simulate(SimulateArgs),
    /// Swap-matching channel assignment.
    Match(MatchArgs),
    /// Per-channel SF/TP learning on a matching.
    Train(TrainArgs),
    /// Matching followed by SF/TP learning, with evaluation.
    Optimize(OptimizeArgs),
    /// MMALoRa against ADR, greedy max-min EE and random allocation.
    Compare(CompareArgs),
    /// Analytical model against the simulator.
    Validate(ValidateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Match(_) => "match",
            Command::Train(_) => "train",
            Command::Optimize(_) => "optimize",
            Command::Compare(_) => "compare",
            Command::Validate(_) => "validate",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub gws: u32,
    #[arg(long)]
    pub eds: usize,
    /// Side of the square gateway area, meters.
    #[arg(long)]
    pub area: Option<f64>,
    /// Minimum gateway spacing, meters.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Cell radius, meters.
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, Default, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub channels: Option<usize>,
    /// Devices per channel; defaults to the smallest feasible quota.
    #[arg(long)]
    pub quota: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ScenarioArgs {
    /// Scenario TOML written by `generate`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[command(flatten)]
    pub plan: PlanArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: ScenarioArgs,
    /// Assignment CSV; defaults to distance-table SF at maximum power.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long)]
    pub fading: Option<FadingMode>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub input: ScenarioArgs,
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Target packets per device.
    #[arg(long, default_value_t = 1000.0)]
    pub packets: f64,
    #[arg(long, default_value_t = 1)]
    pub replications: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct MatchArgs {
    #[command(flatten)]
    pub input: ScenarioArgs,
}

#[derive(Clone, Debug, Default, Args, Serialize)]
pub struct LearnArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    /// PDR threshold `D_th`.
    #[arg(long)]
    pub dth: Option<f64>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: ScenarioArgs,
    /// Assignment CSV whose channels fix the groups; runs matching if absent.
    #[arg(long)]
    pub matching: Option<PathBuf>,
    #[command(flatten)]
    pub learn: LearnArgs,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub input: ScenarioArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    /// Packets per device for the simulated evaluation; 0 skips it.
    #[arg(long, default_value_t = 1000.0)]
    pub sim_packets: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Gateway counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [3usize])]
    pub gws: Vec<usize>,
    /// Device counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize])]
    pub eds: Vec<usize>,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub learn: LearnArgs,
    /// Packets per device for a simulated PDR column; 0 skips it.
    #[arg(long, default_value_t = 0.0)]
    pub sim_packets: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Ed,
    Gw,
    Ps,
    All,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long, value_enum, default_value_t = Sweep::All)]
    pub sweep: Sweep,
    /// Target packets per device.
    #[arg(long, default_value_t = 10_000.0)]
    pub packets: f64,
    #[arg(long)]
    pub fading: Option<FadingMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub channels: usize,
    pub quota: Option<usize>,
    pub bandwidth_hz: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { channels: 4, quota: None, bandwidth_hz: 125e3 }
    }
}

impl PlanConfig {
    pub fn build(&self, devices: usize) -> Result<ChannelPlan> {
        if self.channels == 0 {
            return Err(Error::InvalidParameter("at least one channel is required".into()));
        }
        let quota = self.quota.unwrap_or_else(|| devices.div_ceil(self.channels).max(1));
        ChannelPlan::uniform(self.channels, self.bandwidth_hz, quota, devices)
    }
}

/// Which pipeline stages `optimize` runs. A disabled matching stage keeps
/// the random initial matching; a disabled allocation stage keeps the
/// distance-table SF at maximum power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub matching: bool,
    pub allocation: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { matching: true, allocation: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<PathBuf>,
    pub plan: PlanConfig,
    pub stages: StageToggles,
    pub seeds: Vec<u64>,
    pub fading: FadingMode,
    pub maac: MaacConfig,
    pub adr: AdrConfig,
    pub greedy_max_steps: usize,
    pub out: PathBuf,
    pub format: Format,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            plan: PlanConfig::default(),
            stages: StageToggles::default(),
            seeds: vec![0, 1, 2],
            fading: FadingMode::default(),
            maac: MaacConfig::default(),
            adr: AdrConfig::default(),
            greedy_max_steps: 10_000,
            out: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// Merges global and per-command flags into the file values.
    pub fn resolve(mut self, cli: &Cli) -> Result<Self> {
        if let Some(seed) = cli.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &cli.out {
            self.out = out.clone();
        }
        if let Some(format) = cli.format {
            self.format = format;
        }
        let (input, plan, learn, fading) = match &cli.command {
            Command::Analyze(a) => (Some(&a.input), None, None, a.fading),
            Command::Simulate(a) => (Some(&a.input), None, None, None),
            Command::Match(a) => (Some(&a.input), None, None, None),
            Command::Train(a) => (Some(&a.input), None, Some(&a.learn), None),
            Command::Optimize(a) => (Some(&a.input), None, Some(&a.learn), None),
            Command::Compare(a) => (None, Some(&a.plan), Some(&a.learn), None),
            Command::Validate(a) => (None, None, None, a.fading),
            Command::Generate(_) => (None, None, None, None),
        };
        if let Some(input) = input {
            if input.scenario.is_some() {
                self.scenario = input.scenario.clone();
            }
        }
        if let Some(p) = plan.or(input.map(|i| &i.plan)) {
            if let Some(c) = p.channels {
                self.plan.channels = c;
            }
            if p.quota.is_some() {
                self.plan.quota = p.quota;
            }
            if let Some(b) = p.bandwidth {
                self.plan.bandwidth_hz = b;
            }
        }
        if let Some(l) = learn {
            if let Some(e) = l.episodes {
                self.maac.episodes = e;
            }
            if let Some(d) = l.dth {
                self.maac.pdr_threshold = d;
            }
        }
        if let Some(f) = fading {
            self.fading = f;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("the seed list is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.maac.pdr_threshold) {
            return Err(Error::InvalidParameter("the PDR threshold must lie in [0, 1]".into()));
        }
        if let Some(path) = &self.scenario {
            if !path.exists() {
                return Err(Error::InvalidParameter(format!("scenario file {} does not exist", path.display())));
            }
        }
        self.maac.validate()
    }

    pub fn first_seed(&self) -> u64 {
        self.seeds[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("colour = 1").is_err());
    }

    #[test]
    fn partial_sections_merge() {
        let c: ExperimentConfig = toml::from_str("seeds = [5]\n[maac]\nepisodes = 3\n[plan]\nchannels = 2\n").unwrap();
        assert_eq!(c.seeds, vec![5]);
        assert_eq!(c.maac.episodes, 3);
        assert_eq!(c.maac.batch_size, 1024);
        assert_eq!(c.plan.channels, 2);
    }

    #[test]
    fn invalid_threshold_and_seeds_fail() {
        let mut c = ExperimentConfig::default();
        c.maac.pdr_threshold = 1.5;
        assert!(c.validate().is_err());
        let c = ExperimentConfig { seeds: vec![], ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_quota_is_tight() {
        let p = PlanConfig { channels: 3, ..PlanConfig::default() }.build(10).unwrap();
        assert_eq!(p.quota(), 4);
    }
}
