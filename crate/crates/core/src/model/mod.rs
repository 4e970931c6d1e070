//! Shared domain types: network topology, radio and traffic parameters,
//! channel plans and per-device transmission assignments.

mod file;
mod generate;
mod tables;

pub use file::{
    assignment_from_records, assignment_records, load_assignment, load_scenario, save_assignment, save_scenario,
    scenario_from_str, scenario_to_string, AssignmentRecord,
};
pub use generate::{generate_scenario, PlacementRules};
pub use tables::{SensitivityTable, SirMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::units::dbm_to_mw;

/// Speed of light in m/s.
pub const LIGHT_SPEED: f64 = 299_792_458.0;

/// Bandwidths a channel may use, Hz.
pub const ALLOWED_BANDWIDTHS: [f64; 3] = [125e3, 250e3, 500e3];

/// LoRa spreading factor in `7..=12`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: u8 = 7;
    pub const MAX: u8 = 12;
    pub const ALL: [SpreadingFactor; 6] = [
        SpreadingFactor(7),
        SpreadingFactor(8),
        SpreadingFactor(9),
        SpreadingFactor(10),
        SpreadingFactor(11),
        SpreadingFactor(12),
    ];

    pub fn new(value: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidParameter(format!("spreading factor {value} not in 7..=12")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Zero-based position, SF7 -> 0.
    #[inline]
    pub fn index(self) -> usize {
        (self.0 - Self::MIN) as usize
    }

    pub fn from_index(index: usize) -> Self {
        Self::ALL[index]
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SpreadingFactor> for u8 {
    fn from(sf: SpreadingFactor) -> u8 {
        sf.0
    }
}

impl std::fmt::Display for SpreadingFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SF{}", self.0)
    }
}

/// 2-D position in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Self { x: p[0], y: p[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// When the low-data-rate optimisation flag is set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowDataRate {
    /// Enabled when the symbol time reaches 16 ms.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Side of the square deployment area for gateways, meters.
    pub area_m: f64,
    pub min_gateway_spacing_m: f64,
    /// Coverage radius `R` around each gateway, meters.
    pub cell_radius_m: f64,
    pub gateways: Vec<Point>,
    pub devices: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub carrier_frequency_hz: f64,
    pub path_loss_exponent: f64,
    /// Coding rate denominator, 5..=8 for 4/5..4/8.
    pub coding_rate: u8,
    pub preamble_symbols: u32,
    pub tp_min_dbm: f64,
    pub tp_max_dbm: f64,
    #[serde(default)]
    pub low_data_rate: LowDataRate,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 868e6,
            path_loss_exponent: 2.7,
            coding_rate: 5,
            preamble_symbols: 8,
            tp_min_dbm: 2.0,
            tp_max_dbm: 20.0,
            low_data_rate: LowDataRate::Auto,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean packet generation rate per device, 1/s.
    pub send_rate: f64,
    pub duty_cycle: f64,
    pub payload_bytes: u32,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { send_rate: 0.001, duty_cycle: 0.01, payload_bytes: 20 }
    }
}

/// Transmit-mode power draw as a function of radiated power:
/// `circuit + radiated / pa_efficiency`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyProfile {
    pub circuit_mw: f64,
    pub pa_efficiency: f64,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        Self { circuit_mw: 10.0, pa_efficiency: 0.25 }
    }
}

impl EnergyProfile {
    /// Power draw in watts while transmitting at `tp_dbm`.
    pub fn power_w(&self, tp_dbm: f64) -> f64 {
        let radiated = dbm_to_mw(tp_dbm).unwrap_or(0.0);
        (self.circuit_mw + radiated / self.pa_efficiency) / 1000.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.circuit_mw > 0.0 && self.circuit_mw.is_finite()) {
            return Err(Error::InvalidParameter("energy.circuit_mw must be > 0".into()));
        }
        if !(self.pa_efficiency > 0.0 && self.pa_efficiency <= 1.0) {
            return Err(Error::InvalidParameter("energy.pa_efficiency must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Immutable description of a deployment: where things are, how they
/// transmit and how often.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkScenario {
    pub seed: u64,
    pub geometry: Geometry,
    pub radio: RadioConfig,
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub energy: EnergyProfile,
}

impl NetworkScenario {
    /// Hand-placed deployment with default radio, traffic and energy settings.
    pub fn from_positions(seed: u64, gateways: Vec<Point>, devices: Vec<Point>) -> Result<Self> {
        let rules = PlacementRules::default();
        let scenario = Self {
            seed,
            geometry: Geometry {
                area_m: rules.area_m,
                min_gateway_spacing_m: rules.min_gateway_spacing_m,
                cell_radius_m: rules.cell_radius_m,
                gateways,
                devices,
            },
            radio: RadioConfig::default(),
            traffic: TrafficConfig::default(),
            energy: EnergyProfile::default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn device_count(&self) -> usize {
        self.geometry.devices.len()
    }

    pub fn gateway_count(&self) -> usize {
        self.geometry.gateways.len()
    }

    pub fn distance(&self, device: usize, gateway: usize) -> f64 {
        self.geometry.devices[device].distance(&self.geometry.gateways[gateway])
    }

    /// Distance from `device` to its closest gateway.
    pub fn nearest_gateway_distance(&self, device: usize) -> f64 {
        (0..self.gateway_count()).map(|k| self.distance(device, k)).fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.gateways.is_empty() {
            return Err(Error::InvalidParameter("at least one gateway is required".into()));
        }
        if !(g.cell_radius_m > 0.0 && g.cell_radius_m.is_finite()) {
            return Err(Error::InvalidParameter("cell_radius_m must be positive".into()));
        }
        for p in g.gateways.iter().chain(&g.devices) {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::InvalidParameter("non-finite coordinate".into()));
            }
        }
        for i in 0..self.device_count() {
            let d = self.nearest_gateway_distance(i);
            if d > g.cell_radius_m {
                return Err(Error::OutOfCoverage(d));
            }
            if d <= 0.0 {
                return Err(Error::InvalidParameter(format!("device {i} is colocated with a gateway")));
            }
        }
        let r = &self.radio;
        if !(5..=8).contains(&r.coding_rate) {
            return Err(Error::InvalidParameter(format!("coding rate {} not in 5..=8", r.coding_rate)));
        }
        if r.preamble_symbols < 5 {
            return Err(Error::InvalidParameter("preamble must have at least 5 symbols".into()));
        }
        if !(r.carrier_frequency_hz > 0.0) || !(r.path_loss_exponent > 0.0) {
            return Err(Error::InvalidParameter("carrier frequency and path-loss exponent must be positive".into()));
        }
        if !(r.tp_min_dbm.is_finite() && r.tp_max_dbm.is_finite() && r.tp_min_dbm < r.tp_max_dbm) {
            return Err(Error::InvalidParameter("tp_min_dbm must be below tp_max_dbm".into()));
        }
        let t = &self.traffic;
        if !(t.duty_cycle > 0.0 && t.duty_cycle <= 1.0) {
            return Err(Error::InvalidParameter("duty_cycle must be in (0, 1]".into()));
        }
        if !(t.send_rate > 0.0 && t.send_rate.is_finite()) {
            return Err(Error::InvalidParameter("send_rate must be positive".into()));
        }
        if t.payload_bytes == 0 {
            return Err(Error::InvalidParameter("payload_bytes must be positive".into()));
        }
        self.energy.validate()
    }

    /// Copy of the scenario keeping only the listed gateways.
    pub fn with_gateways(&self, keep: &[usize]) -> Self {
        let mut s = self.clone();
        s.geometry.gateways = keep.iter().map(|&k| self.geometry.gateways[k]).collect();
        s
    }
}

/// Channels available to the network and the per-channel device quota.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    bandwidths_hz: Vec<f64>,
    quota: usize,
}

impl ChannelPlan {
    /// Builds a plan for `devices` devices, rejecting quotas that leave
    /// no feasible assignment.
    pub fn new(bandwidths_hz: Vec<f64>, quota: usize, devices: usize) -> Result<Self> {
        if bandwidths_hz.is_empty() {
            return Err(Error::InvalidParameter("channel plan needs at least one channel".into()));
        }
        if let Some(bw) = bandwidths_hz.iter().find(|bw| !ALLOWED_BANDWIDTHS.contains(bw)) {
            return Err(Error::InvalidParameter(format!("unsupported bandwidth {bw} Hz")));
        }
        let channels = bandwidths_hz.len();
        if quota == 0 || quota * channels < devices {
            return Err(Error::InfeasibleQuota { devices, channels, quota });
        }
        Ok(Self { bandwidths_hz, quota })
    }

    pub fn uniform(channels: usize, bandwidth_hz: f64, quota: usize, devices: usize) -> Result<Self> {
        Self::new(vec![bandwidth_hz; channels], quota, devices)
    }

    /// Plan with the tightest feasible quota, `ceil(devices / channels)`.
    pub fn tight(channels: usize, bandwidth_hz: f64, devices: usize) -> Result<Self> {
        let quota = devices.div_ceil(channels.max(1)).max(1);
        Self::uniform(channels, bandwidth_hz, quota, devices)
    }

    pub fn channel_count(&self) -> usize {
        self.bandwidths_hz.len()
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn bandwidth(&self, channel: usize) -> f64 {
        self.bandwidths_hz[channel]
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths_hz
    }
}

/// A violated feasibility constraint of the joint allocation problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstraintViolation {
    #[error("assignment covers {got} devices, scenario has {expected}")]
    DeviceCount { expected: usize, got: usize },
    #[error("device {device}: power {tp_dbm} dBm outside [{min}, {max}]")]
    PowerOutOfRange { device: usize, tp_dbm: f64, min: f64, max: f64 },
    #[error("device {device}: channel {channel} does not exist")]
    UnknownChannel { device: usize, channel: usize },
    #[error("channel {channel} carries {count} devices, quota is {quota}")]
    QuotaExceeded { channel: usize, count: usize, quota: usize },
}

/// Per-device transmission parameters. Storing exactly one `(channel, sf)`
/// pair per device is the one-hot assignment indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub channel: Vec<usize>,
    pub sf: Vec<SpreadingFactor>,
    pub tp_dbm: Vec<f64>,
}

impl Assignment {
    pub fn new(channel: Vec<usize>, sf: Vec<SpreadingFactor>, tp_dbm: Vec<f64>) -> Result<Self> {
        if channel.len() != sf.len() || sf.len() != tp_dbm.len() {
            return Err(Error::LengthMismatch { left: channel.len(), right: sf.len().max(tp_dbm.len()) });
        }
        Ok(Self { channel, sf, tp_dbm })
    }

    /// Every device on `channel` with the same SF and power.
    pub fn uniform(devices: usize, channel: usize, sf: SpreadingFactor, tp_dbm: f64) -> Self {
        Self { channel: vec![channel; devices], sf: vec![sf; devices], tp_dbm: vec![tp_dbm; devices] }
    }

    pub fn len(&self) -> usize {
        self.channel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channel.is_empty()
    }

    /// `X_i^{c,m}`: whether device `i` transmits on `channel` with `sf`.
    pub fn indicator(&self, device: usize, channel: usize, sf: SpreadingFactor) -> bool {
        self.channel[device] == channel && self.sf[device] == sf
    }

    pub fn channel_members(&self, channel: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.channel[i] == channel).collect()
    }

    /// Checks power bounds, channel existence and per-channel quota.
    pub fn validate(&self, scenario: &NetworkScenario, plan: &ChannelPlan) -> Result<(), ConstraintViolation> {
        let n = scenario.device_count();
        if self.len() != n || self.sf.len() != n || self.tp_dbm.len() != n {
            return Err(ConstraintViolation::DeviceCount { expected: n, got: self.len() });
        }
        let (min, max) = (scenario.radio.tp_min_dbm, scenario.radio.tp_max_dbm);
        // small slack for grid levels computed by repeated addition
        let slack = 1e-9;
        let mut counts = vec![0usize; plan.channel_count()];
        for i in 0..n {
            let p = self.tp_dbm[i];
            if !(p >= min - slack && p <= max + slack) {
                return Err(ConstraintViolation::PowerOutOfRange { device: i, tp_dbm: p, min, max });
            }
            let c = self.channel[i];
            if c >= plan.channel_count() {
                return Err(ConstraintViolation::UnknownChannel { device: i, channel: c });
            }
            counts[c] += 1;
        }
        for (channel, &count) in counts.iter().enumerate() {
            if count > plan.quota() {
                return Err(ConstraintViolation::QuotaExceeded { channel, count, quota: plan.quota() });
            }
        }
        Ok(())
    }
}

/// Initial SF implied by the distance to the nearest gateway:
/// SF7 for (0, 2] km, ..., SF12 for (10, 12] km.
pub fn default_sf_by_distance(distance_m: f64) -> Result<SpreadingFactor> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::InvalidParameter(format!("distance must be positive, got {distance_m}")));
    }
    let table = SensitivityTable::default();
    SpreadingFactor::ALL
        .into_iter()
        .find(|sf| distance_m <= table.range_m(*sf).1)
        .ok_or(Error::OutOfCoverage(distance_m))
}

/// Distance-table SF at maximum power; channels filled round-robin by index.
pub fn distance_based_assignment(scenario: &NetworkScenario, plan: &ChannelPlan) -> Result<Assignment> {
    let n = scenario.device_count();
    let sf =
        (0..n).map(|i| default_sf_by_distance(scenario.nearest_gateway_distance(i))).collect::<Result<Vec<_>>>()?;
    let channel = (0..n).map(|i| i % plan.channel_count()).collect();
    Ok(Assignment { channel, sf, tp_dbm: vec![scenario.radio.tp_max_dbm; n] })
}
