use serde::{Deserialize, Serialize};

use super::formulas::{
    active_fraction, combine_gateways, interference_window, interferer_tx_prob, low_data_rate, path_loss, symbol_time,
    time_on_air,
};
use crate::error::{Error, Result};
use crate::model::{
    Assignment, ChannelPlan, EnergyProfile, NetworkScenario, RadioConfig, SensitivityTable, SirMatrix, SpreadingFactor,
    TrafficConfig,
};
use crate::units::dbm_to_mw;

/// How the interferer's Rayleigh fading enters the capture probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingMode {
    /// Average over the interferer's fading: `1 / (1 + η I / S)`.
    #[default]
    Expected,
    /// Interferer fading fixed at its mean: `exp(-η I / S)`.
    Mean,
}

impl std::str::FromStr for FadingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" | "expected-fading" => Ok(FadingMode::Expected),
            "mean" | "mean-fading" => Ok(FadingMode::Mean),
            other => Err(Error::InvalidParameter(format!("unknown fading mode {other}"))),
        }
    }
}

/// Device-to-gateway distances and mean path attenuation, row-major
/// `[device][gateway]`.
#[derive(Clone, Debug)]
pub struct LinkBudget {
    gateways: usize,
    distance_m: Vec<f64>,
    attenuation: Vec<f64>,
}

impl LinkBudget {
    pub fn new(scenario: &NetworkScenario) -> Result<Self> {
        let gateways = scenario.gateway_count();
        let mut distance_m = Vec::with_capacity(scenario.device_count() * gateways);
        let mut attenuation = Vec::with_capacity(distance_m.capacity());
        for i in 0..scenario.device_count() {
            for k in 0..gateways {
                let d = scenario.distance(i, k);
                distance_m.push(d);
                attenuation.push(path_loss(d, scenario.radio.carrier_frequency_hz, scenario.radio.path_loss_exponent)?);
            }
        }
        Ok(Self { gateways, distance_m, attenuation })
    }

    pub fn gateway_count(&self) -> usize {
        self.gateways
    }

    #[inline]
    pub fn distance(&self, device: usize, gateway: usize) -> f64 {
        self.distance_m[device * self.gateways + gateway]
    }

    #[inline]
    pub fn attenuation(&self, device: usize, gateway: usize) -> f64 {
        self.attenuation[device * self.gateways + gateway]
    }

    pub fn attenuations(&self, device: usize) -> &[f64] {
        &self.attenuation[device * self.gateways..(device + 1) * self.gateways]
    }

    pub fn distances(&self, device: usize) -> &[f64] {
        &self.distance_m[device * self.gateways..(device + 1) * self.gateways]
    }
}

/// One device's transmission settings with the derived airtime figures.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmitter {
    pub device: usize,
    pub sf: SpreadingFactor,
    pub tp_dbm: f64,
    pub bandwidth_hz: f64,
    pub tp_mw: f64,
    pub toa_s: f64,
    pub symbol_time_s: f64,
    /// Transmit-mode power draw, W.
    pub power_w: f64,
}

/// Per-member PDR and EE for one co-channel group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupOutcome {
    /// `[member][gateway]`, row-major.
    pub pdr_gateway: Vec<f64>,
    pub pdr: Vec<f64>,
    pub ee: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdrReport {
    /// `[device][gateway]`, row-major.
    pub per_gateway: Vec<f64>,
    pub gateways: usize,
    pub per_device: Vec<f64>,
}

impl PdrReport {
    pub fn at(&self, device: usize, gateway: usize) -> f64 {
        self.per_gateway[device * self.gateways + gateway]
    }

    pub fn mean(&self) -> f64 {
        if self.per_device.is_empty() {
            0.0
        } else {
            self.per_device.iter().sum::<f64>() / self.per_device.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EeReport {
    /// bits per joule
    pub per_device: Vec<f64>,
    pub per_channel: Vec<f64>,
    pub system: f64,
    /// Energy spent per successfully delivered packet, J.
    pub success_energy_j: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub pdr: PdrReport,
    pub ee: EeReport,
}

/// Closed-form PDR / EE evaluator for a fixed scenario and channel plan.
#[derive(Clone, Debug)]
pub struct AnalyticalModel {
    radio: RadioConfig,
    traffic: TrafficConfig,
    energy: EnergyProfile,
    plan: ChannelPlan,
    link: LinkBudget,
    sir: SirMatrix,
    sensitivity: SensitivityTable,
    fading: FadingMode,
    devices: usize,
}

impl AnalyticalModel {
    pub fn new(scenario: &NetworkScenario, plan: &ChannelPlan) -> Result<Self> {
        scenario.validate()?;
        let model = Self {
            radio: scenario.radio.clone(),
            traffic: scenario.traffic.clone(),
            energy: scenario.energy.clone(),
            plan: plan.clone(),
            link: LinkBudget::new(scenario)?,
            sir: SirMatrix::default(),
            sensitivity: SensitivityTable::default(),
            fading: FadingMode::default(),
            devices: scenario.device_count(),
        };
        model.warn_on_model_edges();
        Ok(model)
    }

    pub fn with_fading(mut self, fading: FadingMode) -> Self {
        self.fading = fading;
        self
    }

    fn warn_on_model_edges(&self) {
        for &bw in self.plan.bandwidths() {
            for sf in SpreadingFactor::ALL {
                let toa = self.airtime(sf, bw);
                if active_fraction(self.traffic.send_rate, toa, self.traffic.duty_cycle).1 {
                    log::warn!("active fraction clamped for {sf} at {bw} Hz (airtime {toa:.3} s)");
                }
            }
        }
    }

    pub fn fading(&self) -> FadingMode {
        self.fading
    }

    pub fn link(&self) -> &LinkBudget {
        &self.link
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    pub fn radio(&self) -> &RadioConfig {
        &self.radio
    }

    pub fn traffic(&self) -> &TrafficConfig {
        &self.traffic
    }

    pub fn energy(&self) -> &EnergyProfile {
        &self.energy
    }

    pub fn sir(&self) -> &SirMatrix {
        &self.sir
    }

    pub fn sensitivity(&self) -> &SensitivityTable {
        &self.sensitivity
    }

    pub fn device_count(&self) -> usize {
        self.devices
    }

    pub fn gateway_count(&self) -> usize {
        self.link.gateway_count()
    }

    pub fn payload_bits(&self) -> f64 {
        8.0 * f64::from(self.traffic.payload_bytes)
    }

    pub fn airtime(&self, sf: SpreadingFactor, bandwidth_hz: f64) -> f64 {
        time_on_air(
            sf,
            bandwidth_hz,
            self.radio.coding_rate,
            self.traffic.payload_bytes,
            low_data_rate(self.radio.low_data_rate, sf, bandwidth_hz),
            self.radio.preamble_symbols,
        )
    }

    pub fn transmitter(&self, device: usize, sf: SpreadingFactor, tp_dbm: f64, bandwidth_hz: f64) -> Transmitter {
        Transmitter {
            device,
            sf,
            tp_dbm,
            bandwidth_hz,
            tp_mw: dbm_to_mw(tp_dbm).unwrap_or(0.0),
            toa_s: self.airtime(sf, bandwidth_hz),
            symbol_time_s: symbol_time(sf, bandwidth_hz),
            power_w: self.energy.power_w(tp_dbm),
        }
    }

    pub fn transmitters(&self, assignment: &Assignment) -> Vec<Transmitter> {
        (0..assignment.len())
            .map(|i| {
                self.transmitter(i, assignment.sf[i], assignment.tp_dbm[i], self.plan.bandwidth(assignment.channel[i]))
            })
            .collect()
    }

    /// Mean received power at `gateway`, mW.
    #[inline]
    pub fn received_mw(&self, tx: &Transmitter, gateway: usize) -> f64 {
        tx.tp_mw * self.link.attenuation(tx.device, gateway)
    }

    /// `P{p g a >= η_sen}` for exponential `g`.
    #[inline]
    pub fn sensitivity_factor(&self, tx: &Transmitter, gateway: usize) -> f64 {
        (-self.sensitivity.sensitivity_mw(tx.sf) / self.received_mw(tx, gateway)).exp()
    }

    /// Probability that `interferer` starts a packet in `target`'s vulnerable window.
    #[inline]
    pub fn interferer_activity(&self, target: &Transmitter, interferer: &Transmitter) -> f64 {
        let window =
            interference_window(target.toa_s, interferer.toa_s, self.radio.preamble_symbols, target.symbol_time_s);
        interferer_tx_prob(self.traffic.send_rate, interferer.toa_s, window, self.traffic.duty_cycle)
    }

    /// Probability that `target` captures the receiver against an active `interferer`.
    #[inline]
    pub fn capture_probability(&self, target: &Transmitter, interferer: &Transmitter, gateway: usize) -> f64 {
        let ratio = self.sir.threshold(target.sf, interferer.sf) * self.received_mw(interferer, gateway)
            / self.received_mw(target, gateway);
        match self.fading {
            FadingMode::Expected => 1.0 / (1.0 + ratio),
            FadingMode::Mean => (-ratio).exp(),
        }
    }

    /// `h Φ + (1 - h)`: survival against one co-channel device.
    #[inline]
    pub fn interference_factor(&self, activity: f64, capture: f64) -> f64 {
        activity * capture + (1.0 - activity)
    }

    /// Bits per joule given the delivery probability; zero for dead links.
    #[inline]
    pub fn ee_from_pdr(&self, tx: &Transmitter, pdr: f64) -> f64 {
        if pdr <= 0.0 {
            0.0
        } else {
            self.payload_bits() * pdr / (tx.power_w * tx.toa_s)
        }
    }

    /// Evaluates every member of one co-channel group. Interference only
    /// couples devices sharing a channel, so groups are independent.
    pub fn evaluate_group(&self, group: &[Transmitter]) -> GroupOutcome {
        let k_count = self.gateway_count();
        let mut out = GroupOutcome {
            pdr_gateway: vec![0.0; group.len() * k_count],
            pdr: Vec::with_capacity(group.len()),
            ee: Vec::with_capacity(group.len()),
        };
        let mut activity = vec![0.0; group.len()];
        for (m, target) in group.iter().enumerate() {
            for (j, interferer) in group.iter().enumerate() {
                activity[j] = if j == m { 0.0 } else { self.interferer_activity(target, interferer) };
            }
            let row = &mut out.pdr_gateway[m * k_count..(m + 1) * k_count];
            for (k, slot) in row.iter_mut().enumerate() {
                let mut d = self.sensitivity_factor(target, k);
                for (j, interferer) in group.iter().enumerate() {
                    if j != m {
                        d *= self.interference_factor(activity[j], self.capture_probability(target, interferer, k));
                    }
                }
                *slot = d;
            }
            let pdr = combine_gateways(row);
            out.pdr.push(pdr);
            out.ee.push(self.ee_from_pdr(target, pdr));
        }
        out
    }

    /// Full evaluation of an assignment: per-gateway and multi-gateway PDR,
    /// per-device, per-channel and system EE.
    pub fn evaluate(&self, assignment: &Assignment) -> Result<Evaluation> {
        self.check(assignment)?;
        let k_count = self.gateway_count();
        let n = assignment.len();
        let txs = self.transmitters(assignment);
        let mut per_gateway = vec![0.0; n * k_count];
        let mut per_device = vec![0.0; n];
        let mut ee = vec![0.0; n];
        let mut per_channel = vec![0.0; self.plan.channel_count()];

        for (c, channel_ee) in per_channel.iter_mut().enumerate() {
            let members = assignment.channel_members(c);
            let group: Vec<Transmitter> = members.iter().map(|&i| txs[i].clone()).collect();
            let outcome = self.evaluate_group(&group);
            for (m, &i) in members.iter().enumerate() {
                per_gateway[i * k_count..(i + 1) * k_count]
                    .copy_from_slice(&outcome.pdr_gateway[m * k_count..(m + 1) * k_count]);
                per_device[i] = outcome.pdr[m];
                ee[i] = outcome.ee[m];
            }
            *channel_ee = outcome.ee.iter().sum();
        }
        let success_energy_j = (0..n)
            .map(|i| if per_device[i] > 0.0 { txs[i].power_w * txs[i].toa_s / per_device[i] } else { f64::INFINITY })
            .collect();
        Ok(Evaluation {
            pdr: PdrReport { per_gateway, gateways: k_count, per_device },
            ee: EeReport { system: ee.iter().sum(), per_device: ee, per_channel, success_energy_j },
        })
    }

    fn check(&self, assignment: &Assignment) -> Result<()> {
        if assignment.len() != self.devices {
            return Err(Error::LengthMismatch { left: assignment.len(), right: self.devices });
        }
        let (min, max) = (self.radio.tp_min_dbm, self.radio.tp_max_dbm);
        for i in 0..assignment.len() {
            let p = assignment.tp_dbm[i];
            if !(p >= min - 1e-9 && p <= max + 1e-9) {
                return Err(
                    crate::model::ConstraintViolation::PowerOutOfRange { device: i, tp_dbm: p, min, max }.into()
                );
            }
            if assignment.channel[i] >= self.plan.channel_count() {
                return Err(crate::model::ConstraintViolation::UnknownChannel {
                    device: i,
                    channel: assignment.channel[i],
                }
                .into());
            }
        }
        Ok(())
    }

    /// `D_{i,k}` for one device and gateway.
    pub fn pdr_single_gw(&self, assignment: &Assignment, device: usize, gateway: usize) -> Result<f64> {
        self.check(assignment)?;
        let txs = self.transmitters(assignment);
        let target = &txs[device];
        let mut d = self.sensitivity_factor(target, gateway);
        for (j, interferer) in txs.iter().enumerate() {
            if j != device && assignment.channel[j] == assignment.channel[device] {
                let h = self.interferer_activity(target, interferer);
                d *= self.interference_factor(h, self.capture_probability(target, interferer, gateway));
            }
        }
        Ok(d)
    }

    /// `D_i`: delivered by at least one gateway.
    pub fn pdr_multi_gw(&self, assignment: &Assignment, device: usize) -> Result<f64> {
        let per: Vec<f64> =
            (0..self.gateway_count()).map(|k| self.pdr_single_gw(assignment, device, k)).collect::<Result<_>>()?;
        Ok(combine_gateways(&per))
    }

    /// `EE_i` in bits per joule.
    pub fn energy_efficiency(&self, assignment: &Assignment, device: usize) -> Result<f64> {
        let pdr = self.pdr_multi_gw(assignment, device)?;
        let tx = self.transmitter(
            device,
            assignment.sf[device],
            assignment.tp_dbm[device],
            self.plan.bandwidth(assignment.channel[device]),
        );
        Ok(self.ee_from_pdr(&tx, pdr))
    }

    /// System EE with its per-channel partition and the PDR report.
    pub fn system_ee(&self, assignment: &Assignment) -> Result<Evaluation> {
        self.evaluate(assignment)
    }
}
