//! Closed-form link and traffic expressions. Times in seconds, bandwidth in
//! Hz, rates in 1/s.

use crate::error::{Error, Result};
use crate::model::{LowDataRate, SpreadingFactor, LIGHT_SPEED};

/// Symbol time at or above which low-data-rate optimisation is switched on.
pub const LOW_DATA_RATE_SYMBOL_TIME: f64 = 0.016;

/// Preamble symbols that must be received cleanly for the packet to lock.
pub const CRITICAL_PREAMBLE_SYMBOLS: u32 = 5;

#[inline]
pub fn symbol_time(sf: SpreadingFactor, bandwidth_hz: f64) -> f64 {
    f64::from(1u32 << sf.value()) / bandwidth_hz
}

pub fn low_data_rate(mode: LowDataRate, sf: SpreadingFactor, bandwidth_hz: f64) -> bool {
    match mode {
        LowDataRate::On => true,
        LowDataRate::Off => false,
        LowDataRate::Auto => symbol_time(sf, bandwidth_hz) >= LOW_DATA_RATE_SYMBOL_TIME,
    }
}

/// Packet airtime: `(n_pr + 12.25 + max(ceil((8L - 4sf + 44) / (4(sf - 2de))) * cr, 0)) * T_sym`.
/// With the default 8-symbol preamble the constant term is 20.25.
pub fn time_on_air(
    sf: SpreadingFactor,
    bandwidth_hz: f64,
    coding_rate: u8,
    payload_bytes: u32,
    low_data_rate: bool,
    preamble_symbols: u32,
) -> f64 {
    let sf_v = f64::from(sf.value());
    let de = if low_data_rate { 1.0 } else { 0.0 };
    let numerator = 8.0 * f64::from(payload_bytes) - 4.0 * sf_v + 28.0 + 16.0;
    let denominator = 4.0 * (sf_v - 2.0 * de);
    let payload_symbols = ((numerator / denominator).ceil() * f64::from(coding_rate)).max(0.0);
    let fixed = f64::from(preamble_symbols) + 4.25 + 8.0;
    (fixed + payload_symbols) * symbol_time(sf, bandwidth_hz)
}

/// Probability of at least one Poisson arrival at `rate` within `interval`.
#[inline]
pub fn activity_prob(rate: f64, interval: f64) -> f64 {
    -(-rate * interval).exp_m1()
}

/// Vulnerable interval during which an interferer's start overlaps the part
/// of the target packet that must be received cleanly.
#[inline]
pub fn interference_window(toa_target: f64, toa_interferer: f64, preamble_symbols: u32, t_sym_target: f64) -> f64 {
    let disposable = f64::from(preamble_symbols.saturating_sub(CRITICAL_PREAMBLE_SYMBOLS));
    toa_interferer + toa_target - disposable * t_sym_target
}

/// Probability that a duty-cycled device is in its active period,
/// `1 - 100 (1 - δ) λ T`, clamped to `[0, 1]`. The flag reports clamping.
#[inline]
pub fn active_fraction(rate: f64, toa: f64, duty_cycle: f64) -> (f64, bool) {
    let raw = 1.0 - 100.0 * (1.0 - duty_cycle) * rate * toa;
    let clamped = raw.clamp(0.0, 1.0);
    (clamped, clamped != raw)
}

/// Probability the interferer starts a packet inside `window`.
#[inline]
pub fn interferer_tx_prob(rate: f64, toa_interferer: f64, window: f64, duty_cycle: f64) -> f64 {
    let (active, _) = active_fraction(rate, toa_interferer, duty_cycle);
    activity_prob(rate, window * active)
}

/// Linear attenuation `(c / (4π f d))^τ`.
pub fn path_loss(distance_m: f64, frequency_hz: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(Error::InvalidParameter(format!("path loss needs distance > 0, got {distance_m}")));
    }
    Ok((LIGHT_SPEED / (4.0 * std::f64::consts::PI * frequency_hz * distance_m)).powf(exponent))
}

/// Multi-gateway delivery: at least one gateway decodes.
pub fn combine_gateways(per_gateway: &[f64]) -> f64 {
    1.0 - per_gateway.iter().map(|d| 1.0 - d).product::<f64>()
}

/// Mean absolute error between two per-device PDR vectors.
pub fn mae(analytical: &[f64], simulated: &[f64]) -> Result<f64> {
    if analytical.len() != simulated.len() {
        return Err(Error::LengthMismatch { left: analytical.len(), right: simulated.len() });
    }
    if analytical.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = analytical.iter().zip(simulated).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / analytical.len() as f64)
}
