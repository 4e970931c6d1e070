//! Closed-form packet delivery and energy-efficiency model for multi-gateway
//! LoRa uplinks.
//!
//! Per-gateway delivery is the product of a Rayleigh sensitivity term and one
//! survival factor per co-channel device, `h_j Φ_ij + (1 - h_j)`, where `h_j`
//! is the chance the device transmits inside the vulnerable window (Poisson
//! traffic thinned by the duty cycle) and `Φ_ij` the capture probability
//! from the SIR matrix. Gateways combine as independent receivers and the
//! per-device EE charges `1 / D_i` retransmissions.

mod formulas;
mod model;

pub use formulas::{
    active_fraction, activity_prob, combine_gateways, interference_window, interferer_tx_prob, low_data_rate, mae,
    path_loss, symbol_time, time_on_air, CRITICAL_PREAMBLE_SYMBOLS, LOW_DATA_RATE_SYMBOL_TIME,
};
pub use model::{AnalyticalModel, EeReport, Evaluation, FadingMode, GroupOutcome, LinkBudget, PdrReport, Transmitter};

#[cfg(test)]
mod tests;
