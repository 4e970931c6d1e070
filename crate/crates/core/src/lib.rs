//! Energy-efficiency modelling and two-stage parameter allocation for LoRa
//! uplinks served by several gateways.
//!
//! * [`model`]: scenarios, channel plans, assignments and the link tables.
//! * [`analytical`]: closed-form PDR and EE.
//! * [`simulator`]: packet-level Monte-Carlo reference.
//! * [`matching`]: swap-matching channel assignment.
//! * [`maac`]: attention-critic multi-agent SF/TP allocation.
//! * [`baselines`]: RCST, ADR and a max-min EE greedy.
//! * [`experiment`]: sweeps and summary statistics shared by the CLI.

// Index loops mirror the per-agent and per-gateway sums; negated comparisons
// reject NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analytical;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod maac;
pub mod matching;
pub mod model;
pub mod simulator;
pub mod units;

pub use error::{Error, Result};
