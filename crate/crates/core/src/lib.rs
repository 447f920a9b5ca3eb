// SPDX-License-Identifier: Apache-2.0

//! Simulation of programmable ring oscillators used as on-chip voltage
//! sensors: power-grid model, oscillator model, stimuli, detection and
//! side-channel evaluation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detect;
pub mod error;
pub mod floorplan;
pub mod pdn;
pub mod pro;
pub mod report;
pub mod rng;
pub mod sca;
pub mod scenario;
pub mod sim;
pub mod stimuli;

pub use detect::{AnomalyEvent, AnomalyKind, BaselineProfile, DropRatioMatrix, LocalizationReport};
pub use error::{Error, Result};
pub use floorplan::{ChipFloorplan, ProPlacement, Region};
pub use pdn::{CurrentMap, GridSpec, Node, VoltageField};
pub use pro::{CounterReading, MeasurementPlan, ProDesign, ProInstance, SelConfig};
pub use sca::{TraceMode, TraceSet};
pub use scenario::Scenario;
pub use stimuli::{EmPulse, PowerWasterBank};
