//! Models and analyses for a battery-backed power buffer feeding a
//! constant-power load through PCC voltage sags.
//!
//! * [`phasor`]: phasors, symmetrical components and the constant-impedance
//!   relations at the PCC.
//! * [`battery`]: lead-acid Thevenin model, SOD calibration and
//!   discharge-current parameter tables.
//! * [`steady_state`]: post-transient dc-link voltage and the ride-through
//!   envelope.
//! * [`small_signal`]: linearised stability, damping, poles and
//!   sensitivities.
//! * [`dynamics`]: time-domain sag simulation with mode switching.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod dynamics;
pub mod error;
pub mod phasor;
pub mod small_signal;
pub mod steady_state;

pub use battery::{BatteryCalibration, BatteryState, ParamTable, RCParams};
pub use dynamics::{
    BatteryBank, BufferState, Mode, Record, SagEvent, SimConfig, SimOutcome, TimeSeries,
};
pub use error::{Error, Result};
pub use phasor::{FilterParams, InputImpedance, Phasor, SequenceVoltage, SeriesImpedance};
pub use small_signal::{DampingReport, LinearModel, PolePair, SensitivityReport};
pub use steady_state::{Envelope, Limit, RideThroughLimits, SagLoad, SteadyOperatingPoint};
