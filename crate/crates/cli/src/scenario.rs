//! Scenario files: TOML with one table per subsystem and SI units spelled
//! out in every key. Unknown keys are rejected. Omitted sections take the
//! reference-system values; an omitted `[[sag]]` list means no events.

use std::f64::consts::PI;
use std::path::Path;

use powerbuf_core::battery::params_at_current;
use powerbuf_core::phasor::{compute_input_impedance, FilterParams, InputImpedance};
use powerbuf_core::{
    BatteryBank, BatteryCalibration, ParamTable, RCParams, SagEvent, SagLoad, SimConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub base: BaseSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub dc_link: DcLinkSection,
    #[serde(default)]
    pub battery: BatterySection,
    #[serde(default = "default_rc_table")]
    pub rc_table: Vec<RcRow>,
    #[serde(default)]
    pub sag: Vec<SagRow>,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub v_base_volts: f64,
    pub p_load_watts: f64,
    pub q_load_vars: f64,
    pub nominal_v_dc_volts: f64,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self {
            v_base_volts: 415.0,
            p_load_watts: 100e3,
            q_load_vars: 0.0,
            nominal_v_dc_volts: 859.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub resistance_ohms: f64,
    pub inductance_henries: f64,
    pub mains_freq_rad_per_s: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            resistance_ohms: 0.06133,
            inductance_henries: 0.97e-3,
            mains_freq_rad_per_s: 2.0 * PI * 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcLinkSection {
    pub c_dc_farads: f64,
}

impl Default for DcLinkSection {
    fn default() -> Self {
        Self { c_dc_farads: 10e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySection {
    pub e0_volts: f64,
    pub k_volts: f64,
    pub r0_ohms: f64,
    pub k_r_ohms: f64,
    pub capacity_amp_hours: f64,
    pub sod: f64,
    pub sod_min: f64,
    pub sod_max: f64,
}

impl Default for BatterySection {
    fn default() -> Self {
        let c = BatteryCalibration::calibrated_default();
        Self {
            e0_volts: c.e0,
            k_volts: c.k,
            r0_ohms: c.r0,
            k_r_ohms: c.k_r,
            capacity_amp_hours: c.capacity_ah,
            sod: 0.0,
            sod_min: c.sod_min,
            sod_max: c.sod_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcRow {
    pub discharge_current_amps: f64,
    pub r_s_ohms: f64,
    pub r_p_ohms: f64,
    pub c_p_farads: f64,
}

fn default_rc_table() -> Vec<RcRow> {
    ParamTable::reference()
        .entries()
        .iter()
        .map(|(i, p)| RcRow {
            discharge_current_amps: *i,
            r_s_ohms: p.r_s,
            r_p_ohms: p.r_p,
            c_p_farads: p.c_p,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SagRow {
    pub t_start_seconds: f64,
    pub duration_seconds: f64,
    pub pos_pu: f64,
    pub neg_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt_seconds: f64,
    pub t_end_seconds: f64,
    pub detect_threshold_pu: f64,
    pub confirm_delay_seconds: f64,
    pub dc_band_fraction: f64,
    pub battery_enabled: bool,
    pub v_floor_volts: f64,
    pub regulator_tau_seconds: f64,
    pub current_limit_pu: f64,
    pub reconnect_band_fraction: f64,
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rc_override_current_amps: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt_seconds: d.dt,
            t_end_seconds: d.t_end,
            detect_threshold_pu: d.detect_threshold,
            confirm_delay_seconds: d.confirm_delay,
            dc_band_fraction: d.dc_band,
            battery_enabled: d.battery_enabled,
            v_floor_volts: d.v_floor,
            regulator_tau_seconds: d.regulator_tau,
            current_limit_pu: d.current_limit_pu,
            reconnect_band_fraction: d.reconnect_band,
            record_every: d.record_every,
            rc_override_current_amps: None,
        }
    }
}

/// Model objects built from a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub load: SagLoad,
    pub impedance: InputImpedance,
    pub filter: FilterParams,
    pub bank: BatteryBank,
    pub events: Vec<SagEvent>,
    pub sim: SimConfig,
    /// The scenario these were built from, as TOML.
    pub source: String,
}

impl ScenarioFile {
    /// The reference system with its 10-cycle 0.8/0.2 p.u. unbalanced sag.
    pub fn reference() -> Self {
        Self {
            sag: vec![SagRow {
                t_start_seconds: 0.04,
                duration_seconds: 0.2,
                pos_pu: 0.8,
                neg_pu: 0.2,
            }],
            ..Self::parse("").expect("empty scenario parses")
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let b = &self.base;
        let impedance = compute_input_impedance(b.v_base_volts, b.p_load_watts, b.q_load_vars)
            .map_err(CliError::invalid("base"))?;
        let load = SagLoad::new(b.p_load_watts, b.v_base_volts, impedance.r_in)
            .map_err(CliError::invalid("base"))?;
        let filter = FilterParams::new(
            self.filter.resistance_ohms,
            self.filter.inductance_henries,
            self.filter.mains_freq_rad_per_s,
        )
        .map_err(CliError::invalid("filter"))?;

        let bs = &self.battery;
        let calibration = BatteryCalibration::new(
            bs.e0_volts,
            bs.k_volts,
            bs.r0_ohms,
            bs.k_r_ohms,
            bs.capacity_amp_hours,
            bs.sod_min,
            bs.sod_max,
        )
        .map_err(CliError::invalid("battery"))?;
        if !calibration.contains(bs.sod) {
            return Err(CliError::Parse(format!(
                "battery.sod = {} outside [{}, {}]",
                bs.sod, bs.sod_min, bs.sod_max
            )));
        }
        let rows = self
            .rc_table
            .iter()
            .map(|r| {
                RCParams::new(r.r_s_ohms, r.r_p_ohms, r.c_p_farads)
                    .map(|p| (r.discharge_current_amps, p))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::invalid("rc_table"))?;
        let table = ParamTable::new(rows).map_err(CliError::invalid("rc_table"))?;

        let events = self
            .sag
            .iter()
            .map(|s| SagEvent::new(s.t_start_seconds, s.duration_seconds, s.pos_pu, s.neg_pu))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::invalid("sag"))?;

        let s = &self.simulation;
        let sim = SimConfig {
            dt: s.dt_seconds,
            t_end: s.t_end_seconds,
            detect_threshold: s.detect_threshold_pu,
            confirm_delay: s.confirm_delay_seconds,
            nominal_v_dc: b.nominal_v_dc_volts,
            dc_band: s.dc_band_fraction,
            battery_enabled: s.battery_enabled,
            c_dc: self.dc_link.c_dc_farads,
            v_floor: s.v_floor_volts,
            regulator_tau: s.regulator_tau_seconds,
            current_limit_pu: s.current_limit_pu,
            reconnect_band: s.reconnect_band_fraction,
            rc_override: s.rc_override_current_amps.map(|i| params_at_current(&table, i)),
            record_every: s.record_every,
        };
        sim.validate().map_err(CliError::invalid("simulation"))?;

        Ok(Resolved {
            load,
            impedance,
            filter,
            bank: BatteryBank {
                calibration,
                table,
                sod: bs.sod,
            },
            events,
            sim,
            source: self.to_toml(),
        })
    }
}
