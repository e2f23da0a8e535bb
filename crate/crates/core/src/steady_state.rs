//! Steady-state operating points of the battery-backed dc-link and the
//! ride-through envelope over state of discharge and PCC voltage.
//!
//! Once the switch-in transient has died out the polarisation capacitor
//! carries no current and the battery is just `E` behind `R_s + R_p`. The
//! dc-link voltage then solves `V (E - V) / R = ΔP`; the larger root is the
//! operating branch.

use crate::battery::{BatteryCalibration, RCParams};
use crate::error::{Error, Result};
use crate::phasor::max_power;

/// Lower edge of the per-unit PCC voltage scan used for ride-through limits.
pub const SCAN_MIN_PU: f64 = 0.0;
/// Upper edge of the scan.
pub const SCAN_MAX_PU: f64 = 2.0;
pub const BISECTION_TOL_PU: f64 = 1e-9;
/// Default half-width of the acceptable dc-link band around nominal.
pub const DC_BAND: f64 = 0.10;

/// Relative slack on a negative discriminant that is still taken as the
/// double root (absorbs rounding at exactly `ΔP_max`).
const DISCRIMINANT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOperatingPoint {
    pub v_dc_ss: f64,
    pub v_cp_ss: f64,
    pub delta_p: f64,
}

impl SteadyOperatingPoint {
    /// Operating point for EMF `e`, circuit `rc` and mismatch `delta_p`.
    pub fn solve(e: f64, rc: &RCParams, delta_p: f64) -> Result<Self> {
        let v_dc_ss = solve_vdc(e, rc.total_resistance(), delta_p)?;
        Ok(Self {
            v_dc_ss,
            v_cp_ss: vcp_ss(e, v_dc_ss, rc),
            delta_p,
        })
    }
}

/// Constant-impedance load as seen from the dc-link: demand `p_load`, grid
/// power `(v_g·v_base)² / r_in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagLoad {
    pub p_load: f64,
    pub v_base: f64,
    pub r_in: f64,
}

impl SagLoad {
    pub fn new(p_load: f64, v_base: f64, r_in: f64) -> Result<Self> {
        if !(p_load >= 0.0) || !(v_base > 0.0) || !(r_in > 0.0) {
            return Err(Error::Domain(format!(
                "sag load needs p_load >= 0, v_base > 0, r_in > 0 (got {p_load}, {v_base}, {r_in})"
            )));
        }
        Ok(Self {
            p_load,
            v_base,
            r_in,
        })
    }

    /// Grid power at positive-sequence voltage `v_g_pu`.
    pub fn grid_power(&self, v_g_pu: f64) -> f64 {
        max_power(v_g_pu * self.v_base, self.r_in)
    }

    /// Power the battery has to make up.
    pub fn mismatch(&self, v_g_pu: f64) -> f64 {
        self.p_load - self.grid_power(v_g_pu)
    }
}

/// Voltage across `C_p` at steady state.
pub fn vcp_ss(e: f64, v_dc_ss: f64, rc: &RCParams) -> f64 {
    rc.r_p * (e - v_dc_ss) / (rc.r_s + rc.r_p)
}

/// Mismatch power carried by the battery at dc-link voltage `v_dc_ss`.
pub fn mismatch_from_vdc(v_dc_ss: f64, e: f64, r_total: f64) -> f64 {
    v_dc_ss * (e - v_dc_ss) / r_total
}

/// Largest mismatch the battery can supply: `E² / 4R`.
pub fn max_mismatch(e: f64, r_total: f64) -> f64 {
    e * e / (4.0 * r_total)
}

/// Larger root of `V² - E·V + R·ΔP = 0`.
pub fn solve_vdc(e: f64, r_total: f64, delta_p: f64) -> Result<f64> {
    if !(r_total > 0.0) {
        return Err(Error::Domain(format!(
            "total resistance must be positive, got {r_total}"
        )));
    }
    let mut disc = e * e - 4.0 * r_total * delta_p;
    if disc < 0.0 {
        if disc >= -DISCRIMINANT_SLACK * e * e {
            disc = 0.0;
        } else {
            return Err(Error::InfeasibleDemand {
                delta_p,
                max: max_mismatch(e, r_total),
            });
        }
    }
    Ok(0.5 * (e + disc.sqrt()))
}

/// Steady dc-link voltage for a bank at SOD `f` supplying `delta_p`.
pub fn vdc_ss(cal: &BatteryCalibration, f: f64, delta_p: f64) -> Result<f64> {
    let (e, r_b) = cal.emf_and_resistance(f)?;
    solve_vdc(e, r_b, delta_p)
}

/// Steady dc-link voltage when the PCC sits at `v_g_pu`.
pub fn vdc_ss_from_sag(cal: &BatteryCalibration, f: f64, load: &SagLoad, v_g_pu: f64) -> Result<f64> {
    vdc_ss(cal, f, load.mismatch(v_g_pu))
}

/// One side of the ride-through window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    At(f64),
    /// The crossing lies above the scanned voltage range.
    BeyondScan,
}

impl Limit {
    pub fn value(self) -> Option<f64> {
        match self {
            Limit::At(v) => Some(v),
            Limit::BeyondScan => None,
        }
    }
}

impl std::fmt::Display for Limit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Limit::At(v) => write!(f, "{v:.6}"),
            Limit::BeyondScan => write!(f, ">{SCAN_MAX_PU}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RideThroughLimits {
    /// Deepest sag for which the dc-link stays above the lower band edge.
    pub vg_min: Limit,
    /// Highest swell for which it stays below the upper band edge.
    pub vg_max: Limit,
}

/// `vdc(v_g) - target`, with infeasible points counted as below target.
fn band_residual(cal: &BatteryCalibration, f: f64, load: &SagLoad, target: f64, v_g: f64) -> Result<f64> {
    match vdc_ss_from_sag(cal, f, load, v_g) {
        Ok(v) => Ok(v - target),
        Err(Error::InfeasibleDemand { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Smallest v_g in the scan range where the (increasing) steady dc-link
/// voltage reaches `target`.
fn crossing(cal: &BatteryCalibration, f: f64, load: &SagLoad, target: f64) -> Result<Limit> {
    let mut lo = SCAN_MIN_PU;
    let mut hi = SCAN_MAX_PU;
    if band_residual(cal, f, load, target, lo)? >= 0.0 {
        return Ok(Limit::At(lo));
    }
    if band_residual(cal, f, load, target, hi)? < 0.0 {
        return Ok(Limit::BeyondScan);
    }
    while hi - lo > BISECTION_TOL_PU {
        let mid = 0.5 * (lo + hi);
        if band_residual(cal, f, load, target, mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Limit::At(0.5 * (lo + hi)))
}

/// PCC voltage window keeping the steady dc-link inside the ±`band` window.
pub fn ride_through_limits_with_band(
    cal: &BatteryCalibration,
    f: f64,
    load: &SagLoad,
    nominal_v_dc: f64,
    band: f64,
) -> Result<RideThroughLimits> {
    if !(nominal_v_dc > 0.0) {
        return Err(Error::Domain(format!(
            "nominal dc-link voltage must be positive, got {nominal_v_dc}"
        )));
    }
    if !(band > 0.0 && band < 1.0) {
        return Err(Error::Domain(format!("band must be in (0, 1), got {band}")));
    }
    cal.emf_and_resistance(f)?;
    Ok(RideThroughLimits {
        vg_min: crossing(cal, f, load, (1.0 - band) * nominal_v_dc)?,
        vg_max: crossing(cal, f, load, (1.0 + band) * nominal_v_dc)?,
    })
}

/// [`ride_through_limits_with_band`] with the default ±10 % band.
pub fn ride_through_limits(
    cal: &BatteryCalibration,
    f: f64,
    load: &SagLoad,
    nominal_v_dc: f64,
) -> Result<RideThroughLimits> {
    ride_through_limits_with_band(cal, f, load, nominal_v_dc, DC_BAND)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub f_grid: Vec<f64>,
    pub vg_grid: Vec<f64>,
    /// `v_dc_surface[i][j]` is the steady voltage at `(f_grid[i], vg_grid[j])`,
    /// `None` where the battery cannot carry the mismatch.
    pub v_dc_surface: Vec<Vec<Option<f64>>>,
    /// Ride-through window per SOD row; `None` where `f` is outside the
    /// calibration range.
    pub limits: Vec<Option<RideThroughLimits>>,
    pub lower_limit: f64,
    pub upper_limit: f64,
    pub nominal_v_dc: f64,
}

impl Envelope {
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, Option<f64>)> + '_ {
        self.f_grid.iter().zip(&self.v_dc_surface).flat_map(move |(&f, row)| {
            self.vg_grid.iter().zip(row).map(move |(&vg, v)| (f, vg, *v))
        })
    }

    pub fn in_band(&self, v: f64) -> bool {
        v >= self.lower_limit && v <= self.upper_limit
    }
}

pub fn build_envelope(
    cal: &BatteryCalibration,
    f_grid: &[f64],
    vg_grid: &[f64],
    load: &SagLoad,
    nominal_v_dc: f64,
) -> Result<Envelope> {
    if f_grid.is_empty() || vg_grid.is_empty() {
        return Err(Error::Domain("envelope grids must be non-empty".into()));
    }
    if !(nominal_v_dc > 0.0) {
        return Err(Error::Domain(format!(
            "nominal dc-link voltage must be positive, got {nominal_v_dc}"
        )));
    }
    let v_dc_surface = f_grid
        .iter()
        .map(|&f| {
            vg_grid
                .iter()
                .map(|&vg| vdc_ss_from_sag(cal, f, load, vg).ok())
                .collect()
        })
        .collect();
    let limits = f_grid
        .iter()
        .map(|&f| ride_through_limits(cal, f, load, nominal_v_dc).ok())
        .collect();
    Ok(Envelope {
        f_grid: f_grid.to_vec(),
        vg_grid: vg_grid.to_vec(),
        v_dc_surface,
        limits,
        lower_limit: (1.0 - DC_BAND) * nominal_v_dc,
        upper_limit: (1.0 + DC_BAND) * nominal_v_dc,
        nominal_v_dc,
    })
}
