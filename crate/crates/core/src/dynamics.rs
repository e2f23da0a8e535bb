//! Time-domain simulation of the buffer dc-link through a voltage sag.
//!
//! The dc-link capacitor integrates the power imbalance
//! `C·v·dv/dt = p_in + p_batt - p_load`. While the battery is connected it
//! adds `p_batt = v·i_btr` with `i_btr = (E - v - v_cp)/R_s`, and the
//! polarisation capacitor follows `C_p·dv_cp/dt = i_btr - v_cp/R_p`.
//!
//! The converter front end is an averaged power source:
//!
//! * constant-power mode: a first-order dc-link voltage regulator, with
//!   input current limited to `current_limit_pu` of rated (to 1.0 while a
//!   sag is waiting for confirmation);
//! * constant-impedance mode: `p_in = (v_g·V_base)² / R_in`.
//!
//! A sag is detected when the positive-sequence PCC voltage drops below
//! `detect_threshold`, confirmed after `confirm_delay`, and only then does
//! the buffer switch mode and connect the battery. On recovery the buffer
//! returns to constant power and keeps the battery on the link until the
//! dc-link voltage is back within `reconnect_band` of nominal.

use crate::battery::{
    emf_and_resistance, params_at_current, split_resistance, update_sod, BatteryCalibration,
    BatteryState, ParamTable, RCParams,
};
use crate::error::{Error, Result};
use crate::small_signal::{linearize, poles};
use crate::steady_state::{SagLoad, SteadyOperatingPoint};

/// Lowest dc-link voltage the model divides by; reaching it is a collapse.
pub const V_FLOOR: f64 = 1.0;
/// Largest allowed `dt·|s|` for the stiffest rate in the run.
pub const MAX_STEP_RATE_PRODUCT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    ConstantPower,
    ConstantImpedance,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ConstantPower => "CP",
            Mode::ConstantImpedance => "CI",
        }
    }
}

/// A rectangular sag (or swell) in the PCC sequence voltages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagEvent {
    pub t_start: f64,
    pub duration: f64,
    pub pos_pu: f64,
    pub neg_pu: f64,
}

impl SagEvent {
    pub fn new(t_start: f64, duration: f64, pos_pu: f64, neg_pu: f64) -> Result<Self> {
        if !(duration > 0.0) || !(t_start >= 0.0) {
            return Err(Error::Config(format!(
                "sag event needs t_start >= 0 and duration > 0 (got {t_start}, {duration})"
            )));
        }
        if !(pos_pu >= 0.0 && neg_pu >= 0.0) {
            return Err(Error::Config(format!(
                "sag sequence magnitudes must be non-negative (got {pos_pu}, {neg_pu})"
            )));
        }
        Ok(Self {
            t_start,
            duration,
            pos_pu,
            neg_pu,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }
}

/// PCC positive/negative sequence magnitudes (p.u.) at time `t`. Outside
/// every event the supply is balanced at 1 p.u.; overlapping events resolve
/// to the earliest listed.
pub fn grid_voltage(events: &[SagEvent], t: f64) -> (f64, f64) {
    events
        .iter()
        .find(|e| t >= e.t_start && t < e.t_end())
        .map_or((1.0, 0.0), |e| (e.pos_pu, e.neg_pu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub detect_threshold: f64,
    pub confirm_delay: f64,
    pub nominal_v_dc: f64,
    pub dc_band: f64,
    pub battery_enabled: bool,
    pub c_dc: f64,
    pub v_floor: f64,
    /// Time constant of the constant-power dc-link regulator.
    pub regulator_tau: f64,
    /// Input current limit in constant-power mode, p.u. of rated.
    pub current_limit_pu: f64,
    /// Battery disconnects once `|v_dc - nominal| < reconnect_band·nominal`.
    pub reconnect_band: f64,
    /// Fixes the battery circuit instead of deriving it at switch-in.
    pub rc_override: Option<RCParams>,
    /// Keep every n-th step in the output series.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 50e-6,
            t_end: 0.34,
            detect_threshold: 0.95,
            confirm_delay: 2e-3,
            nominal_v_dc: 859.0,
            dc_band: 0.10,
            battery_enabled: true,
            c_dc: 10e-3,
            v_floor: V_FLOOR,
            regulator_tau: 10e-3,
            current_limit_pu: 1.25,
            reconnect_band: 0.005,
            rc_override: None,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return bad(format!("need dt > 0 and t_end >= 0 (got {}, {})", self.dt, self.t_end));
        }
        if !(self.confirm_delay >= 0.0) {
            return bad(format!("confirm_delay must be >= 0, got {}", self.confirm_delay));
        }
        if !(self.detect_threshold > 0.0 && self.detect_threshold < 1.0) {
            return bad(format!(
                "detect_threshold must lie in (0, 1), got {}",
                self.detect_threshold
            ));
        }
        if !(self.nominal_v_dc > self.v_floor) || !(self.v_floor > 0.0) {
            return bad("need nominal_v_dc > v_floor > 0".into());
        }
        if !(self.dc_band > 0.0 && self.dc_band < 1.0) {
            return bad(format!("dc_band must lie in (0, 1), got {}", self.dc_band));
        }
        if !(self.c_dc > 0.0) || !(self.regulator_tau > 0.0) || !(self.current_limit_pu >= 1.0) {
            return bad("need c_dc > 0, regulator_tau > 0, current_limit_pu >= 1".into());
        }
        if !(self.reconnect_band > 0.0) || self.record_every == 0 {
            return bad("need reconnect_band > 0 and record_every >= 1".into());
        }
        Ok(())
    }

    pub fn band(&self) -> (f64, f64) {
        (
            (1.0 - self.dc_band) * self.nominal_v_dc,
            (1.0 + self.dc_band) * self.nominal_v_dc,
        )
    }

    fn steps(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

/// Battery bank as configured for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryBank {
    pub calibration: BatteryCalibration,
    pub table: ParamTable,
    pub sod: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferState {
    pub t: f64,
    pub v_dc: f64,
    pub v_cp: f64,
    pub mode: Mode,
    pub battery_connected: bool,
    pub f: f64,
}

impl BufferState {
    pub fn pre_sag(nominal_v_dc: f64, f: f64) -> Self {
        Self {
            t: 0.0,
            v_dc: nominal_v_dc,
            v_cp: 0.0,
            mode: Mode::ConstantPower,
            battery_connected: false,
            f,
        }
    }
}

/// Battery as a Thevenin source with fixed EMF and circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryBranch {
    pub e: f64,
    pub rc: RCParams,
}

impl BatteryBranch {
    pub fn current(&self, v_dc: f64, v_cp: f64) -> f64 {
        (self.e - v_dc - v_cp) / self.rc.r_s
    }
}

/// Converter input power model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    /// Fixed input power, W.
    Fixed(f64),
    /// `p_in = p_load + C·v·(v_ref - v)/tau`, clamped to `[0, cap]`.
    Regulated { v_ref: f64, tau: f64, cap: f64 },
}

/// Right-hand side of the dc-link/battery equations for one operating
/// condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPlant {
    pub c_dc: f64,
    pub p_load: f64,
    pub source: Source,
    pub battery: Option<BatteryBranch>,
    pub battery_connected: bool,
    pub v_floor: f64,
}

/// Instantaneous power and current flows at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flows {
    pub p_in: f64,
    pub i_btr: f64,
    pub p_batt: f64,
    pub i_cap: f64,
    pub i_cp: f64,
    pub dv_dc: f64,
    pub dv_cp: f64,
}

impl LinkPlant {
    /// Battery connected, constant mismatch `delta_p = p_load - p_in`.
    pub fn with_mismatch(delta_p: f64, battery: BatteryBranch, c_dc: f64) -> Self {
        Self {
            c_dc,
            p_load: delta_p,
            source: Source::Fixed(0.0),
            battery: Some(battery),
            battery_connected: true,
            v_floor: V_FLOOR,
        }
    }

    pub fn p_in(&self, v_dc: f64) -> f64 {
        match self.source {
            Source::Fixed(p) => p,
            Source::Regulated { v_ref, tau, cap } => {
                let p = self.p_load + self.c_dc * v_dc * (v_ref - v_dc) / tau;
                p.clamp(0.0, cap)
            }
        }
    }

    pub fn flows(&self, v_dc: f64, v_cp: f64) -> Flows {
        let v = v_dc.max(self.v_floor);
        let p_in = self.p_in(v);
        let (i_btr, dv_cp) = match self.battery {
            Some(b) if self.battery_connected => {
                let i = b.current(v, v_cp);
                (i, (i - v_cp / b.rc.r_p) / b.rc.c_p)
            }
            Some(b) => (0.0, -v_cp / (b.rc.r_p * b.rc.c_p)),
            None => (0.0, 0.0),
        };
        let p_batt = v * i_btr;
        let i_cap = (p_in + p_batt - self.p_load) / v;
        let i_cp = match self.battery {
            Some(b) => b.rc.c_p * dv_cp,
            None => 0.0,
        };
        Flows {
            p_in,
            i_btr,
            p_batt,
            i_cap,
            i_cp,
            dv_dc: i_cap / self.c_dc,
            dv_cp,
        }
    }

    pub fn rates(&self, v_dc: f64, v_cp: f64) -> (f64, f64) {
        let fl = self.flows(v_dc, v_cp);
        (fl.dv_dc, fl.dv_cp)
    }
}

/// dc-link and polarisation-capacitor rates with the battery connected and
/// a constant mismatch `delta_p`.
pub fn derivatives(
    state: &BufferState,
    delta_p: f64,
    e: f64,
    rc: &RCParams,
    c_dc: f64,
) -> Result<(f64, f64)> {
    if state.v_dc <= V_FLOOR {
        return Err(Error::Collapse {
            t: state.t,
            v_dc: state.v_dc,
        });
    }
    let plant = LinkPlant::with_mismatch(delta_p, BatteryBranch { e, rc: *rc }, c_dc);
    Ok(plant.rates(state.v_dc, state.v_cp))
}

/// One classical fourth-order Runge-Kutta step. Mode, connection and SOD
/// are left to the caller.
pub fn step(state: &BufferState, plant: &LinkPlant, dt: f64) -> BufferState {
    let (x, y) = (state.v_dc, state.v_cp);
    let (k1x, k1y) = plant.rates(x, y);
    let (k2x, k2y) = plant.rates(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
    let (k3x, k3y) = plant.rates(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
    let (k4x, k4y) = plant.rates(x + dt * k3x, y + dt * k3y);
    BufferState {
        t: state.t + dt,
        v_dc: x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v_cp: y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        ..*state
    }
}

/// Integrates a fixed plant for `n_steps`, returning `(t, v_dc, v_cp)` at
/// every step including the initial one.
pub fn integrate(
    initial: &BufferState,
    plant: &LinkPlant,
    dt: f64,
    n_steps: usize,
) -> Vec<(f64, f64, f64)> {
    let mut s = *initial;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push((s.t, s.v_dc, s.v_cp));
    for k in 1..=n_steps {
        s = step(&s, plant, dt);
        s.t = initial.t + k as f64 * dt;
        out.push((s.t, s.v_dc, s.v_cp));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub v_g_pos: f64,
    pub v_g_neg: f64,
    pub v_dc: f64,
    pub v_cp: f64,
    pub i_btr: f64,
    pub i_cap: f64,
    pub i_cp: f64,
    pub p_in: f64,
    pub q_in: f64,
    pub p_batt: f64,
    pub p_load: f64,
    pub i_in_pu: f64,
    pub mode: Mode,
    pub battery_connected: bool,
    pub f: f64,
}

impl Record {
    pub const CSV_HEADER: &'static str =
        "t,v_g_pos,v_g_neg,v_dc,v_cp,i_btr,p_in,q_in,p_batt,i_in_pu,mode";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.v_g_pos,
            self.v_g_neg,
            self.v_dc,
            self.v_cp,
            self.i_btr,
            self.p_in,
            self.q_in,
            self.p_batt,
            self.i_in_pu,
            self.mode.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Spacing between records, s.
    pub dt: f64,
    pub records: Vec<Record>,
}

impl TimeSeries {
    pub fn window(&self, t0: f64, t1: f64) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.t >= t0 && r.t < t1)
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Time from `t_from` until `v_dc` stays within `fraction` of the
    /// excursion `|target - v_dc(t_from)|` around `target`. `None` if the
    /// series ends outside the band.
    pub fn settling_time(&self, t_from: f64, target: f64, fraction: f64) -> Option<f64> {
        let start = self.records.iter().position(|r| r.t >= t_from)?;
        let tail = &self.records[start..];
        let band = fraction * (target - tail[0].v_dc).abs();
        let outside = |r: &Record| (r.v_dc - target).abs() > band;
        if outside(tail.last()?) {
            return None;
        }
        match tail.iter().rposition(outside) {
            None => Some(0.0),
            Some(k) => Some(tail[k + 1].t - tail[0].t),
        }
    }
}

/// What the run decided at battery switch-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchIn {
    pub t: f64,
    pub expected_current: f64,
    pub battery: BatteryBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub series: TimeSeries,
    /// `(t, v_dc)` when the dc-link fell to the floor; the run stops there.
    pub collapse: Option<(f64, f64)>,
    pub switch_in: Option<SwitchIn>,
    pub peak_i_in_pu: f64,
    pub min_v_dc: f64,
    pub max_v_dc: f64,
    pub final_state: BufferState,
}

/// Battery circuit used for a run: the override, or the table split of the
/// SOD-dependent total resistance at the expected discharge current.
fn select_branch(
    bank: &BatteryBank,
    cfg: &SimConfig,
    f: f64,
    delta_p: f64,
) -> Result<(BatteryBranch, f64)> {
    let (e, r_b) = emf_and_resistance(&bank.calibration, f)?;
    let expected_current = delta_p.max(0.0) / cfg.nominal_v_dc;
    let rc = match cfg.rc_override {
        Some(rc) => rc,
        None => split_resistance(r_b, &bank.table, expected_current)?,
    };
    Ok((BatteryBranch { e, rc }, expected_current))
}

fn check_step_size(events: &[SagEvent], cfg: &SimConfig, bank: &BatteryBank, load: &SagLoad) -> Result<()> {
    let mut fastest = 1.0 / cfg.regulator_tau;
    if cfg.battery_enabled {
        for dp in events.iter().map(|e| load.mismatch(e.pos_pu)).chain([0.0]) {
            let (branch, _) = select_branch(bank, cfg, bank.sod, dp)?;
            let Ok(op) = SteadyOperatingPoint::solve(branch.e, &branch.rc, dp) else {
                continue;
            };
            if let Ok(p) = linearize(&op, branch.e, &branch.rc, cfg.c_dc).and_then(|m| poles(&m)) {
                fastest = fastest.max(p.s_fast.abs());
            }
        }
    }
    let product = cfg.dt * fastest;
    if product >= MAX_STEP_RATE_PRODUCT {
        return Err(Error::StepSize {
            dt: cfg.dt,
            product,
        });
    }
    Ok(())
}

/// Runs the sag scenario from the pre-sag steady state.
pub fn simulate(
    events: &[SagEvent],
    cfg: &SimConfig,
    bank: &BatteryBank,
    load: &SagLoad,
) -> Result<SimOutcome> {
    cfg.validate()?;
    bank.calibration.emf_and_resistance(bank.sod)?;
    check_step_size(events, cfg, bank, load)?;

    let n_steps = cfg.steps(cfg.t_end);
    let confirm_steps = cfg.steps(cfg.confirm_delay);
    let rated_current = load.p_load / load.v_base;

    let mut state = BufferState::pre_sag(cfg.nominal_v_dc, bank.sod);
    let mut battery: Option<BatteryBranch> = None;
    let mut switch_in = None;
    let mut pending: Option<usize> = None;
    let mut collapse = None;
    let mut records = Vec::with_capacity(n_steps / cfg.record_every + 2);
    let mut peak_i_in_pu: f64 = 0.0;
    let mut min_v_dc = state.v_dc;
    let mut max_v_dc = state.v_dc;

    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        state.t = t;
        let (v_pos, v_neg) = grid_voltage(events, t);
        let sagged = v_pos < cfg.detect_threshold;

        // Mode machine.
        match state.mode {
            Mode::ConstantPower => {
                pending = match (sagged, pending) {
                    (true, None) => Some(k),
                    (true, p) => p,
                    (false, _) => None,
                };
                if pending.is_some_and(|k0| k - k0 >= confirm_steps) {
                    state.mode = Mode::ConstantImpedance;
                    pending = None;
                    if cfg.battery_enabled {
                        if battery.is_none() {
                            let dp = load.mismatch(v_pos);
                            let (branch, i_exp) = select_branch(bank, cfg, state.f, dp)?;
                            battery = Some(branch);
                            switch_in = Some(SwitchIn {
                                t,
                                expected_current: i_exp,
                                battery: branch,
                            });
                        }
                        state.battery_connected = true;
                    }
                } else if state.battery_connected
                    && pending.is_none()
                    && (state.v_dc - cfg.nominal_v_dc).abs() < cfg.reconnect_band * cfg.nominal_v_dc
                {
                    state.battery_connected = false;
                }
            }
            Mode::ConstantImpedance => {
                if !sagged {
                    state.mode = Mode::ConstantPower;
                }
            }
        }

        let source = match state.mode {
            Mode::ConstantImpedance => Source::Fixed(load.grid_power(v_pos)),
            Mode::ConstantPower => {
                let limit = if pending.is_some() { 1.0 } else { cfg.current_limit_pu };
                Source::Regulated {
                    v_ref: cfg.nominal_v_dc,
                    tau: cfg.regulator_tau,
                    cap: limit * load.p_load * v_pos,
                }
            }
        };
        let plant = LinkPlant {
            c_dc: cfg.c_dc,
            p_load: load.p_load,
            source,
            battery,
            battery_connected: state.battery_connected,
            v_floor: cfg.v_floor,
        };
        let fl = plant.flows(state.v_dc, state.v_cp);
        let i_in_pu = if v_pos > 0.0 {
            fl.p_in / (v_pos * load.v_base) / rated_current
        } else {
            0.0
        };
        peak_i_in_pu = peak_i_in_pu.max(i_in_pu);
        min_v_dc = min_v_dc.min(state.v_dc);
        max_v_dc = max_v_dc.max(state.v_dc);

        let collapsed = state.v_dc <= cfg.v_floor;
        if k % cfg.record_every == 0 || k == n_steps || collapsed {
            records.push(Record {
                t,
                v_g_pos: v_pos,
                v_g_neg: v_neg,
                v_dc: state.v_dc,
                v_cp: state.v_cp,
                i_btr: fl.i_btr,
                i_cap: fl.i_cap,
                i_cp: fl.i_cp,
                p_in: fl.p_in,
                q_in: 0.0,
                p_batt: fl.p_batt,
                p_load: load.p_load,
                i_in_pu,
                mode: state.mode,
                battery_connected: state.battery_connected,
                f: state.f,
            });
        }
        if collapsed {
            collapse = Some((t, state.v_dc));
            break;
        }
        if k == n_steps {
            break;
        }

        let next = step(&state, &plant, cfg.dt);
        if fl.i_btr != 0.0 {
            let bs = BatteryState {
                f: state.f,
                v_cp: state.v_cp,
                i_btr: fl.i_btr,
            };
            state.f = update_sod(bs, fl.i_btr, cfg.dt, &bank.calibration)?.f;
        }
        if next.v_dc.is_nan() || !next.v_cp.is_finite() {
            return Err(Error::Config(format!("integration diverged at t = {t}")));
        }
        // A step that crosses the floor is singular near v_dc = 0; stop the
        // trajectory at the floor instead of reporting the overshoot.
        state.v_dc = next.v_dc.max(cfg.v_floor);
        state.v_cp = next.v_cp;
    }

    Ok(SimOutcome {
        series: TimeSeries {
            dt: cfg.dt * cfg.record_every as f64,
            records,
        },
        collapse,
        switch_in,
        peak_i_in_pu,
        min_v_dc,
        max_v_dc,
        final_state: state,
    })
}

/// One leg of a discharge-current comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRun {
    pub discharge_current: f64,
    pub rc: RCParams,
    pub outcome: SimOutcome,
    /// Steady dc-link voltage for the first event's mismatch.
    pub target_v_dc: Option<f64>,
    /// 2 % settling time measured from battery switch-in.
    pub settling_time: Option<f64>,
}

/// Runs the same scenario with the battery circuit taken from the table at
/// each of two discharge currents.
pub fn compare_discharge_profiles(
    events: &[SagEvent],
    cfg: &SimConfig,
    bank: &BatteryBank,
    load: &SagLoad,
    currents: (f64, f64),
) -> Result<(ProfileRun, ProfileRun)> {
    let run = |i: f64| -> Result<ProfileRun> {
        let rc = params_at_current(&bank.table, i);
        let cfg = SimConfig {
            rc_override: Some(rc),
            ..*cfg
        };
        let outcome = simulate(events, &cfg, bank, load)?;
        let (e, _) = bank.calibration.emf_and_resistance(bank.sod)?;
        let target_v_dc = events
            .first()
            .and_then(|ev| SteadyOperatingPoint::solve(e, &rc, load.mismatch(ev.pos_pu)).ok())
            .map(|op| op.v_dc_ss);
        let settling_time = match (outcome.switch_in, target_v_dc) {
            (Some(s), Some(target)) => outcome.series.settling_time(s.t, target, 0.02),
            _ => None,
        };
        Ok(ProfileRun {
            discharge_current: i,
            rc,
            outcome,
            target_v_dc,
            settling_time,
        })
    };
    Ok((run(currents.0)?, run(currents.1)?))
}
