//! Subcommand drivers. Each one writes its CSV files into an output
//! directory and returns a [`RunReport`].

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use powerbuf_core::battery::{params_at_current, split_resistance};
use powerbuf_core::dynamics::{compare_discharge_profiles, simulate};
use powerbuf_core::phasor::{buffer_voltage_dq, parallel_to_series, synth_waveforms};
use powerbuf_core::small_signal::{
    above_half_emf, damping, damping_sweep, is_stable, linearize, poles, sensitivities,
    worst_case_current,
};
use powerbuf_core::steady_state::{build_envelope, ride_through_limits, solve_vdc, Limit};
use powerbuf_core::{
    Error as ModelError, RCParams, Record, SequenceVoltage, SimConfig, SimOutcome,
    SteadyOperatingPoint,
};
use rand::{rngs::StdRng, RngExt, SeedableRng};

use crate::error::{exit, CliError};
use crate::scenario::Resolved;

/// Files written by one command, in write order.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(CliError::io(&path))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Plain-text summary of a run. Contains no timestamps or absolute paths so
/// repeated runs produce identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub command: &'static str,
    /// Resolved scenario as TOML.
    pub config: String,
    pub entries: Vec<(String, String)>,
    pub files: Vec<String>,
    pub exit_code: u8,
}

impl RunReport {
    fn new(command: &'static str, r: &Resolved) -> Self {
        Self {
            command,
            config: r.source.clone(),
            entries: Vec::new(),
            files: Vec::new(),
            exit_code: exit::OK,
        }
    }

    fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Writes `report.txt` and records the file list.
    fn finish(mut self, out: &mut Output) -> Result<Self, CliError> {
        self.files = out.written.clone();
        self.files.push("report.txt".into());
        out.write("report.txt", &self.to_string())?;
        Ok(self)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "command: {}", self.command)?;
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.entries {
            writeln!(f, "  {k:<width$}  {v}")?;
        }
        writeln!(f, "files:")?;
        for name in &self.files {
            writeln!(f, "  {name}")?;
        }
        writeln!(f, "exit: {}", self.exit_code)?;
        writeln!(f, "resolved config:")?;
        for line in self.config.lines() {
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Evenly spaced grid written `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|k| self.start + k as f64 * step)
            .collect()
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, count] = parts[..] else {
            return Err(format!("expected start:stop:count, got {s:?}"));
        };
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number {x:?}"))
        };
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("bad count {count:?}"))?;
        if count == 0 {
            return Err("grid count must be at least 1".into());
        }
        Ok(Self {
            start: num(start)?,
            stop: num(stop)?,
            count,
        })
    }
}

/// `lo:hi` current range in amps.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad number {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad number {hi:?}"))?;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(format!("need 0 < lo < hi, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn limit_cell(l: Limit) -> String {
    l.value().map_or_else(|| "beyond_scan".into(), |v| v.to_string())
}

fn timeseries_csv(outcome: &SimOutcome) -> String {
    let mut s = String::with_capacity(outcome.series.records.len() * 120);
    s.push_str(Record::CSV_HEADER);
    s.push('\n');
    for r in &outcome.series.records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn waveforms_csv(r: &Resolved, outcome: &SimOutcome) -> Result<String, CliError> {
    let omega = r.filter.mains_freq;
    let mut s = String::from("t,v_a,v_b,v_c\n");
    for rec in &outcome.series.records {
        let seq = SequenceVoltage::new(rec.v_g_pos, 0.0, rec.v_g_neg, 0.0, r.load.v_base)?;
        let [a, b, c] = synth_waveforms(&seq, omega, rec.t);
        writeln!(s, "{},{a},{b},{c}", rec.t).expect("string write");
    }
    Ok(s)
}

fn push_outcome(report: &mut RunReport, prefix: &str, o: &SimOutcome) {
    let key = |k: &str| format!("{prefix}{k}");
    match o.collapse {
        Some((t, v)) => report.push(&key("collapse"), format!("t = {t:.6} s, v_dc = {v:.3} V")),
        None => report.push(&key("collapse"), "none"),
    }
    if let Some(s) = o.switch_in {
        report.push(&key("switch_in_t_s"), format!("{:.6}", s.t));
        report.push(&key("expected_current_a"), format!("{:.3}", s.expected_current));
        report.push(&key("battery_emf_v"), format!("{:.4}", s.battery.e));
        let RCParams { r_s, r_p, c_p } = s.battery.rc;
        report.push(&key("battery_rc"), format!("r_s {r_s:.5} ohm, r_p {r_p:.5} ohm, c_p {c_p:.4} F"));
    }
    report.push(&key("min_v_dc_v"), format!("{:.4}", o.min_v_dc));
    report.push(&key("max_v_dc_v"), format!("{:.4}", o.max_v_dc));
    report.push(&key("peak_i_in_pu"), format!("{:.5}", o.peak_i_in_pu));
    report.push(&key("final_v_dc_v"), format!("{:.4}", o.final_state.v_dc));
    report.push(&key("final_mode"), o.final_state.mode.as_str());
}

/// Means over the second half of the first sag.
struct Plateau {
    p_in: f64,
    p_batt: f64,
    i_in_pu: f64,
    v_dc: f64,
}

fn plateau(r: &Resolved, o: &SimOutcome) -> Option<Plateau> {
    let ev = r.events.first()?;
    let t0 = ev.t_start + 0.5 * ev.duration;
    let (mut n, mut acc) = (0usize, [0.0; 4]);
    for rec in o.series.window(t0, ev.t_end()) {
        n += 1;
        acc[0] += rec.p_in;
        acc[1] += rec.p_batt;
        acc[2] += rec.i_in_pu;
        acc[3] += rec.v_dc;
    }
    if n == 0 {
        return None;
    }
    let k = n as f64;
    Some(Plateau {
        p_in: acc[0] / k,
        p_batt: acc[1] / k,
        i_in_pu: acc[2] / k,
        v_dc: acc[3] / k,
    })
}

const GNUPLOT_SIMULATE: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 't (s)'
set multiplot layout 3,1
set ylabel 'v_dc (V)'
plot 'timeseries.csv' using 1:4 with lines
set ylabel 'power (W)'
plot 'timeseries.csv' using 1:7 with lines, '' using 1:9 with lines
set ylabel 'i_in (p.u.)'
plot 'timeseries.csv' using 1:10 with lines
unset multiplot
";

#[derive(Debug, Clone, Default)]
pub struct SimulateOpts {
    /// Also run with the battery disabled.
    pub no_battery: bool,
    pub waveforms: bool,
    /// Repeat the run with table parameters at these two currents.
    pub compare_currents: Option<(f64, f64)>,
    pub gnuplot: bool,
}

pub fn run_simulate(r: &Resolved, opts: &SimulateOpts, out: &mut Output) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("simulate", r);
    let series = parallel_to_series(r.impedance, r.filter);
    report.push("r_in_ohm", format!("{:.6}", r.impedance.r_in));
    report.push("series_r1_ohm", format!("{:.6}", series.r1));
    report.push("series_x1_ohm", format!("{:.6}", series.x1));
    if let Some(ev) = r.events.first() {
        let (vd, vq) = buffer_voltage_dq(ev.pos_pu * r.load.v_base, series, r.filter.reactance())?;
        report.push("first_sag_v_w_dq_v", format!("{vd:.4}, {vq:.4}"));
        report.push("first_sag_mismatch_w", format!("{:.3}", r.load.mismatch(ev.pos_pu)));
    }
    report.push("dt_s", r.sim.dt);
    report.push("battery_enabled", r.sim.battery_enabled);

    let outcome = simulate(&r.events, &r.sim, &r.bank, &r.load)?;
    out.write("timeseries.csv", &timeseries_csv(&outcome))?;
    push_outcome(&mut report, "", &outcome);
    if let (Some(ev), Some(s)) = (r.events.first(), outcome.switch_in) {
        let dp = r.load.mismatch(ev.pos_pu);
        if let Ok(op) = SteadyOperatingPoint::solve(s.battery.e, &s.battery.rc, dp) {
            report.push("first_sag_v_dc_ss_v", format!("{:.4}", op.v_dc_ss));
        }
    }
    if let Some(p) = plateau(r, &outcome) {
        report.push("plateau_p_in_w", format!("{:.1}", p.p_in));
        report.push("plateau_p_batt_w", format!("{:.1}", p.p_batt));
        report.push("plateau_i_in_pu", format!("{:.5}", p.i_in_pu));
        report.push("plateau_v_dc_v", format!("{:.4}", p.v_dc));
    }
    if r.sim.battery_enabled && outcome.collapse.is_some() {
        report.exit_code = exit::COLLAPSE;
    }
    if opts.waveforms {
        out.write("waveforms.csv", &waveforms_csv(r, &outcome)?)?;
    }

    if opts.no_battery {
        let cfg = SimConfig {
            battery_enabled: false,
            ..r.sim
        };
        let bare = simulate(&r.events, &cfg, &r.bank, &r.load)?;
        out.write("timeseries_no_battery.csv", &timeseries_csv(&bare))?;
        push_outcome(&mut report, "no_battery.", &bare);
    }

    if let Some(currents) = opts.compare_currents {
        let (a, b) = compare_discharge_profiles(&r.events, &r.sim, &r.bank, &r.load, currents)?;
        for run in [&a, &b] {
            let name = format!("profile_{}a.csv", run.discharge_current);
            out.write(&name, &timeseries_csv(&run.outcome))?;
            let prefix = format!("profile_{}a.", run.discharge_current);
            report.push(&format!("{prefix}target_v_dc_v"), fmt_opt(run.target_v_dc.map(|v| (v * 1e4).round() / 1e4)));
            report.push(
                &format!("{prefix}settling_time_s"),
                run.settling_time.map_or("not settled".into(), |t| format!("{t:.4}")),
            );
        }
    }

    if opts.gnuplot {
        out.write("plot.gp", GNUPLOT_SIMULATE)?;
    }
    report.finish(out)
}

#[derive(Debug, Clone)]
pub struct EnvelopeOpts {
    pub f_grid: Option<Grid>,
    pub vg_grid: Grid,
    pub gnuplot: bool,
}

impl Default for EnvelopeOpts {
    fn default() -> Self {
        Self {
            f_grid: None,
            vg_grid: Grid {
                start: 0.5,
                stop: 1.7,
                count: 121,
            },
            gnuplot: false,
        }
    }
}

const GNUPLOT_ENVELOPE: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 'SOD'
set ylabel 'v_g (p.u.)'
set zlabel 'v_dc (V)'
splot 'envelope.csv' using 1:2:3 with points pt 7 ps 0.3
";

pub fn run_envelope(r: &Resolved, opts: &EnvelopeOpts, out: &mut Output) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("envelope", r);
    let cal = &r.bank.calibration;
    let f_grid = opts.f_grid.unwrap_or(Grid {
        start: cal.sod_min,
        stop: cal.sod_max,
        count: 9,
    });
    let env = build_envelope(cal, &f_grid.values(), &opts.vg_grid.values(), &r.load, r.sim.nominal_v_dc)?;

    let mut csv = String::from("f,v_g,v_dc_ss,feasible\n");
    for (f, vg, v) in env.cells() {
        writeln!(csv, "{f},{vg},{},{}", fmt_opt(v), v.is_some()).expect("string write");
    }
    out.write("envelope.csv", &csv)?;

    let mut csv = String::from("f,vg_min,vg_max,lower_v_dc,upper_v_dc\n");
    for (f, lim) in env.f_grid.iter().zip(&env.limits) {
        let (lo, hi) = lim.map_or((String::new(), String::new()), |l| {
            (limit_cell(l.vg_min), limit_cell(l.vg_max))
        });
        writeln!(csv, "{f},{lo},{hi},{},{}", env.lower_limit, env.upper_limit).expect("string write");
    }
    out.write("limits.csv", &csv)?;

    let feasible = env.cells().filter(|c| c.2.is_some()).count();
    report.push("grid", format!("{} x {}", env.f_grid.len(), env.vg_grid.len()));
    report.push("feasible_cells", format!("{feasible} of {}", env.f_grid.len() * env.vg_grid.len()));
    report.push("band_v", format!("{:.3} .. {:.3}", env.lower_limit, env.upper_limit));
    let lim = ride_through_limits(cal, r.bank.sod, &r.load, r.sim.nominal_v_dc)?;
    report.push("sod", r.bank.sod);
    report.push("vg_min_pu", lim.vg_min);
    report.push("vg_max_pu", lim.vg_max);
    if opts.gnuplot {
        out.write("plot.gp", GNUPLOT_ENVELOPE)?;
    }
    report.finish(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StabilityOpts {
    /// Use the table parameters at this discharge current instead of the
    /// circuit the simulation would pick.
    pub current: Option<f64>,
    /// Power mismatch, W; defaults to the first sag's mismatch.
    pub delta_p: Option<f64>,
}

pub fn run_stability(r: &Resolved, opts: &StabilityOpts, out: &mut Output) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("stability", r);
    let (e, r_b) = r.bank.calibration.emf_and_resistance(r.bank.sod)?;
    let dp = opts
        .delta_p
        .unwrap_or_else(|| r.events.first().map_or(0.0, |ev| r.load.mismatch(ev.pos_pu)));
    let expected = dp.max(0.0) / r.sim.nominal_v_dc;
    let (rc, source) = match (opts.current, r.sim.rc_override) {
        (Some(i), _) => {
            let (lo, hi) = r.bank.table.current_span();
            let note = if i < lo || i > hi {
                format!(" (clamped to {})", i.clamp(lo, hi))
            } else {
                String::new()
            };
            (params_at_current(&r.bank.table, i), format!("table at {i} A{note}"))
        }
        (None, Some(rc)) => (rc, "scenario override".to_string()),
        (None, None) => (
            split_resistance(r_b, &r.bank.table, expected)?,
            format!("split of {r_b:.5} ohm at {expected:.3} A"),
        ),
    };
    report.push("delta_p_w", format!("{dp:.3}"));
    report.push("emf_v", format!("{e:.4}"));
    report.push("rc_source", source);
    report.push("rc", format!("r_s {:.5} ohm, r_p {:.5} ohm, c_p {:.4} F", rc.r_s, rc.r_p, rc.c_p));

    let op = SteadyOperatingPoint::solve(e, &rc, dp)?;
    let m = linearize(&op, e, &rc, r.sim.c_dc)?;
    let stable = is_stable(&m);
    let (zeta, pole_pair) = if stable {
        (Some(damping(&m, &rc)?), Some(poles(&m)?))
    } else {
        (None, None)
    };
    let sens = sensitivities(&rc, r.sim.c_dc);

    report.push("v_dc_ss_v", format!("{:.4}", op.v_dc_ss));
    report.push("v_cp_ss_v", format!("{:.4}", op.v_cp_ss));
    report.push("alpha", format!("{:.6}", m.alpha));
    report.push("beta", format!("{:.6}", m.beta));
    report.push("gamma", format!("{:.6}", m.gamma));
    report.push("stable", stable);
    report.push("above_half_emf", above_half_emf(&op, e));
    if let (Some(z), Some(p)) = (zeta, pole_pair) {
        report.push("zeta_exact", format!("{:.6}", z.zeta_exact));
        report.push("zeta_approx", format!("{:.6}", z.zeta_approx));
        report.push("s_slow", format!("{:.6}", p.s_slow));
        report.push("s_fast", format!("{:.6}", p.s_fast));
    } else {
        report.push("margins", format!("{:.6}, {:.6}", m.damping_margin(), m.stiffness_margin()));
    }

    let mut csv = String::from(
        "delta_p,e,r_s,r_p,c_p,c_dc,v_dc_ss,v_cp_ss,alpha,beta,gamma,stable,\
         zeta_exact,zeta_approx,s_slow,s_fast,dzeta_drs,dzeta_drp,dzeta_dcp\n",
    );
    writeln!(
        csv,
        "{dp},{e},{},{},{},{},{},{},{},{},{},{stable},{},{},{},{},{},{},{}",
        rc.r_s,
        rc.r_p,
        rc.c_p,
        r.sim.c_dc,
        op.v_dc_ss,
        op.v_cp_ss,
        m.alpha,
        m.beta,
        m.gamma,
        fmt_opt(zeta.map(|z| z.zeta_exact)),
        fmt_opt(zeta.map(|z| z.zeta_approx)),
        fmt_opt(pole_pair.map(|p| p.s_slow)),
        fmt_opt(pole_pair.map(|p| p.s_fast)),
        sens.dzeta_drs,
        sens.dzeta_drp,
        sens.dzeta_dcp,
    )
    .expect("string write");
    out.write("stability.csv", &csv)?;
    report.finish(out)
}

#[derive(Debug, Clone, Copy)]
pub struct WorstCurrentOpts {
    pub scan: Option<(f64, f64)>,
    pub points: usize,
    pub gnuplot: bool,
}

impl Default for WorstCurrentOpts {
    fn default() -> Self {
        Self {
            scan: None,
            points: 200,
            gnuplot: false,
        }
    }
}

const GNUPLOT_SWEEP: &str = "\
set datafile separator ','
set key autotitle columnhead
set xlabel 'discharge current (A)'
set ylabel 'zeta'
set y2label 's_slow (1/s)'
set y2tics
plot 'sweep.csv' using 1:2 with lines, '' using 1:3 axes x1y2 with lines
";

pub fn run_worst_current(r: &Resolved, opts: &WorstCurrentOpts, out: &mut Output) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("worst-current", r);
    let table = &r.bank.table;
    let (lo, hi) = opts.scan.unwrap_or_else(|| table.current_span());
    let worst = worst_case_current(table, r.sim.c_dc, opts.scan);
    let (e, _) = r.bank.calibration.emf_and_resistance(r.bank.sod)?;
    let dp = r.events.first().map_or(0.0, |ev| r.load.mismatch(ev.pos_pu));

    let n = opts.points.max(2);
    let currents: Vec<f64> = if hi > lo {
        Grid { start: lo, stop: hi, count: n }.values()
    } else {
        vec![lo]
    };
    let mut csv = String::from("i,zeta,s_slow\n");
    for row in damping_sweep(table, r.sim.c_dc, e, dp, &currents) {
        writeln!(csv, "{},{},{}", row.current, row.zeta_approx, fmt_opt(row.s_slow)).expect("string write");
    }
    out.write("sweep.csv", &csv)?;

    report.push("scan_a", format!("{lo} .. {hi}"));
    report.push("delta_p_w", format!("{dp:.3}"));
    report.push("i_star_a", format!("{:.3}", worst.i_star));
    report.push("zeta_star", format!("{:.6}", worst.zeta_star));
    if opts.gnuplot {
        out.write("plot.gp", GNUPLOT_SWEEP)?;
    }
    report.finish(out)
}

/// Randomised consistency checks over the scenario's battery: steady
/// solutions reproduce their mismatch, and feasible operating points above
/// half the EMF pass the stability test.
pub fn run_selfcheck(r: &Resolved, seed: u64, samples: usize, out: &mut Output) -> Result<RunReport, CliError> {
    let mut report = RunReport::new("selfcheck", r);
    let mut rng = StdRng::seed_from_u64(seed);
    let cal = &r.bank.calibration;
    let (i_lo, i_hi) = r.bank.table.current_span();
    let mut worst_residual: f64 = 0.0;
    let mut failures = 0usize;
    let mut infeasible = 0usize;
    for _ in 0..samples {
        let f = rng.random_range(cal.sod_min..=cal.sod_max);
        let (e, r_b) = cal.emf_and_resistance(f)?;
        let dp = rng.random_range(-0.9..0.9) * e * e / (4.0 * r_b);
        let v = match solve_vdc(e, r_b, dp) {
            Ok(v) => v,
            Err(ModelError::InfeasibleDemand { .. }) => {
                infeasible += 1;
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let residual = ((e - v) * v / r_b - dp).abs() / (e * e / (4.0 * r_b));
        worst_residual = worst_residual.max(residual);

        let i = if i_hi > i_lo {
            rng.random_range(i_lo..=i_hi)
        } else {
            i_lo
        };
        let rc = split_resistance(r_b, &r.bank.table, i)?;
        let op = SteadyOperatingPoint::solve(e, &rc, dp)?;
        let m = linearize(&op, e, &rc, r.sim.c_dc)?;
        if above_half_emf(&op, e) && !is_stable(&m) {
            failures += 1;
        }
    }
    report.push("seed", seed);
    report.push("samples", samples);
    report.push("infeasible_samples", infeasible);
    report.push("max_relative_residual", format!("{worst_residual:.3e}"));
    report.push("stability_failures", failures);
    if failures > 0 || worst_residual > 1e-9 {
        report.exit_code = exit::FAILURE;
    }
    report.finish(out)
}
