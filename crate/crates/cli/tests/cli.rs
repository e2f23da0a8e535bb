use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use powerbuf_cli::ScenarioFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_powerbuf"))
}

fn reference_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_scenario_matches_builtin_reference() {
    let s = ScenarioFile::load(&reference_scenario()).unwrap();
    assert_eq!(s, ScenarioFile::reference());
}

#[test]
fn simulate_reference_rides_through() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["--scenario", reference_scenario().to_str().unwrap(), "simulate", "--no-battery"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("collapse                 none"), "{stdout}");
    assert!(stdout.contains("no_battery.collapse      t = 0.14"), "{stdout}");

    let csv = fs::read_to_string(tmp.path().join("timeseries.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,v_g_pos,v_g_neg,v_dc,v_cp,i_btr,p_in,q_in,p_batt,i_in_pu,mode"
    );
    assert_eq!(lines.count(), 6801);
    assert!(tmp.path().join("timeseries_no_battery.csv").exists());
    assert_eq!(
        fs::read_to_string(tmp.path().join("report.txt")).unwrap(),
        stdout
    );
}

#[test]
fn outputs_are_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--waveforms", "--gnuplot-script"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&args, b.path()).status.success());
    for name in ["timeseries.csv", "waveforms.csv", "plot.gp", "report.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn waveforms_follow_sequence_voltages() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&["simulate", "--waveforms"], tmp.path()).status.success());
    let csv = fs::read_to_string(tmp.path().join("waveforms.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,v_a,v_b,v_c");
    // Three-wire set: phases sum to zero; first sample is the pre-sag peak.
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[1] - 415.0 * 2f64.sqrt()).abs() < 1e-9);
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((v[1] + v[2] + v[3]).abs() < 1e-9, "{line}");
    }
}

#[test]
fn dumped_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "--scenario",
            reference_scenario().to_str().unwrap(),
            "--dt",
            "2.5e-5",
            "--dump-resolved-config",
            "stability",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let dumped = tmp.path().join("resolved.toml");
    let first = ScenarioFile::load(&dumped).unwrap();
    assert_eq!(first.simulation.dt_seconds, 2.5e-5);

    let again = tempfile::tempdir().unwrap();
    let o = run(
        &["--scenario", dumped.to_str().unwrap(), "--dump-resolved-config", "stability"],
        again.path(),
    );
    assert!(o.status.success());
    assert_eq!(
        fs::read(&dumped).unwrap(),
        fs::read(again.path().join("resolved.toml")).unwrap()
    );
    assert_eq!(first.resolve().unwrap(), ScenarioFile::load(&dumped).unwrap().resolve().unwrap());
}

#[test]
fn unknown_key_exits_with_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), "[battery]\ne0_volt = 864.0\n");
    let o = run(&["--scenario", path.to_str().unwrap(), "simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("e0_volt"), "{stderr}");
    assert!(stderr.contains("scenario.toml"), "{stderr}");
}

#[test]
fn bad_arguments_exit_with_parse_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["envelope", "--vg-grid", "0.5:1.7"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["nonsense"], tmp.path()).status.code(), Some(2));
    assert_eq!(run(&["--dt", "-1", "simulate"], tmp.path()).status.code(), Some(2));
    // dt far too coarse for the battery's fast pole
    assert_eq!(run(&["--dt", "0.005", "simulate"], tmp.path()).status.code(), Some(2));
}

#[test]
fn collapse_with_battery_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(
        tmp.path(),
        "[battery]
e0_volts = 864.0
k_volts = 126.7
r0_ohms = 10.0
k_r_ohms = -0.5
capacity_amp_hours = 100.0
sod = 0.0
sod_min = 0.0
sod_max = 0.8

[[sag]]
t_start_seconds = 0.04
duration_seconds = 0.5
pos_pu = 0.5
neg_pu = 0.0
",
    );
    let o = run(&["--scenario", path.to_str().unwrap(), "simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(tmp.path().join("timeseries.csv").exists());
}

#[test]
fn infeasible_operating_point_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["stability", "--delta-p", "1e6"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("exceeds"), "{stderr}");
}

#[test]
fn envelope_grid_and_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["envelope", "--f-grid", "0:0.8:5", "--vg-grid", "0.5:1.5:11"], tmp.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("envelope.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "f,v_g,v_dc_ss,feasible");
    assert_eq!(rows.len(), 1 + 5 * 11);
    let limits = fs::read_to_string(tmp.path().join("limits.csv")).unwrap();
    let row_04 = limits.lines().find(|l| l.starts_with("0.4,")).unwrap();
    let vg_min: f64 = row_04.split(',').nth(1).unwrap().parse().unwrap();
    assert!((vg_min - 0.82).abs() < 1e-3, "{row_04}");
}

#[test]
fn stability_at_table_currents() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["stability", "--current", "1000", "--delta-p", "36000"], tmp.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("zeta_approx     3.501"), "{stdout}");
    assert!(stdout.contains("stable          true"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("stability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn worst_current_is_low_current_end() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["worst-current", "--points", "50"], tmp.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("i_star_a   153.000"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "i,zeta,s_slow");
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn selfcheck_is_seeded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["selfcheck", "--seed", "11", "--samples", "300"];
    let x = run(&args, a.path());
    let y = run(&args, b.path());
    assert!(x.status.success());
    assert_eq!(x.stdout, y.stdout);
}

#[test]
fn empty_event_list_is_a_flat_run() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), "");
    let o = run(&["--scenario", path.to_str().unwrap(), "simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("timeseries.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "859", "{line}");
        assert_eq!(cols[10], "CP", "{line}");
    }
}

#[test]
fn simulate_report_shows_plateau_power() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["simulate"], tmp.path());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let line = stdout.lines().find(|l| l.trim_start().starts_with(key)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!((value("plateau_p_in_w") - 64e3).abs() < 0.02 * 64e3);
    assert!((value("plateau_p_batt_w") - 36e3).abs() < 0.02 * 36e3);
    assert!((value("plateau_i_in_pu") - 0.8).abs() < 0.01);
    assert!(stdout.contains("resolved config:\n  [base]"), "{stdout}");
}

#[test]
fn single_cell_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["envelope", "--f-grid", "0.4:0.4:1", "--vg-grid", "0.9:0.9:1"], tmp.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("envelope.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("0.4,0.9,") && rows[1].ends_with(",true"), "{}", rows[1]);
}

#[test]
fn infeasible_envelope_cells_are_marked() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(
        tmp.path(),
        "[battery]
e0_volts = 864.0
k_volts = 126.7
r0_ohms = 10.0
k_r_ohms = -0.5
capacity_amp_hours = 100.0
sod = 0.0
sod_min = 0.0
sod_max = 0.8
",
    );
    let o = run(
        &["--scenario", path.to_str().unwrap(), "envelope", "--f-grid", "0:0:1", "--vg-grid", "0:1:11"],
        tmp.path(),
    );
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("envelope.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
    assert!(csv.lines().any(|l| l.ends_with(",,false")));
    assert!(csv.lines().any(|l| l.ends_with(",true")));
}

#[test]
fn stability_at_zero_mismatch_sits_at_emf() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["stability", "--delta-p", "0"], tmp.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("v_dc_ss_v       864.0000"), "{stdout}");
    assert!(stdout.contains("s_slow"), "{stdout}");
}

#[test]
fn single_entry_table_is_its_own_worst_case() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(
        tmp.path(),
        "[[rc_table]]
discharge_current_amps = 400.0
r_s_ohms = 0.3
r_p_ohms = 0.1
c_p_farads = 3.0
",
    );
    let o = run(&["--scenario", path.to_str().unwrap(), "worst-current"], tmp.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("i_star_a   400.000"), "{stdout}");
}
