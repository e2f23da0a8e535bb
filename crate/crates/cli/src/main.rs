use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use powerbuf_cli::commands::parse_range;
use powerbuf_cli::{
    exit, run_envelope, run_selfcheck, run_simulate, run_stability, run_worst_current, CliError,
    EnvelopeOpts, Grid, Output, RunReport, ScenarioFile, SimulateOpts, StabilityOpts,
    WorstCurrentOpts,
};

/// Sag ride-through analysis for a battery-backed power buffer.
#[derive(Parser, Debug)]
#[command(name = "powerbuf", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario TOML file; the built-in reference scenario when omitted.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the integration step, s.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Write the fully resolved scenario to `<out>/resolved.toml`.
    #[arg(long, global = true)]
    dump_resolved_config: bool,
    /// Write a gnuplot script next to the CSV output.
    #[arg(long, global = true)]
    gnuplot_script: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time-domain sag simulation.
    Simulate {
        /// Also run with the battery disabled.
        #[arg(long)]
        no_battery: bool,
        /// Write synthesised phase voltages to waveforms.csv.
        #[arg(long)]
        waveforms: bool,
        /// Repeat the run with table parameters at two currents, `i1:i2` in A.
        #[arg(long, value_parser = parse_range)]
        compare_currents: Option<(f64, f64)>,
    },
    /// Steady dc-link voltage over SOD and PCC voltage, with ride-through limits.
    Envelope {
        /// SOD grid `start:stop:count`; defaults to the calibration range.
        #[arg(long)]
        f_grid: Option<Grid>,
        /// PCC voltage grid in p.u., `start:stop:count`.
        #[arg(long, default_value = "0.5:1.7:121")]
        vg_grid: Grid,
    },
    /// Small-signal stability at one operating point.
    Stability {
        /// Use table RC parameters at this discharge current, A.
        #[arg(long)]
        current: Option<f64>,
        /// Power mismatch, W; defaults to the first sag's.
        #[arg(long, allow_hyphen_values = true)]
        delta_p: Option<f64>,
    },
    /// Discharge current with the slowest damping, plus a sweep.
    WorstCurrent {
        /// Scan range `lo:hi` in A; defaults to the table span.
        #[arg(long, value_parser = parse_range)]
        scan: Option<(f64, f64)>,
        /// Sweep points.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Randomised consistency checks on the scenario's battery model.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn run(cli: Cli) -> Result<RunReport, CliError> {
    let c = &cli.common;
    let mut scenario = match &c.scenario {
        Some(path) => ScenarioFile::load(path)?,
        None => ScenarioFile::reference(),
    };
    if let Some(dt) = c.dt {
        scenario.simulation.dt_seconds = dt;
    }
    let resolved = scenario.resolve()?;
    let mut out = Output::new(&c.out)?;
    if c.dump_resolved_config {
        out.write("resolved.toml", &scenario.to_toml())?;
    }
    match cli.command {
        Command::Simulate {
            no_battery,
            waveforms,
            compare_currents,
        } => {
            let opts = SimulateOpts {
                no_battery,
                waveforms,
                compare_currents,
                gnuplot: c.gnuplot_script,
            };
            run_simulate(&resolved, &opts, &mut out)
        }
        Command::Envelope { f_grid, vg_grid } => {
            let opts = EnvelopeOpts {
                f_grid,
                vg_grid,
                gnuplot: c.gnuplot_script,
            };
            run_envelope(&resolved, &opts, &mut out)
        }
        Command::Stability { current, delta_p } => {
            run_stability(&resolved, &StabilityOpts { current, delta_p }, &mut out)
        }
        Command::WorstCurrent { scan, points } => {
            let opts = WorstCurrentOpts {
                scan,
                points,
                gnuplot: c.gnuplot_script,
            };
            run_worst_current(&resolved, &opts, &mut out)
        }
        Command::Selfcheck { seed, samples } => run_selfcheck(&resolved, seed, samples, &mut out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::PARSE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(report) => {
            // A closed stdout (e.g. piped into `head`) is not an error.
            let _ = write!(std::io::stdout().lock(), "{report}");
            ExitCode::from(report.exit_code)
        }
        Err(e) => {
            eprintln!("powerbuf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
