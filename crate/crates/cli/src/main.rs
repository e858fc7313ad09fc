//! `ilns` command-line front end.
//!
//! Exit codes: 0 on success, 1 on input errors, 2 on numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ilns::config::Config;
use ilns::ekf::{run_ekf, AuxTiming, EkfOptions};
use ilns::graph::WindowSize;
use ilns::io::{read_estimates, read_truth, write_estimates, write_truth, EstimateRow, MeasurementLog, TruthRow};
use ilns::metrics::{pair_with_rows, MetricsReport, SolveTimeStats};
use ilns::pipeline::{fuse_log, with_window, FuserOptions, FusionRun, SensorSet};
use ilns::sim::simulate;
use ilns::state::NavState;
use ilns::{Error, Result};
use nalgebra::{UnitQuaternion, Vector3};

#[derive(Debug, Parser)]
#[command(name = "ilns", version, about = "Sliding-window factor-graph underwater navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a mission; writes `log.txt` and `truth.csv` into `--out`.
    Simulate {
        /// TOML configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sliding-window estimator; writes `estimates.csv`, `metrics.json`
    /// and `timing.json`.
    Fuse {
        #[arg(long)]
        log: PathBuf,
        /// Window size in keyframe intervals, or `global`. Overrides the config.
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Truth CSV; defaults to `truth.csv` beside the log.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// TOML configuration for the `[solver]` section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the error-state Kalman filter baseline.
    FuseEkf {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// When auxiliary measurements enter the filter.
        #[arg(long, value_enum, default_value_t = Timing::Epoch)]
        timing: Timing,
    },
    /// Print metrics for an estimate file against truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Rerun the estimator over several window sizes; writes `sweep.csv`.
    SweepWindow {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,50,200,global")]
        sizes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Timing {
    /// Apply queued aiding at the next filter epoch.
    Epoch,
    /// Apply aiding at its own timestamp.
    Exact,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Truth rows from `--truth`, or from `truth.csv` beside the log if present.
fn load_truth(explicit: Option<&Path>, log: &Path) -> Result<Option<Vec<TruthRow>>> {
    if let Some(p) = explicit {
        return read_truth(p).map(Some);
    }
    let sibling = log.with_file_name("truth.csv");
    if sibling.exists() {
        return read_truth(&sibling).map(Some);
    }
    log::warn!("no truth file found; estimates are written without errors");
    Ok(None)
}

fn estimate_rows(estimates: &[NavState], truth: Option<&[TruthRow]>) -> Vec<EstimateRow> {
    match truth {
        Some(t) => pair_with_rows(estimates, t),
        None => estimates.iter().map(|x| EstimateRow::new(x.t, x.p, Vector3::repeat(f64::NAN))).collect(),
    }
}

/// Writes estimates, solve timings and, with truth, the metrics document.
/// Timings live apart from the metrics so reruns reproduce the metrics exactly.
fn write_run(run: &FusionRun, truth: Option<&[TruthRow]>, out: &Path) -> Result<Option<MetricsReport>> {
    create_dir(out)?;
    let rows = estimate_rows(&run.estimates, truth);
    write_estimates(&out.join("estimates.csv"), &rows)?;
    if !run.stats.is_empty() {
        let times: Vec<f64> = run.stats.iter().map(|s| s.report.wall_time).collect();
        let timing = serde_json::to_string_pretty(&SolveTimeStats::from_times(&times)).expect("timings serialize");
        std::fs::write(out.join("timing.json"), timing)?;
    }
    if truth.is_none() {
        return Ok(None);
    }
    let report = MetricsReport::compute(&rows, None)?;
    std::fs::write(out.join("metrics.json"), report.to_json())?;
    Ok(Some(report))
}

fn fuser_options(config: &Config, window: Option<&str>) -> Result<FuserOptions> {
    let options = FuserOptions::from_config(&config.solver)?;
    Ok(match window {
        Some(w) => with_window(&options, w.parse()?),
        None => options,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let config = load_config(config.as_deref())?;
            let streams = simulate(&config, seed)?;
            create_dir(&out)?;
            streams.log.save(&out.join("log.txt"))?;
            write_truth(&out.join("truth.csv"), &TruthRow::sample(&streams.truth, config.imu.rate_hz))?;
            println!("{} records over {} s written to {}", streams.log.records.len(), config.trajectory.duration_s, out.display());
        }
        Command::Fuse { log, window, out, truth, config } => {
            let options = fuser_options(&load_config(config.as_deref())?, window.as_deref())?;
            let truth = load_truth(truth.as_deref(), &log)?;
            let run = fuse_log(&MeasurementLog::load(&log)?, options)?;
            if let Some(report) = write_run(&run, truth.as_deref(), &out)? {
                println!("{report}");
            }
            println!("{} epochs in {:.2} s, {:.2} s solving", run.estimates.len(), run.wall_time, run.solve_time());
        }
        Command::FuseEkf { log, out, truth, config, timing } => {
            let config = load_config(config.as_deref())?;
            let options = EkfOptions {
                timing: match timing {
                    Timing::Epoch => AuxTiming::Epoch,
                    Timing::Exact => AuxTiming::Exact,
                },
                sensors: SensorSet::parse(&config.solver.sensors)?,
                ..Default::default()
            };
            let truth = load_truth(truth.as_deref(), &log)?;
            let run = run_ekf(&MeasurementLog::load(&log)?, &options)?;
            if let Some(report) = write_run(&run, truth.as_deref(), &out)? {
                println!("{report}");
            }
            println!("{} epochs in {:.2} s", run.estimates.len(), run.wall_time);
        }
        Command::Eval { est, truth } => {
            let truth = read_truth(&truth)?;
            let estimates: Vec<NavState> = read_estimates(&est)?
                .iter()
                .map(|r| NavState::new(r.t, Vector3::new(r.est_e, r.est_n, r.est_u), Vector3::zeros(), UnitQuaternion::identity()))
                .collect();
            println!("{}", MetricsReport::compute(&pair_with_rows(&estimates, &truth), None)?);
        }
        Command::SweepWindow { log, sizes, out, truth, config } => {
            let base = fuser_options(&load_config(config.as_deref())?, None)?;
            let windows = sizes.iter().map(|s| s.trim().parse()).collect::<Result<Vec<WindowSize>>>()?;
            let truth = load_truth(truth.as_deref(), &log)?.ok_or_else(|| Error::InvalidInput("sweep-window needs a truth file".into()))?;
            let log = MeasurementLog::load(&log)?;
            create_dir(&out)?;
            let mut table = String::from("window,rmse_e,rmse_n,rmse_u,rmse_horizontal,ate,solve_time_s,wall_time_s\n");
            println!("{:>8} {:>10} {:>10} {:>12}", "window", "horiz (m)", "U (m)", "solve (s)");
            for w in windows {
                let run = fuse_log(&log, with_window(&base, w))?;
                let report = write_run(&run, Some(&truth), &out.join(format!("window_{w}")))?.expect("truth is present");
                table.push_str(&format!(
                    "{w},{},{},{},{},{},{},{}\n",
                    report.rmse_e, report.rmse_n, report.rmse_u, report.rmse_horizontal, report.ate, run.solve_time(), run.wall_time
                ));
                println!("{w:>8} {:>10.4} {:>10.4} {:>12.3}", report.rmse_horizontal, report.rmse_u, run.solve_time());
            }
            std::fs::write(out.join("sweep.csv"), table)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
