use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use deepracing_core::control::PursuitConfig;
use deepracing_core::curves::{fit_least_squares, normalize_times, TimeVector};
use deepracing_core::harness::{
    emit_report, run_trial_live, run_trial_with_sinks, CenterlinePursuit, Controller, ExternalController,
    LiveOptions, ReplayController, TelemetrySink, TrialConfig, TrialReport,
};
use deepracing_core::simenv::{default_oval, SessionClock, Track};
use deepracing_core::synclog::{
    extract_label_pairs, fit_clock_model, write_labels_csv, LabelConfig, LogWriter, RampExperiment, StateLog,
};
use deepracing_core::telemetry::{resolve, telemetry_addr, Broadcaster};

#[derive(Parser)]
#[command(name = "deepracing", version, about = "Closed-loop racing testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerKind {
    PurePursuitCenterline,
    Replay,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop trial and write report.csv, summary.csv and path.svg.
    Run(RunArgs),
    /// Recover a session clock from synthetic timestamp pairs.
    ClockTest {
        #[arg(long, default_value_t = 0.99999)]
        drift: f64,
        #[arg(long, default_value_t = -1.616876, allow_hyphen_values = true)]
        offset: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Standard deviation of Gaussian noise on session time, seconds.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Sample rate of the synthetic pairs, Hz.
        #[arg(long, default_value_t = 60.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate an injected actuation delay from a steering ramp.
    LatencyTest {
        /// Injected delay, milliseconds.
        #[arg(long)]
        inject: f64,
        /// Observation rate, Hz.
        #[arg(long, default_value_t = 60.0)]
        rate: f64,
    },
    /// Extract Bezier-labelled training records from a state log.
    Dataset {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 5)]
        context: usize,
        #[arg(long, default_value_t = 60)]
        points: usize,
        #[arg(long, default_value_t = 1.4)]
        horizon: f64,
        #[arg(long, default_value_t = 5)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Least-squares Bezier fit of a CSV point sequence.
    BezierFit {
        /// CSV of points, one per row; a `t` column, if present, gives sample times.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Track file, or `oval` for the built-in circuit.
    #[arg(long, default_value = "oval")]
    track: String,
    #[arg(long, value_enum, default_value = "pure-pursuit-centerline")]
    controller: ControllerKind,
    /// Lookahead gain, seconds.
    #[arg(long, default_value_t = 0.4)]
    gamma: f64,
    #[arg(long, default_value_t = 5)]
    laps: u32,
    /// Actuation delay, milliseconds.
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    /// Extra random actuation delay, milliseconds.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Target speed for the pursuit controller, m/s.
    #[arg(long, default_value_t = 15.0)]
    speed: f64,
    /// Simulated seconds before the trial is cut off.
    #[arg(long)]
    max_duration: Option<f64>,
    /// Put the car back on the start line after each lap.
    #[arg(long)]
    reset_each_lap: bool,
    /// report.csv to replay with `--controller replay`.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Where `--controller external` listens for command datagrams.
    #[arg(long, default_value = "127.0.0.1:20778")]
    command_addr: String,
    /// Broadcast telemetry to DEEPRACING_TELEMETRY_ADDR.
    #[arg(long)]
    broadcast: bool,
    /// Run the threaded UDP pipeline in wall-clock time.
    #[arg(long)]
    live: bool,
    /// Record telemetry to a DRLOG file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    drift: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    offset: f64,
    #[arg(long)]
    no_svg: bool,
}

fn load_track(name: &str) -> Result<Track> {
    if name == "oval" {
        return Ok(default_oval());
    }
    Track::load(name).with_context(|| format!("loading track {name}"))
}

fn run(args: RunArgs) -> Result<serde_json::Value> {
    let track = load_track(&args.track)?;
    let laps_budget = f64::from(args.laps.max(1));
    let cfg = TrialConfig {
        laps: args.laps,
        max_duration: args.max_duration.unwrap_or(120.0 * laps_budget),
        latency: args.latency / 1e3,
        latency_jitter: args.jitter / 1e3,
        seed: args.seed,
        clock: SessionClock::new(args.drift, args.offset)?,
        reset_each_lap: args.reset_each_lap,
        realtime: matches!(args.controller, ControllerKind::External),
        ..Default::default()
    };

    let mut controller: Box<dyn Controller + Send> = match args.controller {
        ControllerKind::PurePursuitCenterline => {
            let pursuit = PursuitConfig::default().with_gamma(args.gamma)?;
            Box::new(CenterlinePursuit::new(track.clone(), pursuit, args.speed)?)
        }
        ControllerKind::Replay => {
            let Some(path) = &args.replay else { bail!("--controller replay needs --replay <report.csv>") };
            Box::new(ReplayController::from_report(path)?)
        }
        ControllerKind::External => {
            let addr: SocketAddr = resolve(&args.command_addr)?;
            let c = ExternalController::bind(addr)?;
            log::info!("waiting for commands on {}", c.local_addr()?);
            Box::new(c)
        }
    };

    let mut broadcaster = if args.broadcast || matches!(args.controller, ControllerKind::External) {
        let target = telemetry_addr()?;
        log::info!("broadcasting telemetry to {target}");
        Some(Broadcaster::new(target)?)
    } else {
        None
    };
    let mut log_writer = args.log.as_deref().map(LogWriter::create).transpose()?;
    let mut sinks: Vec<&mut dyn TelemetrySink> = Vec::new();
    if let Some(w) = log_writer.as_mut() {
        sinks.push(w);
    }

    let report: TrialReport = if args.live {
        let live = LiveOptions { mirror: broadcaster.as_ref().map(Broadcaster::target), ..Default::default() };
        run_trial_live(&track, controller.as_mut(), &cfg, &live, &mut sinks)?
    } else {
        if let Some(b) = broadcaster.as_mut() {
            sinks.push(b);
        }
        run_trial_with_sinks(&track, controller.as_mut(), &cfg, &mut sinks)?
    };
    drop(sinks);
    if let Some(w) = log_writer {
        w.finish()?;
    }
    let files = emit_report(&report, &track, &args.out, !args.no_svg)?;
    let m = &report.metrics;
    Ok(json!({
        "controller": report.controller,
        "laps": report.successful_laps,
        "lap_times": m.lap_times,
        "mean_lap_time": report.mean_lap_time(),
        "NBF": m.nbf,
        "BFS": m.bfs,
        "TBF": m.tbf,
        "DBF": m.dbf,
        "mean_abs_offset": m.mean_abs_offset,
        "dnf": report.dnf,
        "end": report.end.label(),
        "ticks": report.trace.len(),
        "controller_mean_ms": report.timing.mean * 1e3,
        "controller_overruns": report.timing.overruns,
        "report": files.report,
        "summary": files.summary,
    }))
}

fn clock_test(drift: f64, offset: f64, samples: usize, noise: f64, rate: f64, seed: u64) -> Result<serde_json::Value> {
    let clock = SessionClock::new(drift, offset)?;
    if rate.is_nan() || rate <= 0.0 {
        bail!(deepracing_core::Error::InvalidArgument("rate must be positive".into()));
    }
    let normal = Normal::new(0.0, noise).context("noise must be a non-negative standard deviation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(f64, f64)> = (0..samples)
        .map(|k| {
            let os = k as f64 / rate;
            (os, clock.session_now(os) + normal.sample(&mut rng))
        })
        .collect();
    let m = fit_clock_model(&pairs)?;
    Ok(json!({ "slope": m.slope, "intercept": m.intercept, "r_squared": m.r_squared, "samples": m.n_samples }))
}

fn latency_test(inject_ms: f64, rate: f64) -> Result<serde_json::Value> {
    let estimate = RampExperiment::new(inject_ms / 1e3, rate).estimate()?;
    Ok(json!({
        "injected_ms": inject_ms,
        "rate_hz": rate,
        "estimated_ms": estimate * 1e3,
        "error_ms": estimate * 1e3 - inject_ms,
    }))
}

fn dataset(log: &Path, cfg: LabelConfig, out: &Path) -> Result<serde_json::Value> {
    let log = StateLog::read(log).with_context(|| format!("reading {}", log.display()))?;
    let records = extract_label_pairs(&log, &cfg)?;
    write_labels_csv(&records, BufWriter::new(File::create(out)?))?;
    Ok(json!({ "records": records.len(), "log_entries": log.len(), "out": out }))
}

fn bezier_fit(input: &Path, degree: usize, out: &Path) -> Result<serde_json::Value> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(input)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for r in reader.records() {
        let r = r?;
        if r.iter().all(str::is_empty) {
            continue;
        }
        rows.push(r.iter().map(str::to_string).collect());
    }
    let first_numeric = rows.first().is_some_and(|r| r.iter().all(|v| v.parse::<f64>().is_ok()));
    let header: Option<Vec<String>> = if first_numeric || rows.is_empty() { None } else { Some(rows.remove(0)) };
    let time_col = header.as_ref().and_then(|h| h.iter().position(|c| c == "t"));
    let width = rows.first().map_or(0, Vec::len);
    let dims = width - usize::from(time_col.is_some());
    if rows.is_empty() || dims == 0 {
        bail!(deepracing_core::Error::InsufficientData("no points in input".into()));
    }
    let mut values = Vec::with_capacity(rows.len() * dims);
    let mut times = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            bail!(deepracing_core::Error::InvalidArgument(format!("row {} has {} columns, expected {width}", i + 1, r.len())));
        }
        for (j, v) in r.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| deepracing_core::Error::InvalidArgument(format!("row {}: `{v}` is not a number", i + 1)))?;
            if Some(j) == time_col {
                times.push(x);
            } else {
                values.push(x);
            }
        }
    }
    let samples = DMatrix::from_row_slice(rows.len(), dims, &values);
    let t = match time_col {
        Some(_) => normalize_times(&times)?.0,
        None => TimeVector::uniform(rows.len())?,
    };
    let curve = fit_least_squares(&samples, &t, degree)?;

    let names: Vec<String> = match &header {
        Some(h) => h.iter().enumerate().filter(|(j, _)| Some(*j) != time_col).map(|(_, c)| c.clone()).collect(),
        None if dims == 2 => vec!["x".into(), "y".into()],
        None => (0..dims).map(|d| format!("c{d}")).collect(),
    };
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(&names)?;
    for row in curve.control_points().row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let fitted = curve.evaluate(&t)?;
    let residual = (fitted - &samples).abs().max();
    Ok(json!({ "degree": degree, "samples": rows.len(), "max_residual": residual, "out": out }))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(core) = e.downcast_ref::<deepracing_core::Error>() {
        return core.kind();
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if e.downcast_ref::<csv::Error>().is_some() {
        return "csv";
    }
    "error"
}

fn dispatch(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::ClockTest { drift, offset, samples, noise, rate, seed } => {
            clock_test(drift, offset, samples, noise, rate, seed)
        }
        Command::LatencyTest { inject, rate } => latency_test(inject, rate),
        Command::Dataset { log, context, points, horizon, degree, out } => {
            dataset(&log, LabelConfig { context, points, horizon, degree }, &out)
        }
        Command::BezierFit { input, degree, out } => bezier_fit(&input, degree, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_error_kind_survives_context() {
        let e = anyhow::Error::from(deepracing_core::Error::Underdetermined { samples: 3, required: 6 }).context("fitting");
        assert_eq!(error_kind(&e), "underdetermined");
    }
}
