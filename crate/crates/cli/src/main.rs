use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rspread_core::control::Variant;
use rspread_core::reference::{deserialize_reference, serialize_recording, serialize_reference, ExtendedReference};
use rspread_harness::metrics::{max_force_step, torque_norm_series, windowed_average};
use rspread_harness::{demonstrate, run_episode, run_sweep, write_sweep, EpisodeLog, Scenario};
use rspread_teleop::{LiveSim, Pacing, SimHandle};

mod config;
mod rundir;

use config::Config;
use rundir::RunDir;

const RECORDING_FILE: &str = "recording.rec";
const REFERENCE_FILE: &str = "reference.ref";
const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Parser)]
#[command(name = "rspread", version, about = "Dual-arm impact-aware grabbing: demonstrations, replays, sweeps and teleoperation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent of the per-run output directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    /// Write outputs to exactly this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scripted demonstration and replay.
    #[command(subcommand)]
    Demo(Demo),
    /// Batch experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Teleoperation WebSocket server.
    Serve(Serve),
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// Runs the scripted demonstration and writes the recording and its reference.
    Record,
    /// Runs one autonomous episode on a reference.
    Replay(Replay),
}

#[derive(Debug, Args)]
struct Replay {
    /// Reference file; a fresh scripted demonstration when absent.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "proposed")]
    variant: Variant,
    /// Box shift along world y (m).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    displacement: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Experiment {
    /// Displacement sweep over variants.
    Sweep(Sweep),
}

#[derive(Debug, Args)]
struct Sweep {
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated, e.g. proposed,no-rs,no-interim.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// Comma-separated box shifts (m), e.g. -0.03,0,0.03.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    displacements: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reference file; a fresh scripted demonstration when absent.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Serve {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Run the simulation as fast as possible instead of in real time.
    #[arg(long)]
    fast: bool,
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let name = match &cli.command {
        Command::Demo(Demo::Record) => "demo record",
        Command::Demo(Demo::Replay(_)) => "demo replay",
        Command::Experiment(Experiment::Sweep(_)) => "experiment sweep",
        Command::Serve(_) => "serve",
    };
    let run = RunDir::create(cli.out.as_deref(), &cli.runs_dir, name)?;
    let scenario = config.scenario()?;
    let results = match cli.command {
        Command::Demo(Demo::Record) => demo_record(&scenario, &run)?,
        Command::Demo(Demo::Replay(args)) => demo_replay(&scenario, &run, &args)?,
        Command::Experiment(Experiment::Sweep(args)) => sweep(&scenario, &config, &run, args)?,
        Command::Serve(args) => serve(scenario, &config, &run, &args)?,
    };
    let manifest = run.write_manifest(&config, &results)?;
    println!("{}", serde_json::to_string_pretty(&results)?);
    eprintln!("outputs in {}", manifest.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

/// Loads `path`, or demonstrates afresh and saves the result into the run.
fn reference(scenario: &Scenario, path: Option<&Path>, run: &RunDir) -> anyhow::Result<ExtendedReference> {
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return deserialize_reference(&text).with_context(|| format!("parsing {}", p.display()));
    }
    let (demo, reference) = demonstrate(scenario)?;
    std::fs::write(run.file(RECORDING_FILE), serialize_recording(&demo.recording))?;
    std::fs::write(run.file(REFERENCE_FILE), serialize_reference(&reference))?;
    Ok(reference)
}

/// Per-step scalars: time, mode, blend, torque norm and per-arm normal force,
/// normal velocity and contact flag.
fn write_trace(log: &EpisodeLog, path: &Path) -> anyhow::Result<()> {
    let arms = log.steps.first().map_or(0, |s| s.normal_force.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "mode".into(), "gamma".into(), "tau_norm".into()];
    for a in 0..arms {
        header.extend([format!("normal_force_{a}"), format!("normal_velocity_{a}"), format!("contact_{a}")]);
    }
    w.write_record(&header)?;
    for s in &log.steps {
        let mut row = vec![format!("{:?}", s.t), s.mode.to_string(), format!("{:?}", s.gamma), format!("{:?}", s.tau_norm)];
        for a in 0..arms {
            row.extend([format!("{:?}", s.normal_force[a]), format!("{:?}", s.normal_velocity[a]), u8::from(s.in_contact[a]).to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn episode_summary(log: &EpisodeLog, t_r: f64) -> Value {
    let series = torque_norm_series(log);
    json!({
        "t_r": t_r,
        "t_imp": log.detection.map(|d| d.time),
        "first_contact": log.first_contact,
        "tau_norm_avg": windowed_average(&series, t_r).ok(),
        "max_force_step": max_force_step(log, t_r - 0.06, t_r + 0.06),
        "transitions": log.transitions.iter().map(|(t, m)| json!({"t": t, "mode": m})).collect::<Vec<_>>(),
        "fallbacks": log.fallbacks(),
    })
}

fn demo_record(scenario: &Scenario, run: &RunDir) -> anyhow::Result<Value> {
    let (demo, reference) = demonstrate(scenario)?;
    std::fs::write(run.file(RECORDING_FILE), serialize_recording(&demo.recording))?;
    std::fs::write(run.file(REFERENCE_FILE), serialize_reference(&reference))?;
    write_trace(&demo.log, &run.file(TRACE_FILE))?;
    Ok(json!({
        "t_r": reference.t_r,
        "delta_t_r": reference.delta_t_r,
        "samples": demo.recording.len(),
        "lift": demo.lift,
        "detection": demo.log.detection.map(|d| d.time),
        "first_contact": demo.log.first_contact,
    }))
}

fn demo_replay(scenario: &Scenario, run: &RunDir, args: &Replay) -> anyhow::Result<Value> {
    let reference = reference(scenario, args.reference.as_deref(), run)?;
    if reference.arms() != scenario.plant.arms.len() {
        bail!("reference has {} arms, plant has {}", reference.arms(), scenario.plant.arms.len());
    }
    let log = run_episode(scenario, &reference, args.variant, args.displacement, args.seed)?;
    write_trace(&log, &run.file(TRACE_FILE))?;
    let mut summary = episode_summary(&log, reference.t_r);
    summary["variant"] = json!(args.variant);
    summary["displacement"] = json!(args.displacement);
    summary["seed"] = json!(args.seed);
    Ok(summary)
}

fn sweep(scenario: &Scenario, config: &Config, run: &RunDir, args: Sweep) -> anyhow::Result<Value> {
    let mut sweep = config.sweep.clone();
    if let Some(n) = args.runs {
        sweep.runs = n;
    }
    if let Some(v) = args.variants {
        sweep.variants = v;
    }
    if let Some(d) = args.displacements {
        sweep.displacements = d;
    }
    if let Some(s) = args.seed {
        sweep.seed = s;
    }
    sweep.validate()?;
    let reference = reference(scenario, args.reference.as_deref(), run)?;
    let result = run_sweep(scenario, &reference, &sweep)?;
    write_sweep(&result, run.path())?;
    for c in &result.cells {
        eprintln!("{:>8.3} m  {:<11} mean {:8.3}  std {:6.3}", c.displacement, c.variant.to_string(), c.mean, c.std);
    }
    Ok(json!({ "t_r": result.t_r, "sweep": sweep, "cells": result.cells }))
}

fn serve(scenario: Scenario, config: &Config, run: &RunDir, args: &Serve) -> anyhow::Result<Value> {
    let mut live = config.live.clone();
    live.output_dir.get_or_insert_with(|| run.path().to_path_buf());
    let pacing = if args.fast { Pacing::Fast } else { Pacing::RealTime };
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let handle = SimHandle::spawn(LiveSim::new(scenario, live), pacing);
        let server = rspread_teleop::Server::start(handle.clone(), addr).await?;
        run.write_manifest(config, &json!({ "address": server.local_addr.to_string() }))?;
        eprintln!("listening on ws://{}/ws", server.local_addr);
        tokio::signal::ctrl_c().await?;
        server.stop().await;
        handle.shutdown();
        Ok::<_, anyhow::Error>(json!({ "address": addr.to_string() }))
    })
}
