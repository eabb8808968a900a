//! Box-displacement sweep: every (displacement, variant, run) cell replays the
//! same reference, and the windowed torque norms are tabulated.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rspread_core::control::Variant;
use rspread_core::reference::ExtendedReference;

use crate::episode::{run_episode, EpisodeLog};
use crate::metrics::{max_force_step, torque_norm_series, windowed_average, WINDOW_HALF_WIDTH};
use crate::scenario::Scenario;
use crate::HarnessError;

/// Time kept either side of `T_r` in the trace file (s).
pub const TRACE_HALF_WIDTH: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub runs: usize,
    pub variants: Vec<Variant>,
    /// Box shifts along world y (m).
    pub displacements: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { runs: 5, variants: Variant::ALL.to_vec(), displacements: vec![-0.03, -0.015, 0.0, 0.015, 0.03], seed: 1000 }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 || self.variants.is_empty() || self.displacements.is_empty() {
            return Err(HarnessError::Invalid("sweep needs at least one run, variant and displacement".into()));
        }
        if self.displacements.iter().any(|d| !d.is_finite()) {
            return Err(HarnessError::Invalid("displacements must be finite".into()));
        }
        Ok(())
    }

    /// Noise seed of one cell; independent of the worker that runs it.
    pub fn cell_seed(&self, displacement_index: usize, variant_index: usize, run: usize) -> u64 {
        self.seed + (displacement_index as u64) * 10_000 + (variant_index as u64) * 1_000 + run as u64
    }
}

/// One episode of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub displacement: f64,
    pub variant: Variant,
    pub run: usize,
    pub seed: u64,
    pub tau_norm_avg: f64,
    /// Largest commanded normal-force change between steps inside the window (N).
    pub max_force_step: f64,
    pub t_imp: Option<f64>,
    /// Earliest true pad contact (s).
    pub first_contact: Option<f64>,
    pub first_contact_gap: Option<f64>,
    pub fallbacks: usize,
}

/// Mean and spread over the runs of one (displacement, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub displacement: f64,
    pub variant: Variant,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// `τ_norm` around `T_r` for the first run of each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub displacement: f64,
    pub variant: Variant,
    pub t: f64,
    pub tau_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t_r: f64,
    pub rows: Vec<RunRow>,
    pub cells: Vec<CellSummary>,
    pub traces: Vec<TraceRow>,
}

impl SweepResult {
    pub fn cell(&self, displacement: f64, variant: Variant) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.variant == variant && (c.displacement - displacement).abs() < 1e-12)
    }

    pub fn runs_of(&self, displacement: f64, variant: Variant) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(move |r| r.variant == variant && (r.displacement - displacement).abs() < 1e-12)
    }
}

struct CellOutput {
    row: RunRow,
    trace: Vec<TraceRow>,
}

fn run_cell(
    scenario: &Scenario,
    reference: &ExtendedReference,
    displacement: f64,
    variant: Variant,
    run: usize,
    seed: u64,
) -> Result<CellOutput, HarnessError> {
    let log = run_episode(scenario, reference, variant, displacement, seed)?;
    let t_r = reference.t_r;
    let series = torque_norm_series(&log);
    let avg = windowed_average(&series, t_r)?;
    let trace = if run == 0 {
        series
            .iter()
            .filter(|(t, _)| (t - t_r).abs() <= TRACE_HALF_WIDTH + 1e-9)
            .map(|&(t, tau_norm)| TraceRow { displacement, variant, t, tau_norm })
            .collect()
    } else {
        Vec::new()
    };
    Ok(CellOutput {
        row: RunRow {
            displacement,
            variant,
            run,
            seed,
            tau_norm_avg: avg,
            max_force_step: max_force_step(&log, t_r - WINDOW_HALF_WIDTH, t_r + WINDOW_HALF_WIDTH),
            t_imp: log.detection.map(|e| e.time),
            first_contact: log.first_contact_time(),
            first_contact_gap: contact_gap(&log),
            fallbacks: log.fallbacks(),
        },
        trace,
    })
}

fn contact_gap(log: &EpisodeLog) -> Option<f64> {
    let times: Vec<f64> = log.first_contact.iter().copied().collect::<Option<_>>()?;
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(hi - lo)
}

fn summarize(displacement: f64, variant: Variant, values: &[f64]) -> CellSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    CellSummary {
        displacement,
        variant,
        runs: values.len(),
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Runs every cell, in parallel, and aggregates. Output order is fixed by the
/// configuration, not by scheduling.
pub fn run_sweep(scenario: &Scenario, reference: &ExtendedReference, config: &SweepConfig) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (di, &d) in config.displacements.iter().enumerate() {
        for (vi, &v) in config.variants.iter().enumerate() {
            for run in 0..config.runs {
                jobs.push((d, v, run, config.cell_seed(di, vi, run)));
            }
        }
    }
    let outputs: Vec<CellOutput> = jobs.par_iter().map(|&(d, v, run, seed)| run_cell(scenario, reference, d, v, run, seed)).collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(outputs.len());
    let mut traces = Vec::new();
    for out in outputs {
        rows.push(out.row);
        traces.extend(out.trace);
    }
    let mut cells = Vec::new();
    for &d in &config.displacements {
        for &v in &config.variants {
            let values: Vec<f64> = rows.iter().filter(|r| r.variant == v && r.displacement == d).map(|r| r.tau_norm_avg).collect();
            cells.push(summarize(d, v, &values));
        }
    }
    Ok(SweepResult { t_r: reference.t_r, rows, cells, traces })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<Result<_, _>>().map_err(HarnessError::from)
}

/// File names inside a sweep output directory.
pub const RUNS_CSV: &str = "runs.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const BAR_SVG: &str = "tau_norm_bars.svg";
pub const TRACE_SVG: &str = "tau_norm_trace.svg";

/// Writes the three CSV files and renders both plots from them.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join(RUNS_CSV), &result.rows)?;
    write_csv(&dir.join(SUMMARY_CSV), &result.cells)?;
    write_csv(&dir.join(TRACE_CSV), &result.traces)?;
    render_plots(dir, result.t_r)
}

/// Regenerates the plots from the CSV files in `dir`.
pub fn render_plots(dir: &Path, t_r: f64) -> Result<(), HarnessError> {
    let cells: Vec<CellSummary> = read_csv(&dir.join(SUMMARY_CSV))?;
    let traces: Vec<TraceRow> = read_csv(&dir.join(TRACE_CSV))?;
    std::fs::write(dir.join(BAR_SVG), crate::plot::bar_chart(&cells)?)?;
    std::fs::write(dir.join(TRACE_SVG), crate::plot::trace_chart(&traces, t_r)?)?;
    Ok(())
}
