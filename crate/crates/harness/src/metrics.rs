//! Torque-norm metric, window averaging and step measures on episode logs.

use crate::episode::EpisodeLog;
use crate::HarnessError;

/// Half-width of the averaging window around `T_r` (s).
pub const WINDOW_HALF_WIDTH: f64 = 0.06;

const GRID_EPS: f64 = 1e-9;

/// `(t, ‖[τ₁; τ₂]‖)` for every step.
pub fn torque_norm_series(log: &EpisodeLog) -> Vec<(f64, f64)> {
    log.steps.iter().map(|s| (s.t, s.tau_norm)).collect()
}

/// Euclidean norm of the stacked torques.
pub fn torque_norm(tau: &[Vec<f64>]) -> f64 {
    tau.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean of the samples with `T_r − 0.06 ≤ t ≤ T_r + 0.06`.
pub fn windowed_average(series: &[(f64, f64)], t_r: f64) -> Result<f64, HarnessError> {
    windowed_average_with(series, t_r, WINDOW_HALF_WIDTH)
}

pub fn windowed_average_with(series: &[(f64, f64)], t_r: f64, half: f64) -> Result<f64, HarnessError> {
    let (lo, hi) = (t_r - half, t_r + half);
    let covered = match (series.first(), series.last()) {
        (Some(a), Some(b)) => a.0 <= lo + GRID_EPS && b.0 >= hi - GRID_EPS,
        _ => false,
    };
    if !covered {
        return Err(HarnessError::WindowNotCovered { start: lo, end: hi });
    }
    let inside: Vec<f64> = series.iter().filter(|(t, _)| *t >= lo - GRID_EPS && *t <= hi + GRID_EPS).map(|(_, v)| *v).collect();
    Ok(inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Largest change of the commanded normal force between consecutive steps
/// over `[lo, hi]`, across arms.
pub fn max_force_step(log: &EpisodeLog, lo: f64, hi: f64) -> f64 {
    log.steps
        .windows(2)
        .filter(|w| w[1].t >= lo - GRID_EPS && w[1].t <= hi + GRID_EPS)
        .flat_map(|w| w[0].normal_force.iter().zip(&w[1].normal_force).map(|(a, b)| (b - a).abs()))
        .fold(0.0, f64::max)
}

/// Commanded normal-force change entering the step at time `t`, largest over
/// arms.
pub fn force_step_at(log: &EpisodeLog, t: f64) -> Option<f64> {
    let k = log.index_at(t)?;
    if k == 0 {
        return None;
    }
    let (a, b) = (&log.steps[k - 1], &log.steps[k]);
    Some(a.normal_force.iter().zip(&b.normal_force).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max))
}

/// Largest step of `τ_norm` between consecutive samples of `series` within `[lo, hi]`.
pub fn max_torque_step(series: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    series.windows(2).filter(|w| w[1].0 >= lo - GRID_EPS && w[1].0 <= hi + GRID_EPS).map(|w| (w[1].1 - w[0].1).abs()).fold(0.0, f64::max)
}

pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}
