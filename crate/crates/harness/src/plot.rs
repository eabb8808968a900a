//! SVG plots of sweep results. Output depends only on the input rows, so a
//! plot regenerated from the CSV files is byte-identical.

use plotters::prelude::*;

use rspread_core::control::Variant;

use crate::sweep::{CellSummary, TraceRow};
use crate::HarnessError;

const SIZE: (u32, u32) = (900, 500);

fn colour(v: Variant) -> RGBColor {
    match v {
        Variant::Proposed => RGBColor(31, 119, 180),
        Variant::NoRs => RGBColor(214, 39, 40),
        Variant::NoInterim => RGBColor(255, 127, 14),
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Invalid(format!("plot: {e}"))
}

fn distinct<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Grouped bars of the mean windowed torque norm per displacement, with
/// min/max whiskers over runs.
pub fn bar_chart(cells: &[CellSummary]) -> Result<String, HarnessError> {
    let displacements = distinct(cells.iter().map(|c| c.displacement));
    let variants = distinct(cells.iter().map(|c| c.variant));
    if displacements.is_empty() {
        return Err(HarnessError::Invalid("plot: no cells".into()));
    }
    let top = cells.iter().map(|c| c.max).fold(0.0, f64::max) * 1.1;
    let groups = displacements.len() as f64;
    let width = 0.8 / variants.len() as f64;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Mean windowed torque norm", ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(-0.5f64..groups - 0.5, 0.0f64..top.max(1.0))
            .map_err(plot_err)?;
        let labels: Vec<String> = displacements.iter().map(|d| format!("{:+.0} mm", d * 1e3)).collect();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(displacements.len())
            .x_label_formatter(&|x| {
                let i = x.round();
                if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                    labels[i as usize].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("τ_norm (N·m)")
            .draw()
            .map_err(plot_err)?;
        for (vi, &v) in variants.iter().enumerate() {
            let c = colour(v);
            let bars: Vec<_> = cells
                .iter()
                .filter(|cell| cell.variant == v)
                .filter_map(|cell| {
                    let g = displacements.iter().position(|d| *d == cell.displacement)? as f64;
                    let x0 = g - 0.4 + vi as f64 * width;
                    Some((x0, cell))
                })
                .collect();
            chart
                .draw_series(bars.iter().map(|(x0, cell)| Rectangle::new([(*x0, 0.0), (*x0 + width * 0.9, cell.mean)], c.filled())))
                .map_err(plot_err)?
                .label(v.to_string())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], c.filled()));
            chart
                .draw_series(bars.iter().map(|(x0, cell)| {
                    let xm = *x0 + width * 0.45;
                    PathElement::new(vec![(xm, cell.min), (xm, cell.max)], BLACK.stroke_width(1))
                }))
                .map_err(plot_err)?;
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// `τ_norm` against time around `T_r`, one line per (displacement, variant).
/// The averaging window is shaded.
pub fn trace_chart(traces: &[TraceRow], t_r: f64) -> Result<String, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::Invalid("plot: no trace rows".into()));
    }
    let t0 = traces.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
    let t1 = traces.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
    let lo = traces.iter().map(|r| r.tau_norm).fold(f64::INFINITY, f64::min);
    let hi = traces.iter().map(|r| r.tau_norm).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1.0);
    let keys = distinct(traces.iter().map(|r| (r.displacement.to_bits(), r.variant)));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Torque norm around the nominal impact time", ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d((t0 - t_r) * 1e3..(t1 - t_r) * 1e3, lo - pad..hi + pad)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("t − T_r (ms)").y_desc("τ_norm (N·m)").draw().map_err(plot_err)?;
        let w = crate::metrics::WINDOW_HALF_WIDTH * 1e3;
        chart.draw_series(std::iter::once(Rectangle::new([(-w, lo - pad), (w, hi + pad)], RGBColor(200, 200, 200).mix(0.3).filled()))).map_err(plot_err)?;
        for (bits, v) in keys {
            let d = f64::from_bits(bits);
            let c = colour(v);
            let points: Vec<(f64, f64)> =
                traces.iter().filter(|r| r.variant == v && r.displacement.to_bits() == bits).map(|r| ((r.t - t_r) * 1e3, r.tau_norm)).collect();
            chart
                .draw_series(LineSeries::new(points, c.stroke_width(2)))
                .map_err(plot_err)?
                .label(format!("{v} {:+.0} mm", d * 1e3))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], c.stroke_width(2)));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}
