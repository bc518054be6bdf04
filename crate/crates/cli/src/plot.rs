use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.05).max(0.1);
    (lo - pad, hi + pad)
}

/// Planar root paths, each starting at the origin facing +y.
pub fn trajectories(path: &Path, paths: &[Vec<(f64, f64)>]) -> Result<()> {
    if paths.iter().all(|p| p.is_empty()) {
        bail!("no trajectories to plot");
    }
    let all = || paths.iter().flatten();
    let (x0, x1) = bounds(all().map(|p| p.0));
    let (y0, y1) = bounds(all().map(|p| p.1));
    // Equal axis scale so turns are not distorted.
    let half = (x1 - x0).max(y1 - y0) / 2.0;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let root = SVGBackend::new(path, (720, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Forecast root trajectories", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(cx - half..cx + half, cy - half..cy + half)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("x [m]")
        .y_desc("y [m]")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, p) in paths.iter().enumerate() {
        let color = Palette99::pick(i).stroke_width(2);
        chart
            .draw_series(LineSeries::new(p.iter().copied(), color))
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Mean planar speed per output frame for forecasts and ground truth.
pub fn velocity(path: &Path, fps: f64, predicted: &[f64], truth: &[f64]) -> Result<()> {
    if predicted.is_empty() && truth.is_empty() {
        bail!("no velocity curves to plot");
    }
    let seconds = predicted.len().max(truth.len()) as f64 / fps;
    let (_, top) = bounds(predicted.iter().chain(truth).copied().chain([0.0]));
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Frame-wise mean global velocity", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..seconds, 0.0..top)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc("time after input [s]")
        .y_desc("speed [m/s]")
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (curve, color, label) in [(predicted, RED, "forecast"), (truth, BLUE, "ground truth")] {
        chart
            .draw_series(LineSeries::new(
                curve.iter().enumerate().map(|(i, v)| ((i + 1) as f64 / fps, *v)),
                color.stroke_width(2),
            ))
            .map_err(|e| anyhow!("{e}"))?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}
