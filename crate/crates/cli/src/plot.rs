use std::path::Path;

use plotters::prelude::*;
use semsegdepth::harness::LogRecord;
use semsegdepth::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

/// Joint training loss against step for each named run, log-scaled.
pub fn loss_curves(path: &Path, runs: &[(String, Vec<LogRecord>)]) -> Result<()> {
    let points: Vec<(&str, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(name, log)| {
            let pts = log
                .iter()
                .filter(|r| r.joint_loss.is_finite() && r.joint_loss > 0.0)
                .map(|r| (r.step as f64, r.joint_loss))
                .collect();
            (name.as_str(), pts)
        })
        .filter(|(_, p): &(&str, Vec<_>)| !p.is_empty())
        .collect();
    let all = points.iter().flat_map(|(_, p)| p.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, 0.0f64);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.1, 1.0);
    }
    if y_max <= y_min {
        y_max = y_min * 10.0;
    }

    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training loss", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x_max, (y_min * 0.9..y_max * 1.1).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("joint loss")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in points.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    if !points.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
