//! Chart rendering: training loss curves and per-frame J series, as SVG.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use plotters::prelude::*;

/// Parses `step,loss,lr` lines.
pub fn parse_train_log(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let step: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| anyhow!("log line {}: bad step", lineno + 1))?;
        let loss: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| anyhow!("log line {}: bad loss", lineno + 1))?;
        out.push((step, loss));
    }
    Ok(out)
}

/// Parses `J.<sequence>.<frame> = value` lines into per-sequence series.
pub fn parse_j_series(text: &str) -> Result<BTreeMap<String, Vec<(f64, f64)>>> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        let Some((key, value)) = line.split_once('=') else { continue };
        let key = key.trim();
        let Some(rest) = key.strip_prefix("J.") else { continue };
        let Some((seq, frame)) = rest.rsplit_once('.') else { continue };
        let Ok(frame): std::result::Result<usize, _> = frame.parse() else {
            continue; // aggregate lines like J.mean
        };
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("bad metric value in `{line}`"))?;
        out.entry(seq.to_string()).or_default().push((frame as f64, v));
    }
    for series in out.values_mut() {
        series.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }
    Ok(out)
}

fn draw_err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("chart rendering failed: {e}")
}

/// Renders the loss curve to an SVG file.
pub fn render_loss_curve(points: &[(f64, f64)], out: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(anyhow!("training log holds no data points"));
    }
    let x_max = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let y_max = points.iter().map(|p| p.1).fold(f64::MIN, f64::max) * 1.05;
    let y_min = (points.iter().map(|p| p.1).fold(f64::MAX, f64::min) * 0.95).min(y_max - 1e-9);
    let root = SVGBackend::new(out, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, y_min..y_max)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Renders per-frame J series (one line per sequence) to an SVG file.
pub fn render_j_series(series: &BTreeMap<String, Vec<(f64, f64)>>, out: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(anyhow!("metric file holds no per-frame J values"));
    }
    let x_max = series
        .values()
        .flat_map(|s| s.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let root = SVGBackend::new(out, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("region similarity per frame", ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, 0.0..1.05f64)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("frame")
        .y_desc("J")
        .draw()
        .map_err(draw_err)?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).mix(0.9);
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| {
                PathElement::new([(x, y), (x + 16, y)], Palette99::pick(i).stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_log_parses() {
        let pts = parse_train_log("0,0.69,0.001\n1,0.5,0.001\n").unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], (1.0, 0.5));
    }

    #[test]
    fn j_series_groups_by_sequence() {
        let text = "J.vid_1.00001 = 0.5\nJ.vid_1.00002 = 0.75\nF.vid_1.00001 = 0.9\nJ.mean = 0.625\n";
        let s = parse_j_series(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s["vid_1"], vec![(1.0, 0.5), (2.0, 0.75)]);
    }
}
