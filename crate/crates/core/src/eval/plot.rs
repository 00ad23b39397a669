use std::path::Path;

use plotters::prelude::*;

use super::CurveRow;
use crate::error::{Error, Result};

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Encode(format!("plot: {e}"))
}

/// Mean F1 against the degradation parameter, with the undegraded baseline
/// as a dashed horizontal line. Chain rows (no numeric parameter) are
/// placed at positions 1, 2, ... in row order.
pub fn plot_curves(rows: &[CurveRow], path: &Path, title: &str) -> Result<()> {
    let baseline = rows.iter().find(|r| r.label == "none").map(|r| r.mean_f1);
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.label != "none")
        .enumerate()
        .map(|(i, r)| (r.parameter.unwrap_or((i + 1) as f64), r.mean_f1))
        .collect();
    if points.is_empty() {
        return Err(Error::Empty("no curve points to plot".into()));
    }
    let (mut x0, mut x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let pad = ((x1 - x0) * 0.05).max(0.5 * if x1 > x0 { 0.0 } else { 1.0 });
    x0 -= pad;
    x1 += pad;

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(x0..x1, 0.0f64..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(rows.first().map_or("parameter", |r| r.axis.as_str()))
        .y_desc("mean F1")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), BLUE.stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
        .map_err(plot_err)?;
    if let Some(b) = baseline {
        chart
            .draw_series(DashedLineSeries::new([(x0, b), (x1, b)], 6, 4, RED.stroke_width(1)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, p: Option<f64>, f1: f64) -> CurveRow {
        CurveRow {
            axis: "jpeg".into(),
            label: label.into(),
            parameter: p,
            n: 1,
            mean_f1: f1,
            mean_iou: f1,
            digest: String::new(),
        }
    }

    #[test]
    fn writes_svg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.svg");
        let rows = vec![row("none", None, 0.9), row("jpeg:90", Some(90.0), 0.8), row("jpeg:60", Some(60.0), 0.5)];
        plot_curves(&rows, &path, "jpeg").unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline") || svg.contains("path"));

        let single = vec![row("none", None, 0.9), row("JRBN", None, 0.4)];
        plot_curves(&single, &dir.path().join("chain.svg"), "chains").unwrap();
        assert!(plot_curves(&[row("none", None, 0.9)], &path, "x").is_err());
    }
}
