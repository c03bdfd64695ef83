//! Minimal SVG line charts. Presentational only.

use std::fmt::Write;

use crate::experiments::{CalibrationTable, MaeCurve};
use crate::trainer::TrainTrace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            dashed: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; derived from the data when `None`.
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter().copied());
        let (x0, x1) = finite_range(all().map(|p| p.0));
        let (y0, y1) = self
            .y_range
            .unwrap_or_else(|| finite_range(all().map(|p| p.1)));
        let plot_w = WIDTH - 2.0 * MARGIN;
        let plot_h = HEIGHT - 2.0 * MARGIN;
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                HEIGHT - MARGIN + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 6.0,
                sy(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="5,4""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                pts.join(" ")
            );
            let ly = MARGIN + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
                WIDTH - MARGIN - 150.0,
                WIDTH - MARGIN - 130.0,
                WIDTH - MARGIN - 124.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || (v.fract() == 0.0 && v.abs() < 1e6) {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

pub fn mae_chart(curve: &MaeCurve) -> LineChart {
    let pts = |v: &[f64]| -> Vec<(f64, f64)> {
        curve
            .sample_sizes
            .iter()
            .zip(v)
            .map(|(&n, &m)| (n as f64, m))
            .collect()
    };
    let upper: Vec<f64> = curve
        .mae
        .iter()
        .zip(&curve.sd)
        .map(|(m, s)| m + s)
        .collect();
    let mut band = Series::new("mean + sd", pts(&upper));
    band.dashed = true;
    LineChart {
        title: "Mini-bag proportion MAE".into(),
        x_label: "sample size".into(),
        y_label: "MAE".into(),
        series: vec![Series::new("MAE", pts(&curve.mae)), band],
        y_range: None,
    }
}

/// Training loss and train/test accuracy over epochs.
pub fn trace_chart(title: &str, trace: &TrainTrace) -> LineChart {
    let col = |f: fn(&crate::trainer::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        trace
            .records
            .iter()
            .map(|r| (r.epoch as f64, f(r)))
            .collect()
    };
    let mut val = Series::new("val loss", col(|r| r.val_prop_loss));
    val.dashed = true;
    LineChart {
        title: title.into(),
        x_label: "epoch".into(),
        y_label: "loss / accuracy".into(),
        series: vec![
            Series::new("train loss", col(|r| r.train_prop_loss)),
            val,
            Series::new("train acc", col(|r| r.train_acc)),
            Series::new("test acc", col(|r| r.test_acc)),
        ],
        y_range: None,
    }
}

/// Reliability diagram: per-bin accuracy against mean confidence with the
/// diagonal for reference.
pub fn reliability_chart(title: &str, tables: &[(&str, &CalibrationTable)]) -> LineChart {
    let mut diag = Series::new("perfect", vec![(0.0, 0.0), (1.0, 1.0)]);
    diag.dashed = true;
    let mut series = vec![diag];
    for (label, t) in tables {
        series.push(Series::new(
            *label,
            t.occupied()
                .map(|b| (b.mean_confidence, b.accuracy))
                .collect(),
        ));
    }
    LineChart {
        title: title.into(),
        x_label: "confidence".into(),
        y_label: "accuracy".into(),
        series,
        y_range: Some((0.0, 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_and_stable() {
        let chart = LineChart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::new(
                "s",
                vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)],
            )],
            y_range: None,
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
        assert_eq!(svg, chart.to_svg());
    }

    #[test]
    fn empty_chart_still_renders() {
        let chart = LineChart {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            series: vec![],
            y_range: None,
        };
        assert!(chart.to_svg().contains("</svg>"));
    }
}
