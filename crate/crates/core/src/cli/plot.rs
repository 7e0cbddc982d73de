//! Dependency-free SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Longest polyline written per series; longer series are decimated.
pub const MAX_POINTS: usize = 2000;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlotLabels {
    pub title: String,
    pub x: String,
    pub y: String,
}

impl PlotLabels {
    pub fn new(title: &str, x: &str, y: &str) -> Self {
        PlotLabels {
            title: title.into(),
            x: x.into(),
            y: y.into(),
        }
    }
}

/// Keeps every `ceil(n / MAX_POINTS)`-th point plus the last one.
fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS - 1);
    let mut out: Vec<_> = points.iter().step_by(stride).copied().collect();
    if (points.len() - 1) % stride != 0 {
        out.push(points[points.len() - 1]);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Renders the series as a standalone SVG document. Non-finite points
/// are dropped; at least one finite point is required.
pub fn render_svg(series: &[Series], labels: &PlotLabels) -> Result<String> {
    let cleaned: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts: Vec<_> = s
                .points
                .iter()
                .copied()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            (s.label.clone(), decimate(&pts))
        })
        .collect();
    let all = cleaned.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::InvalidParams("plot needs at least one finite point".into()));
    }
    let ((x0, x1), (y0, y1)) = (padded_range(x0, x1), padded_range(y0, y1));
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.3e}</text>"#,
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 18.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{ml}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3e}</text>"#,
            ml - 5.0,
            ml - 7.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        ml + pw / 2.0,
        escape(&labels.title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        HEIGHT - 8.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&labels.y)
    );
    for (i, (label, pts)) in cleaned.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        match pts.len() {
            0 => {}
            1 => {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(pts[0].0),
                    sy(pts[0].1)
                );
            }
            _ => {
                let mut path = String::new();
                for &(x, y) in pts {
                    let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
                }
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.trim_end()
                );
            }
        }
        if cleaned.len() > 1 {
            let ly = mt + 15.0 + 16.0 * i as f64;
            let lx = ml + pw - 150.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 20.0,
                lx + 25.0,
                ly + 4.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(series: &[Series], labels: &PlotLabels, path: &Path) -> Result<()> {
    let svg = render_svg(series, labels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_and_legend() {
        let one = render_svg(&[Series::new("e", vec![(0.0, 1.0)])], &PlotLabels::default()).unwrap();
        assert_eq!(one.matches("<circle").count(), 1);
        assert!(one.starts_with("<svg") && one.trim_end().ends_with("</svg>"));
        let two = render_svg(
            &[
                Series::new("a", vec![(0.0, 1.0), (1.0, 2.0)]),
                Series::new("b & c", vec![(0.0, 0.0), (1.0, 3.0)]),
            ],
            &PlotLabels::new("t", "x", "y"),
        )
        .unwrap();
        assert_eq!(two.matches("<polyline").count(), 2);
        assert!(two.contains(">a</text>") && two.contains("b &amp; c"));
    }

    #[test]
    fn decimation_bounds_size() {
        let pts: Vec<_> = (0..10_000).map(|i| (i as f64, (i as f64).sin())).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        emit_plot(&[Series::new("s", pts)], &PlotLabels::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.len() < 2_000_000);
        let poly = text.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let n = poly.matches(',').count();
        assert!(n <= MAX_POINTS && n > MAX_POINTS / 2, "{n}");
        assert!(render_svg(&[Series::new("x", vec![])], &PlotLabels::default()).is_err());
    }
}
