//! Hand-rolled SVG for reliability diagrams and simple line charts.

use std::fmt::Write as _;
use std::path::Path;

use focal_calib::BinningReport;

use crate::io::{write_atomic, Result};

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn header(out: &mut String, title: &str) {
    let total = SIZE + 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{total}" height="{total}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text class="title" x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let px = MARGIN + f * SIZE;
        let py = MARGIN + SIZE - f * SIZE;
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" text-anchor="middle">{:.2}</text>"#,
            MARGIN + SIZE + 15.0,
            x.0 + f * (x.1 - x.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#,
            MARGIN - 5.0,
            py + 4.0,
            y.0 + f * (y.1 - y.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE + 35.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0,
        escape(y_label)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Per-bin accuracy bars against the diagonal, ECE in the title.
pub fn reliability_svg(report: &BinningReport) -> String {
    let mut out = String::new();
    header(&mut out, &format!("Reliability diagram (ECE = {:.4})", report.ece));
    axes(&mut out, "confidence", "accuracy", (0.0, 1.0), (0.0, 1.0));
    let width = SIZE / report.n_bins as f64;
    for (j, bin) in report.bins.iter().enumerate() {
        let acc = if bin.accuracy.is_finite() { bin.accuracy } else { 0.0 };
        let h = acc * SIZE;
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#1f77b4" stroke="#0b3c5d" data-count="{}"/>"##,
            MARGIN + j as f64 * width,
            MARGIN + SIZE - h,
            width,
            h,
            bin.count
        );
    }
    let _ = writeln!(
        out,
        r##"<line class="diagonal" x1="{MARGIN}" y1="{}" x2="{}" y2="{MARGIN}" stroke="#d62728" stroke-dasharray="6,4"/>"##,
        MARGIN + SIZE,
        MARGIN + SIZE
    );
    out.push_str("</svg>\n");
    out
}

pub fn emit_reliability_svg(report: &BinningReport, path: &Path) -> Result<()> {
    write_atomic(path, reliability_svg(report).as_bytes())
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; derived from the data when `None`.
    pub y_range: Option<(f64, f64)>,
    /// Draw `y = x`.
    pub diagonal: bool,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn line_plot_svg(plot: &LinePlot) -> String {
    let x = range(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = plot
        .y_range
        .unwrap_or_else(|| range(plot.series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let px = |v: f64| MARGIN + (v - x.0) / (x.1 - x.0) * SIZE;
    let py = |v: f64| MARGIN + SIZE - (v.clamp(y.0, y.1) - y.0) / (y.1 - y.0) * SIZE;

    let mut out = String::new();
    header(&mut out, &plot.title);
    axes(&mut out, &plot.x_label, &plot.y_label, x, y);
    if plot.diagonal {
        let lo = x.0.max(y.0);
        let hi = x.1.min(y.1);
        let _ = writeln!(
            out,
            r##"<line class="diagonal" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#999" stroke-dasharray="4,4"/>"##,
            px(lo),
            py(lo),
            px(hi),
            py(hi)
        );
    }
    for (i, s) in plot.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(a, b)| format!("{:.3},{:.3}", px(a), py(b)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * i as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_line_plot(plot: &LinePlot, path: &Path) -> Result<()> {
    write_atomic(path, line_plot_svg(plot).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use focal_calib::metrics::ReliabilityBin;

    fn report(bins: Vec<(usize, f64, f64)>) -> BinningReport {
        let n_bins = bins.len();
        let n = bins.iter().map(|b| b.0).sum();
        let bins: Vec<ReliabilityBin> = bins
            .into_iter()
            .enumerate()
            .map(|(j, (count, accuracy, confidence))| ReliabilityBin {
                lower: j as f64 / n_bins as f64,
                upper: (j + 1) as f64 / n_bins as f64,
                count,
                accuracy,
                confidence,
            })
            .collect();
        BinningReport { n_bins, n, ece: 0.0, bins }
    }

    #[test]
    fn one_bar_per_bin_and_no_nan() {
        let r = report((0..10).map(|j| if j == 3 { (0, 0.0, 0.0) } else { (5, 0.5, 0.45) }).collect());
        let svg = reliability_svg(&r);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 10);
        assert_eq!(svg.matches(r#"class="diagonal""#).count(), 1);
        assert!(!svg.contains("NaN"));
        assert!(svg.contains(r#"height="0.000""#));
        assert!(svg.contains("ECE = 0.0000"));
    }

    #[test]
    fn calibrated_bars_reach_the_diagonal() {
        // accuracy equal to the bin midpoint: the bar top crosses y = x inside its own column
        let r = report((0..4).map(|j| (3, (j as f64 + 0.5) / 4.0, (j as f64 + 0.5) / 4.0)).collect());
        let svg = reliability_svg(&r);
        for (j, bin) in r.bins.iter().enumerate() {
            let top = MARGIN + SIZE - bin.accuracy * SIZE;
            let left = MARGIN + j as f64 * SIZE / 4.0;
            let right = left + SIZE / 4.0;
            // diagonal height at the bar's horizontal extent
            let diag_left = MARGIN + SIZE - (left - MARGIN);
            let diag_right = MARGIN + SIZE - (right - MARGIN);
            assert!(top <= diag_left && top >= diag_right);
            assert!(svg.contains(&format!(r#"y="{top:.3}""#)));
        }
    }

    #[test]
    fn line_plot_has_one_polyline_per_series() {
        let plot = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)], dashed: false },
                Series { label: "b<c".into(), points: vec![(0.0, 0.0), (1.0, f64::NAN)], dashed: true },
            ],
            y_range: None,
            diagonal: true,
        };
        let svg = line_plot_svg(&plot);
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert!(!svg.contains("NaN"));
    }
}
