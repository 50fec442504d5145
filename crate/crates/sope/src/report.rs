//! Report emission: raw and aggregate CSVs, an SVG chart of the sweep, and
//! flat text dumps of oracle tables.
//!
//! Floats are printed with Rust's shortest round-trip formatting (never
//! more than 17 significant digits), so parsing a written CSV recovers the
//! values exactly and identical reports are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::{AggRow, SweepReport};
use crate::tables::SaTable;

/// Raw CSV schema.
pub const RAW_HEADER: &str = "family,n,batch_size,trial,estimate";
/// Aggregate CSV schema.
pub const AGG_HEADER: &str = "family,n,batch_size,bias,variance,mse,mse_ci_lo,mse_ci_hi";

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Renders the raw rows (`family,n,batch_size,trial,estimate`).
pub fn raw_csv(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(RAW_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.family,
            r.n,
            r.batch_size,
            r.trial,
            fmt_f64(r.estimate)
        );
    }
    out
}

/// Renders the aggregates
/// (`family,n,batch_size,bias,variance,mse,mse_ci_lo,mse_ci_hi`).
pub fn aggregate_csv(report: &SweepReport) -> String {
    let mut out = String::new();
    out.push_str(AGG_HEADER);
    out.push('\n');
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            a.family,
            a.n,
            a.batch_size,
            fmt_f64(a.bias),
            fmt_f64(a.variance),
            fmt_f64(a.mse),
            fmt_f64(a.mse_ci_lo),
            fmt_f64(a.mse_ci_hi)
        );
    }
    out
}

/// Flat text dump of a (state, action) table: header `s,a,value`, one row
/// per entry in row-major order.
pub fn sa_table_csv(table: &SaTable) -> String {
    let mut out = String::from("s,a,value\n");
    for (s, a, v) in table.iter() {
        let _ = writeln!(out, "{s},{a},{}", fmt_f64(v));
    }
    out
}

/// Flat text dump of time-indexed tables: header `t,s,a,value`, with t
/// 1-based.
pub fn time_table_csv(tables: &[SaTable]) -> String {
    let mut out = String::from("t,s,a,value\n");
    for (i, table) in tables.iter().enumerate() {
        for (s, a, v) in table.iter() {
            let _ = writeln!(out, "{},{s},{a},{}", i + 1, fmt_f64(v));
        }
    }
    out
}

/// Flat text dump of a per-state vector: header `s,value`.
pub fn state_vector_csv(values: &[f64]) -> String {
    let mut out = String::from("s,value\n");
    for (s, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{s},{}", fmt_f64(*v));
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 42.0;

const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, PartialEq)]
enum Scale {
    Linear,
    Log10,
}

struct Panel {
    title: String,
    scale: Scale,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_L + (v - self.x_min) / span * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let v = match self.scale {
            Scale::Linear => v,
            Scale::Log10 => v.max(self.y_min).log10(),
        };
        let (lo, hi) = match self.scale {
            Scale::Linear => (self.y_min, self.y_max),
            Scale::Log10 => (self.y_min.log10(), self.y_max.log10()),
        };
        let span = (hi - lo).max(1e-12);
        PANEL_H - MARGIN_B - (v - lo) / span * (PANEL_H - MARGIN_T - MARGIN_B)
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the sweep as a static SVG: one row of panels per family
/// (MSE with its confidence band, bias, variance), one series per batch
/// size, spectrum index on the x axis. MSE and variance panels use a log
/// scale when their data allows it.
pub fn render_svg(report: &SweepReport) -> String {
    let mut families: Vec<_> = report.aggregates.iter().map(|a| a.family).collect();
    families.sort();
    families.dedup();
    let mut batches: Vec<_> = report.aggregates.iter().map(|a| a.batch_size).collect();
    batches.sort_unstable();
    batches.dedup();

    let rows = families.len().max(1);
    let width = 3.0 * PANEL_W;
    let height = rows as f64 * PANEL_H;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);

    for (fi, &family) in families.iter().enumerate() {
        let rows_of_family: Vec<&AggRow> =
            report.aggregates.iter().filter(|a| a.family == family).collect();
        let metrics: [(&str, Scale, Box<dyn Fn(&AggRow) -> f64>); 3] = [
            ("mse", Scale::Log10, Box::new(|a: &AggRow| a.mse)),
            ("bias", Scale::Linear, Box::new(|a: &AggRow| a.bias)),
            ("variance", Scale::Log10, Box::new(|a: &AggRow| a.variance)),
        ];
        for (mi, (name, want_scale, value_of)) in metrics.iter().enumerate() {
            let ox = mi as f64 * PANEL_W;
            let oy = fi as f64 * PANEL_H;
            let mut values: Vec<f64> = rows_of_family.iter().map(|a| value_of(a)).collect();
            if *name == "mse" {
                values.extend(rows_of_family.iter().map(|a| a.mse_ci_lo));
                values.extend(rows_of_family.iter().map(|a| a.mse_ci_hi));
            }
            let positive: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
            let scale = if *want_scale == Scale::Log10 && !positive.is_empty() {
                Scale::Log10
            } else {
                Scale::Linear
            };
            let (y_min, y_max) = match scale {
                Scale::Log10 => {
                    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = positive.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi.max(lo * 10.0))
                }
                Scale::Linear => {
                    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
                    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
                    if lo == hi {
                        (lo - 1.0, hi + 1.0)
                    } else {
                        (lo, hi)
                    }
                }
            };
            let x_min = rows_of_family.iter().map(|a| a.n as f64).fold(f64::INFINITY, f64::min);
            let x_max =
                rows_of_family.iter().map(|a| a.n as f64).fold(f64::NEG_INFINITY, f64::max);
            let panel = Panel {
                title: format!("{family} {name}"),
                scale,
                x_min: if x_min.is_finite() { x_min } else { 0.0 },
                x_max: if x_max.is_finite() && x_max > x_min { x_max } else { x_min + 1.0 },
                y_min,
                y_max,
            };

            let _ = writeln!(svg, r#"<g transform="translate({ox},{oy})">"#);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="20" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
                (MARGIN_L + PANEL_W - MARGIN_R) / 2.0,
                escape_xml(&panel.title)
            );
            // Axes.
            let _ = writeln!(
                svg,
                r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black" stroke-width="1"/>
<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black" stroke-width="1"/>"#,
                l = MARGIN_L,
                r = PANEL_W - MARGIN_R,
                t = MARGIN_T,
                b = PANEL_H - MARGIN_B,
            );
            // Extremal tick labels.
            let ylab = |v: f64| {
                if v == 0.0 {
                    "0".to_string()
                } else {
                    format!("{v:.2e}")
                }
            };
            let _ = writeln!(
                svg,
                r#"<text x="{x}" y="{yb}" font-family="sans-serif" font-size="10" text-anchor="end">{lo}</text>
<text x="{x}" y="{yt}" font-family="sans-serif" font-size="10" text-anchor="end">{hi}</text>"#,
                x = MARGIN_L - 4.0,
                yb = PANEL_H - MARGIN_B,
                yt = MARGIN_T + 8.0,
                lo = ylab(panel.y_min),
                hi = ylab(panel.y_max),
            );
            let _ = writeln!(
                svg,
                r#"<text x="{xl}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="middle">{x0}</text>
<text x="{xr}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="middle">{x1}</text>
<text x="{xm}" y="{y2}" font-family="sans-serif" font-size="11" text-anchor="middle">n</text>"#,
                xl = panel.x(panel.x_min),
                xr = panel.x(panel.x_max),
                xm = (MARGIN_L + PANEL_W - MARGIN_R) / 2.0,
                y = PANEL_H - MARGIN_B + 14.0,
                y2 = PANEL_H - MARGIN_B + 30.0,
                x0 = panel.x_min,
                x1 = panel.x_max,
            );

            for (bi, &batch) in batches.iter().enumerate() {
                let color = SERIES_COLORS[bi % SERIES_COLORS.len()];
                let mut series: Vec<&AggRow> =
                    rows_of_family.iter().copied().filter(|a| a.batch_size == batch).collect();
                series.sort_by_key(|a| a.n);
                if series.is_empty() {
                    continue;
                }
                // Confidence band on the MSE panel.
                if *name == "mse" && series.len() > 1 {
                    let mut pts = String::new();
                    for a in &series {
                        let _ = write!(pts, "{},{} ", panel.x(a.n as f64), panel.y(a.mse_ci_hi));
                    }
                    for a in series.iter().rev() {
                        let _ = write!(pts, "{},{} ", panel.x(a.n as f64), panel.y(a.mse_ci_lo));
                    }
                    let _ = writeln!(
                        svg,
                        r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                        pts.trim_end()
                    );
                }
                let mut pts = String::new();
                for a in &series {
                    let _ = write!(pts, "{},{} ", panel.x(a.n as f64), panel.y(value_of(a)));
                }
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.trim_end()
                );
                // Legend (first panel of the row only).
                if mi == 0 {
                    let ly = MARGIN_T + 14.0 * bi as f64 + 4.0;
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{x}" y="{y}" width="10" height="3" fill="{color}"/>
<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="10">m={batch}</text>"#,
                        x = MARGIN_L + 8.0,
                        y = ly,
                        tx = MARGIN_L + 22.0,
                        ty = ly + 4.0,
                    );
                }
            }
            let _ = writeln!(svg, "</g>");
        }
    }
    svg.push_str("</svg>\n");
    svg
}
