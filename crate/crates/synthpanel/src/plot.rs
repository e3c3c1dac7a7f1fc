//! Actual-versus-synthetic series as a CSV table and an SVG chart.

use std::fmt::Write as _;

use crate::report::{fmt_num, EstimatorReport, SeriesRow};

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from("period,actual,synthetic,gap\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.period, fmt_num(r.actual), fmt_num(r.synthetic), fmt_num(r.gap)));
    }
    out
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Two polylines (actual, synthetic) and one vertical `<line>` at the first
/// treated period. Axes and ticks are drawn with `<path>` so the line count
/// stays at one.
pub fn series_svg(estimate: &EstimatorReport, treated_unit: &str, first_treated_period: i32) -> String {
    let rows = &estimate.series;
    let (mut y_lo, mut y_hi) = rows
        .iter()
        .flat_map(|r| [r.actual, r.synthetic])
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;
    let first = rows.first().map_or(first_treated_period - 1, |r| r.period);
    let last = rows.last().map_or(first_treated_period, |r| r.period).max(first + 1);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |p: f64| LEFT + (p - first as f64) / (last - first) as f64 * plot_w;
    let y = |v: f64| TOP + (y_hi - v) / (y_hi - y_lo) * plot_h;
    let points = |pick: fn(&SeriesRow) -> f64| {
        rows.iter()
            .map(|r| format!("{:.2},{:.2}", x(r.period as f64), y(pick(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} and synthetic {} ({})</text>"#,
        WIDTH / 2.0,
        escape(treated_unit),
        escape(treated_unit),
        escape(&estimate.estimator)
    );
    let (x0, y0, x1, y1) = (LEFT, TOP, LEFT + plot_w, TOP + plot_h);
    let _ = writeln!(svg, r#"<path d="M{x0},{y0} V{y1} H{x1}" fill="none" stroke="black"/>"#);

    let mut ticks = String::new();
    for r in rows {
        let px = x(r.period as f64);
        let _ = write!(ticks, "M{px:.2},{y1} v5 ");
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y1 + 20.0, r.period);
    }
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let py = y(v);
        let _ = write!(ticks, "M{x0},{py:.2} h-5 ");
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, tick_label(v));
    }
    let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="black"/>"#, ticks.trim_end());

    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#, points(|r| r.actual));
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2" stroke-dasharray="6,4"/>"#,
        points(|r| r.synthetic)
    );
    let mx = x(first_treated_period as f64);
    let _ = writeln!(
        svg,
        r#"<line x1="{mx:.2}" y1="{y0}" x2="{mx:.2}" y2="{y1}" stroke="firebrick" stroke-dasharray="3,3"/>"#
    );

    let lx = x1 - 170.0;
    let _ = writeln!(svg, r#"<path d="M{lx},{} h25" stroke="black" stroke-width="2"/>"#, y0 + 12.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 32.0, y0 + 16.0, escape(treated_unit));
    let _ = writeln!(
        svg,
        r#"<path d="M{lx},{} h25" stroke="steelblue" stroke-width="2" stroke-dasharray="6,4"/>"#,
        y0 + 30.0
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}">synthetic {}</text>"#, lx + 32.0, y0 + 34.0, escape(treated_unit));
    svg.push_str("</svg>\n");
    svg
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
