//! Deterministic SVG line charts of sweep and horizon results.
//!
//! Rows spanning several horizons are drawn against the horizon, one series
//! per `(method, Γ, Δ)`; otherwise bounds are drawn against `Γ`, one series
//! per method and `Δ`, with the nominal and behavior values as dotted
//! reference lines.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::experiments::{BoundResult, Method};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

const NOMINAL_COLOR: &str = "#2ca02c";
const BEHAVIOR_COLOR: &str = "#d62728";

#[derive(Debug, Clone)]
struct Series {
    label: String,
    color: String,
    dash: Option<&'static str>,
    points: Vec<(f64, f64)>,
}

/// Blue ramp from light (`t = 0`) to dark (`t = 1`).
fn ramp(t: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(158.0, 8.0), lerp(202.0, 48.0), lerp(225.0, 107.0))
}

fn ramp_at(i: usize, n: usize) -> String {
    ramp(if n <= 1 { 1.0 } else { i as f64 / (n - 1) as f64 })
}

/// Total-order key for `f64` values that are known to be finite.
fn key(v: f64) -> i64 {
    let bits = v.to_bits() as i64;
    if bits < 0 { bits ^ i64::MAX } else { bits }
}

fn delta_label(d: Option<f64>) -> String {
    match d {
        Some(d) if d >= 1e5 => "Δ=∞".into(),
        Some(d) => format!("Δ={d}"),
        None => String::new(),
    }
}

fn gamma_series(rows: &[BoundResult]) -> Vec<Series> {
    let mut groups: BTreeMap<(u8, Option<i64>), (Method, Option<f64>, Vec<(f64, f64)>)> = BTreeMap::new();
    for r in rows {
        let order = match r.method {
            Method::Fqe => 0,
            Method::Naive => 1,
            Method::Robust => 2,
            Method::SingleStep => 3,
        };
        groups
            .entry((order, r.delta.map(key)))
            .or_insert_with(|| (r.method, r.delta, Vec::new()))
            .2
            .push((r.gamma, r.bound));
    }
    let n_robust = groups.keys().filter(|(o, _)| *o >= 2).count();
    let mut out = Vec::new();
    let mut robust_idx = 0;
    for (_, (method, delta, mut points)) in groups {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (color, dash) = match method {
            Method::Fqe => ("#000000".to_string(), None),
            Method::Naive => ("#7f7f7f".to_string(), Some("6 3")),
            _ => {
                robust_idx += 1;
                (ramp_at(robust_idx - 1, n_robust), None)
            }
        };
        let label = match delta {
            Some(_) => format!("{method} {}", delta_label(delta)),
            None => method.to_string(),
        };
        out.push(Series {
            label,
            color,
            dash,
            points,
        });
    }
    let mut xs: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    let (nominal, behavior) = (rows[0].nominal_value, rows[0].behavior_value);
    out.push(Series {
        label: "nominal".into(),
        color: NOMINAL_COLOR.into(),
        dash: Some("2 3"),
        points: vec![(lo, nominal), (hi, nominal)],
    });
    out.push(Series {
        label: "behavior".into(),
        color: BEHAVIOR_COLOR.into(),
        dash: Some("2 3"),
        points: vec![(lo, behavior), (hi, behavior)],
    });
    out
}

fn horizon_series(rows: &[BoundResult]) -> Vec<Series> {
    let mut groups: BTreeMap<(i64, Option<i64>, String), (String, Vec<(f64, f64)>)> = BTreeMap::new();
    let mut nominal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut behavior: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows {
        let label = format!("{} Γ={} {}", r.method, r.gamma, delta_label(r.delta)).trim_end().to_string();
        groups
            .entry((key(r.gamma), r.delta.map(key), r.method.to_string()))
            .or_insert_with(|| (label, Vec::new()))
            .1
            .push((r.horizon as f64, r.bound));
        nominal.insert(r.horizon, r.nominal_value);
        behavior.insert(r.horizon, r.behavior_value);
    }
    let n = groups.len();
    let mut out: Vec<Series> = groups
        .into_values()
        .enumerate()
        .map(|(i, (label, mut points))| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label,
                color: ramp_at(i, n),
                dash: None,
                points,
            }
        })
        .collect();
    for (label, color, values) in [("nominal", NOMINAL_COLOR, nominal), ("behavior", BEHAVIOR_COLOR, behavior)] {
        out.push(Series {
            label: label.into(),
            color: color.into(),
            dash: Some("2 3"),
            points: values.into_iter().map(|(t, v)| (t as f64, v)).collect(),
        });
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = (lo.abs() * 0.1).max(0.5);
        (lo - pad, hi + pad)
    }
}

/// Round tick positions inside `[lo, hi]`, spaced by 1, 2 or 5 times a
/// power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / TICKS as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders result rows as an SVG document. Fails on empty input or
/// non-finite values.
pub fn render_svg(rows: &[BoundResult]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Malformed("no rows to plot".into()));
    }
    let finite = rows.iter().all(|r| {
        [r.gamma, r.bound, r.nominal_value, r.behavior_value]
            .iter()
            .all(|v| v.is_finite())
    });
    if !finite {
        return Err(Error::Malformed("non-finite value in rows".into()));
    }
    let first_h = rows[0].horizon;
    let horizon_mode = rows.iter().any(|r| r.horizon != first_h);
    let series = if horizon_mode {
        horizon_series(rows)
    } else {
        gamma_series(rows)
    };

    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    // Writing to a String cannot fail.
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let title = format!("{}{}", rows[0].env, if horizon_mode { ": bound vs horizon" } else { ": bound vs Γ" });
    let _ = writeln!(w, r#"<text x="{LEFT}" y="18" font-size="13">{}</text>"#, escape(&title));
    let _ = writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for xv in ticks(x0, x1) {
        let px = sx(xv);
        let _ = writeln!(
            w,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 4.0,
            TOP + ph + 16.0,
            num(xv)
        );
    }
    for yv in ticks(y0, y1) {
        let py = sy(yv);
        let _ = writeln!(
            w,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            py + 4.0,
            num(yv)
        );
    }
    let xlabel = if horizon_mode { "horizon" } else { "Γ" };
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">lower bound</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let dash = s.dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        if s.points.len() > 1 {
            let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(
                w,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{dash} points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
        } else if let Some(&(x, y)) = s.points.first() {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), s.color);
        }
        let ly = TOP + 10.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.6"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            s.color,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
