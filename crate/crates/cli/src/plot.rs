//! Minimal deterministic SVG line plots with error bars.

use std::fmt::Write as _;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub err: Option<Vec<f64>>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Reads `x`, `y` and optionally `err` columns of a CSV, keeping rows whose
/// `filter` column equals the given value. Rows with non-numeric cells are
/// skipped.
pub fn read_series(csv_text: &str, x: &str, y: &str, err: Option<&str>, filter: Option<(&str, &str)>) -> Result<Series, CliError> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::Config(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Config(format!("column `{name}` not in CSV")))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let ie = err.map(col).transpose()?;
    let iff = filter.map(|(c, v)| col(c).map(|i| (i, v))).transpose()?;
    let mut s = Series { x: Vec::new(), y: Vec::new(), err: ie.map(|_| Vec::new()) };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Config(e.to_string()))?;
        if let Some((i, v)) = iff {
            if rec.get(i) != Some(v) {
                continue;
            }
        }
        let parse = |i: usize| rec.get(i).and_then(|c| c.parse::<f64>().ok()).filter(|v| v.is_finite());
        let (Some(xv), Some(yv)) = (parse(ix), parse(iy)) else { continue };
        s.x.push(xv);
        s.y.push(yv);
        if let (Some(i), Some(e)) = (ie, s.err.as_mut()) {
            e.push(parse(i).unwrap_or(0.0));
        }
    }
    if s.x.is_empty() {
        return Err(CliError::Config("no plottable rows".into()));
    }
    Ok(s)
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `y` against `x` with optional symmetric error bars.
pub fn render_svg(s: &Series, x_label: &str, y_label: &str, title: &str) -> String {
    let errs = s.err.clone().unwrap_or_else(|| vec![0.0; s.y.len()]);
    let (x0, x1) = span(s.x.iter().cloned().fold(f64::INFINITY, f64::min), s.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let lo = s.y.iter().zip(&errs).map(|(y, e)| y - e).fold(f64::INFINITY, f64::min);
    let hi = s.y.iter().zip(&errs).map(|(y, e)| y + e).fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = span(lo, hi);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.2}" y="24" font-size="16" text-anchor="middle">{}</text>"#, W / 2.0, esc(title));
    let (bx, by) = (LEFT, H - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{bx:.2},{TOP:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" stroke="black" fill="none"/>"#, W - RIGHT);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xv:.3e}</text>"#, px(xv), by + 16.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{yv:.3e}</text>"#, bx - 4.0, py(yv) + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );

    let mut order: Vec<usize> = (0..s.x.len()).collect();
    order.sort_by(|&a, &b| s.x[a].total_cmp(&s.x[b]));
    let pts: Vec<String> = order.iter().map(|&i| format!("{:.2},{:.2}", px(s.x[i]), py(s.y[i]))).collect();
    let _ = writeln!(out, r#"<polyline points="{}" stroke="steelblue" fill="none"/>"#, pts.join(" "));
    for &i in &order {
        let (cx, cy) = (px(s.x[i]), py(s.y[i]));
        if errs[i] > 0.0 {
            let (a, b) = (py(s.y[i] - errs[i]), py(s.y[i] + errs[i]));
            let _ = writeln!(out, r#"<path d="M{cx:.2},{a:.2} L{cx:.2},{b:.2}" stroke="gray"/>"#);
        }
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="steelblue"/>"#);
    }
    out.push_str("</svg>\n");
    out
}
