//! Report writers: sorted-key JSON, `%.17g` CSV, small SVG plots, content hashes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Git-style blob hash: SHA-256 of `blob <len>\0<content>`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON text with object keys sorted and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    let v = serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

/// C-style `%.17g` formatting.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", strip(mant), sign, exp.abs())
    } else {
        strip(&format!("{:.*}", (16 - exp) as usize, x))
    }
}

pub fn csv_text(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&x| g17(x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, csv_text(header, rows))?;
    Ok(())
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw as a connected line rather than dots.
    pub line: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG plot of the given series; `log_y` plots log10 of positive y values.
pub fn svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().cloned())
        .filter(|p| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0))
        .map(|(x, y)| (x, tf(y)))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * pad, h - 2.0 * pad);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, w / 2.0, h - 15.0, escape(xlabel));
    let ylab = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    let _ = writeln!(s, r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#, h / 2.0, h / 2.0, escape(&ylab));
    for (v, anchor, x, y) in [(x0, "start", pad, h - pad + 16.0), (x1, "end", w - pad, h - pad + 16.0)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{}</text>"#, short(v));
    }
    for (v, y) in [(y0, h - pad), (y1, pad + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{}</text>"#, pad - 4.0, short(v));
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let visible: Vec<(f64, f64)> = ser.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite() && (!log_y || p.1 > 0.0)).map(|&(x, y)| (sx(x), sy(tf(y)))).collect();
        if ser.line && visible.len() > 1 {
            let path: Vec<String> = visible.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        } else {
            for (x, y) in &visible {
                let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#, w - pad - 150.0, pad + 16.0 + 14.0 * i as f64, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Filled contour plot of `values[j][i]` at `(xs[i], ys[j])`, shaded in `bands` levels over [0,1].
pub fn svg_contour(title: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>], bands: usize) -> String {
    let (w, h, pad) = (640.0, 640.0, 60.0);
    let (nx, ny) = (xs.len().max(2), ys.len().max(2));
    let (cw, ch) = ((w - 2.0 * pad) / (nx - 1) as f64, (h - 2.0 * pad) / (ny - 1) as f64);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
    for (j, row) in values.iter().enumerate().take(ny.saturating_sub(1)) {
        for (i, _) in row.iter().enumerate().take(nx.saturating_sub(1)) {
            let cell = [values[j][i], values[j][i + 1], values[j + 1][i], values[j + 1][i + 1]];
            let v = cell.iter().sum::<f64>() / 4.0;
            let band = ((v.clamp(0.0, 1.0) * bands as f64).floor() as usize).min(bands - 1);
            let g = (255.0 * band as f64 / (bands - 1).max(1) as f64).round() as u8;
            let (x, y) = (pad + i as f64 * cw, h - pad - (j + 1) as f64 * ch);
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},255)"/>"#, cw + 0.05, ch + 0.05);
        }
    }
    let _ = writeln!(s, r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - 2.0 * pad, h - 2.0 * pad);
    if let (Some(x0), Some(x1), Some(y0), Some(y1)) = (xs.first(), xs.last(), ys.first(), ys.last()) {
        for (v, anchor, x, y) in [(x0, "start", pad, h - pad + 16.0), (x1, "end", w - pad, h - pad + 16.0)] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{}</text>"#, short(*v));
        }
        for (v, y) in [(y0, h - pad), (y1, pad + 10.0)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{}</text>"#, pad - 4.0, short(*v));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn short(v: f64) -> String {
    format!("{v:.3e}")
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}
