//! Minimal SVG emission for loss curves and metric bars. Hand-rolled on
//! purpose: the plots are diagnostic artifacts, not a charting surface, and
//! an SVG string keeps the binary free of font/raster dependencies.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn finite_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per named series, shared axes, min/max labels. Non-finite
/// points break the line rather than poisoning the scale.
pub fn line_chart(title: &str, series: &[(String, Vec<f64>)]) -> Result<String> {
    if series.is_empty() || series.iter().all(|(_, v)| v.is_empty()) {
        return Err(Error::invalid("line chart needs at least one nonempty series"));
    }
    let (lo, hi) = finite_bounds(series.iter().flat_map(|(_, v)| v.iter().copied()));
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let px = |i: usize| MARGIN + (W - 2.0 * MARGIN) * i as f64 / (n - 1) as f64;
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut svg = header(title);
    write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{lb}\" text-anchor=\"start\">0</text>\n\
         <text x=\"{r}\" y=\"{lb}\" text-anchor=\"end\">{}</text>\n\
         <text x=\"{lx}\" y=\"{b}\" text-anchor=\"end\">{lo:.4}</text>\n\
         <text x=\"{lx}\" y=\"{t}\" text-anchor=\"end\">{hi:.4}</text>\n",
        n - 1,
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        lb = H - MARGIN + 16.0,
        lx = MARGIN - 6.0,
    )
    .ok();

    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut segment = String::new();
        let flush = |seg: &mut String, svg: &mut String| {
            // a segment needs two points to draw; each point appends one space
            if seg.matches(' ').count() >= 2 {
                write!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    seg.trim_end()
                )
                .ok();
            }
            seg.clear();
        };
        for (i, &v) in values.iter().enumerate() {
            if v.is_finite() {
                write!(segment, "{:.2},{:.2} ", px(i), py(v)).ok();
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            W - MARGIN + 6.0,
            MARGIN + 16.0 * k as f64,
            escape(name)
        )
        .ok();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Horizontal value labels over vertical bars, zero-anchored when all values
/// share a sign.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> Result<String> {
    if bars.is_empty() {
        return Err(Error::invalid("bar chart needs at least one bar"));
    }
    let (lo, hi) = finite_bounds(bars.iter().map(|(_, v)| *v));
    let lo = lo.min(0.0);
    let hi = hi.max(0.0);
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let slot = (W - 2.0 * MARGIN) / bars.len() as f64;

    let mut svg = header(title);
    write!(
        svg,
        "<line x1=\"{m}\" y1=\"{z}\" x2=\"{r}\" y2=\"{z}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = W - MARGIN,
        z = py(0.0)
    )
    .ok();
    for (k, (name, v)) in bars.iter().enumerate() {
        let x = MARGIN + slot * k as f64 + slot * 0.15;
        let (y0, y1) = if *v >= 0.0 { (py(*v), py(0.0)) } else { (py(0.0), py(*v)) };
        write!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n\
             <text x=\"{cx:.2}\" y=\"{ty:.2}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{cx:.2}\" y=\"{vy:.2}\" text-anchor=\"middle\">{v:.4}</text>\n",
            slot * 0.7,
            (y1 - y0).max(0.5),
            COLORS[k % COLORS.len()],
            escape(name),
            cx = x + slot * 0.35,
            ty = H - MARGIN + 16.0,
            vy = y0 - 4.0,
        )
        .ok();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
