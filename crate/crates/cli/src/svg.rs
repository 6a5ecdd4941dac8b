//! Minimal deterministic SVG charts: line panels and a ternary heat grid.
//!
//! Numbers are printed with fixed precision and nothing time- or
//! environment-dependent is embedded, so identical data give identical bytes.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 36.0;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; derived from the data when absent.
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
}

fn draw_panel(out: &mut String, p: &Panel, top: f64) {
    let x0 = MARGIN_L;
    let x1 = PANEL_W - MARGIN_R;
    let y0 = top + MARGIN_T;
    let y1 = top + PANEL_H - MARGIN_B;
    let (xmin, xmax) = range(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)));
    let (ymin, ymax) = p
        .y_range
        .unwrap_or_else(|| range(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.1))));
    let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    let sy = |y: f64| y1 - (y - ymin) / (ymax - ymin) * (y1 - y0);

    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-weight="bold">{}</text>"#,
        x0,
        top + 16.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = ymin + f * (ymax - ymin);
        let xv = xmin + f * (xmax - xmin);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            sy(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            y1 + 14.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        y1 + 30.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&p.y_label)
    );
    for (i, s) in p.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|q| q.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = y0 + 12.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            x1 + 8.0,
            x1 + 24.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            x1 + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Panels stacked vertically.
pub fn line_panels(panels: &[Panel]) -> String {
    let mut out = String::new();
    header(&mut out, PANEL_W, PANEL_H * panels.len().max(1) as f64);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Linear blue→yellow ramp for `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(48.0, 253.0), lerp(18.0, 231.0), lerp(120.0, 37.0))
}

/// Three-task mixtures on a ternary plot, one coloured cell per grid point.
///
/// `points` holds `(lambda, value)`; `highlight` marks indices drawn with a
/// black outline (e.g. the argmax).
pub fn ternary_heat(title: &str, labels: [&str; 3], resolution: usize, points: &[(Vec<f64>, f64)], highlight: &[usize]) -> String {
    let (w, h) = (520.0, 470.0);
    let side = 400.0;
    let (ox, oy) = (60.0, 420.0);
    // Vertex j of the triangle is where lambda_j = 1.
    let verts = [(ox, oy), (ox + side, oy), (ox + side / 2.0, oy - side * 3f64.sqrt() / 2.0)];
    let project = |l: &[f64]| {
        let x = l[0] * verts[0].0 + l[1] * verts[1].0 + l[2] * verts[2].0;
        let y = l[0] * verts[0].1 + l[1] * verts[1].1 + l[2] * verts[2].1;
        (x, y)
    };
    let (lo, hi) = range(points.iter().map(|p| p.1));
    let radius = side / resolution as f64 / 2.0 * 0.9;

    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(out, r#"<text x="{ox:.1}" y="20" font-weight="bold">{}</text>"#, escape(title));
    let tri: Vec<String> = verts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(out, r#"<polygon points="{}" fill="none" stroke="black"/>"#, tri.join(" "));
    let anchors = [("end", -6.0, 14.0), ("start", 6.0, 14.0), ("middle", 0.0, -8.0)];
    for (j, (anchor, dx, dy)) in anchors.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
            verts[j].0 + dx,
            verts[j].1 + dy,
            escape(labels[j])
        );
    }
    for (i, (l, v)) in points.iter().enumerate() {
        let (x, y) = project(l);
        let fill = if v.is_finite() { ramp((v - lo) / (hi - lo)) } else { "#cccccc".to_string() };
        let stroke = if highlight.contains(&i) { r#" stroke="black" stroke-width="2""# } else { "" };
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{fill}"{stroke}/>"#);
    }
    // Colour bar.
    for s in 0..=10 {
        let t = s as f64 / 10.0;
        let y = 380.0 - 30.0 * s as f64;
        let _ = writeln!(out, r#"<rect x="470" y="{y:.1}" width="16" height="30" fill="{}"/>"#, ramp(t));
    }
    let _ = writeln!(out, r#"<text x="490" y="420">{}</text>"#, tick(lo));
    let _ = writeln!(out, r#"<text x="490" y="96">{}</text>"#, tick(hi));
    out.push_str("</svg>\n");
    out
}
