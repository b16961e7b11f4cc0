//! Static SVG figures: sweep heatmaps and simple line plots.

use std::fmt::Write as _;

use crate::formats::{fmt_key, SweepTable};

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue-white-red ramp on `[-1, 1]`.
fn diverging(u: f64) -> String {
    let u = u.clamp(-1.0, 1.0);
    let (r, g, b) = if u < 0.0 {
        let s = 1.0 + u;
        (s, s, 1.0)
    } else {
        let s = 1.0 - u;
        (1.0, s, s)
    };
    format!("rgb({},{},{})", (r * 255.0).round(), (g * 255.0).round(), (b * 255.0).round())
}

/// Cells are coloured by their offset from `center` (e.g. 0 for a %-change table, the
/// awake value for raw tables). Missing cells are drawn grey.
pub fn heatmap(table: &SweepTable, title: &str, center: f64) -> String {
    let cell = 60.0;
    let (left, top) = (70.0, 50.0);
    let cols = table.b_a.len() as f64;
    let rows = table.lambda_v.len() as f64;
    let width = left + cols * cell + 20.0;
    let height = top + rows * cell + 50.0;
    let span = table
        .values
        .iter()
        .flatten()
        .flatten()
        .map(|v| (v - center).abs())
        .fold(0.0, f64::max)
        .max(1e-12);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, esc(title));
    for (i, lv) in table.lambda_v.iter().enumerate() {
        let y = top + i as f64 * cell;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 8.0, y + cell / 2.0 + 4.0, fmt_key(*lv));
        for (j, _) in table.b_a.iter().enumerate() {
            let x = left + j as f64 * cell;
            let (fill, label) = match table.values[i][j] {
                Some(v) => (diverging((v - center) / span), format!("{v:.3}")),
                None => ("rgb(200,200,200)".to_string(), String::new()),
            };
            let _ = writeln!(s, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + cell / 2.0, y + cell / 2.0 + 4.0);
        }
    }
    for (j, ba) in table.b_a.iter().enumerate() {
        let x = left + j as f64 * cell + cell / 2.0;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top + rows * cell + 18.0, fmt_key(*ba));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">b_a</text>"#, left + cols * cell / 2.0, height - 8.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">lambda_v</text>"#, top + rows * cell / 2.0, top + rows * cell / 2.0);
    s.push_str("</svg>\n");
    s
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

pub fn line_plot(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h) = (520.0, 360.0);
    let (l, r, t, b) = (60.0, 130.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x0 < x1) {
        x1 = x0 + 1.0;
    }
    if !(y0 < y1) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let sy = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (w - r + l) / 2.0, esc(title));
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, w - l - r, h - t - b);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, sx(v), h - b + 16.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, l - 4.0, sy(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (w - r + l) / 2.0, h - 12.0, esc(x_label));
    let _ = writeln!(s, r#"<text x="14" y="{0}" transform="rotate(-90 14 {0})" text-anchor="middle">{1}</text>"#, (h - b + t) / 2.0, esc(y_label));
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = t + 14.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - r + 10.0, w - r + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - r + 34.0, ly + 4.0, esc(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}
