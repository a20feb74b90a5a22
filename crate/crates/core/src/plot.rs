//! Minimal static SVG line charts. Output depends only on the data, so
//! identical inputs give identical files.

use std::fmt::Write;

const PANEL_W: f64 = 720.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
/// Longer series are reduced to per-bucket min/max pairs.
const MAX_POINTS: usize = 2000;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    mag * if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !(lo <= hi) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * hi.abs().max(1.0) {
        let pad = hi.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Keeps the first and last point of each bucket's extremes so peaks and
/// limit cycles survive the reduction.
fn reduce(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let buckets = MAX_POINTS / 2;
    let size = points.len().div_ceil(buckets);
    let mut out = Vec::with_capacity(MAX_POINTS);
    for chunk in points.chunks(size) {
        let lo = chunk
            .iter()
            .enumerate()
            .fold(0, |b, (k, p)| if p.1 < chunk[b].1 { k } else { b });
        let hi = chunk
            .iter()
            .enumerate()
            .fold(0, |b, (k, p)| if p.1 > chunk[b].1 { k } else { b });
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        out.push(chunk[a]);
        if b != a {
            out.push(chunk[b]);
        }
    }
    out
}

fn render_panel(svg: &mut String, panel: &Panel, y0: f64) {
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let all = || panel.series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = range(all().map(|p| p.0));
    let (y_lo, y_hi) = range(all().map(|p| p.1).chain(panel.markers.iter().map(|m| m.y)));
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| y0 + MARGIN_T + ph - (y - y_lo) / (y_hi - y_lo) * ph;

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        y0 + 18.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_L:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        y0 + MARGIN_T
    );
    for (lo, hi, vertical) in [(x_lo, x_hi, true), (y_lo, y_hi, false)] {
        let step = nice_step(hi - lo);
        let mut k = (lo / step).ceil();
        while k * step <= hi + 1e-9 * step {
            let v = k * step;
            if vertical {
                let x = sx(v);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
                    y0 + MARGIN_T,
                    y0 + MARGIN_T + ph,
                    y0 + MARGIN_T + ph + 15.0,
                    fmt_tick(v)
                );
            } else {
                let y = sy(v);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{MARGIN_L:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
                    MARGIN_L + pw,
                    MARGIN_L - 5.0,
                    y + 4.0,
                    fmt_tick(v)
                );
            }
            k += 1.0;
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        y0 + PANEL_H - 8.0,
        esc(&panel.x_label)
    );
    let yc = y0 + MARGIN_T + ph / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{yc:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {yc:.1})">{}</text>"#,
        esc(&panel.y_label)
    );
    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for &(x, y) in reduce(&s.points)
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
        {
            let cmd = if d.is_empty() { "M" } else { " L" };
            let _ = write!(d, "{cmd}{:.2},{:.2}", sx(x), sy(y));
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#
        );
        let ly = y0 + MARGIN_T + 14.0 + 15.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            MARGIN_L + pw - 150.0,
            MARGIN_L + pw - 125.0,
            MARGIN_L + pw - 120.0,
            ly + 4.0,
            esc(&s.name)
        );
    }
    for m in &panel.markers {
        let (x, y) = (sx(m.x), sy(m.y));
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="none" stroke="#000" stroke-width="1.5"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"##,
            x + 6.0,
            y - 6.0,
            esc(&m.label)
        );
    }
}

/// Renders panels stacked vertically into one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let h = PANEL_H * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{h}" viewBox="0 0 {PANEL_W} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        render_panel(&mut svg, p, k as f64 * PANEL_H);
    }
    svg.push_str("</svg>\n");
    svg
}

/// A heatmap cell grid with one value per `(row, column)`; `None` cells are
/// drawn grey.
pub fn heatmap(
    title: &str,
    rows: &[String],
    cols: &[String],
    values: &[Vec<Option<f64>>],
) -> String {
    let cell_w = 110.0;
    let cell_h = 28.0;
    let left = 140.0;
    let top = 110.0;
    let w = left + cell_w * cols.len() as f64 + 20.0;
    let h = top + cell_h * rows.len() as f64 + 20.0;
    let (lo, hi) = range(values.iter().flatten().flatten().copied());
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="20" font-size="14">{}</text>"#,
        esc(title)
    );
    for (c, name) in cols.iter().enumerate() {
        let x = left + cell_w * (c as f64 + 0.5);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="start" transform="rotate(-35 {x:.1} {:.1})">{}</text>"#,
            top - 8.0,
            top - 8.0,
            esc(name)
        );
    }
    for (r, name) in rows.iter().enumerate() {
        let y = top + cell_h * r as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell_h / 2.0 + 4.0,
            esc(name)
        );
        for (c, v) in values.get(r).into_iter().flatten().enumerate() {
            let x = left + cell_w * c as f64;
            let (fill, text) = match v {
                Some(v) => {
                    let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                    let red = (255.0 * (1.0 - f)).round() as u8;
                    let green = (90.0 + 140.0 * f).round() as u8;
                    (format!("#{red:02x}{green:02x}60"), format!("{v:.2}"))
                }
                None => ("#bbbbbb".to_string(), "n/a".to_string()),
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="{fill}" stroke="#fff"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{text}</text>"##,
                x + cell_w / 2.0,
                y + cell_h / 2.0 + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
