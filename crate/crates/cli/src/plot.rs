//! Minimal standalone SVG line charts.

use std::fmt::Write as _;

use crate::csvio::Meta;

const COLOURS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PANEL_W: f64 = 340.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 58.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

/// One labelled curve per panel, sharing an episode axis.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub episode: Vec<f64>,
    pub panels: [Vec<f64>; 3],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders the panels side by side. `meta` is embedded as a comment.
pub fn render_panels(series: &[Series], titles: &[&str; 3], meta: &Meta) -> String {
    let width = 3.0 * PANEL_W;
    let height = PANEL_H + 24.0 * series.len() as f64 + 10.0;
    let mut s = String::new();
    writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"##
    )
    .unwrap();
    writeln!(s, "<!-- {} -->", escape(&meta.line())).unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##).unwrap();

    let (x_lo, x_hi) = bounds(series.iter().flat_map(|c| c.episode.iter().copied()));
    for (p, title) in titles.iter().enumerate() {
        let ox = p as f64 * PANEL_W;
        let (y_lo, y_hi) = bounds(series.iter().flat_map(|c| c.panels[p].iter().copied()));
        let (x0, x1) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
        let (y0, y1) = (MARGIN_T, PANEL_H - MARGIN_B);
        let sx = |x: f64| x0 + (x - x_lo) / (x_hi - x_lo) * (x1 - x0);
        let sy = |y: f64| y1 - (y - y_lo) / (y_hi - y_lo) * (y1 - y0);

        writeln!(s, r##"<g class="panel" id="panel-{p}">"##).unwrap();
        writeln!(
            s,
            r##"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"##,
            (x0 + x1) / 2.0,
            escape(title)
        )
        .unwrap();
        writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"##,
            x1 - x0,
            y1 - y0
        )
        .unwrap();
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let yv = y_lo + f * (y_hi - y_lo);
            let xv = x_lo + f * (x_hi - x_lo);
            writeln!(
                s,
                r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                sy(yv) + 4.0,
                tick_label(yv),
                y = sy(yv)
            )
            .unwrap();
            writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="middle">{}</text>"##,
                sx(xv),
                y1 + 14.0,
                tick_label(xv)
            )
            .unwrap();
        }
        writeln!(
            s,
            r##"<text x="{}" y="{}" text-anchor="middle">episode</text>"##,
            (x0 + x1) / 2.0,
            y1 + 30.0
        )
        .unwrap();
        for (c, curve) in series.iter().enumerate() {
            let pts: Vec<String> = curve
                .episode
                .iter()
                .zip(&curve.panels[p])
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            writeln!(
                s,
                r##"<polyline fill="none" stroke="{}" stroke-width="1.6" points="{}"/>"##,
                COLOURS[c % COLOURS.len()],
                pts.join(" ")
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }

    writeln!(s, r##"<g class="legend">"##).unwrap();
    for (c, curve) in series.iter().enumerate() {
        let y = PANEL_H + 10.0 + 24.0 * c as f64;
        writeln!(
            s,
            r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text>"##,
            MARGIN_L,
            MARGIN_L + 28.0,
            COLOURS[c % COLOURS.len()],
            MARGIN_L + 36.0,
            y + 4.0,
            escape(&curve.label)
        )
        .unwrap();
    }
    writeln!(s, "</g>\n</svg>").unwrap();
    s
}
