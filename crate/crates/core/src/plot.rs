//! Minimal SVG line charts for metric logs. Output depends only on the input
//! values, so identical logs give byte-identical files.

use std::fmt::Write;

use crate::harness::LogRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (x, y, y_std)
    pub points: Vec<(f64, f64, f64)>,
}

impl Series {
    /// Objective mean ± std against step.
    pub fn objective(label: impl Into<String>, rows: &[LogRow]) -> Self {
        Series {
            label: label.into(),
            points: rows
                .iter()
                .map(|r| (r.step as f64, r.objective_mean, r.objective_std))
                .collect(),
        }
    }

    /// Any optional column against step; rows without a value are skipped.
    pub fn column(
        label: impl Into<String>,
        rows: &[LogRow],
        pick: impl Fn(&LogRow) -> Option<f64>,
    ) -> Self {
        Series {
            label: label.into(),
            points: rows
                .iter()
                .filter_map(|r| pick(r).map(|v| (r.step as f64, v, 0.0)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: String::new(),
            x_label: "step".into(),
            y_label: "objective".into(),
            log_y: false,
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Renders the series as an SVG document. Standard-deviation bands are drawn
/// when any point carries a nonzero std. With `log_y`, nonpositive values are
/// dropped.
pub fn render_svg(series: &[Series], options: &PlotOptions) -> String {
    let transform_y = |v: f64| if options.log_y { v.log10() } else { v };
    let valid = |v: f64| v.is_finite() && (!options.log_y || v > 0.0);

    let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_range = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y, sd) in &s.points {
            for v in [y - sd, y + sd, y] {
                if valid(v) && x.is_finite() {
                    x_range = (x_range.0.min(x), x_range.1.max(x));
                    y_range = (y_range.0.min(transform_y(v)), y_range.1.max(transform_y(v)));
                }
            }
        }
    }
    if !x_range.0.is_finite() {
        x_range = (0.0, 1.0);
        y_range = (0.0, 1.0);
    }
    if x_range.1 - x_range.0 <= 0.0 {
        x_range.1 = x_range.0 + 1.0;
    }
    if y_range.1 - y_range.0 <= 0.0 {
        let pad = y_range.0.abs().max(1.0) * 0.05;
        y_range = (y_range.0 - pad, y_range.1 + pad);
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_range.0) / (x_range.1 - x_range.0) * plot_w;
    let py =
        |y: f64| TOP + plot_h - (transform_y(y) - y_range.0) / (y_range.1 - y_range.0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    if !options.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&options.title)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );

    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let x = px(xv);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{TOP}" stroke="#dddddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 16.0,
            tick_label(xv)
        );
        let yt = y_range.0 + f * (y_range.1 - y_range.0);
        let y = TOP + plot_h - f * plot_h;
        let label = if options.log_y {
            tick_label(10f64.powf(yt))
        } else {
            tick_label(yt)
        };
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            label
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&options.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&options.y_label),
        if options.log_y { " (log)" } else { "" }
    );

    for (idx, s) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let pts: Vec<(f64, f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|&(x, y, _)| x.is_finite() && valid(y))
            .collect();
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper: Vec<String> = pts
                .iter()
                .filter(|p| valid(p.1 + p.2))
                .map(|&(x, y, sd)| format!("{:.2},{:.2}", px(x), py(y + sd)))
                .collect();
            let lower: Vec<String> = pts
                .iter()
                .rev()
                .filter(|p| valid(p.1 - p.2))
                .map(|&(x, y, sd)| format!("{:.2},{:.2}", px(x), py(y - sd)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
        }
        let line: Vec<String> = pts
            .iter()
            .map(|&(x, y, _)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = TOP + 14.0 + idx as f64 * 18.0;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
