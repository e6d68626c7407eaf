//! SVG figures for study metrics: one chart per metric with scenarios on the
//! x axis and one colored point series per approach, mirroring the layout of
//! operating-characteristic panels.

use smartlab::harness::MetricsRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

/// Render one metric as an SVG document. Rows with NaN metric values (e.g.
/// `prob_optimal` in null scenarios) are skipped.
pub fn render_metric_svg(metric: &str, rows: &[MetricsRow]) -> String {
    let value = |row: &MetricsRow| -> f64 {
        match metric {
            "bias" => row.bias,
            "var" => row.var,
            "mse" => row.mse,
            "coverage" => row.coverage,
            "prob_optimal" => row.prob_optimal,
            _ => f64::NAN,
        }
    };

    // Category per (scenario, n, r) in first-appearance order.
    let mut categories: Vec<String> = Vec::new();
    let mut approaches: Vec<String> = Vec::new();
    for row in rows {
        let cat = category_label(row);
        if !categories.contains(&cat) {
            categories.push(cat);
        }
        let app = row.approach.to_string();
        if !approaches.contains(&app) {
            approaches.push(app);
        }
    }

    let points: Vec<(usize, usize, f64)> = rows
        .iter()
        .filter_map(|row| {
            let v = value(row);
            if v.is_nan() {
                return None;
            }
            let ci = categories.iter().position(|c| *c == category_label(row))?;
            let ai = approaches.iter().position(|a| *a == row.approach.to_string())?;
            Some((ci, ai, v))
        })
        .collect();

    let (mut lo, mut hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, _, v)| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo).abs() < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |cat: usize, approach: usize| -> f64 {
        let slot = plot_w / categories.len().max(1) as f64;
        let dodge = (approach as f64 + 1.0) / (approaches.len() as f64 + 1.0);
        MARGIN_LEFT + slot * (cat as f64 + 0.15 + 0.7 * dodge)
    };
    let y_of = |v: f64| -> f64 { MARGIN_TOP + plot_h * (1.0 - (v - lo) / (hi - lo)) };

    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    ));
    svg.push_str(&format!(
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    ));
    svg.push_str(&format!(
        r#"<text x="{}" y="22" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(metric)
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        y0,
        MARGIN_LEFT + plot_w,
        y0
    ));
    svg.push_str(&format!(
        r#"<line x1="{x0}" y1="{}" x2="{x0}" y2="{y0}" stroke="black"/>"#,
        MARGIN_TOP
    ));

    // Y ticks.
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            r#"<line x1="{}" y1="{y}" x2="{x0}" y2="{y}" stroke="black"/>"#,
            x0 - 5.0
        ));
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            x0 - 8.0,
            y + 4.0,
            v
        ));
        if tick > 0 {
            svg.push_str(&format!(
                r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd" stroke-dasharray="3,3"/>"##,
                MARGIN_LEFT + plot_w
            ));
        }
    }

    // X category labels.
    for (ci, cat) in categories.iter().enumerate() {
        let slot = plot_w / categories.len() as f64;
        let x = MARGIN_LEFT + slot * (ci as f64 + 0.5);
        svg.push_str(&format!(
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            escape(cat)
        ));
    }

    // Points.
    for &(ci, ai, v) in &points {
        svg.push_str(&format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            x_of(ci, ai),
            y_of(v),
            COLORS[ai % COLORS.len()]
        ));
    }

    // Legend: one entry per approach.
    for (ai, app) in approaches.iter().enumerate() {
        let y = MARGIN_TOP + 16.0 * ai as f64;
        let x = MARGIN_LEFT + plot_w + 16.0;
        svg.push_str(&format!(
            r#"<circle cx="{x}" cy="{y}" r="4" fill="{}"/>"#,
            COLORS[ai % COLORS.len()]
        ));
        svg.push_str(&format!(
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 10.0,
            y + 4.0,
            escape(app)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn category_label(row: &MetricsRow) -> String {
    format!("{} n={} r={}", row.scenario, row.n, row.r)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub const METRICS: [&str; 5] = ["bias", "var", "mse", "coverage", "prob_optimal"];
