//! Minimal SVG line chart for benchmark reports: one series per method,
//! log-scale y, parameter on x. Purely presentational; all tests consume
//! the CSV.

use cgcut_core::{BenchmarkReport, Method};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

pub fn line_chart(report: &BenchmarkReport) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for row in &report.rows {
        if !methods.contains(&row.method) {
            methods.push(row.method);
        }
    }
    let finite: Vec<&cgcut_core::BenchmarkRow> =
        report.rows.iter().filter(|r| r.rel_mse.is_finite() && r.rel_mse > 0.0).collect();
    let (x_min, x_max) = bounds(finite.iter().map(|r| r.param_value));
    let (y_min, y_max) = bounds(finite.iter().map(|r| r.rel_mse.log10()));
    let x_of = |v: f64| {
        if x_max > x_min {
            MARGIN + (v - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN)
        } else {
            WIDTH / 2.0
        }
    };
    let y_of = |v: f64| {
        let lv = v.log10();
        if y_max > y_min {
            HEIGHT - MARGIN - (lv - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN)
        } else {
            HEIGHT / 2.0
        }
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN
    ));
    let param_name = report.rows.first().map(|r| r.param_name).unwrap_or("param");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{param_name}</text>\n",
        WIDTH / 2.0,
        HEIGHT - MARGIN / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\" \
         transform=\"rotate(-90 {0} {1})\">relative MSE (log)</text>\n",
        MARGIN / 3.0,
        HEIGHT / 2.0
    ));
    for (mi, method) in methods.iter().enumerate() {
        let color = COLORS[mi % COLORS.len()];
        let pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.method == *method && r.rel_mse.is_finite() && r.rel_mse > 0.0)
            .map(|r| (x_of(r.param_value), y_of(r.rel_mse)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for (x, y) in &pts {
            svg.push_str(&format!("<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{color}\"/>\n"));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" fill=\"{color}\">{method}</text>\n",
            WIDTH - MARGIN + 6.0,
            MARGIN + 18.0 * mi as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() {
        (0.0, 1.0)
    } else {
        (min, max)
    }
}
