//! Deterministic report rendering: summary JSON, CSV tables, per-episode
//! JSONL, and a dependency-free SVG bar chart.
//!
//! Nothing here reads clocks, hostnames, or paths, so every rendering is a
//! pure function of its inputs and reruns are byte-identical.

use serde::Serialize;

use crate::error::Result;
use crate::harness::MetricsReport;

/// Pretty-printed JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// One row of a comparative table: the scalar metrics of one arm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    pub label: String,
    pub planner: String,
    pub eval_episodes: u64,
    pub success_rate: f64,
    pub mean_interventions: f64,
    pub cov_interventions_percent: Option<f64>,
    pub relevant_object_removals: u64,
}

impl From<&MetricsReport> for ArmSummary {
    fn from(report: &MetricsReport) -> Self {
        ArmSummary {
            label: report.label.clone(),
            planner: report.planner.to_string(),
            eval_episodes: report.eval_episodes,
            success_rate: report.success_rate,
            mean_interventions: report.mean_interventions,
            cov_interventions_percent: report.cov_interventions_percent,
            relevant_object_removals: report.relevant_object_removals,
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Render a CSV table with a header row; fields are escaped per RFC 4180.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(
        &header
            .iter()
            .map(|h| csv_escape(h))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in rows {
        out.push_str(
            &row.iter()
                .map(|f| csv_escape(f))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}

/// The comparative arms table as CSV.
pub fn arms_csv(arms: &[ArmSummary]) -> String {
    let rows: Vec<Vec<String>> = arms
        .iter()
        .map(|arm| {
            vec![
                arm.label.clone(),
                arm.planner.clone(),
                arm.eval_episodes.to_string(),
                format!("{:.4}", arm.success_rate),
                format!("{:.4}", arm.mean_interventions),
                arm.cov_interventions_percent
                    .map(|c| format!("{c:.2}"))
                    .unwrap_or_default(),
                arm.relevant_object_removals.to_string(),
            ]
        })
        .collect();
    csv_table(
        &[
            "label",
            "planner",
            "eval_episodes",
            "success_rate",
            "mean_interventions",
            "cov_interventions_percent",
            "relevant_object_removals",
        ],
        &rows,
    )
}

/// Per-episode log as line-delimited JSON.
pub fn episode_log_jsonl(report: &MetricsReport) -> Result<String> {
    let mut out = String::new();
    for episode in &report.per_episode {
        out.push_str(&serde_json::to_string(episode)?);
        out.push('\n');
    }
    Ok(out)
}

/// One panel of a bar chart.
#[derive(Clone, Debug)]
pub struct ChartPanel {
    pub heading: String,
    /// Top of the y axis; values are clipped to it.
    pub y_max: f64,
    pub bars: Vec<(String, f64)>,
}

const BAR_WIDTH: f64 = 46.0;
const BAR_GAP: f64 = 22.0;
const PANEL_PAD: f64 = 54.0;
const PLOT_HEIGHT: f64 = 220.0;
const PLOT_TOP: f64 = 64.0;
const AXIS_EXTRA: f64 = 40.0;

/// Render side-by-side bar-chart panels as a standalone SVG document.
/// Purely textual and deterministic; no fonts or assets are referenced
/// beyond generic families.
pub fn bar_chart_svg(title: &str, panels: &[ChartPanel]) -> String {
    let panel_width = |panel: &ChartPanel| {
        AXIS_EXTRA + panel.bars.len() as f64 * (BAR_WIDTH + BAR_GAP) + PANEL_PAD
    };
    let width: f64 = panels.iter().map(panel_width).sum::<f64>().max(320.0);
    let height = PLOT_TOP + PLOT_HEIGHT + 70.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"28\" font-size=\"17\" font-weight=\"bold\" fill=\"#1d2733\" \
         text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        xml_escape(title)
    ));

    let mut x0 = 0.0;
    for panel in panels {
        let pw = panel_width(panel);
        let y_max = if panel.y_max > 0.0 { panel.y_max } else { 1.0 };
        let base_y = PLOT_TOP + PLOT_HEIGHT;
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"52\" font-size=\"13\" fill=\"#44505e\" text-anchor=\"middle\">{}</text>\n",
            x0 + pw / 2.0,
            xml_escape(&panel.heading)
        ));
        // Gridlines and y labels at quarters.
        for q in 0..=4 {
            let frac = q as f64 / 4.0;
            let y = base_y - frac * PLOT_HEIGHT;
            svg.push_str(&format!(
                "  <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#d8dee6\" stroke-width=\"1\"/>\n",
                x0 + AXIS_EXTRA,
                x0 + pw - PANEL_PAD / 2.0,
            ));
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" fill=\"#6b7683\" text-anchor=\"end\">{}</text>\n",
                x0 + AXIS_EXTRA - 6.0,
                y + 3.5,
                trim_number(y_max * frac)
            ));
        }
        for (i, (label, value)) in panel.bars.iter().enumerate() {
            let clipped = value.clamp(0.0, y_max);
            let bar_h = clipped / y_max * PLOT_HEIGHT;
            let x = x0 + AXIS_EXTRA + BAR_GAP / 2.0 + i as f64 * (BAR_WIDTH + BAR_GAP);
            svg.push_str(&format!(
                "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{BAR_WIDTH:.1}\" height=\"{bar_h:.1}\" fill=\"#4878a8\"/>\n",
                base_y - bar_h
            ));
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#1d2733\" text-anchor=\"middle\">{}</text>\n",
                x + BAR_WIDTH / 2.0,
                base_y - bar_h - 5.0,
                trim_number(*value)
            ));
            svg.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#44505e\" text-anchor=\"middle\">{}</text>\n",
                x + BAR_WIDTH / 2.0,
                base_y + 16.0,
                xml_escape(label)
            ));
        }
        svg.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{base_y:.1}\" x2=\"{:.1}\" y2=\"{base_y:.1}\" stroke=\"#44505e\" stroke-width=\"1.5\"/>\n",
            x0 + AXIS_EXTRA,
            x0 + pw - PANEL_PAD / 2.0,
        ));
        x0 += pw;
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Fixed-precision number label with trailing zeros trimmed, so charts say
/// "3" and "0.78" rather than "3.000" and "0.780".
fn trim_number(value: f64) -> String {
    let mut s = format!("{value:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}
