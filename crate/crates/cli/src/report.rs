//! CSV and SVG rendering of memory profiles.
//!
//! Both formats are plain strings assembled with fixed-precision
//! number formatting, so identical inputs produce identical bytes.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

/// One CSV row / one potential bar: a single lag of a single input.
#[derive(Debug, Clone)]
pub struct ProfileRow {
    /// Input label; present in batch mode only.
    pub input: Option<String>,
    pub lag: usize,
    pub estimate_nats: f64,
    pub threshold_nats: f64,
    pub significant: bool,
    pub degenerate_null: bool,
    pub n_samples: usize,
    pub n_distinct_contexts: usize,
}

/// Renders rows as CSV. With `with_input` the label column leads, one
/// block of lags per input.
pub fn render_csv(rows: &[ProfileRow], with_input: bool) -> String {
    let mut out = String::new();
    if with_input {
        out.push_str("input,");
    }
    out.push_str(
        "lag,estimate_nats,estimate_bits,threshold_nats,significant,degenerate_null,n_samples,n_distinct_contexts\n",
    );
    for row in rows {
        if with_input {
            let label = row.input.as_deref().unwrap_or("");
            let _ = write!(out, "{},", csv_escape(label));
        }
        let _ = writeln!(
            out,
            "{},{:.12},{:.12},{:.12},{},{},{},{}",
            row.lag,
            row.estimate_nats,
            row.estimate_nats / LN_2,
            row.threshold_nats,
            row.significant,
            row.degenerate_null,
            row.n_samples,
            row.n_distinct_contexts
        );
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_owned()
    }
}

fn svg_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const MARGIN: f64 = 20.0;
const TITLE_H: f64 = 18.0;
const PLOT_H: f64 = 120.0;
const LABEL_H: f64 = 26.0;
const BAR_SLOT: f64 = 26.0;
const BAR_W: f64 = 18.0;
const GUTTER: f64 = 34.0;
const PANEL_GAP: f64 = 16.0;

/// Renders one bar panel per lag, one bar slot per input label.
/// Insignificant and degenerate lags draw no bar; the slot stays
/// empty so panels stay aligned across inputs.
pub fn render_svg(rows: &[ProfileRow], max_lag: usize, labels: &[String]) -> String {
    let n_panels = max_lag + 1;
    let panel_w = GUTTER + BAR_SLOT * labels.len().max(1) as f64 + 8.0;
    let width = MARGIN * 2.0 + panel_w * n_panels as f64 + PANEL_GAP * (n_panels - 1) as f64;
    let height = MARGIN * 2.0 + TITLE_H + PLOT_H + LABEL_H;

    let drawn_max = rows
        .iter()
        .filter(|r| r.significant && !r.degenerate_null)
        .map(|r| r.estimate_nats)
        .fold(0.0f64, f64::max);
    let scale = if drawn_max > 0.0 { drawn_max } else { 1.0 };

    let label_index = |row: &ProfileRow| -> usize {
        match &row.input {
            Some(name) => labels.iter().position(|l| l == name).unwrap_or(0),
            None => 0,
        }
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.1}\" height=\"{height:.1}\" viewBox=\"0 0 {width:.1} {height:.1}\">"
    );
    let _ = writeln!(
        out,
        "  <rect x=\"0\" y=\"0\" width=\"{width:.1}\" height=\"{height:.1}\" fill=\"#ffffff\"/>"
    );

    for lag in 0..n_panels {
        let px = MARGIN + lag as f64 * (panel_w + PANEL_GAP);
        let top = MARGIN + TITLE_H;
        let baseline = top + PLOT_H;
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">lag {lag}</text>",
            px + GUTTER,
            MARGIN + 12.0
        );
        // Axes and the scale mark at the top of the y-axis.
        let _ = writeln!(
            out,
            "  <line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            px + GUTTER,
            top,
            baseline
        );
        let _ = writeln!(
            out,
            "  <line x1=\"{0:.1}\" y1=\"{2:.1}\" x2=\"{1:.1}\" y2=\"{2:.1}\" stroke=\"#333333\" stroke-width=\"1\"/>",
            px + GUTTER,
            px + panel_w,
            baseline
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"8\">{:.3}</text>",
            px + GUTTER - 3.0,
            top + 8.0,
            scale
        );

        for row in rows.iter().filter(|r| r.lag == lag) {
            let idx = label_index(row);
            let slot_x = px + GUTTER + idx as f64 * BAR_SLOT;
            if row.significant && !row.degenerate_null && row.estimate_nats > 0.0 {
                let h = (row.estimate_nats / scale) * PLOT_H;
                let _ = writeln!(
                    out,
                    "  <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{BAR_W:.1}\" height=\"{:.1}\" fill=\"#4472c4\"><title>{} lag {}: {:.6} nats</title></rect>",
                    slot_x + (BAR_SLOT - BAR_W) / 2.0,
                    baseline - h,
                    h,
                    svg_escape(row.input.as_deref().unwrap_or("input")),
                    lag,
                    row.estimate_nats
                );
            }
            let label = row.input.as_deref().unwrap_or("");
            if !label.is_empty() {
                let short: String = label.chars().take(6).collect();
                let _ = writeln!(
                    out,
                    "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"7\">{}</text>",
                    slot_x + BAR_SLOT / 2.0,
                    baseline + 10.0,
                    svg_escape(&short)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
