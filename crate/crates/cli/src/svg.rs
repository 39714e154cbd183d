//! Self-contained SVG line charts of a fit trace.

use std::fmt::Write;

use cubepose::config::ExperimentConfig;
use cubepose::optim::TraceRow;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 70.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn panel(out: &mut String, top: f64, label: &str, xs: &[f64], ys: &[f64], reference: Option<f64>) {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let x_max = xs.last().copied().unwrap_or(0.0).max(1.0);
    let mut y_max = ys.iter().copied().fold(0.0f64, f64::max);
    if let Some(r) = reference {
        y_max = y_max.max(r);
    }
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let px = |x: f64| MARGIN_L + plot_w * x / x_max;
    let py = |y: f64| top + PANEL_H * (1.0 - y / y_max);

    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#888"/>"##
    );
    for i in 0..=4 {
        let y = y_max * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.2}</text>"##,
            MARGIN_L - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
        WIDTH - MARGIN_R,
        top + PANEL_H + 16.0,
        x_max as u64
    );
    let _ = writeln!(
        out,
        r##"<text x="{MARGIN_L}" y="{:.1}" font-size="13">{}</text>"##,
        top - 8.0,
        escape(label)
    );
    if let Some(r) = reference {
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c33" stroke-dasharray="4 3"/>"##,
            py(r),
            MARGIN_L + plot_w,
            py(r)
        );
    }
    let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
        pts.join(" ")
    );
}

/// Loss and ADD(-S) against iteration, with the accuracy threshold dashed.
pub fn trace_chart(title: &str, rows: &[TraceRow], threshold: f64, cfg: &ExperimentConfig) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.iter as f64).collect();
    let loss: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let add: Vec<f64> = rows.iter().map(|r| r.add_vs_true).collect();
    let height = MARGIN_T + 2.0 * PANEL_H + GAP + 40.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, "<!--\n{}-->", cfg.echo_lines("").replace("--", "- -"));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN_L}" y="20" font-size="15">{}</text>"#, escape(title));
    panel(&mut out, MARGIN_T, "loss (mm)", &xs, &loss, None);
    panel(&mut out, MARGIN_T + PANEL_H + GAP, "ADD(-S) vs true model (mm); dashed: threshold", &xs, &add, Some(threshold));
    out.push_str("</svg>\n");
    out
}
