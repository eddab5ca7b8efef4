use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datagen::read_jsonl;
use crate::error::{io_err, Result};
use crate::trainer::LogRecord;

use super::EvalReport;

/// Flat `metric,value` rows, then one `source:<tag>` row per source.
pub fn report_csv(report: &EvalReport) -> String {
    let [[tn, fp], [fn_, tp]] = report.confusion;
    let mut out = String::from("metric,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(out, "{k},{v}");
    };
    row("n", report.n.to_string());
    row("top1", format!("{:.6}", report.top1));
    row("precision", format!("{:.6}", report.precision));
    row("recall", format!("{:.6}", report.recall));
    row("f1", format!("{:.6}", report.f1));
    row("per_source_mean", format!("{:.6}", report.per_source_mean));
    row("tn", tn.to_string());
    row("fp", fp.to_string());
    row("fn", fn_.to_string());
    row("tp", tp.to_string());
    row("parse_failures", report.parse_failures.to_string());
    if let Some(mae) = report.step_mae {
        row("step_mae", format!("{mae:.6}"));
    }
    for (tag, acc) in &report.per_source {
        row(&format!("source:{tag}"), format!("{acc:.6}"));
    }
    out
}

pub fn write_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_csv(report)).map_err(io_err(path))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    read_jsonl(path)
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;

fn polyline(points: &[(f64, f64)], x_max: f64, y_min: f64, y_max: f64, color: &str) -> String {
    let span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let mut pts = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            pts.push(' ');
        }
        let px = PAD + (W - 2.0 * PAD) * x / x_max.max(1.0);
        let py = H - PAD - (H - 2.0 * PAD) * (y - y_min) / span;
        let _ = write!(pts, "{px:.2},{py:.2}");
    }
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{pts}\"/>\n")
}

/// Accuracy (blue, 0..1) and mean reward (red, own range) against step.
pub fn log_to_svg(log: &[LogRecord]) -> String {
    let x_max = log.last().map_or(1.0, |r| r.step as f64);
    let acc: Vec<(f64, f64)> = log.iter().map(|r| (r.step as f64, r.accuracy)).collect();
    let rew: Vec<(f64, f64)> = log
        .iter()
        .filter_map(|r| r.mean_reward.map(|m| (r.step as f64, m)))
        .collect();
    let (r_min, r_max) = rew.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
        (lo.min(*y), hi.max(*y))
    });

    let mut svg =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<path d=\"M{PAD},{PAD} V{y} H{x}\" fill=\"none\" stroke=\"black\"/>",
        y = H - PAD,
        x = W - PAD
    );
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"{}\" font-size=\"12\">step 0</text>",
        H - PAD / 3.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">step {}</text>",
        W - PAD,
        H - PAD / 3.0,
        x_max
    );
    let _ = writeln!(
        svg,
        "<text x=\"{PAD}\" y=\"{}\" font-size=\"12\" fill=\"steelblue\">accuracy</text>",
        PAD / 2.0
    );
    if !acc.is_empty() {
        svg.push_str(&polyline(&acc, x_max, 0.0, 1.0, "steelblue"));
    }
    if !rew.is_empty() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"firebrick\" text-anchor=\"end\">mean reward [{r_min:.3}, {r_max:.3}]</text>",
            W - PAD,
            PAD / 2.0
        );
        svg.push_str(&polyline(&rew, x_max, r_min, r_max, "firebrick"));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(log: &[LogRecord], path: &Path) -> Result<()> {
    fs::write(path, log_to_svg(log)).map_err(io_err(path))
}
