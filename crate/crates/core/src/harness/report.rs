//! Results tables and the grouped bar chart.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentResult;
use crate::aggregate::Method;
use crate::classify::ClassifierKind;
use crate::error::{Error, Result};

/// Lowest accuracy drawn on the chart's y axis.
pub const Y_AXIS_FLOOR: f64 = 0.5;

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub k: usize,
    pub classifier: String,
    #[serde(rename = "nP")]
    pub n_patches: usize,
    pub aug1: bool,
    pub repetitions: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub seed: u64,
    /// Empty unless timing was requested, so that files stay reproducible.
    pub seconds: Option<f64>,
}

impl ResultRow {
    pub fn from_result(r: &ExperimentResult, timing: bool) -> Self {
        Self {
            method: r.config.method.to_string(),
            k: r.config.k,
            classifier: r.config.classifier.to_string(),
            n_patches: r.config.n_patches,
            aug1: r.config.aug1,
            repetitions: r.config.repetitions,
            mean_acc: r.mean_acc,
            std_acc: r.std_acc,
            seed: r.config.seed,
            seconds: timing.then_some(r.seconds),
        }
    }
}

pub fn write_results_csv<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "method",
            "k",
            "classifier",
            "nP",
            "aug1",
            "repetitions",
            "mean_acc",
            "std_acc",
            "seed",
            "seconds",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for (i, row) in csv::Reader::from_reader(input).deserialize().enumerate() {
        let row: ResultRow = row.map_err(|e| Error::Data(format!("results row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn method_color(method: &str) -> &'static str {
    match method.parse::<Method>() {
        Ok(Method::Baseline) => "#1f77b4",
        Ok(Method::Mc) => "#e6c229",
        Ok(Method::Ma) => "#2ca02c",
        Ok(Method::Mm) => "#d62728",
        Err(_) => "#7f7f7f",
    }
}

fn method_rank(method: &str) -> usize {
    method
        .parse::<Method>()
        .ok()
        .and_then(|m| Method::ALL.iter().position(|&x| x == m))
        .unwrap_or(Method::ALL.len())
}

fn classifier_rank(c: &str) -> usize {
    match c.parse::<ClassifierKind>() {
        Ok(ClassifierKind::Linear) => 0,
        Ok(ClassifierKind::Rbf) => 1,
        Ok(ClassifierKind::Optimized) => 2,
        Err(_) => 3,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PLOT_HEIGHT: f64 = 300.0;
const BAR_WIDTH: f64 = 18.0;
const GROUP_GAP: f64 = 24.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 30.0;

/// Bars ordered by classifier, then k, then method; one cluster per
/// (classifier, k). Each bar is a `<rect class="bar">`, its ± std whisker a
/// `<line class="whisker">`, the optional baseline a `<line class="baseline">`.
pub fn render_svg(rows: &[ResultRow], baseline_mean: Option<f64>) -> String {
    let mut order: Vec<&ResultRow> = rows.iter().collect();
    order.sort_by(|a, b| {
        (classifier_rank(&a.classifier), &a.classifier, a.k, method_rank(&a.method), &a.method).cmp(&(
            classifier_rank(&b.classifier),
            &b.classifier,
            b.k,
            method_rank(&b.method),
            &b.method,
        ))
    });
    let y_of = |acc: f64| TOP + PLOT_HEIGHT * (1.0 - (acc.clamp(Y_AXIS_FLOOR, 1.0) - Y_AXIS_FLOOR) / (1.0 - Y_AXIS_FLOOR));

    let mut bars = String::new();
    let mut labels = String::new();
    let mut x = LEFT + GROUP_GAP / 2.0;
    let mut group: Option<(&str, usize)> = None;
    let mut group_start = x;
    let close_group = |labels: &mut String, g: Option<(&str, usize)>, start: f64, end: f64| {
        if let Some((c, k)) = g {
            let _ = writeln!(
                labels,
                r#"<text class="group" x="{:.1}" y="{:.1}" text-anchor="middle">{} k={}</text>"#,
                (start + end) / 2.0,
                TOP + PLOT_HEIGHT + 18.0,
                escape(c),
                k
            );
        }
    };
    for row in &order {
        let key = (row.classifier.as_str(), row.k);
        if group != Some(key) {
            if group.is_some() {
                close_group(&mut labels, group, group_start, x);
                x += GROUP_GAP;
            }
            group = Some(key);
            group_start = x;
        }
        let top = y_of(row.mean_acc);
        let _ = writeln!(
            bars,
            r#"<rect class="bar" x="{x:.1}" y="{top:.3}" width="{BAR_WIDTH}" height="{:.3}" fill="{}" data-method="{}" data-k="{}" data-classifier="{}" data-mean="{}" data-std="{}"/>"#,
            TOP + PLOT_HEIGHT - top,
            method_color(&row.method),
            escape(&row.method),
            row.k,
            escape(&row.classifier),
            row.mean_acc,
            row.std_acc
        );
        let cx = x + BAR_WIDTH / 2.0;
        let _ = writeln!(
            bars,
            r##"<line class="whisker" x1="{cx:.1}" x2="{cx:.1}" y1="{:.3}" y2="{:.3}" stroke="#000" data-low="{}" data-high="{}"/>"##,
            y_of(row.mean_acc - row.std_acc),
            y_of(row.mean_acc + row.std_acc),
            row.mean_acc - row.std_acc,
            row.mean_acc + row.std_acc
        );
        x += BAR_WIDTH;
    }
    close_group(&mut labels, group, group_start, x);
    let width = x + GROUP_GAP / 2.0 + 20.0;
    let height = TOP + PLOT_HEIGHT + 50.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" data-y-min="{Y_AXIS_FLOOR}" data-y-max="1">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=5 {
        let acc = Y_AXIS_FLOOR + i as f64 * 0.1;
        let y = y_of(acc);
        let _ = writeln!(
            svg,
            r##"<line class="tick" x1="{:.1}" x2="{LEFT:.1}" y1="{y:.3}" y2="{y:.3}" stroke="#000"/><text x="{:.1}" y="{:.3}" text-anchor="end">{acc:.1}</text>"##,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r##"<line class="axis" x1="{LEFT:.1}" x2="{LEFT:.1}" y1="{TOP:.1}" y2="{:.1}" stroke="#000"/>"##,
        TOP + PLOT_HEIGHT
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">mean accuracy</text>"#,
        TOP + PLOT_HEIGHT / 2.0,
        TOP + PLOT_HEIGHT / 2.0
    );
    svg.push_str(&bars);
    svg.push_str(&labels);
    if let Some(b) = baseline_mean {
        let y = y_of(b);
        let _ = writeln!(
            svg,
            r##"<line class="baseline" x1="{LEFT:.1}" x2="{:.1}" y1="{y:.3}" y2="{y:.3}" stroke="#1f77b4" stroke-dasharray="6 3" data-value="{b}"/>"##,
            width - 20.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `results.csv` and `report.svg` into `out_dir`.
pub fn emit_report(rows: &[ResultRow], baseline_mean: Option<f64>, out_dir: &Path) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(Error::Data("no results to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let files = ReportFiles {
        csv: out_dir.join("results.csv"),
        svg: out_dir.join("report.svg"),
    };
    let f = std::fs::File::create(&files.csv).map_err(|e| Error::from(e).in_file(&files.csv))?;
    write_results_csv(std::io::BufWriter::new(f), rows)?;
    std::fs::write(&files.svg, render_svg(rows, baseline_mean)).map_err(|e| Error::from(e).in_file(&files.svg))?;
    Ok(files)
}
