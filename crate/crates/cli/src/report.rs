//! Machine-readable report, event log and the fixed-width summary table.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use semidistill::corpus::CategorySet;
use semidistill::distill::{ComparisonReport, ModelReport, PipelineReport, WeakLabelStats};
use semidistill::eval::{format_p_value, Comparison, ConfusionMatrix, Metrics};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Serialize)]
pub struct ExperimentReport<'a> {
    pub format_version: u32,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub pipeline: &'a PipelineReport,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_confusion(
    dir: &Path,
    name: &str,
    cm: &ConfusionMatrix,
    categories: &CategorySet,
) -> Result<PathBuf> {
    let path = dir.join(format!("confusion_{name}.csv"));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    cm.0.write_csv(categories, "gold\\predicted", file)?;
    Ok(path)
}

/// Append-only JSON-lines log of pipeline stages.
pub struct EventLog {
    out: BufWriter<File>,
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn emit(&mut self, event: &str, mut fields: Value) -> Result<()> {
        if let Value::Object(map) = &mut fields {
            map.insert("event".into(), json!(event));
        }
        serde_json::to_writer(&mut self.out, &fields)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

fn metrics_row(out: &mut String, name: &str, params: Option<usize>, m: &Metrics) {
    let params = params.map_or_else(|| "-".to_owned(), |p| p.to_string());
    let _ = writeln!(
        out,
        "{name:<22} {params:>12} {:>9.4} {:>12.4} {:>9.4}",
        m.macro_f1, m.weighted_f1, m.accuracy
    );
}

fn metrics_header(out: &mut String) {
    let _ = writeln!(
        out,
        "{:<22} {:>12} {:>9} {:>12} {:>9}",
        "model", "params", "macro-F1", "weighted-F1", "accuracy"
    );
    let _ = writeln!(out, "{}", "-".repeat(68));
}

fn comparison_rows(out: &mut String, rows: &[ComparisonReport]) {
    let _ = writeln!(
        out,
        "{:<16} {:<18} {:>12} {:>4} {:>12}",
        "model A", "model B", "chi-square", "dof", "p-value"
    );
    let _ = writeln!(out, "{}", "-".repeat(66));
    for c in rows {
        let stat = if c.test.degenerate {
            "-".to_owned()
        } else {
            format!("{:.2}", c.test.statistic)
        };
        let _ = writeln!(
            out,
            "{:<16} {:<18} {:>12} {:>4} {:>12}",
            c.model_a, c.model_b, stat, c.test.dof, c.p_value_display
        );
    }
}

pub fn weak_label_line(stats: &WeakLabelStats) -> String {
    let mut line = format!(
        "weak labels: {} additional training samples out of {} ({:.1}%) at threshold {}",
        stats.accepted,
        stats.pool_size,
        100.0 * stats.acceptance_rate,
        stats.threshold
    );
    if let Some(acc) = stats.audit_accuracy {
        let _ = write!(
            line,
            "; audit accuracy {acc:.4} on {} accepted",
            stats.audited
        );
    }
    line
}

fn model_row(out: &mut String, m: &ModelReport) {
    metrics_row(out, &m.name, Some(m.param_count), &m.metrics);
}

/// Table of models by macro-F1, weighted-F1 and accuracy, then weak-label
/// counts and the significance tests.
pub fn summary(report: &PipelineReport) -> String {
    let mut out = String::new();
    metrics_header(&mut out);
    model_row(&mut out, &report.teacher);
    model_row(&mut out, &report.plain_student);
    for d in &report.distilled {
        model_row(&mut out, &d.model);
    }
    out.push('\n');
    out.push_str(&weak_label_line(&report.weak_labels));
    out.push_str("\n\n");
    comparison_rows(&mut out, &report.comparisons);
    if let Some(reason) = &report.aborted {
        let _ = write!(out, "\nABORTED: {reason}\n");
    }
    out
}

pub fn metrics_summary(name: &str, params: usize, m: &Metrics) -> String {
    let mut out = String::new();
    metrics_header(&mut out);
    metrics_row(&mut out, name, Some(params), m);
    out
}

pub fn comparison_summary(a: &str, b: &str, c: &Comparison) -> String {
    let mut out = String::new();
    metrics_header(&mut out);
    metrics_row(&mut out, a, None, &c.metrics_a);
    metrics_row(&mut out, b, None, &c.metrics_b);
    out.push('\n');
    let _ = writeln!(out, "paired table (rows: {a}, columns: {b})");
    for row in c.table.0.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>6}")).collect();
        let _ = writeln!(out, "{}", cells.join(""));
    }
    out.push('\n');
    let stat = if c.test.degenerate {
        "degenerate".to_owned()
    } else {
        format!("{:.4}", c.test.statistic)
    };
    let _ = writeln!(
        out,
        "Stuart-Maxwell chi-square {stat}, dof {}, p-value {}",
        c.test.dof,
        format_p_value(c.test.p_value)
    );
    if !c.test.collapsed.is_empty() {
        let _ = writeln!(
            out,
            "collapsed categories (no disagreement): {:?}",
            c.test.collapsed
        );
    }
    out
}
