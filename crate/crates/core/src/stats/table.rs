use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{bootstrap_test, mann_whitney_u, mean, median, Alternative, MwuMethod, SampleSet, TestResult};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl GroupSummary {
    fn of(label: &str, xs: &[f64]) -> Self {
        Self {
            label: label.to_string(),
            n: xs.len(),
            mean: mean(xs),
            median: median(xs),
        }
    }
}

/// One row of a two-group significance table: both tests plus the location
/// of each group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub mann_whitney: TestResult,
    pub bootstrap: TestResult,
    pub a: GroupSummary,
    pub b: GroupSummary,
}

/// Runs both tests on `set`, Bonferroni-corrected by `factor`. The bootstrap
/// alternative is that group `a` has the larger mean.
pub fn compare(set: &SampleSet, iterations: usize, seed: u64, factor: usize) -> Result<ComparisonRow> {
    set.validate()?;
    Ok(ComparisonRow {
        label: set.label.clone(),
        mann_whitney: mann_whitney_u(&set.a, &set.b, MwuMethod::Auto)?.corrected(factor)?,
        bootstrap: bootstrap_test(&set.a, &set.b, iterations, seed, Alternative::Greater)?.corrected(factor)?,
        a: GroupSummary::of(&set.a_label, &set.a),
        b: GroupSummary::of(&set.b_label, &set.b),
    })
}

fn p_cell(p: f64) -> String {
    if p < 1e-4 {
        "< 0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Plain-text table with columns: label, MW p, B p, then mean and median of
/// each group. p-values are the corrected ones; significant cells get a `*`.
pub fn format_comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let (al, bl) = rows
        .first()
        .map(|r| (r.a.label.as_str(), r.b.label.as_str()))
        .unwrap_or(("A", "B"));
    let header = [
        String::new(),
        "MW p".into(),
        "B p".into(),
        format!("{al} mean"),
        format!("{al} median"),
        format!("{bl} mean"),
        format!("{bl} median"),
    ];
    let mut lines = vec![header.to_vec()];
    for r in rows {
        let mark = |t: &TestResult| format!("{}{}", p_cell(t.corrected_p), if t.significant() { "*" } else { "" });
        lines.push(vec![
            r.label.clone(),
            mark(&r.mann_whitney),
            mark(&r.bootstrap),
            format!("{:.2}", 100.0 * r.a.mean),
            format!("{:.2}", 100.0 * r.a.median),
            format!("{:.2}", 100.0 * r.b.mean),
            format!("{:.2}", 100.0 * r.b.median),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    for line in lines {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
