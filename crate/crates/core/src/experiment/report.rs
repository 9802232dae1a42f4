use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{write_json, CellRecord, GridResult};
use super::{ExperimentConfig, PROBE_DIR, REPORT_DIR};
use crate::error::{Error, Result};
use crate::stats::{self, ComparisonRow, SampleSet, DEFAULT_BOOTSTRAP_ITERATIONS};

/// A reported number with the keys of the cells it was computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub value: Option<f64>,
    pub cells: Vec<String>,
}

impl TableCell {
    fn mean_of(records: &[&CellRecord], f: impl Fn(&CellRecord) -> Option<f64>) -> Self {
        let mut values = Vec::new();
        let mut cells = Vec::new();
        for r in records {
            if let Some(v) = f(r) {
                values.push(v);
                cells.push(r.key.clone());
            }
        }
        Self {
            value: (!values.is_empty()).then(|| stats::mean(&values)),
            cells,
        }
    }

    fn csv(&self, scale: f64) -> String {
        self.value.map(|v| format!("{:.2}", v * scale)).unwrap_or_default()
    }
}

/// Task accuracy per evaluation set for one representation width: the
/// baseline (no adversaries) and each adversary count's change from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub dim: usize,
    pub adversaries: Vec<usize>,
    /// (set name, baseline accuracy, deltas in the order of `adversaries`).
    pub rows: Vec<(String, TableCell, Vec<TableCell>)>,
    /// Mean delta over sets, per adversary count.
    pub average: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub dims: Vec<usize>,
    pub adversaries: Vec<usize>,
    /// Mean relearned bias (max probe accuracy) per [dim][adversary count].
    pub bias_relearn: Vec<Vec<TableCell>>,
    pub significance: Vec<ComparisonRow>,
    /// Cell keys behind each significance row, group a then group b.
    pub significance_cells: Vec<(Vec<String>, Vec<String>)>,
    pub deltas: Vec<DeltaTable>,
    pub failures: usize,
}

/// Reads every cell record under `dir/probes`.
pub fn load_grid_result(dir: &Path) -> Result<GridResult> {
    let probes = dir.join(PROBE_DIR);
    let entries = fs::read_dir(&probes).map_err(|e| Error::io(&probes, e))?;
    let mut result = GridResult::default();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&probes, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let record: CellRecord = serde_json::from_str(&text)?;
        result.cells.push(record);
    }
    result.cells.sort_by_key(|r| r.cell);
    let failures = dir.join(REPORT_DIR).join("failures.json");
    if let Ok(text) = fs::read_to_string(&failures) {
        result.failures = serde_json::from_str(&text)?;
    }
    Ok(result)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the report tables from a grid output directory and writes them to
/// `dir/reports`:
///
/// - `bias_relearn.csv`: mean relearned bias (%), rows are widths, columns
///   adversary counts; missing cells are left empty.
/// - `cells.csv`: one line per cell with its key and checkpoint id.
/// - `significance.csv` / `significance.txt`: per width, the smallest vs the
///   second-smallest positive adversary count, Bonferroni-corrected by the
///   number of widths compared.
/// - `deltas_k<dim>.csv`: task accuracy per evaluation set against the
///   no-adversary baseline, with an `Average` row.
/// - `summary.json`: all of the above with the cell keys behind each number.
pub fn report(dir: &Path) -> Result<ReportSummary> {
    let grid = load_grid_result(dir)?;
    if grid.cells.is_empty() {
        return Err(Error::Config(format!("no completed cells under {}", dir.display())));
    }
    let (iterations, seed) = match ExperimentConfig::from_path(&dir.join("config.json")) {
        Ok(c) => (c.bootstrap_iterations, c.grid.seeds.first().copied().unwrap_or(0)),
        Err(_) => (DEFAULT_BOOTSTRAP_ITERATIONS, 0),
    };
    let reports = dir.join(REPORT_DIR);
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;

    let dims: Vec<usize> = grid.cells.iter().map(|r| r.cell.dim).collect::<BTreeSet<_>>().into_iter().collect();
    let advs: Vec<usize> = grid
        .cells
        .iter()
        .map(|r| r.cell.adversaries)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_cell: BTreeMap<(usize, usize), Vec<&CellRecord>> = BTreeMap::new();
    for r in &grid.cells {
        by_cell.entry((r.cell.dim, r.cell.adversaries)).or_default().push(r);
    }
    let group = |k: usize, n: usize| by_cell.get(&(k, n)).cloned().unwrap_or_default();

    // Relearned bias.
    let bias: Vec<Vec<TableCell>> = dims
        .iter()
        .map(|&k| {
            advs.iter()
                .map(|&n| TableCell::mean_of(&group(k, n), |r| Some(r.probe.max_accuracy)))
                .collect()
        })
        .collect();
    let mut csv = String::from("dim");
    for n in &advs {
        let _ = write!(csv, ",n={n}");
    }
    csv.push('\n');
    for (k, row) in dims.iter().zip(&bias) {
        let _ = write!(csv, "{k}");
        for c in row {
            let _ = write!(csv, ",{}", c.csv(100.0));
        }
        csv.push('\n');
    }
    write_text(&reports.join("bias_relearn.csv"), &csv)?;

    let mut cells_csv = String::from(
        "dim,adversaries,seed,cell_key,checkpoint_id,max_probe_accuracy,mean_probe_accuracy,final_adversary_accuracy,final_max_spectator_accuracy,best_dev_accuracy\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in &grid.cells {
        let _ = writeln!(
            cells_csv,
            "{},{},{},{},{},{:.6},{:.6},{},{},{:.6}",
            r.cell.dim,
            r.cell.adversaries,
            r.cell.seed,
            r.key,
            r.checkpoint_id,
            r.probe.max_accuracy,
            r.probe.mean_accuracy(),
            opt(r.train.final_adversary_accuracy),
            opt(r.train.final_max_spectator_accuracy),
            r.train.best_dev_accuracy
        );
    }
    write_text(&reports.join("cells.csv"), &cells_csv)?;

    // Significance: smallest vs second-smallest positive adversary count.
    let positive: Vec<usize> = advs.iter().copied().filter(|&n| n > 0).collect();
    let mut significance = Vec::new();
    let mut significance_cells = Vec::new();
    if let [a_n, b_n, ..] = positive[..] {
        let comparable: Vec<usize> = dims
            .iter()
            .copied()
            .filter(|&k| !group(k, a_n).is_empty() && !group(k, b_n).is_empty())
            .collect();
        for &k in &comparable {
            let (ga, gb) = (group(k, a_n), group(k, b_n));
            let set = SampleSet {
                label: k.to_string(),
                a_label: format!("{a_n} adv"),
                b_label: format!("{b_n} adv"),
                a: ga.iter().map(|r| r.probe.max_accuracy).collect(),
                b: gb.iter().map(|r| r.probe.max_accuracy).collect(),
            };
            significance.push(stats::compare(&set, iterations, seed, comparable.len())?);
            significance_cells.push((
                ga.iter().map(|r| r.key.clone()).collect(),
                gb.iter().map(|r| r.key.clone()).collect(),
            ));
        }
    }
    let mut sig_csv = String::from("dim,mw_p,b_p,a_label,a_mean,a_median,b_label,b_mean,b_median\n");
    for r in &significance {
        let _ = writeln!(
            sig_csv,
            "{},{:.6},{:.6},{},{:.4},{:.4},{},{:.4},{:.4}",
            r.label,
            r.mann_whitney.corrected_p,
            r.bootstrap.corrected_p,
            r.a.label,
            100.0 * r.a.mean,
            100.0 * r.a.median,
            r.b.label,
            100.0 * r.b.mean,
            100.0 * r.b.median
        );
    }
    write_text(&reports.join("significance.csv"), &sig_csv)?;
    write_text(&reports.join("significance.txt"), &stats::format_comparison_table(&significance))?;

    // Per-set task accuracy deltas against the baseline.
    let names: Vec<String> = {
        let mut seen = Vec::new();
        for r in &grid.cells {
            for e in &r.evaluations {
                if !seen.contains(&e.name) {
                    seen.push(e.name.clone());
                }
            }
        }
        seen
    };
    let treated: Vec<usize> = advs.iter().copied().filter(|&n| n > 0).collect();
    let mut deltas = Vec::new();
    for &k in &dims {
        let accuracy = |n: usize, name: &str| {
            TableCell::mean_of(&group(k, n), |r| r.evaluation(name).and_then(|e| e.accuracy))
        };
        let mut rows = Vec::new();
        for name in &names {
            let base = accuracy(0, name);
            let row: Vec<TableCell> = treated
                .iter()
                .map(|&n| {
                    let t = accuracy(n, name);
                    let value = match (t.value, base.value) {
                        (Some(t), Some(b)) => Some(t - b),
                        _ => None,
                    };
                    let mut cells = base.cells.clone();
                    cells.extend(t.cells);
                    TableCell { value, cells }
                })
                .collect();
            rows.push((name.clone(), base, row));
        }
        let average: Vec<Option<f64>> = (0..treated.len())
            .map(|j| {
                let vals: Vec<f64> = rows.iter().filter_map(|(_, _, d)| d[j].value).collect();
                (!vals.is_empty()).then(|| stats::mean(&vals))
            })
            .collect();
        let mut text = String::from("set,baseline");
        for n in &treated {
            let _ = write!(text, ",n={n}");
        }
        text.push('\n');
        for (name, base, row) in &rows {
            let _ = write!(text, "{name},{}", base.csv(100.0));
            for c in row {
                let _ = write!(text, ",{}", c.value.map(|v| format!("{:+.2}", 100.0 * v)).unwrap_or_default());
            }
            text.push('\n');
        }
        text.push_str("Average,");
        for a in &average {
            let _ = write!(text, ",{}", a.map(|v| format!("{:+.2}", 100.0 * v)).unwrap_or_default());
        }
        text.push('\n');
        write_text(&reports.join(format!("deltas_k{k}.csv")), &text)?;
        deltas.push(DeltaTable {
            dim: k,
            adversaries: treated.clone(),
            rows,
            average,
        });
    }

    let summary = ReportSummary {
        dims,
        adversaries: advs,
        bias_relearn: bias,
        significance,
        significance_cells,
        deltas,
        failures: grid.failures.len(),
    };
    write_json(&reports.join("summary.json"), &summary)?;
    Ok(summary)
}
