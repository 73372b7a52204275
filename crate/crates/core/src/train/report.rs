use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::models::ModelKind;
use crate::train::{EpochRecord, RunResult};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_nonrel,val_rel,val_combined";

/// Per-epoch metrics of one run. Floats use the shortest exact decimal form,
/// so equal histories give byte-identical files.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in history {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.epoch, r.lr, r.train_loss, r.val.non_relational, r.val.relational, r.val.combined
        )
        .expect("writing to a String");
    }
    out
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± std of one accuracy column, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    fn of(values: &[f64]) -> Self {
        let pct: Vec<f64> = values.iter().map(|v| 100.0 * v).collect();
        let (mean, std) = mean_std(&pct);
        ColumnStats { mean, std }
    }
}

impl std::fmt::Display for ColumnStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub kind: ModelKind,
    pub runs: Vec<RunResult>,
    pub non_relational: ColumnStats,
    pub relational: ColumnStats,
    pub combined: ColumnStats,
}

impl ExperimentSummary {
    pub fn from_runs(kind: ModelKind, runs: Vec<RunResult>) -> Self {
        let col = |f: fn(&RunResult) -> f64| ColumnStats::of(&runs.iter().map(f).collect::<Vec<_>>());
        ExperimentSummary {
            kind,
            non_relational: col(|r| r.test.non_relational),
            relational: col(|r| r.test.relational),
            combined: col(|r| r.test.combined),
            runs,
        }
    }

    pub const CSV_HEADER: &'static str = "model,runs,nonrel_mean,nonrel_std,rel_mean,rel_std,combined_mean,combined_std";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
            self.kind.slug(),
            self.runs.len(),
            self.non_relational.mean,
            self.non_relational.std,
            self.relational.mean,
            self.relational.std,
            self.combined.mean,
            self.combined.std
        )
    }

    /// Aligned table in table-row order.
    pub fn table(summaries: &[ExperimentSummary]) -> String {
        let mut rows: Vec<&ExperimentSummary> = summaries.iter().collect();
        rows.sort_by_key(|s| s.kind.table_position());
        let mut out = format!(
            "{:<24} {:>16} {:>16} {:>16}\n",
            "Model", "Non-relational", "Relational", "Combined"
        );
        for s in rows {
            writeln!(
                out,
                "{:<24} {:>16} {:>16} {:>16}",
                s.kind.label(),
                s.non_relational.to_string(),
                s.relational.to_string(),
                s.combined.to_string()
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn csv(summaries: &[ExperimentSummary]) -> String {
        let mut rows: Vec<&ExperimentSummary> = summaries.iter().collect();
        rows.sort_by_key(|s| s.kind.table_position());
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for s in rows {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    }
}
