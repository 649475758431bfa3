use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ClassificationMetrics, RegressionMetrics};
use super::probe::AttachMode;
use crate::error::{read_json, write_file, write_json, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMetrics {
    pub index: String,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub horizon: usize,
    pub per_index: Vec<IndexMetrics>,
    pub overall: RegressionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub mode: AttachMode,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastMetrics>,
    pub excluded_classes: Vec<u16>,
    pub skipped: usize,
}

impl MetricsReport {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k},{v}");
        };
        row("task", self.task.clone());
        row("mode", self.mode.to_string());
        row("seed", self.seed.to_string());
        row("train_samples", self.train_samples.to_string());
        row("test_samples", self.test_samples.to_string());
        if let Some(c) = &self.classification {
            row("acc", format!("{:?}", c.acc));
            row("balanced_acc", format!("{:?}", c.balanced_acc));
            row("macro_f1", format!("{:?}", c.macro_f1));
            for (l, n) in c.labels.iter().zip(&c.support) {
                row(&format!("support_{l}"), n.to_string());
            }
        }
        if let Some(f) = &self.forecast {
            row("horizon", f.horizon.to_string());
            for m in &f.per_index {
                row(&format!("mae_{}", m.index), format!("{:?}", m.mae));
                row(&format!("mse_{}", m.index), format!("{:?}", m.mse));
                row(&format!("rmse_{}", m.index), format!("{:?}", m.rmse));
            }
            row("mae", format!("{:?}", f.overall.mae));
            row("mse", format!("{:?}", f.overall.mse));
            row("rmse", format!("{:?}", f.overall.rmse));
        }
        if !self.excluded_classes.is_empty() {
            let ex: Vec<String> = self.excluded_classes.iter().map(u16::to_string).collect();
            row("excluded_classes", ex.join(";"));
        }
        row("skipped", self.skipped.to_string());
        s
    }

    /// Confusion matrix with a header row of predicted labels.
    pub fn confusion_csv(&self) -> Option<String> {
        let c = self.classification.as_ref()?;
        let mut s = String::from("true\\pred");
        for l in &c.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in c.labels.iter().zip(&c.confusion) {
            let _ = write!(s, "{l}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        Some(s)
    }

    /// Write `<stem>.json`, `<stem>.csv` and, for classification,
    /// `<stem>_confusion.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_json(&dir.join(format!("{stem}.json")), self)?;
        write_file(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        if let Some(c) = self.confusion_csv() {
            write_file(&dir.join(format!("{stem}_confusion.csv")), c.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Ranking score: balanced accuracy (higher is better) or negated MAE.
    fn score(&self) -> f64 {
        match (&self.classification, &self.forecast) {
            (Some(c), _) => c.balanced_acc,
            (None, Some(f)) => -f.overall.mae,
            (None, None) => f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub run: String,
    pub task: String,
    pub mode: AttachMode,
    pub acc: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
}

/// Rank runs within each task (best first, ties by run name); tasks are
/// listed alphabetically.
pub fn compare_runs(runs: &[(String, MetricsReport)]) -> Vec<RankRow> {
    let mut order: Vec<&(String, MetricsReport)> = runs.iter().collect();
    order.sort_by(|a, b| {
        a.1.task
            .cmp(&b.1.task)
            .then(b.1.score().total_cmp(&a.1.score()))
            .then(a.0.cmp(&b.0))
    });
    let mut rows = Vec::with_capacity(order.len());
    let mut rank = 0;
    let mut last_task: Option<&str> = None;
    for (name, r) in order {
        if last_task != Some(r.task.as_str()) {
            rank = 0;
            last_task = Some(r.task.as_str());
        }
        rank += 1;
        let c = r.classification.as_ref();
        let f = r.forecast.as_ref().map(|f| &f.overall);
        rows.push(RankRow {
            rank,
            run: name.clone(),
            task: r.task.clone(),
            mode: r.mode,
            acc: c.map(|c| c.acc),
            balanced_acc: c.map(|c| c.balanced_acc),
            macro_f1: c.map(|c| c.macro_f1),
            mae: f.map(|f| f.mae),
            mse: f.map(|f| f.mse),
            rmse: f.map(|f| f.rmse),
        });
    }
    rows
}

pub fn ranking_csv(rows: &[RankRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("task,rank,run,mode,acc,balanced_acc,macro_f1,mae,mse,rmse\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.task,
            r.rank,
            r.run,
            r.mode,
            opt(r.acc),
            opt(r.balanced_acc),
            opt(r.macro_f1),
            opt(r.mae),
            opt(r.mse),
            opt(r.rmse)
        );
    }
    s
}
