use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub acc: f64,
    pub balanced_acc: f64,
    pub macro_f1: f64,
    /// Label space, in the order of the confusion rows and columns.
    pub labels: Vec<u16>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
}

/// Accuracy, balanced accuracy (mean recall over classes present in
/// `y_true`) and macro-F1 (over classes in `y_true ∪ y_pred`).
pub fn classification_metrics(y_true: &[u16], y_pred: &[u16]) -> Result<ClassificationMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Domain(format!(
            "{} labels against {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Domain("no samples to score".into()));
    }
    let labels: Vec<u16> = y_true.iter().chain(y_pred).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let pos = |l: u16| labels.binary_search(&l).expect("label in space");
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[pos(t)][pos(p)] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<usize> = (0..k).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    let balanced_acc =
        present.iter().map(|&c| confusion[c][c] as f64 / support[c] as f64).sum::<f64>() / present.len() as f64;
    let macro_f1 = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let (fp, fn_) = ((predicted[c] - confusion[c][c]) as f64, (support[c] - confusion[c][c]) as f64);
            2.0 * tp / (2.0 * tp + fp + fn_)
        })
        .sum::<f64>()
        / k as f64;
    Ok(ClassificationMetrics {
        acc: correct as f64 / y_true.len() as f64,
        balanced_acc,
        macro_f1,
        labels,
        confusion,
        support,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

pub fn regression_metrics(target: &[f32], pred: &[f32]) -> Result<RegressionMetrics> {
    if target.len() != pred.len() || target.is_empty() {
        return Err(Error::Domain(format!(
            "cannot score {} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    let n = target.len() as f64;
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    for (&t, &p) in target.iter().zip(pred) {
        let e = p as f64 - t as f64;
        abs += e.abs();
        sq += e * e;
    }
    let mse = sq / n;
    Ok(RegressionMetrics {
        mae: abs / n,
        mse,
        rmse: mse.sqrt(),
    })
}
