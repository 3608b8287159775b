//! Accuracy metrics over labeled pixels.

use serde::Serialize;

use crate::error::{contract, Result};
use crate::io::{ClassMap, LabelMap};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    /// `NaN` when chance agreement is 1 (see `kappa_defined`).
    pub kappa: f64,
    /// Recall of class `k + 1`; `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    pub n_labeled: usize,
    pub kappa_defined: bool,
}

/// `confusion[t][p]` counts labeled pixels of true class `t + 1` predicted
/// as `p + 1`.
pub fn confusion_matrix(pred: &ClassMap, truth: &LabelMap, classes: usize) -> Result<Vec<Vec<u64>>> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(contract!(
            "evaluate: prediction {}x{} vs truth {}x{}",
            pred.height,
            pred.width,
            truth.height,
            truth.width
        ));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        if t > 0 {
            m[t as usize - 1][p as usize - 1] += 1;
        }
    }
    Ok(m)
}

pub fn evaluate(pred: &ClassMap, truth: &LabelMap) -> Result<Metrics> {
    let classes = pred.labels.iter().chain(&truth.labels).copied().max().unwrap_or(0) as usize;
    let m = confusion_matrix(pred, truth, classes)?;
    let n: u64 = m.iter().flatten().sum();
    if n == 0 {
        return Err(contract!("evaluate: truth has no labeled pixels"));
    }
    let nf = n as f64;
    let correct: u64 = (0..classes).map(|k| m[k][k]).sum();
    let oa = correct as f64 / nf;
    let row = |k: usize| m[k].iter().sum::<u64>();
    let col = |k: usize| m.iter().map(|r| r[k]).sum::<u64>();
    let per_class: Vec<Option<f64>> =
        (0..classes).map(|k| (row(k) > 0).then(|| m[k][k] as f64 / row(k) as f64)).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..classes).map(|k| row(k) as f64 * col(k) as f64).sum::<f64>() / (nf * nf);
    let kappa_defined = 1.0 - pe != 0.0;
    let kappa = if kappa_defined { (oa - pe) / (1.0 - pe) } else { f64::NAN };
    Ok(Metrics { oa, aa, kappa, per_class, n_labeled: n as usize, kappa_defined })
}
