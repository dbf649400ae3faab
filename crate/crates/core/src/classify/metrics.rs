//! Confusion matrix, overall/average accuracy and Cohen's kappa.

use std::io::Write;

use crate::error::{Error, Result};
use crate::polsar::LabelMap;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_classes: usize,
    /// `confusion[t][p]`: pixels of true class `t + 1` predicted as `p + 1`.
    pub confusion: Vec<Vec<u64>>,
    /// Recall per class; `None` for classes absent from the truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub total: u64,
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
}

impl EvalReport {
    /// Metrics of a square confusion matrix (rows = truth, columns = prediction).
    ///
    /// AA averages recall over classes that occur in the truth. Kappa uses the
    /// chance agreement `Pₑ = Σ_c row_c·col_c / total²`; when `Pₑ = 1` it is
    /// defined as 1 for perfect agreement and 0 otherwise.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|r| r.len() != c) {
            return Err(Error::shape("confusion matrix must be square"));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::NoLabeledPixels);
        }
        let rows: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<u64> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let n = total as f64;
        let oa = correct as f64 / n;
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|i| (rows[i] > 0).then(|| confusion[i][i] as f64 / rows[i] as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        let pe = rows.iter().zip(&cols).map(|(&r, &k)| r as f64 * k as f64).sum::<f64>() / (n * n);
        let kappa = if pe < 1.0 {
            (oa - pe) / (1.0 - pe)
        } else if oa == 1.0 {
            1.0
        } else {
            0.0
        };
        Ok(EvalReport {
            num_classes: c,
            confusion,
            per_class_accuracy: per_class,
            total,
            overall_accuracy: oa,
            average_accuracy: aa,
            kappa,
        })
    }

    /// Plain-text report with one `"key": value` pair per line.
    pub fn write_report<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{{")?;
        writeln!(w, "  \"num_classes\": {},", self.num_classes)?;
        writeln!(w, "  \"total\": {},", self.total)?;
        writeln!(w, "  \"overall_accuracy\": {:.6},", self.overall_accuracy)?;
        writeln!(w, "  \"average_accuracy\": {:.6},", self.average_accuracy)?;
        writeln!(w, "  \"kappa\": {:.6},", self.kappa)?;
        let per: Vec<String> = self
            .per_class_accuracy
            .iter()
            .map(|a| a.map_or_else(|| "null".to_string(), |v| format!("{v:.6}")))
            .collect();
        writeln!(w, "  \"per_class_accuracy\": [{}]", per.join(", "))?;
        writeln!(w, "}}")
    }

    /// Confusion matrix as CSV; rows are true classes, columns predictions.
    pub fn write_confusion_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.num_classes).map(|c| format!("pred_{c}")).collect();
        writeln!(w, "true_class,{}", header.join(","))?;
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(w, "{},{}", i + 1, cells.join(","))?;
        }
        Ok(())
    }
}

/// Scores `pred` against `truth` over pixels with a nonzero true label.
pub fn evaluate(pred: &LabelMap, truth: &LabelMap) -> Result<EvalReport> {
    evaluate_masked(pred, truth, |_| true)
}

/// Like [`evaluate`], restricted to flat pixel indices accepted by `keep`.
pub fn evaluate_masked<F: Fn(usize) -> bool>(pred: &LabelMap, truth: &LabelMap, keep: F) -> Result<EvalReport> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let c = truth.num_classes().max(pred.num_classes()) as usize;
    let mut confusion = vec![vec![0u64; c]; c];
    for (i, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        if t == 0 || !keep(i) {
            continue;
        }
        if p == 0 {
            return Err(Error::invalid(format!("unlabeled prediction at flat index {i}")));
        }
        confusion[t as usize - 1][p as usize - 1] += 1;
    }
    EvalReport::from_confusion(confusion)
}
