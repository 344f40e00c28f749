use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Scores of a single run. Class 1 (fake) is the positive and interest class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub interest_f1: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    /// Macro-F1 is the harmonic mean of macro precision and macro recall.
    /// Zero denominators yield 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let p1 = ratio(c.tp, c.tp + c.fp);
        let r1 = ratio(c.tp, c.tp + c.fn_);
        let p0 = ratio(c.tn, c.tn + c.fn_);
        let r0 = ratio(c.tn, c.tn + c.fp);
        let p_macro = (p0 + p1) / 2.0;
        let r_macro = (r0 + r1) / 2.0;
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            macro_f1: harmonic(p_macro, r_macro),
            interest_f1: harmonic(p1, r1),
            confusion: c,
        }
    }
}

/// Scores `predicted` against `truth` on the nodes selected by `eval_mask`.
pub fn compute_metrics(predicted: &[u8], truth: &[u8], eval_mask: &[bool]) -> Result<Metrics> {
    if predicted.len() != truth.len() || truth.len() != eval_mask.len() {
        return Err(Error::shape(
            "compute_metrics",
            "prediction, truth and mask lengths differ",
        ));
    }
    let mut c = Confusion::default();
    for ((&p, &t), _) in predicted
        .iter()
        .zip(truth)
        .zip(eval_mask)
        .filter(|(_, &m)| m)
    {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    if c.total() == 0 {
        return Err(Error::Data("evaluation mask selects no node".into()));
    }
    Ok(Metrics::from_confusion(c))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub interest_f1: f64,
}

/// Per-run metrics with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<Metrics>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_runs(runs: Vec<Metrics>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("no runs to summarize".into()));
        }
        let col = |f: fn(&Metrics) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (am, asd) = col(|m| m.accuracy);
        let (mm, msd) = col(|m| m.macro_f1);
        let (im, isd) = col(|m| m.interest_f1);
        Ok(Self {
            runs,
            mean: MetricSummary {
                accuracy: am,
                macro_f1: mm,
                interest_f1: im,
            },
            std: MetricSummary {
                accuracy: asd,
                macro_f1: msd,
                interest_f1: isd,
            },
        })
    }
}
