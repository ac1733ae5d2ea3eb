//! Classification metrics used for model selection and reporting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    /// Matthews correlation (CoLA-style tasks).
    Mcc,
    /// F1 of class 1 (MRPC-style tasks).
    F1,
}

impl Metric {
    pub fn compute(self, predictions: &[usize], labels: &[usize], num_classes: usize) -> f64 {
        match self {
            Metric::Accuracy => accuracy(predictions, labels),
            Metric::Mcc => matthews(predictions, labels, num_classes),
            Metric::F1 => f1(predictions, labels, 1),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "mcc" => Ok(Metric::Mcc),
            "f1" => Ok(Metric::F1),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::Mcc => "mcc",
            Metric::F1 => "f1",
        })
    }
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

pub fn f1(predictions: &[usize], labels: &[usize], positive: usize) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive, l == positive) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

/// Multi-class Matthews correlation from the confusion matrix; equals the
/// usual binary formula for two classes and 0 when undefined.
pub fn matthews(predictions: &[usize], labels: &[usize], num_classes: usize) -> f64 {
    let k = num_classes;
    let mut conf = vec![0.0; k * k];
    for (&p, &l) in predictions.iter().zip(labels) {
        conf[l * k + p] += 1.0;
    }
    let s: f64 = conf.iter().sum();
    let correct: f64 = (0..k).map(|i| conf[i * k + i]).sum();
    let pred: Vec<f64> = (0..k)
        .map(|j| (0..k).map(|i| conf[i * k + j]).sum())
        .collect();
    let truth: Vec<f64> = (0..k)
        .map(|i| conf[i * k..(i + 1) * k].iter().sum())
        .collect();
    let dot: f64 = pred.iter().zip(&truth).map(|(p, t)| p * t).sum();
    let num = correct * s - dot;
    let den = ((s * s - pred.iter().map(|p| p * p).sum::<f64>())
        * (s * s - truth.iter().map(|t| t * t).sum::<f64>()))
    .sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_mcc_matches_closed_form() {
        let labels = [1, 1, 1, 0, 0, 0, 1, 0, 1, 1];
        let preds = [1, 0, 1, 0, 1, 0, 1, 0, 0, 1];
        let (tp, tn, fp, fneg) = (4.0, 3.0, 1.0, 2.0);
        let expect =
            (tp * tn - fp * fneg) / f64::sqrt((tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg));
        assert!((matthews(&preds, &labels, 2) - expect).abs() < 1e-12);
        assert!((f1(&preds, &labels, 1) - 8.0 / 11.0).abs() < 1e-12);
        assert_eq!(accuracy(&preds, &labels), 0.7);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(matthews(&[1, 1], &[1, 1], 2), 0.0);
        assert_eq!(matthews(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        assert_eq!(f1(&[0, 0], &[1, 0], 1), 0.0);
        assert_eq!(accuracy(&[], &[]), 0.0);
        assert!("auc".parse::<Metric>().is_err());
    }
}
