// SPDX-License-Identifier: Apache-2.0

//! Evaluation metrics and the per-epoch record stream.

use serde_json::{json, Map, Value};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metrics {
    /// `pearson` is `None` when either side has zero variance.
    Regression {
        rmse: f64,
        mae: f64,
        pearson: Option<f64>,
    },
    /// Scores of the positive ("congested") class.
    Classification {
        precision: f64,
        recall: f64,
        f1: f64,
    },
}

impl Metrics {
    /// Precision and recall are 0 when their denominators are.
    pub fn from_confusion(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics::Classification {
            precision,
            recall,
            f1,
        }
    }

    /// Metric names and values in report order; an undefined Pearson is NaN.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Metrics::Regression { rmse, mae, pearson } => {
                vec![
                    ("rmse", rmse),
                    ("mae", mae),
                    ("pearson", pearson.unwrap_or(f64::NAN)),
                ]
            }
            Metrics::Classification {
                precision,
                recall,
                f1,
            } => {
                vec![("precision", precision), ("recall", recall), ("f1", f1)]
            }
        }
    }
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics, TrainError> {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let n = pred.len() as f64;
    let rmse = (pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
        .sqrt();
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    Ok(Metrics::Regression {
        rmse,
        mae,
        pearson: pearson(pred, truth),
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn classification_metrics(pred: &[usize], truth: &[usize]) -> Result<Metrics, TrainError> {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(Metrics::from_confusion(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub variant: String,
    pub seed: u64,
    /// `train`, `val` or `test`.
    pub split: String,
    pub fold: usize,
    pub epoch: usize,
    pub loss: Option<f64>,
    pub metrics: Metrics,
    pub seconds: Option<f64>,
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        let mut m = Map::new();
        m.insert("variant".into(), json!(self.variant));
        m.insert("seed".into(), json!(self.seed));
        m.insert("split".into(), json!(self.split));
        m.insert("fold".into(), json!(self.fold));
        m.insert("epoch".into(), json!(self.epoch));
        m.insert("loss".into(), self.loss.map_or(Value::Null, num));
        match self.metrics {
            Metrics::Regression { rmse, mae, pearson } => {
                m.insert("rmse".into(), num(rmse));
                m.insert("mae".into(), num(mae));
                m.insert("pearson".into(), pearson.map_or(Value::Null, num));
                m.insert("pearson_undefined".into(), json!(pearson.is_none()));
            }
            Metrics::Classification {
                precision,
                recall,
                f1,
            } => {
                m.insert("precision".into(), num(precision));
                m.insert("recall".into(), num(recall));
                m.insert("f1".into(), num(f1));
            }
        }
        m.insert("seconds".into(), self.seconds.map_or(Value::Null, num));
        Value::Object(m).to_string()
    }
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
