//! Task metrics, the invalid-label rule, and min-max standardized scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Prediction, Target};

/// A single scalar metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    F1,
    Mcc,
    Pearson,
    Spearman,
}

impl MetricKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "f1" => Ok(MetricKind::F1),
            "mcc" => Ok(MetricKind::Mcc),
            "pearson" | "pcc" => Ok(MetricKind::Pearson),
            "spearman" => Ok(MetricKind::Spearman),
            other => Err(Error::Parameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// What a task reports; two-metric tasks are averaged for tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    Accuracy,
    F1Accuracy,
    Mcc,
    PearsonSpearman,
}

impl TaskMetric {
    pub fn kinds(self) -> &'static [MetricKind] {
        match self {
            TaskMetric::Accuracy => &[MetricKind::Accuracy],
            TaskMetric::F1Accuracy => &[MetricKind::F1, MetricKind::Accuracy],
            TaskMetric::Mcc => &[MetricKind::Mcc],
            TaskMetric::PearsonSpearman => &[MetricKind::Pearson, MetricKind::Spearman],
        }
    }
}

/// Metric value; `undefined` marks a zero-variance input reported as 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub value: f64,
    pub undefined: bool,
}

impl Score {
    fn defined(value: f64) -> Self {
        Self { value, undefined: false }
    }

    fn undefined() -> Self {
        Self {
            value: 0.0,
            undefined: true,
        }
    }
}

/// Scores of one evaluation, scaled by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scores: BTreeMap<MetricKind, f64>,
    pub invalid_count: usize,
    pub n_examples: usize,
    /// Some metric hit a zero-variance input and was reported as 0.
    pub undefined: bool,
}

impl EvalResult {
    pub fn invalid_frac(&self) -> f64 {
        self.invalid_count as f64 / self.n_examples.max(1) as f64
    }

    pub fn all_invalid(&self) -> bool {
        self.n_examples > 0 && self.invalid_count == self.n_examples
    }
}

/// Binary class used for scoring; an invalid label counts as the wrong class.
fn binary_class(pred: Prediction, target: usize) -> usize {
    match pred {
        Prediction::Class(c) => c,
        Prediction::Value(v) => v.round().max(0.0) as usize,
        Prediction::Invalid => 1 - target.min(1),
    }
}

fn real_value(pred: Prediction) -> f64 {
    match pred {
        Prediction::Class(c) => c as f64,
        Prediction::Value(v) => v,
        // mid-range stand-in so correlation stays defined
        Prediction::Invalid => 0.5,
    }
}

fn class_of(target: Target) -> usize {
    match target {
        Target::Class(c) => c,
        Target::Value(v) => v.round().max(0.0) as usize,
    }
}

/// One metric over `predictions` against `targets`, in its natural range.
pub fn compute_metric(kind: MetricKind, predictions: &[Prediction], targets: &[Target]) -> Result<Score> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Dimension {
            op: "compute_metric",
            left: vec![predictions.len()],
            right: vec![targets.len()],
        });
    }
    let classes = || {
        predictions.iter().zip(targets).map(|(&p, &t)| {
            let t = class_of(t);
            let p = match p {
                Prediction::Invalid => usize::MAX,
                other => binary_class(other, t),
            };
            (p, t)
        })
    };
    let binary = || {
        predictions.iter().zip(targets).map(|(&p, &t)| {
            let t = class_of(t);
            (binary_class(p, t) == 1, t == 1)
        })
    };
    let score = match kind {
        MetricKind::Accuracy => {
            let hits = classes().filter(|(p, t)| p == t).count();
            Score::defined(hits as f64 / predictions.len() as f64)
        }
        MetricKind::F1 => {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (p, t) in binary() {
                match (p, t) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            if 2 * tp + fp + fn_ == 0 {
                Score::undefined()
            } else {
                Score::defined(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
            }
        }
        MetricKind::Mcc => {
            // Pearson correlation of the two indicator vectors
            let (x, y): (Vec<f64>, Vec<f64>) = binary().map(|(p, t)| (f64::from(u8::from(p)), f64::from(u8::from(t)))).unzip();
            pearson(&x, &y)
        }
        MetricKind::Pearson => {
            let (x, y): (Vec<f64>, Vec<f64>) = predictions.iter().zip(targets).map(|(&p, &t)| (real_value(p), t.as_f64())).unzip();
            pearson(&x, &y)
        }
        MetricKind::Spearman => {
            let (x, y): (Vec<f64>, Vec<f64>) = predictions.iter().zip(targets).map(|(&p, &t)| (real_value(p), t.as_f64())).unzip();
            pearson(&average_ranks(&x), &average_ranks(&y))
        }
    };
    Ok(score)
}

fn pearson(x: &[f64], y: &[f64]) -> Score {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Score::undefined();
    }
    Score::defined((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Every metric a task reports, scaled by 100.
pub fn evaluate(metric: TaskMetric, predictions: &[Prediction], targets: &[Target]) -> Result<EvalResult> {
    let mut scores = BTreeMap::new();
    let mut undefined = false;
    for &kind in metric.kinds() {
        let s = compute_metric(kind, predictions, targets)?;
        undefined |= s.undefined;
        scores.insert(kind, 100.0 * s.value);
    }
    Ok(EvalResult {
        scores,
        invalid_count: predictions.iter().filter(|p| p.is_invalid()).count(),
        n_examples: predictions.len(),
        undefined,
    })
}

/// Table value for a task: the single metric, or the mean of two.
///
/// An evaluation where every prediction was an invalid label scores 0.
pub fn score_for_table(metric: TaskMetric, result: &EvalResult) -> f64 {
    if result.all_invalid() {
        return 0.0;
    }
    let kinds = metric.kinds();
    kinds.iter().map(|k| result.scores.get(k).copied().unwrap_or(0.0)).sum::<f64>() / kinds.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodStability {
    pub mean: f64,
    pub std: f64,
}

/// Per-task min-max scaling to `[0, 100]` across methods, then per-method
/// mean and population standard deviation across tasks.
///
/// `table[method][task]`; `None` cells are skipped with a warning. A task on
/// which all present methods tie contributes 100 to each of them.
pub fn standardized_overall_scores(table: &[Vec<Option<f64>>]) -> Result<Vec<MethodStability>> {
    let methods = table.len();
    let tasks = table.first().map_or(0, Vec::len);
    if methods < 2 || tasks < 2 {
        return Err(Error::Parameter(format!(
            "standardized scoring needs at least 2 methods and 2 tasks, got {methods}x{tasks}"
        )));
    }
    if table.iter().any(|row| row.len() != tasks) {
        return Err(Error::Parameter("ragged score table".into()));
    }
    let mut scaled: Vec<Vec<f64>> = vec![Vec::with_capacity(tasks); methods];
    for task in 0..tasks {
        let column: Vec<(usize, f64)> = (0..methods).filter_map(|m| table[m][task].map(|v| (m, v))).collect();
        if column.len() < methods {
            log::warn!(
                "task column {task}: {} of {methods} cells missing, excluded",
                methods - column.len()
            );
        }
        let lo = column.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
        let hi = column.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        for (m, v) in column {
            let s = if hi > lo { 100.0 * (v - lo) / (hi - lo) } else { 100.0 };
            scaled[m].push(s);
        }
    }
    scaled
        .into_iter()
        .enumerate()
        .map(|(m, row)| {
            if row.is_empty() {
                return Err(Error::Data(format!("method row {m} has no scores")));
            }
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Ok(MethodStability { mean, std: var.sqrt() })
        })
        .collect()
}
