//! Losses, evaluation metrics and the records written to the metrics stream.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::diagnostics::SmoothnessReport;
use crate::error::{Error, Result};
use crate::graphnet::Task;

/// Targets of one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        match self {
            BatchTargets::Classes(c) => c.len(),
            BatchTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `w_k = n / (K · n_k)` for classes present in `labels`, 0 for absent ones.
pub fn class_weights(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l < k {
            counts[l] += 1;
        }
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (k as f64 * c as f64) })
        .collect()
}

/// Class-weighted cross-entropy for node classification, plain
/// cross-entropy for graph classification, mean absolute error for
/// regression.
pub fn task_loss(tape: &mut Tape<f64>, task: Task, output: Var, targets: &BatchTargets) -> Result<Var> {
    match (task, targets) {
        (Task::NodeClass, BatchTargets::Classes(labels)) => {
            let k = tape.value(output).cols();
            let w = class_weights(labels, k);
            tape.softmax_cross_entropy(output, labels, Some(&w))
        }
        (Task::GraphClass, BatchTargets::Classes(labels)) => tape.softmax_cross_entropy(output, labels, None),
        (Task::GraphRegress, BatchTargets::Values(values)) => {
            let target = Tensor::matrix(values.len(), 1, values.clone())?;
            tape.l1_loss(output, &target)
        }
        (task, _) => Err(Error::Contract(format!("targets do not match task {task:?}"))),
    }
}

/// Mean per-class recall over the classes present in `labels`.
pub fn weighted_accuracy(preds: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("weighted accuracy of an empty set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::dim("weighted_accuracy", &[preds.len()], &[labels.len()]));
    }
    let mut hits = vec![0usize; k];
    let mut counts = vec![0usize; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= k {
            return Err(Error::Contract(format!("label {l} outside class range 0..{k}")));
        }
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let recalls: Vec<f64> = hits
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&h, &c)| h as f64 / c as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("accuracy of an empty set".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn mean_absolute_error(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Contract("mean absolute error of an empty set".into()));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / targets.len() as f64)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor<f64>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Which metric a task reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    WeightedAccuracy,
    Accuracy,
    Mae,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::NodeClass => MetricKind::WeightedAccuracy,
            Task::GraphClass => MetricKind::Accuracy,
            Task::GraphRegress => MetricKind::Mae,
        }
    }
}

/// Accumulates predictions over the batches of one split.
#[derive(Clone, Debug)]
pub struct SplitAccumulator {
    task: Task,
    classes: usize,
    loss_sum: f64,
    rows: usize,
    class_preds: Vec<usize>,
    class_labels: Vec<usize>,
    value_preds: Vec<f64>,
    value_targets: Vec<f64>,
}

impl SplitAccumulator {
    pub fn new(task: Task, classes: usize) -> Self {
        SplitAccumulator {
            task,
            classes,
            loss_sum: 0.0,
            rows: 0,
            class_preds: Vec::new(),
            class_labels: Vec::new(),
            value_preds: Vec::new(),
            value_targets: Vec::new(),
        }
    }

    /// Adds a batch; its loss is weighted by its number of targets.
    pub fn add(&mut self, loss: f64, output: &Tensor<f64>, targets: &BatchTargets) {
        self.loss_sum += loss * targets.len() as f64;
        self.rows += targets.len();
        match targets {
            BatchTargets::Classes(labels) => {
                self.class_preds.extend(argmax_rows(output));
                self.class_labels.extend_from_slice(labels);
            }
            BatchTargets::Values(values) => {
                self.value_preds.extend_from_slice(output.data());
                self.value_targets.extend_from_slice(values);
            }
        }
    }

    pub fn finish(&self) -> Result<SplitEval> {
        if self.rows == 0 {
            return Err(Error::Contract("split has no examples".into()));
        }
        let metric = match MetricKind::for_task(self.task) {
            MetricKind::WeightedAccuracy => weighted_accuracy(&self.class_preds, &self.class_labels, self.classes)?,
            MetricKind::Accuracy => accuracy(&self.class_preds, &self.class_labels)?,
            MetricKind::Mae => mean_absolute_error(&self.value_preds, &self.value_targets)?,
        };
        Ok(SplitEval {
            loss: self.loss_sum / self.rows as f64,
            metric,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub loss: f64,
    pub metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub metric: f64,
    pub lr: f64,
    pub wall_clock_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<Vec<SmoothnessReport>>,
}

impl MetricsRecord {
    /// Whether every numeric field is finite.
    pub fn is_finite(&self) -> bool {
        [self.loss, self.metric, self.lr, self.wall_clock_seconds]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanSd { mean, sd: var.sqrt() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_for_unbalanced_counts() {
        let mut labels = vec![0; 10];
        labels.extend(vec![1; 30]);
        let w = class_weights(&labels, 2);
        assert_eq!(w[0], 2.0);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_accuracy_examples() {
        assert_eq!(weighted_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(weighted_accuracy(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap(), 0.75);
        assert_eq!(weighted_accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1], 2).unwrap(), 0.5);
        assert!(matches!(weighted_accuracy(&[], &[], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn absent_classes_are_excluded() {
        assert_eq!(weighted_accuracy(&[1, 1], &[1, 1], 5).unwrap(), 1.0);
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[4, 5]));
        let l = task_loss(&mut tape, Task::GraphClass, z, &BatchTargets::Classes(vec![0, 1, 2, 3])).unwrap();
        assert!((tape.value(l).item().unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_predictions_have_zero_mae() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(2, 1, vec![0.5, 1.5]).unwrap());
        let l = task_loss(&mut tape, Task::GraphRegress, p, &BatchTargets::Values(vec![0.5, 1.5])).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn population_sd() {
        let s = MeanSd::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.sd), (2.0, 1.0));
    }
}
