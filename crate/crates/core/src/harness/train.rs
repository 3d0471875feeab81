//! The training protocol: Adam, plateau schedule, best-validation model
//! selection, per-epoch metrics and the test-scale sweep.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{
    task_loss, BatchTargets, MeanSd, MetricKind, MetricsRecord, Split, SplitAccumulator, SplitEval,
};
use super::optim::{Adam, Plateau};
use crate::autodiff::{Phase, Tape};
use crate::data::{load_dataset, DatasetFile, Target};
use crate::diagnostics::{mean_pairwise_distance, smoothness_report, SmoothnessReport};
use crate::error::{Error, Result};
use crate::graphnet::{Batch, Graph, GraphNet, ModelConfig, Regularization, Task};
use crate::rng::RngStream;

/// A dataset converted to graphs, ready for batching.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub task: Task,
    pub classes: usize,
    pub graphs: Vec<Graph<f64>>,
    pub targets: Vec<Target>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PreparedData {
    pub fn new(d: &DatasetFile) -> Result<Self> {
        let graphs = (0..d.graphs.len()).map(|i| d.graph(i)).collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            task: d.task,
            classes: d.num_outputs(),
            graphs,
            targets: d.graphs.iter().map(|g| g.y.clone()).collect(),
            train: d.splits.train.clone(),
            val: d.splits.val.clone(),
            test: d.splits.test.clone(),
        })
    }

    pub fn split(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn batch_targets(&self, indices: &[usize]) -> Result<BatchTargets> {
        let mut classes = Vec::new();
        let mut values = Vec::new();
        for &i in indices {
            match (&self.targets[i], self.task) {
                (Target::Nodes(l), Task::NodeClass) => classes.extend_from_slice(l),
                (Target::Class(k), Task::GraphClass) => classes.push(*k),
                (y, Task::GraphRegress) => values.push(y.as_value().ok_or_else(|| {
                    Error::Contract(format!("graph {i} has no regression target"))
                })?),
                (y, task) => {
                    return Err(Error::Contract(format!("graph {i}: target {y:?} does not fit {task:?}")));
                }
            }
        }
        Ok(if self.task == Task::GraphRegress {
            BatchTargets::Values(values)
        } else {
            BatchTargets::Classes(classes)
        })
    }

    /// Consecutive chunks of `size` graphs, each merged into one batch.
    pub fn batches(&self, net: &GraphNet<f64>, order: &[usize], size: usize) -> Result<Vec<PreparedBatch>> {
        order
            .chunks(size)
            .map(|chunk| {
                let graphs: Vec<&Graph<f64>> = chunk.iter().map(|&i| &self.graphs[i]).collect();
                Ok(PreparedBatch {
                    batch: net.batch(&graphs)?,
                    targets: self.batch_targets(chunk)?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub batch: Batch<f64>,
    pub targets: BatchTargets,
}

/// Extra measurements taken during an evaluation pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Probe {
    /// Per-layer smoothness of the first batch.
    pub smoothness: bool,
    /// Mean over batches of the last layer's mean pairwise distance.
    pub last_layer_distance: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub eval: SplitEval,
    pub smoothness: Option<Vec<SmoothnessReport>>,
    pub last_layer_distance: Option<f64>,
}

/// Evaluates `batches` in the evaluation phase.
pub fn evaluate_batches(
    net: &mut GraphNet<f64>,
    reg: &mut Regularization,
    batches: &[PreparedBatch],
    classes: usize,
    probe: Probe,
) -> Result<EvalOutput> {
    let task = net.config().task;
    let mut acc = SplitAccumulator::new(task, classes);
    let mut smoothness = None;
    let mut distances = Vec::new();
    for (b, pb) in batches.iter().enumerate() {
        let mut tape = Tape::new();
        let fwd = net.forward(&mut tape, &pb.batch, reg, Phase::Eval)?;
        let loss = task_loss(&mut tape, task, fwd.output, &pb.targets)?;
        acc.add(tape.value(loss).item()?, tape.value(fwd.output), &pb.targets);
        if probe.smoothness && b == 0 {
            let reports = fwd
                .hidden
                .iter()
                .enumerate()
                .map(|(l, &h)| smoothness_report(l + 1, tape.value(h), &pb.batch.graph))
                .collect::<Result<Vec<_>>>()?;
            smoothness = Some(reports);
        }
        if probe.last_layer_distance {
            let last = *fwd.hidden.last().expect("at least one layer");
            distances.push(mean_pairwise_distance(tape.value(last))?);
        }
    }
    Ok(EvalOutput {
        eval: acc.finish()?,
        smoothness,
        last_layer_distance: probe
            .last_layer_distance
            .then(|| distances.iter().sum::<f64>() / distances.len().max(1) as f64),
    })
}

/// One seed's model, optimizer, schedule and random streams.
pub struct Trainer<'a> {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub net: GraphNet<f64>,
    pub reg: Regularization,
    pub adam: Adam<f64>,
    pub sched: Plateau,
    pub epoch: usize,
    data: &'a PreparedData,
    rng: RngStream,
    eval_cache: [Option<Vec<PreparedBatch>>; 3],
}

fn split_slot(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

impl<'a> Trainer<'a> {
    pub fn new(config: &ExperimentConfig, model: ModelConfig, data: &'a PreparedData, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = RngStream::new(seed);
        let net = GraphNet::new(model, &rng)?;
        let reg = Regularization::new(net.config(), config.ssfg, config.dropout, &rng);
        let [b1, b2] = config.adam_betas;
        let adam = Adam::new(&net.store, b1, b2, config.adam_eps);
        let sched = Plateau::new(config.lr_init, config.lr_reduce_factor, config.patience, config.lr_min);
        Ok(Trainer {
            config: config.clone(),
            seed,
            net,
            reg,
            adam,
            sched,
            epoch: 0,
            data,
            rng,
            eval_cache: [None, None, None],
        })
    }

    /// One pass over the shuffled training split with an Adam step per
    /// batch. Loss and metric come from the training-phase outputs.
    pub fn train_epoch(&mut self) -> Result<SplitEval> {
        self.epoch += 1;
        let mut order = self.data.train.clone();
        self.rng.derive("shuffle", self.epoch as u64).shuffle(&mut order);
        let batches = self.data.batches(&self.net, &order, self.config.graphs_per_batch(self.data.task))?;
        let task = self.net.config().task;
        let mut acc = SplitAccumulator::new(task, self.data.classes);
        let lr = self.sched.lr;
        for pb in &batches {
            self.net.store.zero_grad();
            let mut tape = Tape::new();
            let fwd = self.net.forward(&mut tape, &pb.batch, &mut self.reg, Phase::Train)?;
            let loss = task_loss(&mut tape, task, fwd.output, &pb.targets)?;
            acc.add(tape.value(loss).item()?, tape.value(fwd.output), &pb.targets);
            tape.backward(loss, &mut self.net.store)?;
            self.adam.update(&mut self.net.store, lr)?;
        }
        acc.finish()
    }

    pub fn evaluate(&mut self, split: Split, probe: Probe) -> Result<EvalOutput> {
        let slot = split_slot(split);
        if self.eval_cache[slot].is_none() {
            let order = self.data.split(split).to_vec();
            self.eval_cache[slot] = Some(self.data.batches(&self.net, &order, self.config.graphs_per_batch(self.data.task))?);
        }
        let batches = self.eval_cache[slot].as_ref().expect("filled above");
        evaluate_batches(&mut self.net, &mut self.reg, batches, self.data.classes, probe)
    }
}

/// Everything a run needs to reproduce its best model.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub experiment: ExperimentConfig,
    pub seed: u64,
    pub net: GraphNet<f64>,
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_by_schedule: bool,
    pub final_lr: f64,
    pub train: SplitEval,
    pub val: SplitEval,
    pub test: SplitEval,
    pub last_layer_distance: f64,
    pub model: TrainedModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTriple {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Seed-level aggregate written after the per-epoch records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: MetricKind,
    pub mean: SplitTriple,
    pub sd: SplitTriple,
    pub seeds: Vec<u64>,
    pub best_epochs: Vec<usize>,
    pub test_metric_per_seed: Vec<f64>,
    pub last_layer_distance: Vec<f64>,
}

impl Summary {
    pub fn of(task: Task, runs: &[SeedRun]) -> Self {
        let stat = |f: &dyn Fn(&SeedRun) -> f64| MeanSd::of(&runs.iter().map(f).collect::<Vec<_>>());
        let (tr, va, te) = (stat(&|r| r.train.metric), stat(&|r| r.val.metric), stat(&|r| r.test.metric));
        Summary {
            metric: MetricKind::for_task(task),
            mean: SplitTriple { train: tr.mean, val: va.mean, test: te.mean },
            sd: SplitTriple { train: tr.sd, val: va.sd, test: te.sd },
            seeds: runs.iter().map(|r| r.seed).collect(),
            best_epochs: runs.iter().map(|r| r.best_epoch).collect(),
            test_metric_per_seed: runs.iter().map(|r| r.test.metric).collect(),
            last_layer_distance: runs.iter().map(|r| r.last_layer_distance).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

/// Receives metrics records as they are produced.
pub type Sink<'s> = &'s mut dyn FnMut(&MetricsRecord) -> Result<()>;

/// Trains one seed: epoch 0 records the untrained model, then up to
/// `max_epochs` epochs until the schedule stops. The reported model is the
/// one with the lowest validation loss (earliest on ties).
pub fn run_seed(cfg: &ExperimentConfig, model: &ModelConfig, data: &PreparedData, seed: u64, sink: Sink) -> Result<SeedRun> {
    let start = Instant::now();
    let mut t = Trainer::new(cfg, model.clone(), data, seed)?;
    let diag = |epoch: usize| cfg.diag_every > 0 && epoch % cfg.diag_every == 0;
    let mut emit = |epoch: usize, split: Split, e: &SplitEval, lr: f64, smoothness: Option<Vec<SmoothnessReport>>| {
        let rec = MetricsRecord {
            seed,
            epoch,
            split,
            loss: e.loss,
            metric: e.metric,
            lr,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            smoothness,
        };
        if !rec.is_finite() {
            return Err(Error::Degenerate(format!("non-finite metrics at seed {seed}, epoch {epoch}: {rec:?}")));
        }
        sink(&rec)
    };

    let train0 = t.evaluate(Split::Train, Probe::default())?.eval;
    emit(0, Split::Train, &train0, t.sched.lr, None)?;
    let val0 = t.evaluate(Split::Val, Probe { smoothness: diag(0), ..Probe::default() })?;
    emit(0, Split::Val, &val0.eval, t.sched.lr, val0.smoothness)?;
    let mut best = (val0.eval.loss, 0usize, t.net.clone(), train0, val0.eval, t.sched.lr);

    let mut stopped = false;
    for epoch in 1..=cfg.max_epochs {
        let lr = t.sched.lr;
        let tr = t.train_epoch()?;
        emit(epoch, Split::Train, &tr, lr, None)?;
        let va = t.evaluate(Split::Val, Probe { smoothness: diag(epoch), ..Probe::default() })?;
        emit(epoch, Split::Val, &va.eval, lr, va.smoothness)?;
        if va.eval.loss < best.0 {
            best = (va.eval.loss, epoch, t.net.clone(), tr, va.eval, lr);
        }
        let (_, stop) = t.sched.update(va.eval.loss)?;
        if stop {
            stopped = true;
            break;
        }
    }
    let epochs_run = t.epoch;
    let final_lr = t.sched.lr;
    let (_, best_epoch, best_net, train, val, best_lr) = best;
    t.net = best_net;
    let test = t.evaluate(Split::Test, Probe { last_layer_distance: true, ..Probe::default() })?;
    emit(best_epoch, Split::Test, &test.eval, best_lr, None)?;
    Ok(SeedRun {
        seed,
        best_epoch,
        epochs_run,
        stopped_by_schedule: stopped,
        final_lr,
        train,
        val,
        test: test.eval,
        last_layer_distance: test.last_layer_distance.unwrap_or(0.0),
        model: TrainedModel {
            experiment: cfg.clone(),
            seed,
            net: t.net,
        },
    })
}

/// Runs every seed of `cfg` on an in-memory dataset.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &DatasetFile, sink: Sink) -> Result<ExperimentResult> {
    cfg.validate()?;
    let model = cfg.model_config(data)?;
    let prepared = PreparedData::new(data)?;
    if prepared.train.is_empty() || prepared.val.is_empty() || prepared.test.is_empty() {
        return Err(Error::Config("train, val and test splits must all be non-empty".into()));
    }
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, &model, &prepared, seed, &mut *sink))
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary::of(data.task, &runs);
    Ok(ExperimentResult { runs, summary })
}

/// Loads `cfg.dataset` and runs every seed.
pub fn run_experiment(cfg: &ExperimentConfig, sink: Sink) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    run_experiment_on(cfg, &data, sink)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub loss: f64,
    pub metric: f64,
}

impl TrainedModel {
    fn regularization(&self) -> Regularization {
        Regularization::new(
            self.net.config(),
            self.experiment.ssfg,
            self.experiment.dropout,
            &RngStream::new(self.seed),
        )
    }

    /// Standard evaluation of one split.
    pub fn evaluate(&self, data: &DatasetFile, split: Split) -> Result<SplitEval> {
        let prepared = PreparedData::new(data)?;
        let mut net = self.net.clone();
        let batches = prepared.batches(&net, prepared.split(split), self.experiment.graphs_per_batch(prepared.task))?;
        let mut reg = self.regularization();
        Ok(evaluate_batches(&mut net, &mut reg, &batches, prepared.classes, Probe::default())?.eval)
    }
}

/// Evaluates the test split once per scale, with the scale applied at every
/// regularization site in place of the configured test scale.
pub fn eval_with_scale(model: &TrainedModel, data: &DatasetFile, scales: &[f64]) -> Result<Vec<ScaleRow>> {
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Config(format!("test scale must be positive and finite, got {s}")));
    }
    let prepared = PreparedData::new(data)?;
    let mut net = model.net.clone();
    let batches = prepared.batches(&net, &prepared.test, model.experiment.graphs_per_batch(prepared.task))?;
    let mut reg = model.regularization();
    scales
        .iter()
        .map(|&scale| {
            reg.set_test_scale(scale);
            let e = evaluate_batches(&mut net, &mut reg, &batches, prepared.classes, Probe::default())?.eval;
            Ok(ScaleRow { scale, loss: e.loss, metric: e.metric })
        })
        .collect()
}
