//! Mini-batch SGD with momentum, step learning-rate schedule and the
//! per-epoch training/verification loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::EmbeddingNetwork;
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::eval::{kfold_verification, make_pairs, pair_distances, VerificationPair};
use crate::loss::{classification_logits, evaluate_loss, ClassifierParams, LossSpec};
use crate::seed::{derive_seed, stream_rng, Stream};
use crate::tensor::{argmax, FeatureBatch, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (1-based) at whose start the rate is divided by `drop_factor`.
    pub drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            drop_epochs: vec![8, 12, 16],
            drop_factor: 10.0,
            batch_size: 64,
            epochs: 20,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be >= 0", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor.is_finite()) {
            return bad(format!("drop_factor {} must be > 0", self.drop_factor));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be >= 1".into());
        }
        if self.drop_epochs.contains(&0) {
            return bad("drop epochs are 1-based".into());
        }
        if self.drop_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("drop_epochs {:?} must be strictly increasing", self.drop_epochs));
        }
        if self.drop_epochs.last().is_some_and(|&d| d > self.epochs) {
            return bad(format!("drop_epochs {:?} exceed epochs {}", self.drop_epochs, self.epochs));
        }
        Ok(())
    }
}

/// Learning rate in force during `epoch` (1-based): `lr0` divided by
/// `drop_factor` once for every drop epoch `<= epoch`.
pub fn lr_at_epoch(config: &OptimizerConfig, epoch: usize) -> Result<f64> {
    if epoch == 0 || epoch > config.epochs {
        return Err(Error::EpochOutOfRange { epoch, epochs: config.epochs });
    }
    let drops = config.drop_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(config.lr0 / config.drop_factor.powi(drops as i32))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        OptimizerState { velocity: vec![0.0; num_params] }
    }
}

/// One in-place update: `g' = g + wd·p`, `v = μ·v + g'`, `p = p − lr·v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::mismatch("gradient length", params.len(), grads.len()));
    }
    if state.velocity.len() != params.len() {
        return Err(Error::mismatch("velocity length", params.len(), state.velocity.len()));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Embedding network plus classifier head; the optimizer sees them as one
/// flat vector, network first.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: EmbeddingNetwork,
    pub classifier: ClassifierParams,
}

impl Model {
    /// Xavier-uniform classifier weights and zero biases for `classes` outputs.
    pub fn with_classifier(net: EmbeddingNetwork, classes: usize, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidConfig("classifier needs at least one class".into()));
        }
        let d = net.embed_dim();
        let a = (6.0 / (d + classes) as f64).sqrt();
        let mut rng = stream_rng(seed, Stream::Init, 1);
        let weights = Mat::from_fn(d, classes, |_, _| rng.random_range(-a..=a));
        let classifier = ClassifierParams::new(weights, vec![0.0; classes])?;
        Ok(Model { net, classifier })
    }

    pub fn num_params(&self) -> usize {
        self.net.params().len() + self.classifier.num_params()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.net.params().to_vec();
        v.extend(self.classifier.flatten());
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::mismatch("model parameters", self.num_params(), flat.len()));
        }
        let n = self.net.params().len();
        self.net.params_mut().copy_from_slice(&flat[..n]);
        self.classifier.assign_flat(&flat[n..])
    }

    /// Mean loss over the rows `idx` and its gradient in [`Model::flat_params`] order.
    pub fn batch_gradient(&self, spec: &LossSpec, data: &SampleSet, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
        let (x, labels) = data.gather(idx);
        let (emb, cache) = self.net.embed_with_cache(&x)?;
        let batch = FeatureBatch::new(emb, labels, self.classifier.classes())?;
        let out = evaluate_loss(spec, &batch, &self.classifier)?;
        let mut grad = self.net.backward(&cache, &out.grad_features)?;
        grad.extend(out.flat_classifier_grad());
        Ok((out.loss, grad))
    }

    /// Percentage of `data` whose margin-free logit argmax equals the label.
    pub fn classification_accuracy(&self, spec: &LossSpec, data: &SampleSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let batch = FeatureBatch::new(self.net.embed(&data.inputs)?, data.labels.clone(), self.classifier.classes())?;
        let logits = classification_logits(spec, &batch, &self.classifier)?;
        let hits = (0..logits.rows()).filter(|&i| argmax(logits.row(i)) == batch.labels[i]).count();
        Ok(100.0 * hits as f64 / data.len() as f64)
    }
}

/// Consecutive batches over a shuffled order. The last partial batch is
/// kept, except that a trailing single sample joins the previous batch so
/// every batch has at least two rows when the data allows it.
pub fn batch_slices(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Sample order for `epoch`: a function of `(seed, epoch)` only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch as u64));
    order
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// Sample-weighted mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    /// Classification accuracy (%) of the end-of-epoch weights.
    pub train_acc: f64,
}

/// One pass over `data` at learning rate `lr`.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    state: &mut OptimizerState,
    spec: &LossSpec,
    data: &SampleSet,
    config: &OptimizerConfig,
    lr: f64,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let order = epoch_order(data.len(), seed, epoch);
    let mut params = model.flat_params();
    let mut loss_sum = 0.0;
    for range in batch_slices(order.len(), config.batch_size) {
        let idx = &order[range];
        let (loss, grad) = model.batch_gradient(spec, data, idx)?;
        loss_sum += loss * idx.len() as f64;
        sgd_momentum_step(&mut params, &grad, state, lr, config.momentum, config.weight_decay)?;
        model.assign_flat(&params)?;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("parameters after epoch"));
    }
    Ok(EpochStats {
        train_loss: loss_sum / data.len() as f64,
        train_acc: model.classification_accuracy(spec, data)?,
    })
}

/// Verification protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub num_pairs: usize,
    pub folds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { num_pairs: 600, folds: 10 }
    }
}

/// One line of a run's metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub model: Model,
    pub pairs: Vec<VerificationPair>,
}

impl TrainRun {
    pub fn test_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.test_acc).collect()
    }

    pub fn train_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_acc).collect()
    }

    /// Metrics log as JSON lines, one record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Full training run. Verification pairs are drawn once from `test` and
/// scored after every epoch with a fixed fold assignment.
pub fn run_training(
    mut model: Model,
    spec: &LossSpec,
    train: &SampleSet,
    test: &SampleSet,
    config: &OptimizerConfig,
    eval: &EvalConfig,
    seed: u64,
) -> Result<TrainRun> {
    config.validate()?;
    spec.validate()?;
    if train.classes > model.classifier.classes() {
        return Err(Error::mismatch("classifier outputs", train.classes, model.classifier.classes()));
    }
    let pairs = make_pairs(&test.labels, eval.num_pairs, derive_seed(seed, Stream::Pairs, 0))?;
    let same: Vec<bool> = pairs.iter().map(|p| p.is_same).collect();
    let fold_seed = derive_seed(seed, Stream::Pairs, 1);
    let mut state = OptimizerState::new(model.num_params());
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = lr_at_epoch(config, epoch)?;
        let stats = train_epoch(&mut model, &mut state, spec, train, config, lr, seed, epoch)?;
        let distances = pair_distances(&model.net, test, &pairs)?;
        let test_acc = kfold_verification(&distances, &same, eval.folds, fold_seed)?;
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: stats.train_loss,
            train_acc: stats.train_acc,
            test_acc,
        });
    }
    Ok(TrainRun { records, model, pairs })
}
