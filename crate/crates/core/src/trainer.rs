//! Mini-batch Adam training with early stopping, plus the two-stage
//! pretrain / finetune protocol with optional aggregation freezing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dump::Sample;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::model::Model;
use crate::probe::decide;
use crate::tagging::{crf_nll_with_gradient, encode_tags, greedy_decode, log_sum_exp, tags_to_binary, viterbi_decode, TagScheme};
use crate::tensor::{Matrix, ParamGroup};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub freeze_aggregation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.01,
            epochs: 100,
            batch_size: 100,
            patience: 5,
            seed: 0,
            freeze_aggregation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("epochs, batch size and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update with weight decay added to the gradient. Values marked in
/// `frozen` are left untouched, moments included.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig, frozen: &[bool]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || frozen.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam step",
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    if let Some(i) = grads.iter().zip(frozen).position(|(g, f)| !f && !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            tensor: format!("value {i}"),
            step: state.step,
        });
    }
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        if frozen[i] {
            continue;
        }
        let g = grads[i] + cfg.weight_decay * params[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic cross-entropy of one logit against a binary label.
pub fn classification_loss(logit: f64, label: u8) -> f64 {
    let sign = if label == 1 { 1.0 } else { -1.0 };
    softplus(-sign * logit)
}

/// d(classification_loss)/d(logit) = sigmoid(logit) − label.
pub fn classification_loss_grad(logit: f64, label: u8) -> f64 {
    let sigmoid = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    sigmoid - f64::from(label)
}

/// Softmax cross-entropy of `logits` against class `target`, with gradient.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let log_z = log_sum_exp(logits.iter().copied());
    let grad = logits
        .iter()
        .enumerate()
        .map(|(k, l)| (l - log_z).exp() - if k == target { 1.0 } else { 0.0 })
        .collect();
    (log_z - logits[target], grad)
}

/// What a model is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// One logit per sample, positive iff above zero.
    Classification,
    /// One emission per tag and token; the model's CRF (if any) decodes.
    Tagging(TagScheme),
}

impl Objective {
    pub fn check(&self, model: &Model) -> Result<()> {
        let expected = match self {
            Objective::Classification => 1,
            Objective::Tagging(scheme) => scheme.size(),
        };
        if model.outputs() != expected {
            return Err(Error::InvalidSpec(format!(
                "objective needs {expected} outputs, model has {}",
                model.outputs()
            )));
        }
        if model.has_crf() && *self == Objective::Classification {
            return Err(Error::InvalidSpec("a CRF needs a tagging objective".into()));
        }
        Ok(())
    }
}

/// Loss of one sample under `params`; accumulates its gradient when `grad` is
/// given.
pub fn sample_loss(model: &Model, params: &[f64], sample: &Sample, objective: Objective, mut grad: Option<&mut [f64]>) -> Result<f64> {
    match objective {
        Objective::Classification => {
            let logit = model.logits_with(params, &sample.states[0])?[0];
            let label = sample.label();
            if let Some(grad) = grad {
                model.backward_with(params, &sample.states[0], &[classification_loss_grad(logit, label)], grad)?;
            }
            Ok(classification_loss(logit, label))
        }
        Objective::Tagging(scheme) => {
            let emissions = model.emissions_with(params, &sample.states)?;
            let gold = encode_tags(&sample.labels, scheme);
            let (loss, d_emissions) = match model.crf_with(params) {
                Some(crf) => {
                    let (nll, g) = crf_nll_with_gradient(&emissions, &gold, &crf)?;
                    if let Some(grad) = grad.as_deref_mut() {
                        model.add_crf_gradient(grad, &g.start, &g.end, &g.transitions);
                    }
                    (nll, g.emissions)
                }
                None => {
                    // mean per-token cross-entropy
                    let t = emissions.rows() as f64;
                    let mut total = 0.0;
                    let mut d = Matrix::zeros(emissions.rows(), emissions.cols());
                    for (i, &y) in gold.tags.iter().enumerate() {
                        let (l, g) = softmax_cross_entropy(emissions.row(i), y);
                        total += l;
                        d.row_mut(i).iter_mut().zip(g).for_each(|(dst, v)| *dst = v / t);
                    }
                    (total / t, d)
                }
            };
            if let Some(grad) = grad {
                for (i, states) in sample.states.iter().enumerate() {
                    model.backward_with(params, states, d_emissions.row(i), grad)?;
                }
            }
            Ok(loss)
        }
    }
}

/// Mean loss over `samples`.
pub fn mean_loss(model: &Model, params: &[f64], samples: &[Sample], objective: Objective) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(model, params, s, objective, None)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Binary predictions for one sample: one value for classification, one per
/// token for tagging (Viterbi when the model has a CRF, greedy otherwise).
pub fn predict(model: &Model, sample: &Sample, objective: Objective) -> Result<Vec<u8>> {
    match objective {
        Objective::Classification => Ok(vec![u8::from(decide(model.logits(&sample.states[0])?[0]))]),
        Objective::Tagging(scheme) => {
            let emissions = model.emissions_with(model.params().values(), &sample.states)?;
            let tags = match model.crf() {
                Some(crf) => viterbi_decode(&emissions, &crf, scheme)?,
                None => greedy_decode(&emissions, scheme)?,
            };
            Ok(tags_to_binary(&tags))
        }
    }
}

/// Metrics over `samples`; token-level for tagging.
pub fn evaluate(model: &Model, samples: &[Sample], objective: Objective) -> Result<Metrics> {
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        predictions.extend(predict(model, s, objective)?);
        labels.extend_from_slice(&s.labels);
    }
    match objective {
        Objective::Classification => Metrics::evaluate_classification(&predictions, &labels),
        Objective::Tagging(_) => Metrics::evaluate(&predictions, &labels),
    }
}

/// Tracks the best validation loss and when to stop.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_improvement: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the validation loss of `epoch` (1-based).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        StopDecision {
            improved,
            stop: self.since_improvement >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub objective: Objective,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub validation: Metrics,
    /// Test-split metrics keyed by dataset name.
    pub evaluations: BTreeMap<String, Metrics>,
    /// Set when validation F1 is zero; such runs are excluded from averages.
    pub filtered: bool,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// Trains `model` in place of a copy and returns the parameters of the epoch
/// with the lowest validation loss.
pub fn train(mut model: Model, train_set: &[Sample], val_set: &[Sample], objective: Objective, cfg: &TrainConfig) -> Result<(Model, RunReport)> {
    cfg.validate()?;
    objective.check(&model)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let frozen = if cfg.freeze_aggregation {
        model.params().mask_for(&[ParamGroup::Aggregation])
    } else {
        vec![false; model.params().len()]
    };
    let mut state = AdamState::new(model.params().len());
    let mut values = model.params().values().to_vec();
    let mut best_values = values.clone();
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut train_losses = Vec::new();
    let mut validation_losses = Vec::new();
    let mut stopped_epoch = 0;
    let mut grad = vec![0.0; values.len()];

    for epoch in 1..=cfg.epochs {
        stopped_epoch = epoch;
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += sample_loss(&model, &values, &train_set[i], objective, Some(&mut grad))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut values, &grad, &mut state, cfg, &frozen).map_err(|e| match e {
                Error::NonFiniteGradient { tensor, step } => {
                    let index: usize = tensor.trim_start_matches("value ").parse().unwrap_or(0);
                    Error::NonFiniteGradient {
                        tensor: model.params().owner_of(index).unwrap_or("?").to_string(),
                        step,
                    }
                }
                other => other,
            })?;
        }
        train_losses.push(epoch_loss / train_set.len() as f64);
        let val_loss = mean_loss(&model, &values, val_set, objective)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        validation_losses.push(val_loss);
        let decision = stopping.observe(epoch, val_loss);
        if decision.improved {
            best_values.copy_from_slice(&values);
        }
        if decision.stop {
            break;
        }
    }

    model.set_params(&best_values)?;
    let validation = evaluate(&model, val_set, objective)?;
    let report = RunReport {
        model: model.architecture().label(),
        seed: cfg.seed,
        config: *cfg,
        objective,
        train_losses,
        validation_losses,
        best_epoch: stopping.best_epoch(),
        stopped_epoch,
        filtered: validation.f1 <= 0.0,
        validation,
        evaluations: BTreeMap::new(),
    };
    Ok((model, report))
}

/// Adds test-split metrics for each named dataset to `report`.
pub fn evaluate_into(report: &mut RunReport, model: &Model, objective: Objective, tests: &[(&str, &[Sample])]) -> Result<()> {
    for (name, samples) in tests {
        if !samples.is_empty() {
            report.evaluations.insert((*name).to_string(), evaluate(model, samples, objective)?);
        }
    }
    Ok(())
}

/// Training data of one stage: train and validation splits.
#[derive(Clone, Copy, Debug)]
pub struct Stage<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
}

/// Trains on `first` to completion, then continues on `second` from the
/// resulting parameters. With `freeze_aggregation` the aggregation tensors
/// are not updated during the second stage. An empty second stage is skipped.
pub fn pretrain_then_finetune(
    model: Model,
    first: Stage<'_>,
    second: Stage<'_>,
    objective: Objective,
    cfg: &TrainConfig,
    freeze_aggregation: bool,
) -> Result<(Model, Vec<RunReport>)> {
    let stage1_cfg = TrainConfig {
        freeze_aggregation: false,
        ..*cfg
    };
    let (model, first_report) = train(model, first.train, first.val, objective, &stage1_cfg)?;
    if second.train.is_empty() {
        return Ok((model, vec![first_report]));
    }
    let stage2_cfg = TrainConfig {
        freeze_aggregation,
        ..*cfg
    };
    let (model, second_report) = train(model, second.train, second.val, objective, &stage2_cfg)?;
    Ok((model, vec![first_report, second_report]))
}
