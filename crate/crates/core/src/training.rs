//! Supervised training: Adam with decoupled weight decay, shuffled
//! mini-batches, validation-loss early stopping, balanced accuracy.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::model::{Model, ModelError, ModelParams, ModelSpec};
use crate::synthdata::{load_split, DataError, DatasetManifest, Split};
use crate::tensor::{bce_with_logits, Tensor};
use crate::util::{derive_rng, fmt_f64, purpose};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("balanced accuracy is undefined: labels contain only class {0}")]
    UndefinedMetric(u8),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    /// Lesion-task hyperparameters with a desk-scale batch size.
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            patience: 7,
            max_epochs: 30,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for each parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(names: Vec<String>, params: &[&Tensor]) -> Self {
        assert_eq!(names.len(), params.len());
        Self {
            names,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        Self::new(params.tensor_names(), &params.tensors())
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update in place, with decoupled weight decay:
/// `θ ← θ − lr·(m̂ / (√v̂ + eps) + wd·θ)`.
///
/// Gradients are validated before anything is touched, so a rejected step
/// leaves parameters and state unchanged.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    for (i, g) in grads.iter().enumerate() {
        assert_eq!(g.shape(), params[i].shape(), "gradient shape for {}", state.names[i]);
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                tensor: state.names[i].clone(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((theta, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * *theta);
        }
    }
    Ok(())
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(labels: &[u8], predictions: &[u8]) -> Result<f64, TrainError> {
    assert_eq!(labels.len(), predictions.len());
    let mut counts = [[0usize; 2]; 2];
    for (&l, &p) in labels.iter().zip(predictions) {
        counts[usize::from(l != 0)][usize::from(p != 0)] += 1;
    }
    let negatives = counts[0][0] + counts[0][1];
    let positives = counts[1][0] + counts[1][1];
    if positives == 0 {
        return Err(TrainError::UndefinedMetric(0));
    }
    if negatives == 0 {
        return Err(TrainError::UndefinedMetric(1));
    }
    let sensitivity = counts[1][1] as f64 / positives as f64;
    let specificity = counts[0][0] as f64 / negatives as f64;
    Ok((sensitivity + specificity) / 2.0)
}

/// Predicted class for a logit: sigmoid(logit) >= 0.5.
pub fn predict(logit: f64) -> u8 {
    u8::from(logit >= 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: f64,
}

/// Renders metrics as the plain-text trace written next to checkpoints.
pub fn metrics_table(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_balanced_accuracy\n");
    for m in metrics {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            m.epoch,
            fmt_f64(m.train_loss),
            fmt_f64(m.val_loss),
            fmt_f64(m.val_balanced_accuracy)
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean loss and balanced accuracy of `model` over `samples`.
pub fn evaluate(model: &Model, samples: &[(Tensor, u8)]) -> Result<(f64, f64), TrainError> {
    let results: Vec<(f64, u8)> = samples
        .par_iter()
        .map(|(x, y)| {
            let (logit, _) = model.forward_logit(x)?;
            Ok((bce_with_logits(logit, *y).0, predict(logit)))
        })
        .collect::<Result<_, ModelError>>()?;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / samples.len() as f64;
    let labels: Vec<u8> = samples.iter().map(|s| s.1).collect();
    let preds: Vec<u8> = results.iter().map(|r| r.1).collect();
    Ok((loss, balanced_accuracy(&labels, &preds)?))
}

/// Mean batch loss and the mean parameter gradient. Per-sample gradients are
/// summed in batch order so the result does not depend on thread count.
pub fn batch_gradient(
    model: &Model,
    batch: &[&(Tensor, u8)],
) -> Result<(f64, ModelParams), ModelError> {
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|(x, y)| {
            let (logit, cache) = model.forward_logit(x)?;
            let (loss, dlogit) = bce_with_logits(logit, *y);
            Ok((loss, model.backward_logit(&cache, dlogit * scale)?))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l * scale;
        for (acc, gi) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc.axpy(1.0, gi)?;
        }
    }
    Ok((loss, grads))
}

/// Trains on in-memory samples. `progress` sees every epoch's metrics.
pub fn train_on(
    spec: &ModelSpec,
    train: &[(Tensor, u8)],
    val: &[(Tensor, u8)],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("train and validation splits must be non-empty".into()));
    }
    let mut model = Model::build(spec.clone(), config.seed)?;
    let mut state = AdamState::for_model(&model.params);
    let adam = config.adam();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params.clone();
    let mut best_acc = 0.0;
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut derive_rng(config.seed, purpose::SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&(Tensor, u8)> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut model.params.tensors_mut(), &grads.tensors(), &mut state, &adam)?;
        }
        let (val_loss, val_acc) = evaluate(&model, val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_balanced_accuracy: val_acc,
        };
        progress(&m);
        metrics.push(m);
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => {
                best_params = model.params.clone();
                best_acc = val_acc;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let meta = TrainingMetadata {
        seed: config.seed,
        epochs_run: metrics.len(),
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
        best_val_balanced_accuracy: best_acc,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: Model {
                spec: spec.clone(),
                params: best_params,
            },
            meta,
        },
        metrics,
    })
}

/// Loads the train and validation splits of a dataset and trains on them.
pub fn train(
    spec: &ModelSpec,
    root: &Path,
    manifest: &DatasetManifest,
    config: &TrainConfig,
    progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, TrainError> {
    if (spec.input_height, spec.input_width) != (manifest.phantom.height, manifest.phantom.width) {
        return Err(TrainError::Config(format!(
            "model input {}x{} does not match dataset images {}x{}",
            spec.input_height, spec.input_width, manifest.phantom.height, manifest.phantom.width
        )));
    }
    let train_set = load_split(root, manifest, Split::Train)?;
    let val_set = load_split(root, manifest, Split::Val)?;
    train_on(spec, &train_set, &val_set, config, progress)
}
