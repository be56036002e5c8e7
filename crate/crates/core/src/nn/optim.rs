use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax_cross_entropy, Gradients, Mode, Model};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub clip_threshold: Option<f64>,
}

impl Default for TrainConfig {
    /// The toy recipe: SGD, lr 0.1, Nesterov momentum 0.9, 10 epochs.
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            nesterov: true,
            weight_decay: 0.0,
            epochs: 10,
            batch_size: 128,
            seed: 0,
            clip_threshold: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if let Some(c) = self.clip_threshold {
            if !(c > 0.0) {
                return Err(Error::invalid("clip threshold must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Descent,
    /// Gradient ascent on the loss, as used by NegGrad.
    Ascent,
}

/// SGD with optional (Nesterov) momentum and L2 weight decay, following the
/// PyTorch update rule.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            nesterov,
            weight_decay,
            velocity: None,
        }
    }

    /// Plain gradient step without momentum.
    pub fn plain(learning_rate: f64) -> Self {
        Self::new(learning_rate, 0.0, false, 0.0)
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.momentum, cfg.nesterov, cfg.weight_decay)
    }

    /// Applies `grads` (already oriented: the step moves against them).
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        let mut g = grads.clone();
        if self.weight_decay != 0.0 {
            for (gt, pt) in g.tensors.iter_mut().zip(model.param_tensors()) {
                for (gi, pi) in gt.iter_mut().zip(pt) {
                    *gi += self.weight_decay * pi;
                }
            }
        }
        if self.momentum != 0.0 {
            let buf = match self.velocity.as_mut() {
                Some(v) => {
                    v.scale(self.momentum);
                    v.add_scaled(&g, 1.0);
                    v
                }
                None => self.velocity.insert(g.clone()),
            };
            if self.nesterov {
                g.add_scaled(buf, self.momentum);
            } else {
                g = buf.clone();
            }
        }
        for (pt, gt) in model.param_tensors_mut().into_iter().zip(&g.tensors) {
            for (p, d) in pt.iter_mut().zip(gt) {
                *p -= self.learning_rate * d;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimiser step on a cross-entropy batch. `Ascent` negates the
/// gradient; `clip` bounds the global gradient norm before the step.
///
/// `mode` selects batchnorm behaviour; running statistics are updated only
/// in [`Mode::Train`].
pub fn backward_sgd_step(
    model: &mut Model,
    opt: &mut Sgd,
    batch: &Matrix,
    targets: &[usize],
    direction: Direction,
    clip: Option<f64>,
    mode: Mode,
) -> Result<StepOutcome> {
    let (mut grads, loss, tape) = loss_gradients(model, batch, targets, mode)?;
    if direction == Direction::Ascent {
        grads.scale(-1.0);
    }
    let grad_norm = match clip {
        Some(c) => grads.clip_norm(c),
        None => grads.norm(),
    };
    opt.step(model, &grads);
    model.update_running_stats(&tape);
    Ok(StepOutcome { loss, grad_norm })
}

/// Cross-entropy loss and its parameter gradients on one batch.
pub fn loss_gradients(
    model: &Model,
    batch: &Matrix,
    targets: &[usize],
    mode: Mode,
) -> Result<(Gradients, f64, super::Tape)> {
    let (logits, tape) = model.forward_tape(batch, mode)?;
    let (loss, d_logits) = softmax_cross_entropy(&logits, targets)?;
    let grads = model.backward(&tape, &d_logits)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok((grads, loss, tape))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Mini-batch training with a seeded per-epoch shuffle. The final partial
/// batch of an epoch is kept.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::from_config(cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let out = backward_sgd_step(
                model,
                &mut opt,
                &x,
                &y,
                Direction::Descent,
                cfg.clip_threshold,
                Mode::Train,
            )?;
            total += out.loss * chunk.len() as f64;
            report.steps += 1;
        }
        report.epoch_losses.push(total / data.len() as f64);
    }
    Ok(report)
}
