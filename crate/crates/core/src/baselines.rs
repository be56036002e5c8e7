//! Reference unlearning methods: retraining from scratch, gradient ascent
//! on the forget data (NegGrad) and ascent interleaved with retain descent
//! (NegGrad+).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::nn::{loss_gradients, train, LayerSpec, Mode, Model, Sgd, TrainConfig};
use crate::unlearn::score;

/// Learning rates tried when tuning the gradient-ascent baselines.
pub const LEARNING_RATE_GRID: [f64; 7] = [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Retrain,
    Neggrad,
    NeggradPlus,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrain" => Ok(Method::Retrain),
            "neggrad" => Ok(Method::Neggrad),
            "neggrad_plus" | "neggrad+" => Ok(Method::NeggradPlus),
            other => Err(Error::invalid(format!("unknown baseline method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Retrain => "retrain",
            Method::Neggrad => "neggrad",
            Method::NeggradPlus => "neggrad_plus",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub check_interval: usize,
    /// Forget accuracy, as a fraction, below which ascent stops.
    pub acc_f_threshold: f64,
    pub clip_threshold: f64,
    pub forget_batch_size: usize,
    pub retain_batch_size: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: Method::NeggradPlus,
            learning_rate: 1e-3,
            max_steps: 500,
            check_interval: 100,
            acc_f_threshold: 0.1,
            clip_threshold: 1.0,
            forget_batch_size: 128,
            retain_batch_size: 128,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !(self.acc_f_threshold > 0.0 && self.acc_f_threshold < 1.0) {
            return Err(Error::invalid("acc_f threshold must lie in (0, 1)"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::invalid("clip threshold must be positive"));
        }
        if self.max_steps == 0 || self.check_interval == 0 {
            return Err(Error::invalid("step counts must be positive"));
        }
        if self.forget_batch_size == 0 || self.retain_batch_size == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        Ok(())
    }
}

/// Result of a gradient-based baseline run.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: Model,
    pub learning_rate: f64,
    /// Optimiser steps actually taken.
    pub steps: usize,
    /// `(step, acc_f as a fraction)` at every periodic check.
    pub checks: Vec<(usize, f64)>,
}

/// Endless stream of shuffled mini-batches; reshuffles after each pass.
struct BatchStream<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    fn new(data: &'a Dataset, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Self {
            data,
            order,
            pos: 0,
            size: size.min(data.len()),
            rng,
        }
    }

    fn next_batch(&mut self) -> (crate::linalg::Matrix, Vec<usize>) {
        if self.pos + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let idx = &self.order[self.pos..self.pos + self.size];
        self.pos += self.size;
        self.data.batch(idx)
    }
}

fn fraction(model: &Model, data: &Dataset) -> Result<f64> {
    Ok(accuracy(model, data)? / 100.0)
}

/// Trains a fresh model of the same architecture on the retain data only.
/// The output head keeps every class; forget labels are simply never seen.
pub fn retrain(arch: &[LayerSpec], retain: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    if retain.is_empty() {
        return Err(Error::InsufficientData("retain set is empty".into()));
    }
    let mut model = Model::new(arch, cfg.seed)?;
    train(&mut model, retain, cfg)?;
    Ok(model)
}

/// Clipped gradient ascent on the forget data. Every `check_interval`
/// steps the forget accuracy of the current model is measured and ascent
/// stops once it is below the threshold.
pub fn neggrad(model: &Model, forget: &Dataset, cfg: &BaselineConfig) -> Result<BaselineRun> {
    cfg.validate()?;
    if forget.is_empty() {
        return Err(Error::InsufficientData("forget set is empty".into()));
    }
    let mut theta = model.clone();
    let mut opt = Sgd::plain(cfg.learning_rate);
    let mut stream = BatchStream::new(forget, cfg.forget_batch_size, cfg.seed);
    let mut checks = Vec::new();
    let mut steps = 0;
    for step in 1..=cfg.max_steps {
        let (x, y) = stream.next_batch();
        let (mut g, _, _) = loss_gradients(&theta, &x, &y, Mode::Eval)?;
        g.clip_norm(cfg.clip_threshold);
        g.scale(-1.0);
        opt.step(&mut theta, &g);
        steps = step;
        if step % cfg.check_interval == 0 {
            let acc_f = fraction(&theta, forget)?;
            checks.push((step, acc_f));
            if acc_f < cfg.acc_f_threshold {
                break;
            }
        }
    }
    Ok(BaselineRun {
        model: theta,
        learning_rate: cfg.learning_rate,
        steps,
        checks,
    })
}

/// Ascent on forget batches plus descent on retain batches for
/// `max_steps` steps. Ascent is switched off while the most recently
/// measured forget accuracy is at or below the threshold.
pub fn neggrad_plus(model: &Model, retain: &Dataset, forget: &Dataset, cfg: &BaselineConfig) -> Result<BaselineRun> {
    neggrad_plus_inner(model, retain, forget, cfg, false)
}

pub(crate) fn neggrad_plus_inner(
    model: &Model,
    retain: &Dataset,
    forget: &Dataset,
    cfg: &BaselineConfig,
    disable_ascent: bool,
) -> Result<BaselineRun> {
    cfg.validate()?;
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::InsufficientData("neggrad+ needs retain and forget data".into()));
    }
    let mut theta = model.clone();
    let mut opt = Sgd::plain(cfg.learning_rate);
    let mut forget_stream = BatchStream::new(forget, cfg.forget_batch_size, cfg.seed);
    let mut retain_stream = BatchStream::new(retain, cfg.retain_batch_size, cfg.seed.wrapping_add(1));
    let mut acc_f = fraction(&theta, forget)?;
    let mut checks = vec![(0, acc_f)];
    for step in 1..=cfg.max_steps {
        let (xr, yr) = retain_stream.next_batch();
        let (mut g, _, _) = loss_gradients(&theta, &xr, &yr, Mode::Eval)?;
        if !disable_ascent && acc_f > cfg.acc_f_threshold {
            let (xf, yf) = forget_stream.next_batch();
            let (mut ga, _, _) = loss_gradients(&theta, &xf, &yf, Mode::Eval)?;
            ga.clip_norm(cfg.clip_threshold);
            g.add_scaled(&ga, -1.0);
        }
        opt.step(&mut theta, &g);
        if step % cfg.check_interval == 0 {
            acc_f = fraction(&theta, forget)?;
            checks.push((step, acc_f));
        }
    }
    Ok(BaselineRun {
        model: theta,
        learning_rate: cfg.learning_rate,
        steps: cfg.max_steps,
        checks,
    })
}

/// One candidate of a learning-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub learning_rate: f64,
    pub steps: usize,
    pub acc_r: f64,
    pub acc_f: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Tuned {
    pub best: BaselineRun,
    pub rows: Vec<TuningRow>,
}

/// Runs NegGrad or NegGrad+ for every learning rate in `grid` and keeps the
/// run with the highest score on the validation sets (first wins on ties).
pub fn tune_learning_rate(
    model: &Model,
    retain: &Dataset,
    forget: &Dataset,
    val_retain: &Dataset,
    val_forget: &Dataset,
    cfg: &BaselineConfig,
    grid: &[f64],
) -> Result<Tuned> {
    if grid.is_empty() {
        return Err(Error::invalid("learning-rate grid is empty"));
    }
    let mut best: Option<(f64, BaselineRun)> = None;
    let mut rows = Vec::with_capacity(grid.len());
    for &lr in grid {
        let c = BaselineConfig {
            learning_rate: lr,
            ..cfg.clone()
        };
        let run = match cfg.method {
            Method::Neggrad => neggrad(model, forget, &c)?,
            Method::NeggradPlus => neggrad_plus(model, retain, forget, &c)?,
            Method::Retrain => return Err(Error::invalid("retraining has no learning-rate sweep")),
        };
        let acc_r = accuracy(&run.model, val_retain)?;
        let acc_f = accuracy(&run.model, val_forget)?;
        let s = score(acc_r, acc_f)?;
        rows.push(TuningRow {
            learning_rate: lr,
            steps: run.steps,
            acc_r,
            acc_f,
            score: s,
        });
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, run));
        }
    }
    Ok(Tuned {
        best: best.expect("non-empty grid").1,
        rows,
    })
}
