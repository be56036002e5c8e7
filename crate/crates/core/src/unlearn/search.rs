//! Scoring, the alpha grid search and the sequential driver.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::projection::{apply_update, projection_matrices, ScalingCoefficients, Variant};
use super::space::{estimate_spaces, LayerSpaces};
use crate::data::{class_set, sample_representation_sets, sample_rows, Dataset, RepresentationSets, SampleBudget};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::nn::Model;

/// Penalised retain accuracy, `acc_r * (1 - acc_f / 100)`, on percentages.
pub fn score(acc_r: f64, acc_f: f64) -> Result<f64> {
    for (name, v) in [("acc_r", acc_r), ("acc_f", acc_f)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} is not a percentage")));
        }
    }
    Ok(acc_r * (1.0 - acc_f / 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub alpha_r_list: Vec<f64>,
    pub alpha_f_list: Vec<f64>,
    pub budget: SampleBudget,
    #[serde(default)]
    pub variant: Variant,
    /// Linear/conv layers with ordinal below this are left untouched.
    #[serde(default)]
    pub start_layer: usize,
    /// Stop the inner alpha_f loop once the candidate retain accuracy drops
    /// below this fraction of the original; 0 disables early stopping.
    #[serde(default = "default_stop_fraction")]
    pub inner_loop_stop_fraction: f64,
    /// Retain classes withheld from `X_r` and the retain score set.
    #[serde(default)]
    pub exclude_retain_classes: Vec<usize>,
}

fn default_stop_fraction() -> f64 {
    0.5
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self::cifar10_preset()
    }
}

impl UnlearnConfig {
    fn preset(alpha_r: &[f64], alpha_f: &[f64], per_class_r: usize, k_f: usize) -> Self {
        Self {
            alpha_r_list: alpha_r.to_vec(),
            alpha_f_list: alpha_f.to_vec(),
            budget: SampleBudget {
                k_r: per_class_r,
                k_f,
                per_class_r: Some(per_class_r),
                seed: 0,
            },
            variant: Variant::InputSuppression,
            start_layer: 0,
            inner_loop_stop_fraction: default_stop_fraction(),
            exclude_retain_classes: Vec::new(),
        }
    }

    pub fn cifar10_preset() -> Self {
        Self::preset(&[10.0, 30.0, 100.0, 300.0, 1000.0], &[3.0], 100, 900)
    }

    pub fn cifar100_preset() -> Self {
        Self::preset(&[100.0, 300.0, 1000.0], &[3.0, 10.0, 30.0, 100.0], 10, 990)
    }

    pub fn imagenet_preset() -> Self {
        Self::preset(
            &[30.0, 100.0, 300.0, 1000.0, 3000.0],
            &[3.0, 10.0, 30.0, 100.0, 300.0],
            1,
            500,
        )
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        if self.alpha_r_list.is_empty() || self.alpha_f_list.is_empty() {
            return Err(Error::invalid("alpha candidate lists must be non-empty"));
        }
        for &a in self.alpha_r_list.iter().chain(&self.alpha_f_list) {
            ScalingCoefficients::new(a, 1.0)?;
        }
        if self.start_layer >= layer_count {
            return Err(Error::invalid(format!(
                "start layer {} out of range for {layer_count} linear/conv layers",
                self.start_layer
            )));
        }
        if !(0.0..=1.0).contains(&self.inner_loop_stop_fraction) {
            return Err(Error::invalid("inner loop stop fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Samples, score sets and spaces shared by every grid candidate.
#[derive(Debug, Clone)]
pub struct SearchInputs {
    pub sets: RepresentationSets,
    /// `X_r` plus an equally sized disjoint retain sample.
    pub score_retain: Dataset,
    /// `X_f`.
    pub score_forget: Dataset,
    pub spaces: LayerSpaces,
}

pub fn prepare_search(
    model: &Model,
    train: &Dataset,
    forget_classes: &[usize],
    config: &UnlearnConfig,
) -> Result<SearchInputs> {
    config.validate(model.affine_layer_indices().len())?;
    let forget = class_set(forget_classes, train.num_classes)?;
    let sets = sample_representation_sets(train, forget_classes, &config.budget, &config.exclude_retain_classes)?;
    let excluded: BTreeSet<usize> = config.exclude_retain_classes.iter().copied().collect();
    let held_out = sample_rows(
        train,
        sets.retain.len(),
        |l| !forget.contains(&l) && !excluded.contains(&l),
        &sets.retain_indices,
        config.budget.seed.wrapping_add(1),
    )?;
    let score_retain = sets.retain.concat(&train.subset(&held_out))?;
    let score_forget = sets.forget.clone();
    let spaces = estimate_spaces(
        model,
        &sets.retain.inputs,
        &sets.forget.inputs,
        config.variant.needs_output(),
    )?;
    Ok(SearchInputs {
        sets,
        score_retain,
        score_forget,
        spaces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub alpha_r: f64,
    pub alpha_f: f64,
    pub acc_r: f64,
    pub acc_f: f64,
    pub score: f64,
    pub selected: bool,
}

/// Renders `alpha_r,alpha_f,acc_r,acc_f,score,selected` CSV.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("alpha_r,alpha_f,acc_r,acc_f,score,selected\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.alpha_r, r.alpha_f, r.acc_r, r.acc_f, r.score, r.selected
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: Model,
    /// `None` when no candidate beat the original model.
    pub coefficients: Option<ScalingCoefficients>,
    pub best_score: f64,
    pub original_acc_r: f64,
    pub original_acc_f: f64,
    pub original_score: f64,
    pub trace: Vec<TraceRow>,
}

/// Builds projections for `coeff`, applies them to a copy of `model`.
pub fn unlearn_with(
    model: &Model,
    spaces: &LayerSpaces,
    coeff: ScalingCoefficients,
    variant: Variant,
    start_layer: usize,
) -> Result<Model> {
    let proj = projection_matrices(spaces, coeff)?;
    apply_update(model, &proj, variant, start_layer)
}

/// Grid search over (alpha_r, alpha_f), keeping the highest-scoring model.
///
/// The original model is the first candidate, so the result never scores
/// below it; ties keep the earlier candidate.
pub fn grid_search_unlearn(
    model: &Model,
    train: &Dataset,
    forget_classes: &[usize],
    config: &UnlearnConfig,
) -> Result<SearchOutcome> {
    let inputs = prepare_search(model, train, forget_classes, config)?;
    search_prepared(model, &inputs, config)
}

pub fn search_prepared(model: &Model, inputs: &SearchInputs, config: &UnlearnConfig) -> Result<SearchOutcome> {
    config.validate(model.affine_layer_indices().len())?;
    if inputs.score_retain.is_empty() || inputs.score_forget.is_empty() {
        return Err(Error::InsufficientData("score datasets must be non-empty".into()));
    }
    let acc_r0 = accuracy(model, &inputs.score_retain)?;
    let acc_f0 = accuracy(model, &inputs.score_forget)?;
    let original_score = score(acc_r0, acc_f0)?;

    let mut best_score = original_score;
    let mut best: Option<(usize, ScalingCoefficients, Model)> = None;
    let mut trace = Vec::new();
    for &alpha_r in &config.alpha_r_list {
        for &alpha_f in &config.alpha_f_list {
            let coeff = ScalingCoefficients::new(alpha_r, alpha_f)?;
            let candidate = unlearn_with(model, &inputs.spaces, coeff, config.variant, config.start_layer)?;
            let acc_r = accuracy(&candidate, &inputs.score_retain)?;
            let acc_f = accuracy(&candidate, &inputs.score_forget)?;
            let s = score(acc_r, acc_f)?;
            trace.push(TraceRow {
                alpha_r,
                alpha_f,
                acc_r,
                acc_f,
                score: s,
                selected: false,
            });
            if s > best_score {
                best_score = s;
                best = Some((trace.len() - 1, coeff, candidate));
            }
            if acc_r < config.inner_loop_stop_fraction * acc_r0 {
                break;
            }
        }
    }
    let (model, coefficients) = match best {
        Some((row, coeff, m)) => {
            trace[row].selected = true;
            (m, Some(coeff))
        }
        None => (model.clone(), None),
    };
    Ok(SearchOutcome {
        model,
        coefficients,
        best_score,
        original_acc_r: acc_r0,
        original_acc_f: acc_f0,
        original_score,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_r: f64,
    pub alpha_f: f64,
    pub acc_r: f64,
    pub acc_f: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("alpha_r,alpha_f,acc_r,acc_f\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.alpha_r, r.alpha_f, r.acc_r, r.acc_f);
    }
    s
}

/// Evaluates every (alpha_r, alpha_f) pair without selection.
#[allow(clippy::too_many_arguments)]
pub fn sweep_alpha(
    model: &Model,
    spaces: &LayerSpaces,
    alpha_r_list: &[f64],
    alpha_f_list: &[f64],
    variant: Variant,
    start_layer: usize,
    eval_retain: &Dataset,
    eval_forget: &Dataset,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(alpha_r_list.len() * alpha_f_list.len());
    for &alpha_r in alpha_r_list {
        for &alpha_f in alpha_f_list {
            let coeff = ScalingCoefficients::new(alpha_r, alpha_f)?;
            let m = unlearn_with(model, spaces, coeff, variant, start_layer)?;
            rows.push(SweepRow {
                alpha_r,
                alpha_f,
                acc_r: accuracy(&m, eval_retain)?,
                acc_f: accuracy(&m, eval_forget)?,
            });
        }
    }
    Ok(rows)
}

/// One step of [`sequential_unlearn`].
#[derive(Debug, Clone)]
pub struct SequentialStep {
    pub forgotten_class: usize,
    /// All classes forgotten so far, in order.
    pub forgotten: Vec<usize>,
    pub outcome: SearchOutcome,
    /// Test accuracy on the classes still retained.
    pub test_acc_r: f64,
    /// Test accuracy on every class forgotten so far.
    pub test_acc_f: f64,
}

/// Forgets `order` one class at a time, feeding each result into the next
/// step. `X_r` at step `t` never contains classes forgotten earlier.
pub fn sequential_unlearn(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    order: &[usize],
    config: &UnlearnConfig,
) -> Result<Vec<SequentialStep>> {
    let distinct: BTreeSet<usize> = order.iter().copied().collect();
    if order.is_empty() || distinct.len() != order.len() {
        return Err(Error::invalid("forget order must list distinct classes"));
    }
    if train.num_classes < order.len() + 2 {
        return Err(Error::InsufficientData(format!(
            "forgetting {} of {} classes leaves fewer than two retain classes",
            order.len(),
            train.num_classes
        )));
    }
    let mut current = model.clone();
    let mut steps = Vec::with_capacity(order.len());
    let mut forgotten: Vec<usize> = Vec::new();
    for &class in order {
        let mut step_cfg = config.clone();
        step_cfg.exclude_retain_classes.extend(forgotten.iter().copied());
        step_cfg.exclude_retain_classes.sort_unstable();
        step_cfg.exclude_retain_classes.dedup();
        let outcome = grid_search_unlearn(&current, train, &[class], &step_cfg)?;
        forgotten.push(class);
        let gone: BTreeSet<usize> = forgotten.iter().copied().collect();
        let test_acc_r = accuracy(&outcome.model, &test.filter_classes(|l| !gone.contains(&l)))?;
        let test_acc_f = accuracy(&outcome.model, &test.filter_classes(|l| gone.contains(&l)))?;
        current = outcome.model.clone();
        steps.push(SequentialStep {
            forgotten_class: class,
            forgotten: forgotten.clone(),
            outcome,
            test_acc_r,
            test_acc_f,
        });
    }
    Ok(steps)
}
