//! Experiment steps shared by the subcommands and the acceptance suite.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use unlearn_core::baselines::{self, Method, TuningRow};
use unlearn_core::data::split_by_class;
use unlearn_core::eval::{
    confusion_matrix, decision_grid, evaluate, metrics_csv, mia_attack, redistribution_report, MetricsRecord,
    MiaResult, RedistributionReport,
};
use unlearn_core::nn::{train, LayerSpec};
use unlearn_core::unlearn::{
    prepare_search, score, search_prepared, sequential_unlearn, sweep_alpha, trace_csv, SearchInputs, SearchOutcome,
    SequentialStep, SweepRow,
};
use unlearn_core::{Checkpoint, Dataset, Model, UnlearnConfig, Variant};

use crate::config::ExperimentConfig;
use crate::svg::decision_svg;

/// Train and test data split by a forget set.
#[derive(Debug, Clone)]
pub struct Splits {
    pub forget_classes: Vec<usize>,
    pub train_r: Dataset,
    pub train_f: Dataset,
    pub test_r: Dataset,
    pub test_f: Dataset,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub arch: Vec<LayerSpec>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = cfg.dataset.load(cfg.seed)?;
        let arch = cfg.architecture();
        Ok(Self { cfg, train, test, arch })
    }

    pub fn splits(&self, forget: &[usize]) -> Result<Splits> {
        let (train_r, train_f) = split_by_class(&self.train, forget)?;
        let (test_r, test_f) = split_by_class(&self.test, forget)?;
        Ok(Splits {
            forget_classes: forget.to_vec(),
            train_r,
            train_f,
            test_r,
            test_f,
        })
    }

    pub fn train_original(&self) -> Result<Model> {
        let mut model = Model::new(&self.arch, self.cfg.seed)?;
        train(&mut model, &self.train, &self.cfg.train)?;
        Ok(model)
    }

    pub fn retrain(&self, splits: &Splits) -> Result<Model> {
        Ok(baselines::retrain(&self.arch, &splits.train_r, &self.cfg.train)?)
    }

    pub fn prepare(&self, model: &Model, forget: &[usize]) -> Result<SearchInputs> {
        Ok(prepare_search(model, &self.train, forget, &self.cfg.unlearn)?)
    }

    pub fn unlearn(&self, model: &Model, inputs: &SearchInputs) -> Result<SearchOutcome> {
        Ok(search_prepared(model, inputs, &self.cfg.unlearn)?)
    }

    pub fn unlearn_with_config(
        &self,
        model: &Model,
        forget: &[usize],
        config: &UnlearnConfig,
    ) -> Result<SearchOutcome> {
        let inputs = prepare_search(model, &self.train, forget, config)?;
        Ok(search_prepared(model, &inputs, config)?)
    }

    /// Tunes NegGrad or NegGrad+ over the configured learning rates,
    /// validating on the search's score sets.
    pub fn tuned_baseline(
        &self,
        model: &Model,
        splits: &Splits,
        inputs: &SearchInputs,
        method: Method,
    ) -> Result<baselines::Tuned> {
        let cfg = baselines::BaselineConfig {
            method,
            ..self.cfg.baselines.settings.clone()
        };
        Ok(baselines::tune_learning_rate(
            model,
            &splits.train_r,
            &splits.train_f,
            &inputs.score_retain,
            &inputs.score_forget,
            &cfg,
            &self.cfg.baselines.learning_rates,
        )?)
    }

    pub fn mia(&self, model: &Model, splits: &Splits) -> Result<MiaResult> {
        Ok(mia_attack(
            model,
            &splits.train_r,
            &splits.test_r,
            &splits.train_f,
            splits.forget_classes[0],
            &self.cfg.mia,
        )?)
    }

    pub fn record(&self, method: &str, model: &Model, splits: &Splits, with_mia: bool) -> Result<MetricsRecord> {
        let eval = evaluate(model, &splits.test_r, &splits.test_f)?;
        let mia = if with_mia { Some(self.mia(model, splits)?) } else { None };
        Ok(MetricsRecord::new(
            method,
            &splits.forget_classes,
            eval,
            mia.as_ref(),
            self.cfg.snapshot(),
        )?)
    }

    pub fn sequential(&self, model: &Model) -> Result<Vec<SequentialStep>> {
        Ok(sequential_unlearn(
            model,
            &self.train,
            &self.test,
            &self.cfg.forget.sequence,
            &self.cfg.unlearn,
        )?)
    }

    /// alpha_r swept at the fixed alpha_f, then alpha_f swept at the fixed
    /// alpha_r, both evaluated on test data.
    pub fn alpha_sweeps(
        &self,
        model: &Model,
        splits: &Splits,
        inputs: &SearchInputs,
    ) -> Result<(Vec<SweepRow>, Vec<SweepRow>)> {
        let a = &self.cfg.ablation;
        let u = &self.cfg.unlearn;
        let by_r = sweep_alpha(
            model,
            &inputs.spaces,
            &a.alpha_r_sweep,
            &[a.fixed_alpha_f],
            u.variant,
            u.start_layer,
            &splits.test_r,
            &splits.test_f,
        )?;
        let by_f = sweep_alpha(
            model,
            &inputs.spaces,
            &[a.fixed_alpha_r],
            &a.alpha_f_sweep,
            u.variant,
            u.start_layer,
            &splits.test_r,
            &splits.test_f,
        )?;
        Ok((by_r, by_f))
    }

    /// Full grid search for every (variant, start layer) pair.
    pub fn layer_sweep(&self, model: &Model, splits: &Splits) -> Result<Vec<LayerRow>> {
        let layers = model.affine_layer_indices().len();
        let mut rows = Vec::new();
        for &variant in &self.cfg.ablation.variants {
            for &start_layer in self.cfg.ablation.start_layers.iter().filter(|&&l| l < layers) {
                let config = UnlearnConfig {
                    variant,
                    start_layer,
                    ..self.cfg.unlearn.clone()
                };
                let out = self.unlearn_with_config(model, &splits.forget_classes, &config)?;
                let eval = evaluate(&out.model, &splits.test_r, &splits.test_f)?;
                rows.push(LayerRow {
                    variant,
                    start_layer,
                    alpha_r: out.coefficients.map(|c| c.alpha_r),
                    alpha_f: out.coefficients.map(|c| c.alpha_f),
                    acc_r: eval.acc_r,
                    acc_f: eval.acc_f,
                    score: score(eval.acc_r, eval.acc_f)?,
                });
            }
        }
        Ok(rows)
    }

    pub fn boundary_svg(&self, model: &Model, title: &str) -> Result<String> {
        let p = &self.cfg.plot;
        let grid = decision_grid(model, p.lo, p.hi, p.resolution)?;
        let points = self.plot_points();
        Ok(decision_svg(&grid, p.lo, p.hi, Some(&points), title))
    }

    /// The first `points_per_class` test samples of every class.
    pub fn plot_points(&self) -> Dataset {
        let mut seen = vec![0usize; self.test.num_classes];
        let idx: Vec<usize> = (0..self.test.len())
            .filter(|&i| {
                let c = &mut seen[self.test.labels[i]];
                *c += 1;
                *c <= self.cfg.plot.points_per_class
            })
            .collect();
        self.test.subset(&idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRow {
    pub variant: Variant,
    pub start_layer: usize,
    pub alpha_r: Option<f64>,
    pub alpha_f: Option<f64>,
    pub acc_r: f64,
    pub acc_f: f64,
    pub score: f64,
}

pub fn layer_csv(rows: &[LayerRow]) -> String {
    let mut s = String::from("variant,start_layer,alpha_r,alpha_f,acc_r,acc_f,score\n");
    for r in rows {
        let v = serde_json::to_value(r.variant)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{v},{},{},{},{},{},{}",
            r.start_layer,
            opt(r.alpha_r),
            opt(r.alpha_f),
            r.acc_r,
            r.acc_f,
            r.score
        );
    }
    s
}

pub fn tuning_csv(rows: &[TuningRow]) -> String {
    let mut s = String::from("learning_rate,steps,acc_r,acc_f,score\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.learning_rate, r.steps, r.acc_r, r.acc_f, r.score);
    }
    s
}

pub fn sequential_csv(steps: &[SequentialStep]) -> String {
    let mut s = String::from("step,class,alpha_r,alpha_f,test_acc_r,test_acc_f\n");
    for (i, st) in steps.iter().enumerate() {
        let c = st.outcome.coefficients;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            i + 1,
            st.forgotten_class,
            opt(c.map(|c| c.alpha_r)),
            opt(c.map(|c| c.alpha_f)),
            st.test_acc_r,
            st.test_acc_f
        );
    }
    s
}

/// Everything the full toy reproduction produces.
#[derive(Debug, Clone)]
pub struct ToyReport {
    pub splits: Splits,
    pub original: Model,
    pub retrained: Model,
    pub search: SearchOutcome,
    pub baselines: Vec<(Method, baselines::Tuned)>,
    pub records: Vec<MetricsRecord>,
    pub redistribution: RedistributionReport,
    pub sequential: Vec<SequentialStep>,
    pub timings: Vec<(String, Duration)>,
}

impl ToyReport {
    pub fn record(&self, method: &str) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.method == method)
    }

    pub fn model(&self, method: &str) -> Option<&Model> {
        match method {
            "original" => Some(&self.original),
            "retrain" => Some(&self.retrained),
            "unlearn" => Some(&self.search.model),
            other => self
                .baselines
                .iter()
                .find(|(m, _)| m.to_string() == other)
                .map(|(_, t)| &t.best.model),
        }
    }
}

pub fn reproduce_toy(exp: &Experiment) -> Result<ToyReport> {
    let forget = exp.cfg.forget.classes.clone();
    let splits = exp.splits(&forget)?;
    let mut timings = Vec::new();
    let mut timed = |label: &str, t: Instant| timings.push((label.to_string(), t.elapsed()));

    let t = Instant::now();
    let original = exp.train_original()?;
    timed("train original", t);

    let t = Instant::now();
    let methods = &exp.cfg.baselines.methods;
    let retrained = exp.retrain(&splits)?;
    timed("retrain", t);

    let t = Instant::now();
    let inputs = exp.prepare(&original, &forget)?;
    let search = exp.unlearn(&original, &inputs)?;
    timed("unlearn", t);

    let t = Instant::now();
    let mut tuned = Vec::new();
    for &m in methods.iter().filter(|&&m| m != Method::Retrain) {
        tuned.push((m, exp.tuned_baseline(&original, &splits, &inputs, m)?));
    }
    timed("neggrad baselines", t);

    let mut records = vec![
        exp.record("original", &original, &splits, true)?,
        exp.record("retrain", &retrained, &splits, true)?,
        exp.record("unlearn", &search.model, &splits, true)?,
    ];
    for (m, t) in &tuned {
        records.push(exp.record(&m.to_string(), &t.best.model, &splits, true)?);
    }

    let before = confusion_matrix(&original, &exp.test)?;
    let after = confusion_matrix(&search.model, &exp.test)?;
    let redistribution = redistribution_report(&before, &after, forget[0])?;

    let sequential = if exp.cfg.forget.sequence.is_empty() {
        Vec::new()
    } else {
        exp.sequential(&original)?
    };

    Ok(ToyReport {
        splits,
        original,
        retrained,
        search,
        baselines: tuned,
        records,
        redistribution,
        sequential,
        timings,
    })
}

/// Writes metrics, traces, plots, and checkpoints. Nothing written depends
/// on timing or on the output location.
pub fn write_toy_outputs(exp: &Experiment, report: &ToyReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    write(out, "metrics.json", &serde_json::to_string_pretty(&report.records)?)?;
    write(out, "metrics.csv", &metrics_csv(&report.records))?;
    write(out, "trace.csv", &trace_csv(&report.search.trace))?;
    write(
        out,
        "redistribution.json",
        &serde_json::to_string_pretty(&report.redistribution)?,
    )?;
    for (m, t) in &report.baselines {
        write(out, &format!("tuning_{m}.csv"), &tuning_csv(&t.rows))?;
    }
    if !report.sequential.is_empty() {
        write(out, "sequential.csv", &sequential_csv(&report.sequential))?;
    }
    let mut names: Vec<String> = vec!["original".into(), "retrain".into(), "unlearn".into()];
    names.extend(report.baselines.iter().map(|(m, _)| m.to_string()));
    for name in &names {
        let model = report.model(name).expect("known method");
        let ckpt = Checkpoint::new(model, Some(exp.cfg.train.clone()), Some(exp.cfg.seed));
        ckpt.save(&out.join("checkpoints").join(format!("{name}.json")))?;
        if model.input_dim() == 2 {
            write(out, &format!("boundary_{name}.svg"), &exp.boundary_svg(model, name)?)?;
        }
    }
    Ok(())
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Classes next to `class` on the unit grid or ring, i.e. the two whose
/// means are closest.
pub fn adjacent_classes(means: &[Vec<f64>], class: usize) -> Result<Vec<usize>> {
    if class >= means.len() || means.len() < 3 {
        bail!("need at least three classes and a valid class index");
    }
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut others: Vec<usize> = (0..means.len()).filter(|&c| c != class).collect();
    others.sort_by(|&a, &b| {
        d(&means[a], &means[class])
            .total_cmp(&d(&means[b], &means[class]))
            .then(a.cmp(&b))
    });
    Ok(others[..2].to_vec())
}

/// Grid cells predicting any of `classes`.
pub fn grid_cells_predicting(grid: &[Vec<usize>], classes: &[usize]) -> usize {
    let set: BTreeSet<usize> = classes.iter().copied().collect();
    grid.iter().flatten().filter(|c| set.contains(c)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_neighbours_share_a_coordinate() {
        let means = unlearn_core::data::toy_means();
        assert_eq!(adjacent_classes(&means, 0).unwrap(), vec![1, 3]);
        let ring = unlearn_core::data::ring_means(8, 1.0);
        let mut n = adjacent_classes(&ring, 0).unwrap();
        n.sort_unstable();
        assert_eq!(n, vec![1, 7]);
    }

    #[test]
    fn counts_forgotten_cells() {
        let grid = vec![vec![0, 1], vec![2, 0]];
        assert_eq!(grid_cells_predicting(&grid, &[0]), 2);
        assert_eq!(grid_cells_predicting(&grid, &[1, 2]), 2);
    }
}
