//! Command-line interface.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use unlearn_core::baselines::Method;
use unlearn_core::costmodel::{cost_csv, cost_sweep, CostParams};
use unlearn_core::eval::metrics_csv;
use unlearn_core::unlearn::{sweep_csv, trace_csv};
use unlearn_core::{Checkpoint, Model};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, layer_csv, reproduce_toy, sequential_csv, tuning_csv, write, Experiment};

#[derive(Debug, Parser)]
#[command(
    name = "unlearn",
    version,
    about = "Class unlearning by activation-subspace projection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment file; defaults to the built-in toy preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset used when no config file is given (toy or ring).
    #[arg(long, default_value = "toy")]
    pub preset: String,
    /// Output directory (overrides UNLEARN_OUT_DIR and the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed applied to data, initialisation, sampling and the attack.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct WithModel {
    #[command(flatten)]
    pub common: Common,
    /// Model checkpoint; when omitted the original model is trained first.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the original model and save a checkpoint.
    Train(Common),
    /// Grid-search projection unlearning for the configured forget set.
    Unlearn(WithModel),
    /// Run one baseline (retrain, neggrad, neggrad_plus).
    Baseline {
        #[command(flatten)]
        model: WithModel,
        #[arg(long)]
        method: Method,
    },
    /// Accuracy, attack and confusion metrics for a checkpoint.
    Eval(WithModel),
    /// Retain/forget accuracy while sweeping alpha_r, then alpha_f.
    SweepAlpha(WithModel),
    /// Grid search starting at each layer, for each variant.
    SweepLayers(WithModel),
    /// Decision-region SVG with test points.
    PlotBoundary(WithModel),
    /// Analytical cost of the update versus one retraining epoch.
    Cost {
        #[command(flatten)]
        common: Common,
        /// Transformer hidden sizes.
        #[arg(long, value_delimiter = ',', default_values_t = vec![384u64, 768, 1024, 1280, 1664])]
        hidden: Vec<u64>,
        /// Samples in one retraining epoch.
        #[arg(long, default_value_t = unlearn_core::costmodel::IMAGENET_RETAIN_SAMPLES)]
        n_r: u64,
    },
    /// Original, retrained, unlearned and baseline models end to end.
    ReproduceToy(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    Ok(match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn setup(c: &Common) -> Result<(Experiment, PathBuf)> {
    let cfg = load_config(c)?;
    let out = cfg.resolve_out_dir(c.out.as_deref());
    Ok((Experiment::new(cfg)?, out))
}

fn model_for(exp: &Experiment, checkpoint: Option<&Path>) -> Result<Model> {
    match checkpoint {
        Some(p) => {
            let model = Checkpoint::load(p)
                .with_context(|| format!("loading {}", p.display()))?
                .model()?;
            if model.input_dim() != exp.train.feature_dim() {
                bail!(
                    "checkpoint expects {} inputs, data has {}",
                    model.input_dim(),
                    exp.train.feature_dim()
                );
            }
            Ok(model)
        }
        None => exp.train_original(),
    }
}

fn save_model(exp: &Experiment, model: &Model, out: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    Checkpoint::new(model, Some(exp.cfg.train.clone()), Some(exp.cfg.seed)).save(&path)?;
    Ok(path)
}

fn write_records(out: &Path, records: &[unlearn_core::eval::MetricsRecord]) -> Result<()> {
    write(out, "metrics.json", &serde_json::to_string_pretty(records)?)?;
    write(out, "metrics.csv", &metrics_csv(records))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (exp, out) = setup(&c)?;
            let model = exp.train_original()?;
            let acc = unlearn_core::eval::accuracy(&model, &exp.test)?;
            let path = save_model(&exp, &model, &out, "model.json")?;
            println!("test accuracy {acc:.2}%  checkpoint {}", path.display());
        }
        Command::Unlearn(m) => {
            let (exp, out) = setup(&m.common)?;
            let model = model_for(&exp, m.checkpoint.as_deref())?;
            let forget = exp.cfg.forget.classes.clone();
            let splits = exp.splits(&forget)?;
            let inputs = exp.prepare(&model, &forget)?;
            let outcome = exp.unlearn(&model, &inputs)?;
            write(&out, "trace.csv", &trace_csv(&outcome.trace))?;
            save_model(&exp, &outcome.model, &out, "unlearned.json")?;
            let rec = exp.record("unlearn", &outcome.model, &splits, true)?;
            println!(
                "acc_r {:.2}%  acc_f {:.2}%  mia {:.2}%  coefficients {:?}",
                rec.acc_r,
                rec.acc_f,
                rec.mia.unwrap_or(f64::NAN),
                outcome.coefficients
            );
            let mut records = vec![rec];
            if !exp.cfg.forget.sequence.is_empty() {
                let steps = exp.sequential(&model)?;
                write(&out, "sequential.csv", &sequential_csv(&steps))?;
                for s in &steps {
                    println!(
                        "forgot {:?}: acc_r {:.2}%  acc_f {:.2}%",
                        s.forgotten, s.test_acc_r, s.test_acc_f
                    );
                }
                if let Some(last) = steps.last() {
                    let seq_splits = exp.splits(&last.forgotten)?;
                    records.push(exp.record("sequential", &last.outcome.model, &seq_splits, false)?);
                }
            }
            write_records(&out, &records)?;
        }
        Command::Baseline { model: m, method } => {
            let (exp, out) = setup(&m.common)?;
            let forget = exp.cfg.forget.classes.clone();
            let splits = exp.splits(&forget)?;
            let result = match method {
                Method::Retrain => exp.retrain(&splits)?,
                _ => {
                    let model = model_for(&exp, m.checkpoint.as_deref())?;
                    let inputs = exp.prepare(&model, &forget)?;
                    let tuned = exp.tuned_baseline(&model, &splits, &inputs, method)?;
                    write(&out, &format!("tuning_{method}.csv"), &tuning_csv(&tuned.rows))?;
                    println!("learning rate {}  steps {}", tuned.best.learning_rate, tuned.best.steps);
                    tuned.best.model
                }
            };
            save_model(&exp, &result, &out, &format!("{method}.json"))?;
            let rec = exp.record(&method.to_string(), &result, &splits, true)?;
            println!(
                "acc_r {:.2}%  acc_f {:.2}%  mia {:.2}%",
                rec.acc_r,
                rec.acc_f,
                rec.mia.unwrap_or(f64::NAN)
            );
            write_records(&out, &[rec])?;
        }
        Command::Eval(m) => {
            let (exp, out) = setup(&m.common)?;
            let model = model_for(&exp, m.checkpoint.as_deref())?;
            let splits = exp.splits(&exp.cfg.forget.classes)?;
            let rec = exp.record("eval", &model, &splits, true)?;
            println!(
                "acc_r {:.2}%  acc_f {:.2}%  mia {:.2}%  score {:.2}",
                rec.acc_r,
                rec.acc_f,
                rec.mia.unwrap_or(f64::NAN),
                rec.score
            );
            write_records(&out, &[rec])?;
        }
        Command::SweepAlpha(m) => {
            let (exp, out) = setup(&m.common)?;
            let model = model_for(&exp, m.checkpoint.as_deref())?;
            let forget = exp.cfg.forget.classes.clone();
            let splits = exp.splits(&forget)?;
            let inputs = exp.prepare(&model, &forget)?;
            let (by_r, by_f) = exp.alpha_sweeps(&model, &splits, &inputs)?;
            write(&out, "sweep_alpha_r.csv", &sweep_csv(&by_r))?;
            write(&out, "sweep_alpha_f.csv", &sweep_csv(&by_f))?;
            print!("{}{}", sweep_csv(&by_r), sweep_csv(&by_f));
        }
        Command::SweepLayers(m) => {
            let (exp, out) = setup(&m.common)?;
            let model = model_for(&exp, m.checkpoint.as_deref())?;
            let splits = exp.splits(&exp.cfg.forget.classes)?;
            let rows = exp.layer_sweep(&model, &splits)?;
            let csv = layer_csv(&rows);
            write(&out, "sweep_layers.csv", &csv)?;
            print!("{csv}");
        }
        Command::PlotBoundary(m) => {
            let (exp, out) = setup(&m.common)?;
            let model = model_for(&exp, m.checkpoint.as_deref())?;
            let title = m
                .checkpoint
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "original".into());
            let name = format!("boundary_{title}.svg");
            write(&out, &name, &exp.boundary_svg(&model, &title)?)?;
            println!("{}", out.join(name).display());
        }
        Command::Cost { common, hidden, n_r } => {
            let cfg = load_config(&common)?;
            let out = cfg.resolve_out_dir(common.out.as_deref());
            let params = CostParams {
                n_r,
                ..CostParams::imagenet(0, 0)
            };
            let rows = cost_sweep(&hidden, &params)?;
            let csv = cost_csv(&rows);
            write(&out, "cost.csv", &csv)?;
            print!("{csv}");
        }
        Command::ReproduceToy(c) => {
            let (exp, out) = setup(&c)?;
            let report = reproduce_toy(&exp)?;
            pipeline::write_toy_outputs(&exp, &report, &out)?;
            for r in &report.records {
                println!(
                    "{:<13} acc_r {:6.2}%  acc_f {:6.2}%  mia {:6.2}%",
                    r.method,
                    r.acc_r,
                    r.acc_f,
                    r.mia.unwrap_or(f64::NAN)
                );
            }
            for (label, d) in &report.timings {
                println!("{label}: {:.2}s", d.as_secs_f64());
            }
            println!("outputs in {}", out.display());
        }
    }
    Ok(())
}
