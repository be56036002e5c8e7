//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use unlearn_core::baselines::{BaselineConfig, Method, LEARNING_RATE_GRID};
use unlearn_core::data::{make_gaussian_grid, ring_means, toy_means};
use unlearn_core::eval::MiaConfig;
use unlearn_core::nn::{mlp_with_batchnorm, LayerSpec};
use unlearn_core::{Dataset, Split, TrainConfig, UnlearnConfig, Variant};

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "UNLEARN_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs at explicit means.
    GaussianGrid {
        means: Vec<Vec<f64>>,
        std: f64,
        n_train_per_class: usize,
        n_test_per_class: usize,
    },
    /// Blobs evenly spaced on a circle.
    Ring {
        classes: usize,
        radius: f64,
        std: f64,
        n_train_per_class: usize,
        n_test_per_class: usize,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

impl DatasetConfig {
    pub fn toy() -> Self {
        DatasetConfig::GaussianGrid {
            means: toy_means(),
            std: 0.5,
            n_train_per_class: 10_000,
            n_test_per_class: 1_000,
        }
    }

    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        Ok(match self {
            DatasetConfig::GaussianGrid {
                means,
                std,
                n_train_per_class,
                n_test_per_class,
            } => make_gaussian_grid(means, *std, *n_train_per_class, *n_test_per_class, seed)?,
            DatasetConfig::Ring {
                classes,
                radius,
                std,
                n_train_per_class,
                n_test_per_class,
            } => make_gaussian_grid(
                &ring_means(*classes, *radius),
                *std,
                *n_train_per_class,
                *n_test_per_class,
                seed,
            )?,
            DatasetConfig::Csv {
                train,
                test,
                num_classes,
            } => {
                let tr = Dataset::read_csv(train, *num_classes, Split::Train)
                    .with_context(|| format!("reading {}", train.display()))?;
                let te = Dataset::read_csv(test, Some(num_classes.unwrap_or(tr.num_classes)), Split::Test)
                    .with_context(|| format!("reading {}", test.display()))?;
                (tr, te)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `depth` linear layers, each hidden one followed by batchnorm and relu.
    Mlp {
        input: usize,
        hidden: usize,
        depth: usize,
        classes: usize,
    },
    Layers {
        layers: Vec<LayerSpec>,
    },
}

impl ModelConfig {
    pub fn architecture(&self) -> Vec<LayerSpec> {
        match self {
            ModelConfig::Mlp {
                input,
                hidden,
                depth,
                classes,
            } => mlp_with_batchnorm(*input, *hidden, *depth, *classes),
            ModelConfig::Layers { layers } => layers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgetConfig {
    /// Classes removed in a single update.
    pub classes: Vec<usize>,
    /// Order for one-class-at-a-time removal; empty disables it.
    pub sequence: Vec<usize>,
}

impl Default for ForgetConfig {
    fn default() -> Self {
        Self {
            classes: vec![0],
            sequence: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    pub methods: Vec<Method>,
    pub learning_rates: Vec<f64>,
    pub settings: BaselineConfig,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Retrain, Method::Neggrad, Method::NeggradPlus],
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            settings: BaselineConfig::default(),
        }
    }
}

/// Coefficients swept when plotting accuracy against alpha.
pub const ALPHA_SWEEP: [f64; 8] = [0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub start_layers: Vec<usize>,
    pub variants: Vec<Variant>,
    pub alpha_r_sweep: Vec<f64>,
    pub alpha_f_sweep: Vec<f64>,
    /// alpha_f held fixed while sweeping alpha_r, and vice versa.
    pub fixed_alpha_f: f64,
    pub fixed_alpha_r: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            start_layers: vec![0, 1, 2, 3, 4],
            variants: vec![Variant::InputSuppression, Variant::OutputSuppression, Variant::Both],
            alpha_r_sweep: ALPHA_SWEEP.to_vec(),
            alpha_f_sweep: ALPHA_SWEEP.to_vec(),
            fixed_alpha_f: 3.0,
            fixed_alpha_r: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    /// Test points drawn per class on top of the regions.
    pub points_per_class: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            lo: -3.0,
            hi: 3.0,
            resolution: 200,
            points_per_class: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub unlearn: UnlearnConfig,
    #[serde(default)]
    pub forget: ForgetConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
    #[serde(default)]
    pub mia: MiaConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

impl ExperimentConfig {
    /// Four Gaussians, width-5 network, class 0 forgotten, seed 7.
    pub fn toy() -> Self {
        Self {
            seed: 7,
            out_dir: None,
            dataset: DatasetConfig::toy(),
            model: ModelConfig::Mlp {
                input: 2,
                hidden: 5,
                depth: 5,
                classes: 4,
            },
            train: TrainConfig::default(),
            unlearn: UnlearnConfig::default(),
            forget: ForgetConfig::default(),
            baselines: BaselinesConfig::default(),
            mia: MiaConfig::default(),
            ablation: AblationConfig::default(),
            plot: PlotConfig::default(),
        }
        .with_seed(7)
    }

    /// Eight tight blobs on the unit circle, two opposite classes forgotten.
    pub fn ring() -> Self {
        let mut cfg = Self::toy();
        cfg.dataset = DatasetConfig::Ring {
            classes: 8,
            radius: 1.0,
            std: 0.15,
            n_train_per_class: 2_000,
            n_test_per_class: 500,
        };
        cfg.model = ModelConfig::Mlp {
            input: 2,
            hidden: 32,
            depth: 5,
            classes: 8,
        };
        cfg.unlearn.alpha_f_list = vec![3.0, 10.0, 30.0];
        cfg.forget = ForgetConfig {
            classes: vec![0, 4],
            sequence: vec![0, 2, 4, 6],
        };
        cfg.plot = PlotConfig {
            lo: -1.6,
            hi: 1.6,
            points_per_class: 80,
            ..PlotConfig::default()
        };
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "ring" => Ok(Self::ring()),
            other => bail!("unknown preset {other:?} (expected toy or ring)"),
        }
    }

    /// Copies the experiment seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.unlearn.budget.seed = seed;
        self.baselines.settings.seed = seed;
        self.mia.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.model.architecture()
    }

    /// `--out`, then the environment override, then the config, then `out`.
    pub fn resolve_out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Settings recorded next to metrics, without anything path-dependent.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_value(&c).unwrap_or(serde_json::Value::Null)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.baselines.settings.validate()?;
        let layers = unlearn_core::Model::new(&self.architecture(), self.seed)?
            .affine_layer_indices()
            .len();
        self.unlearn.validate(layers)?;
        if self.forget.classes.is_empty() {
            bail!("forget.classes must name at least one class");
        }
        if self.plot.resolution == 0 || self.plot.hi.partial_cmp(&self.plot.lo) != Some(std::cmp::Ordering::Greater) {
            bail!("plot range must be non-empty");
        }
        Ok(())
    }
}
