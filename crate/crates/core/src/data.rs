//! Labelled datasets, the Gaussian toy generators, class splits and the
//! small representation sample sets used for space estimation.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        inputs.ensure_finite("dataset inputs")?;
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Inputs and labels of the given rows, in order.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (inputs, labels) = self.batch(indices);
        Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Row indices whose label satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(self.labels[i])).collect()
    }

    pub fn filter_classes(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        self.subset(&self.indices_where(keep))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Concatenates two datasets over the same label space.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::Shape(
                "concatenating datasets with different class counts".into(),
            ));
        }
        let inputs = Matrix::vstack(&[&self.inputs, &other.inputs])?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    /// Writes `feature_0,...,feature_{d-1},label` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.feature_dim()).map(|j| format!("feature_{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads the CSV layout of [`Dataset::write_csv`]. When `num_classes` is
    /// `None` it is inferred as `max label + 1`.
    pub fn read_csv(path: &Path, num_classes: Option<usize>, split: Split) -> Result<Dataset> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let d = headers.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::invalid(format!(
                "{}: need at least one feature column and a label",
                path.display()
            ))
        })?;
        for (j, h) in headers.iter().take(d).enumerate() {
            if h != format!("feature_{j}") {
                return Err(Error::invalid(format!("unexpected header column {h:?}")));
            }
        }
        if &headers[d] != "label" {
            return Err(Error::invalid("last header column must be `label`"));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter().take(d) {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad feature {field:?}: {e}")))?,
                );
            }
            let l = &rec[d];
            labels.push(
                l.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::invalid(format!("bad label {l:?}: {e}")))?,
            );
        }
        let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(Matrix::from_vec(labels.len(), d, data)?, labels, k, split)
    }
}

/// The four toy class centres; class 0 at (1, 1) is the one forgotten in the
/// demonstration.
pub fn toy_means() -> Vec<Vec<f64>> {
    vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]]
}

/// `classes` centres evenly spaced on a circle, starting at angle 0.
pub fn ring_means(classes: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            vec![radius * t.cos(), radius * t.sin()]
        })
        .collect()
}

/// Isotropic Gaussian blobs, one class per mean. Train samples for every
/// class are drawn before any test sample.
pub fn make_gaussian_grid(
    means: &[Vec<f64>],
    std: f64,
    n_train_per_class: usize,
    n_test_per_class: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let dim = means
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("at least one class mean is required"))?;
    if dim == 0 || means.iter().any(|m| m.len() != dim) {
        return Err(Error::invalid("class means must share a non-zero dimension"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid("standard deviation must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize, split: Split| -> Result<Dataset> {
        let mut data = Vec::with_capacity(n * means.len() * dim);
        let mut labels = Vec::with_capacity(n * means.len());
        for (class, mean) in means.iter().enumerate() {
            for _ in 0..n {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + std * z);
                }
                labels.push(class);
            }
        }
        Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, means.len(), split)
    };
    let train = draw(n_train_per_class, Split::Train)?;
    let test = draw(n_test_per_class, Split::Test)?;
    Ok((train, test))
}

/// Validated, ordered set of class indices.
pub fn class_set(classes: &[usize], num_classes: usize) -> Result<BTreeSet<usize>> {
    let set: BTreeSet<usize> = classes.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::invalid("forget class set is empty"));
    }
    if let Some(&bad) = set.iter().find(|&&c| c >= num_classes) {
        return Err(Error::invalid(format!(
            "class {bad} out of range for {num_classes} classes"
        )));
    }
    if set.len() >= num_classes {
        return Err(Error::invalid("forget set covers every class"));
    }
    Ok(set)
}

/// Exact partition into (retain, forget) by label.
pub fn split_by_class(data: &Dataset, forget_classes: &[usize]) -> Result<(Dataset, Dataset)> {
    let forget = class_set(forget_classes, data.num_classes)?;
    Ok((
        data.filter_classes(|l| !forget.contains(&l)),
        data.filter_classes(|l| forget.contains(&l)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleBudget {
    /// Retain samples when no per-class quota is given.
    pub k_r: usize,
    pub k_f: usize,
    /// Stratified quota per retain class; overrides `k_r` when set.
    #[serde(default)]
    pub per_class_r: Option<usize>,
    pub seed: u64,
}

impl Default for SampleBudget {
    /// 100 retain samples per class, 900 forget samples.
    fn default() -> Self {
        Self {
            k_r: 300,
            k_f: 900,
            per_class_r: Some(100),
            seed: 0,
        }
    }
}

/// The `X_r` / `X_f` sample sets plus the training-set rows they came from.
#[derive(Debug, Clone)]
pub struct RepresentationSets {
    pub retain: Dataset,
    pub forget: Dataset,
    pub retain_indices: Vec<usize>,
    pub forget_indices: Vec<usize>,
}

/// Draws `X_r` from retain classes (minus `exclude_retain_classes`) and `X_f`
/// from forget classes, without replacement.
pub fn sample_representation_sets(
    train: &Dataset,
    forget_classes: &[usize],
    budget: &SampleBudget,
    exclude_retain_classes: &[usize],
) -> Result<RepresentationSets> {
    let forget = class_set(forget_classes, train.num_classes)?;
    if budget.k_f == 0 || (budget.per_class_r.is_none() && budget.k_r == 0) || budget.per_class_r == Some(0) {
        return Err(Error::invalid("sample budgets must be at least one"));
    }
    let excluded: BTreeSet<usize> = exclude_retain_classes.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);

    let retain_indices = match budget.per_class_r {
        Some(quota) => {
            let mut picked = Vec::new();
            for class in (0..train.num_classes).filter(|c| !forget.contains(c) && !excluded.contains(c)) {
                let pool = train.indices_where(|l| l == class);
                picked.extend(choose(&pool, quota, &mut rng, &format!("retain class {class}"))?);
            }
            picked
        }
        None => {
            let pool = train.indices_where(|l| !forget.contains(&l) && !excluded.contains(&l));
            choose(&pool, budget.k_r, &mut rng, "retain pool")?
        }
    };
    if retain_indices.is_empty() {
        return Err(Error::InsufficientData("no retain classes left to sample".into()));
    }
    let forget_pool = train.indices_where(|l| forget.contains(&l));
    let forget_indices = choose(&forget_pool, budget.k_f, &mut rng, "forget pool")?;
    Ok(RepresentationSets {
        retain: train.subset(&retain_indices),
        forget: train.subset(&forget_indices),
        retain_indices,
        forget_indices,
    })
}

/// `n` distinct elements of `pool`, sorted for a stable row order.
pub(crate) fn choose(pool: &[usize], n: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::InsufficientData(format!(
            "{what}: requested {n} samples but only {} available",
            pool.len()
        )));
    }
    let mut picked: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Draws `n` rows satisfying `keep` that are not in `exclude`.
pub fn sample_rows(
    data: &Dataset,
    n: usize,
    keep: impl Fn(usize) -> bool,
    exclude: &[usize],
    seed: u64,
) -> Result<Vec<usize>> {
    let excluded: BTreeSet<usize> = exclude.iter().copied().collect();
    let pool: Vec<usize> = data
        .indices_where(keep)
        .into_iter()
        .filter(|i| !excluded.contains(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    choose(&pool, n, &mut rng, "held-out pool")
}
