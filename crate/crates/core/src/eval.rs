//! Accuracy, confusion matrices, redistribution of forgotten-class
//! predictions and a simple confidence-based membership inference attack.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{choose, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{softmax_row, Model};
use crate::unlearn::score;

/// Percentage of rows whose argmax prediction equals the label.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("accuracy on an empty dataset".into()));
    }
    let pred = model.predict(&data.inputs)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / data.len() as f64)
}

/// `num_classes x num_classes` counts, rows true class, columns predicted.
pub fn confusion_matrix(model: &Model, data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let k = data.num_classes;
    if model.output_dim() != k {
        return Err(Error::Shape(format!(
            "model has {} outputs, dataset {} classes",
            model.output_dim(),
            k
        )));
    }
    let mut c = vec![vec![0; k]; k];
    if data.is_empty() {
        return Ok(c);
    }
    for (p, &l) in model.predict(&data.inputs)?.into_iter().zip(&data.labels) {
        c[l][p] += 1;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub acc_r: f64,
    pub acc_f: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// Retain/forget test accuracies and the confusion matrix over both sets.
pub fn evaluate(model: &Model, test_retain: &Dataset, test_forget: &Dataset) -> Result<Evaluation> {
    let acc_r = accuracy(model, test_retain)?;
    let acc_f = accuracy(model, test_forget)?;
    let mut confusion = confusion_matrix(model, test_retain)?;
    for (row, extra) in confusion.iter_mut().zip(confusion_matrix(model, test_forget)?) {
        for (a, b) in row.iter_mut().zip(extra) {
            *a += b;
        }
    }
    Ok(Evaluation {
        acc_r,
        acc_f,
        confusion,
    })
}

/// One evaluated model, serialised as a single JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub forget_classes: Vec<usize>,
    pub acc_r: f64,
    pub acc_f: f64,
    pub mia: Option<f64>,
    #[serde(default)]
    pub mia_degenerate: bool,
    pub score: f64,
    pub confusion: Vec<Vec<usize>>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricsRecord {
    pub fn new(
        method: impl Into<String>,
        forget_classes: &[usize],
        eval: Evaluation,
        mia: Option<&MiaResult>,
        config: serde_json::Value,
    ) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            forget_classes: forget_classes.to_vec(),
            score: score(eval.acc_r, eval.acc_f)?,
            acc_r: eval.acc_r,
            acc_f: eval.acc_f,
            mia: mia.map(|m| m.mia),
            mia_degenerate: mia.is_some_and(|m| m.classifier.degenerate),
            confusion: eval.confusion,
            config,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `method,class,acc_r,acc_f,mia,score` table over several records.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from("method,class,acc_r,acc_f,mia,score\n");
    for r in records {
        let classes: Vec<String> = r.forget_classes.iter().map(usize::to_string).collect();
        let mia = r.mia.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            classes.join(";"),
            r.acc_r,
            r.acc_f,
            mia,
            r.score
        );
    }
    s
}

/// Which softmax confidence the attack looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiaFeature {
    /// Probability the model gives to the target (forgotten) class.
    #[default]
    TargetClass,
    /// Probability of each sample's own label.
    TrueLabel,
    /// Largest class probability.
    MaxConfidence,
    /// Shannon entropy of the predictive distribution.
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiaConfig {
    pub feature: MiaFeature,
    /// L2 regularisation of the hinge objective.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Subsample the larger of member/nonmember sets to equal size.
    pub balance: bool,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            feature: MiaFeature::TargetClass,
            lambda: 1e-3,
            epochs: 1000,
            seed: 0,
            balance: true,
        }
    }
}

/// Soft-margin linear separator over a standardised scalar feature.
/// Positive decision value means member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaClassifier {
    pub weight: f64,
    pub bias: f64,
    pub feature_mean: f64,
    pub feature_scale: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Set when the training feature was constant; the classifier then
    /// predicts the majority side for every input.
    pub degenerate: bool,
    /// Best objective value after each epoch (non-increasing).
    pub objective: Vec<f64>,
}

impl MiaClassifier {
    pub fn decision(&self, feature: f64) -> f64 {
        self.weight * (feature - self.feature_mean) / self.feature_scale + self.bias
    }

    pub fn is_member(&self, feature: f64) -> bool {
        self.decision(feature) > 0.0
    }

    /// Fits the separator by full-batch subgradient descent on
    /// `lambda/2 w^2 + mean(max(0, 1 - y (w z + b)))`, keeping the best
    /// iterate. `members` are labelled +1, `nonmembers` -1.
    pub fn fit(members: &[f64], nonmembers: &[f64], lambda: f64, epochs: usize, seed: u64) -> Result<Self> {
        if members.is_empty() || nonmembers.is_empty() {
            return Err(Error::InsufficientData("membership attack needs both classes".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid("svm lambda must be positive"));
        }
        let all: Vec<(f64, f64)> = members
            .iter()
            .map(|&x| (x, 1.0))
            .chain(nonmembers.iter().map(|&x| (x, -1.0)))
            .collect();
        let n = all.len() as f64;
        let mean = all.iter().map(|p| p.0).sum::<f64>() / n;
        let var = all.iter().map(|p| (p.0 - mean) * (p.0 - mean)).sum::<f64>() / n;
        if !(var > 1e-24) {
            let bias = if members.len() >= nonmembers.len() { 1.0 } else { -1.0 };
            return Ok(Self {
                weight: 0.0,
                bias,
                feature_mean: mean,
                feature_scale: 1.0,
                lambda,
                seed,
                degenerate: true,
                objective: Vec::new(),
            });
        }
        let scale = var.sqrt();
        let z: Vec<(f64, f64)> = all.iter().map(|&(x, y)| ((x - mean) / scale, y)).collect();
        let objective = |w: f64, b: f64| -> f64 {
            0.5 * lambda * w * w + z.iter().map(|&(x, y)| (1.0 - y * (w * x + b)).max(0.0)).sum::<f64>() / n
        };

        let (mut w, mut b) = (0.0, 0.0);
        let mut best = (w, b, objective(w, b));
        let mut trace = Vec::with_capacity(epochs);
        for t in 1..=epochs {
            let (mut gw, mut gb) = (lambda * w, 0.0);
            for &(x, y) in &z {
                if y * (w * x + b) < 1.0 {
                    gw -= y * x / n;
                    gb -= y / n;
                }
            }
            let step = 1.0 / (t as f64).sqrt();
            w -= step * gw;
            b -= step * gb;
            let obj = objective(w, b);
            if obj < best.2 {
                best = (w, b, obj);
            }
            trace.push(best.2);
        }
        Ok(Self {
            weight: best.0,
            bias: best.1,
            feature_mean: mean,
            feature_scale: scale,
            lambda,
            seed,
            degenerate: false,
            objective: trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    /// Percentage of forget-train samples classified as nonmembers.
    pub mia: f64,
    pub classifier: MiaClassifier,
}

/// Confidence features for the rows of `data`.
pub fn confidence_features(
    model: &Model,
    data: &Dataset,
    feature: MiaFeature,
    target_class: usize,
) -> Result<Vec<f64>> {
    let logits = model.forward(&data.inputs)?;
    if target_class >= logits.cols() {
        return Err(Error::invalid(format!("target class {target_class} out of range")));
    }
    Ok((0..logits.rows())
        .map(|i| {
            let p = softmax_row(logits.row(i));
            match feature {
                MiaFeature::TargetClass => p[target_class],
                MiaFeature::TrueLabel => p[data.labels[i]],
                MiaFeature::MaxConfidence => p.iter().copied().fold(0.0, f64::max),
                MiaFeature::Entropy => -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>(),
            }
        })
        .collect())
}

/// Trains the attack on train-retain (member) vs test-retain (nonmember)
/// confidences and reports how much of train-forget looks like nonmembers.
pub fn mia_attack(
    model: &Model,
    train_retain: &Dataset,
    test_retain: &Dataset,
    train_forget: &Dataset,
    target_class: usize,
    cfg: &MiaConfig,
) -> Result<MiaResult> {
    if train_retain.is_empty() || test_retain.is_empty() || train_forget.is_empty() {
        return Err(Error::InsufficientData(
            "membership attack needs three non-empty datasets".into(),
        ));
    }
    let mut members = confidence_features(model, train_retain, cfg.feature, target_class)?;
    let mut nonmembers = confidence_features(model, test_retain, cfg.feature, target_class)?;
    if cfg.balance {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = members.len().min(nonmembers.len());
        for side in [&mut members, &mut nonmembers] {
            if side.len() > n {
                let idx: Vec<usize> = (0..side.len()).collect();
                let keep = choose(&idx, n, &mut rng, "membership balance")?;
                *side = keep.into_iter().map(|i| side[i]).collect();
            }
        }
    }
    let classifier = MiaClassifier::fit(&members, &nonmembers, cfg.lambda, cfg.epochs, cfg.seed)?;
    let forget = confidence_features(model, train_forget, cfg.feature, target_class)?;
    let nonmember = forget.iter().filter(|&&x| !classifier.is_member(x)).count();
    Ok(MiaResult {
        mia: 100.0 * nonmember as f64 / forget.len() as f64,
        classifier,
    })
}

/// Predicted class on an `n x n` grid of cell centres over `[lo, hi]^2`, for
/// models with two input features. Row 0 is the top (largest y).
pub fn decision_grid(model: &Model, lo: f64, hi: f64, n: usize) -> Result<Vec<Vec<usize>>> {
    if model.input_dim() != 2 {
        return Err(Error::Shape(format!(
            "decision grid needs 2 inputs, model takes {}",
            model.input_dim()
        )));
    }
    if n == 0 || !(hi > lo) {
        return Err(Error::invalid("decision grid needs n >= 1 and hi > lo"));
    }
    let step = (hi - lo) / n as f64;
    let mut points = Vec::with_capacity(2 * n * n);
    for r in 0..n {
        let y = hi - (r as f64 + 0.5) * step;
        for c in 0..n {
            points.push(lo + (c as f64 + 0.5) * step);
            points.push(y);
        }
    }
    let pred = model.predict(&Matrix::from_vec(n * n, 2, points)?)?;
    Ok(pred.chunks(n).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMass {
    pub class: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedistributionReport {
    pub forget_class: usize,
    /// Other classes receiving forget-class test predictions after
    /// unlearning, largest first (ties by class index).
    pub absorbed: Vec<ClassMass>,
    /// Forget-class samples still predicted as the forget class.
    pub still_forget: usize,
    /// Most confused other class before unlearning; `None` if the original
    /// model never confused the forget class.
    pub most_confused_before: Option<usize>,
}

impl RedistributionReport {
    pub fn total(&self) -> usize {
        self.still_forget + self.absorbed.iter().map(|c| c.count).sum::<usize>()
    }

    /// Fraction (0..=1) of forget-class samples landing in `classes`.
    pub fn share_of(&self, classes: &[usize]) -> f64 {
        let hit: usize = self
            .absorbed
            .iter()
            .filter(|c| classes.contains(&c.class))
            .map(|c| c.count)
            .sum();
        if self.total() == 0 {
            0.0
        } else {
            hit as f64 / self.total() as f64
        }
    }
}

pub fn redistribution_report(
    before: &[Vec<usize>],
    after: &[Vec<usize>],
    forget_class: usize,
) -> Result<RedistributionReport> {
    let k = before.len();
    if after.len() != k || before.iter().chain(after).any(|r| r.len() != k) || forget_class >= k {
        return Err(Error::Shape(
            "confusion matrices must be square, equal and contain the forget class".into(),
        ));
    }
    let row = &after[forget_class];
    let mut absorbed: Vec<ClassMass> = (0..k)
        .filter(|&c| c != forget_class && row[c] > 0)
        .map(|c| ClassMass {
            class: c,
            count: row[c],
        })
        .collect();
    absorbed.sort_by(|a, b| b.count.cmp(&a.count).then(a.class.cmp(&b.class)));
    let prior = &before[forget_class];
    let most_confused_before = (0..k)
        .filter(|&c| c != forget_class && prior[c] > 0)
        .max_by(|&a, &b| prior[a].cmp(&prior[b]).then(b.cmp(&a)));
    Ok(RedistributionReport {
        forget_class,
        absorbed,
        still_forget: row[forget_class],
        most_confused_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::{Affine, Layer};

    fn constant_model(classes: usize, winner: usize) -> Model {
        let mut bias = vec![0.0; classes];
        bias[winner] = 1.0;
        Model::from_layers(vec![Layer::Linear(Affine {
            weight: Matrix::zeros(classes, 2),
            bias,
        })])
        .unwrap()
    }

    fn balanced(classes: usize, per: usize) -> Dataset {
        let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect();
        Dataset::new(Matrix::zeros(labels.len(), 2), labels, classes, Split::Test).unwrap()
    }

    #[test]
    fn constant_predictor_accuracy_and_confusion() {
        let m = constant_model(4, 0);
        let d = balanced(4, 1000);
        assert_eq!(accuracy(&m, &d).unwrap(), 25.0);
        let c = confusion_matrix(&m, &d).unwrap();
        for (t, row) in c.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 1000, "row {t}");
            assert_eq!(row[0], 1000);
        }
    }

    #[test]
    fn separable_attack_flags_forget_as_nonmember() {
        let members = vec![0.9; 50];
        let nonmembers = vec![0.1; 50];
        let clf = MiaClassifier::fit(&members, &nonmembers, 1e-3, 1000, 0).unwrap();
        assert!(clf.is_member(0.9));
        assert!(!clf.is_member(0.1));
        assert!(!clf.is_member(0.05));
        for w in clf.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let clf = MiaClassifier::fit(&[0.5; 10], &[0.5; 10], 1e-3, 10, 0).unwrap();
        assert!(clf.degenerate);
        assert!(clf.is_member(0.5));
    }

    #[test]
    fn redistribution_conserves_mass() {
        let before = vec![
            vec![90, 6, 1, 3],
            vec![0, 100, 0, 0],
            vec![0, 0, 100, 0],
            vec![0, 0, 0, 100],
        ];
        let after = vec![
            vec![0, 55, 5, 40],
            vec![0, 100, 0, 0],
            vec![0, 0, 100, 0],
            vec![0, 0, 0, 100],
        ];
        let r = redistribution_report(&before, &after, 0).unwrap();
        assert_eq!(r.total(), 100);
        assert_eq!(r.absorbed[0], ClassMass { class: 1, count: 55 });
        assert_eq!(r.absorbed[1].class, 3);
        assert_eq!(r.most_confused_before, Some(1));
        assert!((r.share_of(&[1, 3]) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_has_no_prior_confusion() {
        let eye: Vec<Vec<usize>> = (0..3)
            .map(|i| (0..3).map(|j| usize::from(i == j) * 10).collect())
            .collect();
        let r = redistribution_report(&eye, &eye, 1).unwrap();
        assert_eq!(r.most_confused_before, None);
        assert_eq!(r.still_forget, 10);
    }

    #[test]
    fn metrics_score_follows_accuracies() {
        let eval = Evaluation {
            acc_r: 80.0,
            acc_f: 25.0,
            confusion: vec![vec![0]],
        };
        let rec = MetricsRecord::new("x", &[0], eval, None, serde_json::Value::Null).unwrap();
        assert!((rec.score - 60.0).abs() < 1e-12);
        assert!(metrics_csv(&[rec]).starts_with("method,class,acc_r,acc_f,mia,score\nx,0,80,25,,60"));
    }
}
