//! A deliberately small feed-forward network engine: linear, conv2d, ReLU
//! and batchnorm layers with hand-written backward passes.
//!
//! Activations travel as `batch x features` matrices. Convolution inputs and
//! outputs are flattened channel-major (`C x H x W`) within each row, so a
//! linear layer can follow a convolution directly.

mod checkpoint;
mod conv;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use conv::{fold, unfold, ConvGeometry};
pub use optim::{backward_sgd_step, loss_gradients, train, Direction, Sgd, StepOutcome, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_BN_EPS: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Input height.
        height: usize,
        /// Input width.
        width: usize,
    },
    Relu,
    Batchnorm1d {
        features: usize,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

fn default_eps() -> f64 {
    DEFAULT_BN_EPS
}

fn default_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

impl LayerSpec {
    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn batchnorm(features: usize) -> Self {
        LayerSpec::Batchnorm1d {
            features,
            eps: DEFAULT_BN_EPS,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Width this layer consumes, or `None` for width-agnostic layers.
    fn in_width(&self) -> Option<usize> {
        match *self {
            LayerSpec::Linear { in_features, .. } => Some(in_features),
            LayerSpec::Conv2d {
                in_channels,
                height,
                width,
                ..
            } => Some(in_channels * height * width),
            LayerSpec::Relu => None,
            LayerSpec::Batchnorm1d { features, .. } => Some(features),
        }
    }

    fn out_width(&self, input: usize) -> usize {
        match self {
            LayerSpec::Linear { out_features, .. } => *out_features,
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = conv_geometry(self).expect("conv spec");
                out_channels * g.locations()
            }
            LayerSpec::Relu => input,
            LayerSpec::Batchnorm1d { features, .. } => *features,
        }
    }
}

fn conv_geometry(spec: &LayerSpec) -> Option<ConvGeometry> {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            kernel,
            stride,
            padding,
            height,
            width,
            ..
        } => Some(ConvGeometry {
            in_channels,
            height,
            width,
            kernel,
            stride,
            padding,
        }),
        _ => None,
    }
}

/// The fully-connected five-layer toy architecture: `depth` linear layers,
/// every hidden one followed by batchnorm and ReLU.
pub fn mlp_with_batchnorm(input: usize, hidden: usize, depth: usize, classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input;
    for _ in 0..depth.saturating_sub(1) {
        specs.push(LayerSpec::linear(width, hidden));
        specs.push(LayerSpec::batchnorm(hidden));
        specs.push(LayerSpec::Relu);
        width = hidden;
    }
    specs.push(LayerSpec::linear(width, classes));
    specs
}

/// Weight matrix plus bias of a linear or (reshaped) convolution layer.
///
/// For convolutions the weight is `C_o x C_i*k*k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Linear(Affine),
    Conv2d { geometry: ConvGeometry, params: Affine },
    Relu,
    Batchnorm1d(BatchNorm),
}

impl Layer {
    pub fn affine(&self) -> Option<&Affine> {
        match self {
            Layer::Linear(a) | Layer::Conv2d { params: a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn affine_mut(&mut self) -> Option<&mut Affine> {
        match self {
            Layer::Linear(a) | Layer::Conv2d { params: a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Linear(a) => LayerSpec::linear(a.weight.cols(), a.weight.rows()),
            Layer::Conv2d { geometry: g, params } => LayerSpec::Conv2d {
                in_channels: g.in_channels,
                out_channels: params.weight.rows(),
                kernel: g.kernel,
                stride: g.stride,
                padding: g.padding,
                height: g.height,
                width: g.width,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Batchnorm1d(bn) => LayerSpec::Batchnorm1d {
                features: bn.gamma.len(),
                eps: bn.eps,
                momentum: bn.momentum,
            },
        }
    }
}

/// Whether batchnorm normalises with batch statistics or running ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Input and output activations of one linear/conv layer.
///
/// `input` keeps the flat layout the layer received (`C_i*H*W` per row for
/// convolutions); `output` is the post-bias result in the same flat layout.
#[derive(Debug, Clone)]
pub struct Capture {
    /// Index into [`Model::layers`].
    pub layer: usize,
    pub input: Matrix,
    pub output: Matrix,
}

/// Forward-pass state needed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    mode: Mode,
    inputs: Vec<Matrix>,
    bn: Vec<Option<BnCache>>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

/// Gradients in the canonical parameter order of [`Model::param_tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            tensors: model.param_tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.tensors.iter_mut().flat_map(|t| t.iter_mut()) {
            *g *= s;
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Builds a model with PyTorch-style uniform initialisation
    /// (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases).
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| match spec {
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => Layer::Linear(init_affine(*out_features, *in_features, &mut rng)),
                LayerSpec::Conv2d { out_channels, .. } => {
                    let geometry = conv_geometry(spec).expect("conv spec");
                    Layer::Conv2d {
                        geometry,
                        params: init_affine(*out_channels, geometry.patch_len(), &mut rng),
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Batchnorm1d {
                    features,
                    eps,
                    momentum,
                } => Layer::Batchnorm1d(BatchNorm {
                    gamma: vec![1.0; *features],
                    beta: vec![0.0; *features],
                    running_mean: vec![0.0; *features],
                    running_var: vec![1.0; *features],
                    eps: *eps,
                    momentum: *momentum,
                }),
            })
            .collect();
        Ok(Self { layers })
    }

    /// Wraps explicit layers, checking that widths compose.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for layer in &layers {
            match layer {
                Layer::Linear(a) | Layer::Conv2d { params: a, .. } => {
                    if a.bias.len() != a.weight.rows() {
                        return Err(Error::Shape("bias length differs from weight rows".into()));
                    }
                    a.weight.ensure_finite("weight")?;
                }
                Layer::Batchnorm1d(bn) => {
                    let n = bn.gamma.len();
                    if bn.beta.len() != n || bn.running_mean.len() != n || bn.running_var.len() != n {
                        return Err(Error::Shape("batchnorm parameter lengths differ".into()));
                    }
                }
                Layer::Relu => {}
            }
            if let Layer::Conv2d { geometry, params } = layer {
                geometry.validate()?;
                if params.weight.cols() != geometry.patch_len() {
                    return Err(Error::Shape("conv weight width differs from patch length".into()));
                }
            }
        }
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        validate_specs(&specs)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.specs().iter().find_map(LayerSpec::in_width).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        let mut w = self.input_dim();
        for s in self.specs() {
            w = s.out_width(w);
        }
        w
    }

    /// Indices (into [`Model::layers`]) of the linear and conv layers.
    pub fn affine_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.affine().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// All trainable tensors: per affine layer weight then bias, per
    /// batchnorm gamma then beta.
    pub fn param_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Linear(a) | Layer::Conv2d { params: a, .. } => {
                    out.push(a.weight.as_slice());
                    out.push(&a.bias);
                }
                Layer::Batchnorm1d(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Linear(a) | Layer::Conv2d { params: a, .. } => {
                    out.push(a.weight.as_mut_slice());
                    out.push(&mut a.bias);
                }
                Layer::Batchnorm1d(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer_forward(layer, &x, Mode::Eval, None)?;
        }
        Ok(x)
    }

    /// Inference-mode forward pass that also records the input and output
    /// activations of every linear and conv layer.
    pub fn forward_capture(&self, batch: &Matrix) -> Result<(Matrix, Vec<Capture>)> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut captures = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer_forward(layer, &x, Mode::Eval, None)?;
            if layer.affine().is_some() {
                captures.push(Capture {
                    layer: i,
                    input: x,
                    output: y.clone(),
                });
            }
            x = y;
        }
        Ok((x, captures))
    }

    /// Forward pass that keeps what [`Model::backward`] needs.
    ///
    /// In [`Mode::Train`] batchnorm uses batch statistics; running statistics
    /// are only touched by [`Model::update_running_stats`].
    pub fn forward_tape(&self, batch: &Matrix, mode: Mode) -> Result<(Matrix, Tape)> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut tape = Tape {
            mode,
            inputs: Vec::with_capacity(self.layers.len()),
            bn: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let mut cache = None;
            let y = layer_forward(layer, &x, mode, Some(&mut cache))?;
            tape.inputs.push(x);
            tape.bn.push(cache);
            x = y;
        }
        Ok((x, tape))
    }

    /// Folds the batch statistics recorded on a training tape into the
    /// running estimates.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        if tape.mode != Mode::Train {
            return;
        }
        for (layer, (cache, input)) in self.layers.iter_mut().zip(tape.bn.iter().zip(&tape.inputs)) {
            if let (Layer::Batchnorm1d(bn), Some(c)) = (layer, cache) {
                let n = input.rows() as f64;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for j in 0..bn.gamma.len() {
                    bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * c.batch_mean[j];
                    bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * c.batch_var[j] * unbias;
                }
            }
        }
    }

    /// Backpropagates `d_output` (gradient of the loss w.r.t. the logits)
    /// through the recorded tape.
    pub fn backward(&self, tape: &Tape, d_output: &Matrix) -> Result<Gradients> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::Shape("tape does not belong to this model".into()));
        }
        let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut delta = d_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[i];
            let (d_in, g) = layer_backward(layer, input, tape.bn[i].as_ref(), tape.mode, &delta)?;
            grads[i] = g;
            delta = d_in;
        }
        Ok(Gradients {
            tensors: grads.into_iter().flatten().collect(),
        })
    }

    /// Predicted class (argmax of logits, first maximum wins) for every row.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::invalid(format!("target {t} out of range")));
        }
        let p = softmax_row(logits.row(i));
        loss -= p[t].max(f64::MIN_POSITIVE).ln();
        let g = grad.row_mut(i);
        for (gj, pj) in g.iter_mut().zip(&p) {
            *gj = pj / n;
        }
        g[t] -= 1.0 / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let mut width: Option<usize> = None;
    for (i, spec) in specs.iter().enumerate() {
        if let Some(g) = conv_geometry(spec) {
            g.validate()?;
        }
        if let LayerSpec::Linear {
            in_features,
            out_features,
        } = spec
        {
            if *in_features == 0 || *out_features == 0 {
                return Err(Error::invalid(format!("layer {i}: zero-width linear layer")));
            }
        }
        if let (Some(w), Some(need)) = (width, spec.in_width()) {
            if w != need {
                return Err(Error::Shape(format!("layer {i} expects width {need} but receives {w}")));
            }
        }
        let input = width.or(spec.in_width()).unwrap_or(0);
        if width.is_none() && spec.in_width().is_none() {
            return Err(Error::invalid("first layer must fix the input width"));
        }
        width = Some(spec.out_width(input));
    }
    if width.is_none() {
        return Err(Error::invalid("model has no layers"));
    }
    Ok(())
}

fn init_affine(out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Affine {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..out * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
    Affine {
        weight: Matrix::from_vec(out, fan_in, data).expect("sized"),
        bias: (0..out).map(|_| rng.random_range(-bound..bound)).collect(),
    }
}

fn affine_forward(a: &Affine, x: &Matrix) -> Result<Matrix> {
    let mut y = x.matmul_transposed(&a.weight)?;
    for i in 0..y.rows() {
        for (v, b) in y.row_mut(i).iter_mut().zip(&a.bias) {
            *v += b;
        }
    }
    Ok(y)
}

fn conv_forward(g: &ConvGeometry, a: &Affine, x: &Matrix) -> Result<Matrix> {
    let (locs, c_out) = (g.locations(), a.weight.rows());
    let mut y = Matrix::zeros(x.rows(), c_out * locs);
    for s in 0..x.rows() {
        let patches = unfold(x.row(s), g)?;
        let out = affine_forward(a, &patches)?; // locs x C_o
        let row = y.row_mut(s);
        for p in 0..locs {
            for c in 0..c_out {
                row[c * locs + p] = out[(p, c)];
            }
        }
    }
    Ok(y)
}

fn layer_forward(layer: &Layer, x: &Matrix, mode: Mode, cache: Option<&mut Option<BnCache>>) -> Result<Matrix> {
    match layer {
        Layer::Linear(a) => affine_forward(a, x),
        Layer::Conv2d { geometry, params } => conv_forward(geometry, params, x),
        Layer::Relu => Ok(x.map(|v| v.max(0.0))),
        Layer::Batchnorm1d(bn) => {
            let d = bn.gamma.len();
            let n = x.rows();
            let (mean, var) = match mode {
                Mode::Train => {
                    if n == 0 {
                        return Err(Error::InsufficientData("batchnorm on empty batch".into()));
                    }
                    let mut mean = vec![0.0; d];
                    for i in 0..n {
                        for (m, v) in mean.iter_mut().zip(x.row(i)) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                    let mut var = vec![0.0; d];
                    for i in 0..n {
                        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                            *s += (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s /= n as f64);
                    (mean, var)
                }
                Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
            let mut normalized = Matrix::zeros(n, d);
            let mut y = Matrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    let xh = (x[(i, j)] - mean[j]) * inv_std[j];
                    normalized[(i, j)] = xh;
                    y[(i, j)] = bn.gamma[j] * xh + bn.beta[j];
                }
            }
            if let Some(slot) = cache {
                *slot = Some(BnCache {
                    normalized,
                    inv_std,
                    batch_mean: mean,
                    batch_var: var,
                });
            }
            Ok(y)
        }
    }
}

/// Returns (gradient w.r.t. the layer input, parameter gradients).
fn layer_backward(
    layer: &Layer,
    input: &Matrix,
    cache: Option<&BnCache>,
    mode: Mode,
    delta: &Matrix,
) -> Result<(Matrix, Vec<Vec<f64>>)> {
    match layer {
        Layer::Linear(a) => {
            let dw = delta.transpose_matmul(input)?;
            let db = column_sums(delta);
            let dx = delta.matmul(&a.weight)?;
            Ok((dx, vec![dw.into_vec(), db]))
        }
        Layer::Conv2d { geometry: g, params: a } => {
            let (locs, c_out) = (g.locations(), a.weight.rows());
            let mut dw = Matrix::zeros(c_out, g.patch_len());
            let mut db = vec![0.0; c_out];
            let mut dx = Matrix::zeros(input.rows(), g.input_len());
            for s in 0..input.rows() {
                let patches = unfold(input.row(s), g)?;
                let drow = delta.row(s);
                let mut dy = Matrix::zeros(locs, c_out);
                for p in 0..locs {
                    for c in 0..c_out {
                        dy[(p, c)] = drow[c * locs + p];
                    }
                }
                let dws = dy.transpose_matmul(&patches)?;
                for (acc, v) in dw.as_mut_slice().iter_mut().zip(dws.as_slice()) {
                    *acc += v;
                }
                for (acc, v) in db.iter_mut().zip(column_sums(&dy)) {
                    *acc += v;
                }
                let dpatch = dy.matmul(&a.weight)?;
                dx.row_mut(s).copy_from_slice(&fold(&dpatch, g)?);
            }
            Ok((dx, vec![dw.into_vec(), db]))
        }
        Layer::Relu => {
            let mut dx = delta.clone();
            for (d, &x) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if x <= 0.0 {
                    *d = 0.0;
                }
            }
            Ok((dx, Vec::new()))
        }
        Layer::Batchnorm1d(bn) => {
            let c = cache.ok_or_else(|| Error::invalid("batchnorm backward without cache"))?;
            let (n, d) = delta.shape();
            let mut dgamma = vec![0.0; d];
            let dbeta = column_sums(delta);
            for i in 0..n {
                for j in 0..d {
                    dgamma[j] += delta[(i, j)] * c.normalized[(i, j)];
                }
            }
            let mut dx = Matrix::zeros(n, d);
            match mode {
                Mode::Train => {
                    let nf = n as f64;
                    for i in 0..n {
                        for j in 0..d {
                            let dxh = delta[(i, j)] * bn.gamma[j];
                            let sum_dxh = dbeta[j] * bn.gamma[j];
                            let sum_dxh_xh = dgamma[j] * bn.gamma[j];
                            dx[(i, j)] = c.inv_std[j] / nf * (nf * dxh - sum_dxh - c.normalized[(i, j)] * sum_dxh_xh);
                        }
                    }
                }
                Mode::Eval => {
                    for i in 0..n {
                        for j in 0..d {
                            dx[(i, j)] = delta[(i, j)] * bn.gamma[j] * c.inv_std[j];
                        }
                    }
                }
            }
            Ok((dx, vec![dgamma, dbeta]))
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (a, v) in s.iter_mut().zip(m.row(i)) {
            *a += v;
        }
    }
    s
}
