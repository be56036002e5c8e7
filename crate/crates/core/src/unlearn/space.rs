//! Representation matrices and per-layer retain/forget space estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_from_gram, GramAccumulator, Matrix, SpectralDecomposition};
use crate::nn::{unfold, Capture, Layer, Model};

/// Representation matrices of one linear/conv layer.
///
/// `input` is `K x d` for linear layers and `K*h_o*w_o x C_i*k*k` (stacked
/// unfolded patches) for convolutions; `output` holds the matching output
/// activations, one row per sample or per output location.
#[derive(Debug, Clone)]
pub struct Representation {
    /// Index into [`Model::layers`].
    pub layer: usize,
    pub input: Matrix,
    pub output: Matrix,
}

/// Inference-mode representation matrices for every linear and conv layer.
pub fn build_representation(model: &Model, x: &Matrix) -> Result<Vec<Representation>> {
    if x.rows() == 0 {
        return Err(Error::InsufficientData(
            "representation needs at least one sample".into(),
        ));
    }
    let (_, captures) = model.forward_capture(x)?;
    captures
        .into_iter()
        .map(|cap| {
            let (input, output) = layer_rows(model, &cap)?;
            Ok(Representation {
                layer: cap.layer,
                input,
                output,
            })
        })
        .collect()
}

fn layer_rows(model: &Model, cap: &Capture) -> Result<(Matrix, Matrix)> {
    match &model.layers()[cap.layer] {
        Layer::Linear(_) => Ok((cap.input.clone(), cap.output.clone())),
        Layer::Conv2d { geometry, params } => {
            let locs = geometry.locations();
            let c_out = params.weight.rows();
            let mut ins = Vec::with_capacity(cap.input.rows());
            let mut outs = Matrix::zeros(cap.input.rows() * locs, c_out);
            for s in 0..cap.input.rows() {
                ins.push(unfold(cap.input.row(s), geometry)?);
                let y = cap.output.row(s);
                for p in 0..locs {
                    for c in 0..c_out {
                        outs[(s * locs + p, c)] = y[c * locs + p];
                    }
                }
            }
            let refs: Vec<&Matrix> = ins.iter().collect();
            Ok((Matrix::vstack(&refs)?, outs))
        }
        _ => Err(Error::invalid("capture on a layer without parameters")),
    }
}

/// Retain and forget decompositions of one layer's activation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpace {
    pub layer: usize,
    pub retain: SpectralDecomposition,
    pub forget: SpectralDecomposition,
}

/// Spaces for every linear/conv layer, estimated once from the original
/// model. `output` is only populated when an output-side variant needs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpaces {
    pub input: Vec<LayerSpace>,
    pub output: Option<Vec<LayerSpace>>,
}

impl LayerSpaces {
    pub fn layer_count(&self) -> usize {
        self.input.len()
    }
}

/// Estimates retain/forget spaces from the sample sets `x_r`, `x_f`.
///
/// Each layer's Gram matrix is accumulated from its representation and
/// eigendecomposed, so cost is independent of the number of rows.
pub fn estimate_spaces(model: &Model, x_r: &Matrix, x_f: &Matrix, with_output: bool) -> Result<LayerSpaces> {
    let retain = accumulate(model, x_r)?;
    let forget = accumulate(model, x_f)?;
    let pair = |side: fn(&(usize, GramAccumulator, GramAccumulator)) -> &GramAccumulator| -> Result<Vec<LayerSpace>> {
        retain
            .iter()
            .zip(&forget)
            .map(|(r, f)| {
                Ok(LayerSpace {
                    layer: r.0,
                    retain: spectral_from_gram(&side(r).finish())?,
                    forget: spectral_from_gram(&side(f).finish())?,
                })
            })
            .collect()
    };
    let input = pair(|t| &t.1)?;
    let output = if with_output { Some(pair(|t| &t.2)?) } else { None };
    Ok(LayerSpaces { input, output })
}

fn accumulate(model: &Model, x: &Matrix) -> Result<Vec<(usize, GramAccumulator, GramAccumulator)>> {
    let reps = build_representation(model, x)?;
    reps.into_iter()
        .map(|r| {
            r.input.ensure_finite("representation")?;
            let mut gi = GramAccumulator::new(r.input.cols());
            gi.push_rows(&r.input)?;
            let mut go = GramAccumulator::new(r.output.cols());
            go.push_rows(&r.output)?;
            Ok((r.layer, gi, go))
        })
        .collect()
}
