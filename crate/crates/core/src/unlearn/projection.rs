//! Importance scaling, scaled projections and the weight update.

use serde::{Deserialize, Serialize};

use super::space::{LayerSpace, LayerSpaces};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::Model;

/// Scaling coefficients for the retain and forget spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCoefficients {
    pub alpha_r: f64,
    pub alpha_f: f64,
}

impl ScalingCoefficients {
    pub fn new(alpha_r: f64, alpha_f: f64) -> Result<Self> {
        for a in [alpha_r, alpha_f] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("scaling coefficient {a} must be in (0, inf)")));
            }
        }
        Ok(Self { alpha_r, alpha_f })
    }
}

/// Where activations are suppressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `theta (I - P_dis)^T` on the layer input.
    #[default]
    InputSuppression,
    /// `(I - P_dis,out)^T theta` on the layer output, bias included.
    OutputSuppression,
    Both,
}

impl Variant {
    pub fn needs_input(self) -> bool {
        matches!(self, Variant::InputSuppression | Variant::Both)
    }

    pub fn needs_output(self) -> bool {
        matches!(self, Variant::OutputSuppression | Variant::Both)
    }
}

/// Importance of each basis direction:
/// `lambda_i = alpha s_i^2 / ((alpha - 1) s_i^2 + sum_j s_j^2)`.
///
/// All zeros when every singular value is zero.
pub fn scale_importance(sigma: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid("singular values must be finite and non-negative"));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Ok(vec![0.0; sigma.len()]);
    }
    Ok(sigma
        .iter()
        .map(|s| {
            let s2 = s * s;
            if s2 == 0.0 {
                0.0
            } else {
                // rounding can push a lone dominant direction just past 1
                (alpha * s2 / ((alpha - 1.0) * s2 + total)).min(1.0)
            }
        })
        .collect())
}

/// Scaled projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjection {
    pub layer: usize,
    pub p_r: Matrix,
    pub p_f: Matrix,
    /// `P_f (I - P_r)`.
    pub p_dis: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub input: Vec<LayerProjection>,
    pub output: Option<Vec<LayerProjection>>,
}

fn layer_projection(space: &LayerSpace, coeff: ScalingCoefficients) -> Result<LayerProjection> {
    if space.retain.dim() != space.forget.dim() {
        return Err(Error::Shape(format!(
            "layer {}: retain space is {}-dimensional, forget space {}",
            space.layer,
            space.retain.dim(),
            space.forget.dim()
        )));
    }
    let lambda_r = scale_importance(&space.retain.singular_values, coeff.alpha_r)?;
    let lambda_f = scale_importance(&space.forget.singular_values, coeff.alpha_f)?;
    let p_r = space.retain.reconstruct_with(&lambda_r)?;
    let p_f = space.forget.reconstruct_with(&lambda_f)?;
    let p_dis = p_f.sub(&p_f.matmul(&p_r)?)?;
    Ok(LayerProjection {
        layer: space.layer,
        p_r,
        p_f,
        p_dis,
    })
}

pub fn projection_matrices(spaces: &LayerSpaces, coeff: ScalingCoefficients) -> Result<ProjectionSet> {
    let input = spaces
        .input
        .iter()
        .map(|s| layer_projection(s, coeff))
        .collect::<Result<Vec<_>>>()?;
    let output = match &spaces.output {
        Some(out) => Some(
            out.iter()
                .map(|s| layer_projection(s, coeff))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(ProjectionSet { input, output })
}

/// `I - P`.
fn complement(p: &Matrix) -> Matrix {
    let mut m = p.scale(-1.0);
    for i in 0..m.rows() {
        m[(i, i)] += 1.0;
    }
    m
}

/// Projects the weights of every linear/conv layer whose ordinal among the
/// linear/conv layers is at least `start_layer`. Normalisation layers are
/// never modified.
pub fn apply_update(model: &Model, projections: &ProjectionSet, variant: Variant, start_layer: usize) -> Result<Model> {
    let affine = model.affine_layer_indices();
    if start_layer >= affine.len() {
        return Err(Error::invalid(format!(
            "start layer {start_layer} out of range for {} linear/conv layers",
            affine.len()
        )));
    }
    if variant.needs_input() && projections.input.len() != affine.len() {
        return Err(Error::Shape(format!(
            "{} input projections for {} layers",
            projections.input.len(),
            affine.len()
        )));
    }
    let output = match (variant.needs_output(), &projections.output) {
        (true, Some(out)) if out.len() == affine.len() => Some(out),
        (true, _) => return Err(Error::invalid("variant needs output-activation projections")),
        (false, _) => None,
    };

    let mut updated = model.clone();
    for (ordinal, &layer_idx) in affine.iter().enumerate().skip(start_layer) {
        let params = updated.layers_mut()[layer_idx]
            .affine_mut()
            .expect("affine layer index");
        if variant.needs_input() {
            let proj = &projections.input[ordinal];
            check_layer(proj, layer_idx, params.weight.cols())?;
            // theta (I - P)^T
            params.weight = params.weight.matmul_transposed(&complement(&proj.p_dis))?;
        }
        if let Some(out) = output {
            let proj = &out[ordinal];
            check_layer(proj, layer_idx, params.weight.rows())?;
            // (I - P)^T theta, and the bias likewise
            let keep = complement(&proj.p_dis);
            params.weight = keep.transpose_matmul(&params.weight)?;
            let b = Matrix::from_vec(params.bias.len(), 1, params.bias.clone())?;
            params.bias = keep.transpose_matmul(&b)?.into_vec();
        }
        params.weight.ensure_finite("updated weights")?;
    }
    Ok(updated)
}

fn check_layer(proj: &LayerProjection, layer_idx: usize, dim: usize) -> Result<()> {
    if proj.layer != layer_idx || proj.p_dis.rows() != dim {
        return Err(Error::Shape(format!(
            "projection for layer {} ({}x{}) does not fit layer {layer_idx} of width {dim}",
            proj.layer,
            proj.p_dis.rows(),
            proj.p_dis.cols()
        )));
    }
    Ok(())
}
