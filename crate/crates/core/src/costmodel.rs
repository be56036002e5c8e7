//! Analytical multiply-accumulate counts for retraining one epoch versus the
//! projection update, per linear layer and per transformer block (linear
//! layers only, MLP ratio 4). All counts are exact integers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training samples of an ImageNet-scale retain set.
pub const IMAGENET_RETAIN_SAMPLES: u64 = 1_280_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostParams {
    pub f_in: u64,
    pub f_out: u64,
    /// Samples seen in one retraining epoch.
    pub n_r: u64,
    /// Retain / forget samples used to build representations.
    pub n_our_r: u64,
    pub n_our_f: u64,
}

impl CostParams {
    /// ImageNet setting: 999 retain and 500 forget representation samples.
    pub fn imagenet(f_in: u64, f_out: u64) -> Self {
        Self {
            f_in,
            f_out,
            n_r: IMAGENET_RETAIN_SAMPLES,
            n_our_r: 999,
            n_our_f: 500,
        }
    }

    pub fn with_features(self, f_in: u64, f_out: u64) -> Self {
        Self { f_in, f_out, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMethod {
    Retrain,
    Ours,
}

impl std::fmt::Display for CostMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CostMethod::Retrain => "retrain",
            CostMethod::Ours => "ours",
        })
    }
}

/// Forward plus backward pass over one epoch: `3 n_r f_in f_out`.
pub fn cost_retrain_linear(p: &CostParams) -> u128 {
    3 * p.n_r as u128 * p.f_in as u128 * p.f_out as u128
}

/// Representation forward pass, Gram matrix, eigendecomposition, and the
/// projection product:
/// `n f_in f_out + n f_in^2 + 2 f_in^3 + f_in^2 f_out` with `n = n_our_r + n_our_f`.
pub fn cost_ours_linear(p: &CostParams) -> u128 {
    let n = p.n_our_r as u128 + p.n_our_f as u128;
    let (fi, fo) = (p.f_in as u128, p.f_out as u128);
    n * fi * fo + n * fi * fi + 2 * fi * fi * fi + fi * fi * fo
}

pub fn cost_linear(method: CostMethod, p: &CostParams) -> u128 {
    match method {
        CostMethod::Retrain => cost_retrain_linear(p),
        CostMethod::Ours => cost_ours_linear(p),
    }
}

/// Four `h x h` attention projections plus the `h -> 4h -> h` MLP.
/// Sample counts come from `params`; its feature dims are ignored.
pub fn cost_vit_layer(hidden: u64, params: &CostParams, method: CostMethod) -> Result<u128> {
    if hidden == 0 {
        return Err(Error::invalid("hidden size must be at least 1"));
    }
    let c = |fi, fo| cost_linear(method, &params.with_features(fi, fo));
    Ok(4 * c(hidden, hidden) + c(hidden, 4 * hidden) + c(4 * hidden, hidden))
}

/// Cost of the projection update as a percentage of one retraining epoch.
pub fn percent_of_retrain_epoch(hidden: u64, params: &CostParams) -> Result<f64> {
    let ours = cost_vit_layer(hidden, params, CostMethod::Ours)?;
    let retrain = cost_vit_layer(hidden, params, CostMethod::Retrain)?;
    if retrain == 0 {
        return Err(Error::invalid("retraining cost is zero"));
    }
    Ok(100.0 * ours as f64 / retrain as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub hidden: u64,
    pub method: CostMethod,
    pub flops: u128,
    pub percent_of_retrain_epoch: f64,
}

pub fn cost_sweep(hidden_sizes: &[u64], params: &CostParams) -> Result<Vec<CostRow>> {
    let mut rows = Vec::with_capacity(2 * hidden_sizes.len());
    for &h in hidden_sizes {
        let retrain = cost_vit_layer(h, params, CostMethod::Retrain)?;
        for method in [CostMethod::Retrain, CostMethod::Ours] {
            let flops = cost_vit_layer(h, params, method)?;
            rows.push(CostRow {
                hidden: h,
                method,
                flops,
                percent_of_retrain_epoch: 100.0 * flops as f64 / retrain as f64,
            });
        }
    }
    Ok(rows)
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut s = String::from("hidden_size,method,flops,percent_of_retrain_epoch\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            r.hidden, r.method, r.flops, r.percent_of_retrain_epoch
        );
    }
    s
}
