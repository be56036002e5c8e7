//! Class unlearning by suppressing class-discriminatory activations.
//!
//! For every linear/conv layer the retain and forget activation spaces are
//! estimated once from small sample sets. Each (alpha_r, alpha_f) candidate
//! scales those spaces into soft projections `P_r`, `P_f`, forms
//! `P_dis = P_f (I - P_r)` and rewrites the weights as `theta (I - P_dis)^T`,
//! which is the same as removing `x P_dis` from the layer input. Candidates
//! are ranked by penalised retain accuracy and the best one is returned.

mod projection;
mod search;
mod space;

pub use projection::{
    apply_update, projection_matrices, scale_importance, LayerProjection, ProjectionSet, ScalingCoefficients, Variant,
};
pub use search::{
    grid_search_unlearn, prepare_search, score, search_prepared, sequential_unlearn, sweep_alpha, sweep_csv, trace_csv,
    unlearn_with, SearchInputs, SearchOutcome, SequentialStep, SweepRow, TraceRow, UnlearnConfig,
};
pub use space::{build_representation, estimate_spaces, LayerSpace, LayerSpaces, Representation};
