mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::linalg::{Matrix, SpectralDecomposition};
use unlearn_core::nn::{mlp_with_batchnorm, LayerSpec, Model};
use unlearn_core::unlearn::{
    apply_update, estimate_spaces, projection_matrices, LayerProjection, ProjectionSet, ScalingCoefficients, Variant,
};

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn eye(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn minus(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn max_abs(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_instance(seed: u64) -> (Model, Matrix, Matrix, ScalingCoefficients) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..6);
    let hidden = rng.random_range(2..7);
    let depth = rng.random_range(2..5);
    let classes = rng.random_range(2..5);
    let model = Model::new(&mlp_with_batchnorm(input, hidden, depth, classes), seed).unwrap();
    let (n_r, n_f) = (rng.random_range(5..30), rng.random_range(5..30));
    let x_r = random_matrix(&mut rng, n_r, input);
    let x_f = random_matrix(&mut rng, n_f, input);
    let coeff = ScalingCoefficients::new(
        10f64.powf(rng.random_range(-1.0..3.0)),
        10f64.powf(rng.random_range(-1.0..3.0)),
    )
    .unwrap();
    (model, x_r, x_f, coeff)
}

#[test]
fn overall_update_matches_closed_form() {
    for seed in 0..50 {
        let (model, x_r, x_f, coeff) = random_instance(seed);
        let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
        let proj = projection_matrices(&spaces, coeff).unwrap();
        let updated = apply_update(&model, &proj, Variant::InputSuppression, 0).unwrap();
        for (p, &idx) in proj.input.iter().zip(&model.affine_layer_indices()) {
            let w = rows(&model.layers()[idx].affine().unwrap().weight);
            let p_f = rows(&p.p_f);
            let p_r = rows(&p.p_r);
            let d = p_f.len();
            // theta_f^T = (I - P_f (I - P_r)) theta^T
            let keep = minus(&eye(d), &oracles::naive_matmul(&p_f, &minus(&eye(d), &p_r)));
            let expected_t = oracles::naive_matmul(&keep, &oracles::naive_transpose(&w));
            let got_t = oracles::naive_transpose(&rows(&updated.layers()[idx].affine().unwrap().weight));
            let err = max_abs(&minus(&got_t, &expected_t));
            assert!(err < 1e-12, "seed {seed} layer {idx}: {err}");
            // biases untouched on the input side
            assert_eq!(
                updated.layers()[idx].affine().unwrap().bias,
                model.layers()[idx].affine().unwrap().bias
            );
        }
    }
}

#[test]
fn discriminatory_projection_identity() {
    for seed in 100..130 {
        let (model, x_r, x_f, coeff) = random_instance(seed);
        let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
        let proj = projection_matrices(&spaces, coeff).unwrap();
        for p in &proj.input {
            let pf = rows(&p.p_f);
            let expected = minus(&pf, &oracles::naive_matmul(&pf, &rows(&p.p_r)));
            assert!(max_abs(&minus(&rows(&p.p_dis), &expected)) < 1e-12);
        }
    }
}

#[test]
fn scaled_projections_are_psd_contractions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 200..230 {
        let (model, x_r, x_f, coeff) = random_instance(seed);
        let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
        let proj = projection_matrices(&spaces, coeff).unwrap();
        for p in &proj.input {
            for m in [&p.p_r, &p.p_f] {
                assert!(m.asymmetry() < 1e-10);
                let sv = oracles::hestenes_singular_values(&rows(m));
                assert!(sv[0] <= 1.0 + 1e-10, "spectral norm {}", sv[0]);
                for _ in 0..10 {
                    let v: Vec<f64> = (0..m.rows()).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mv = oracles::naive_matmul(&rows(m), &v.iter().map(|x| vec![*x]).collect::<Vec<_>>());
                    let q: f64 = v.iter().zip(&mv).map(|(a, b)| a * b[0]).sum();
                    assert!(q >= -1e-12);
                }
            }
        }
    }
}

#[test]
fn unit_importance_is_exact_noop() {
    for seed in 300..310 {
        let (model, x_r, x_f, _) = random_instance(seed);
        let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
        let input = spaces
            .input
            .iter()
            .map(|s| {
                let ones = vec![1.0; s.retain.dim()];
                let p_r = s.retain.reconstruct_with(&ones).unwrap();
                let p_f = s.forget.reconstruct_with(&ones).unwrap();
                let p_dis = p_f.sub(&p_f.matmul(&p_r).unwrap()).unwrap();
                LayerProjection {
                    layer: s.layer,
                    p_r,
                    p_f,
                    p_dis,
                }
            })
            .collect();
        let set = ProjectionSet { input, output: None };
        assert!(set.input.iter().all(|p| p.p_dis.as_slice().iter().all(|&v| v == 0.0)));
        let updated = apply_update(&model, &set, Variant::InputSuppression, 0).unwrap();
        assert_eq!(updated, model);
    }
}

#[test]
fn first_layer_sees_projected_input() {
    for seed in 400..405 {
        let (model, x_r, x_f, coeff) = random_instance(seed);
        let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
        let proj = projection_matrices(&spaces, coeff).unwrap();
        let updated = apply_update(&model, &proj, Variant::InputSuppression, 0).unwrap();
        let w0 = &model.layers()[0].affine().unwrap();
        let w1 = &updated.layers()[0].affine().unwrap();
        let p_dis = rows(&proj.input[0].p_dis);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x: Vec<f64> = (0..p_dis.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            // x - x P_dis
            let projected: Vec<f64> = (0..x.len())
                .map(|j| x[j] - (0..x.len()).map(|i| x[i] * p_dis[i][j]).sum::<f64>())
                .collect();
            for o in 0..w0.weight.rows() {
                let orig: f64 = w0.weight.row(o).iter().zip(&projected).map(|(a, b)| a * b).sum::<f64>() + w0.bias[o];
                let new: f64 = w1.weight.row(o).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + w1.bias[o];
                assert!((orig - new).abs() < 1e-12);
            }
        }
    }
}

fn basis_from(dirs: &[Vec<f64>], dim: usize, values: &[f64]) -> SpectralDecomposition {
    let mut basis = Matrix::zeros(dim, dim);
    for (j, d) in dirs.iter().enumerate() {
        for i in 0..dim {
            basis[(i, j)] = d[i];
        }
    }
    SpectralDecomposition {
        basis,
        singular_values: values.to_vec(),
    }
}

#[test]
fn orthogonal_supports_suppress_only_forget_directions() {
    // Retain data lives on e0, e1 and forget data on e2, e3 of a 4-d input.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x_r = Matrix::zeros(40, 4);
    let mut x_f = Matrix::zeros(40, 4);
    for i in 0..40 {
        x_r[(i, 0)] = rng.random_range(-1.0..1.0);
        x_r[(i, 1)] = rng.random_range(-1.0..1.0);
        x_f[(i, 2)] = rng.random_range(-1.0..1.0);
        x_f[(i, 3)] = rng.random_range(-1.0..1.0);
    }
    let model = Model::new(&[LayerSpec::linear(4, 3)], 1).unwrap();
    let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
    let proj = projection_matrices(&spaces, ScalingCoefficients::new(1e6, 1e6).unwrap()).unwrap();
    let updated = apply_update(&model, &proj, Variant::InputSuppression, 0).unwrap();
    let orig = model.forward(&x_r).unwrap();
    let after_r = updated.forward(&x_r).unwrap();
    let bias = &model.layers()[0].affine().unwrap().bias;
    let after_f = updated.forward(&x_f).unwrap();
    for i in 0..40 {
        // forget rows: only the bias survives
        let resid: f64 = after_f
            .row(i)
            .iter()
            .zip(bias)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x_f.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(resid < 1e-3 * norm, "forget row {i}: {resid}");
        let delta: f64 = after_r
            .row(i)
            .iter()
            .zip(orig.row(i))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let size: f64 = orig
            .row(i)
            .iter()
            .zip(bias)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(delta < 1e-3 * size.max(1e-12), "retain row {i}: {delta}");
    }

    // With exactly saturated spaces P_dis equals P_f on the forget plane.
    let e = eye(4);
    let retain = basis_from(
        &[e[0].clone(), e[1].clone(), e[2].clone(), e[3].clone()],
        4,
        &[1.0, 1.0, 0.0, 0.0],
    );
    let forget = basis_from(
        &[e[2].clone(), e[3].clone(), e[0].clone(), e[1].clone()],
        4,
        &[1.0, 1.0, 0.0, 0.0],
    );
    let p_r = retain.reconstruct_with(&[1.0, 1.0, 0.0, 0.0]).unwrap();
    let p_f = forget.reconstruct_with(&[1.0, 1.0, 0.0, 0.0]).unwrap();
    let p_dis = p_f.sub(&p_f.matmul(&p_r).unwrap()).unwrap();
    assert_eq!(p_dis, p_f);
}

#[test]
fn output_side_projects_bias_too() {
    let (model, x_r, x_f, coeff) = random_instance(77);
    let spaces = estimate_spaces(&model, &x_r, &x_f, true).unwrap();
    let proj = projection_matrices(&spaces, coeff).unwrap();
    let updated = apply_update(&model, &proj, Variant::OutputSuppression, 0).unwrap();
    let out = proj.output.as_ref().unwrap();
    for (p, &idx) in out.iter().zip(&model.affine_layer_indices()) {
        let a = model.layers()[idx].affine().unwrap();
        let keep = minus(&eye(p.p_dis.rows()), &rows(&p.p_dis));
        let keep_t = oracles::naive_transpose(&keep);
        let w = oracles::naive_matmul(&keep_t, &rows(&a.weight));
        let b = oracles::naive_matmul(&keep_t, &a.bias.iter().map(|v| vec![*v]).collect::<Vec<_>>());
        let got = updated.layers()[idx].affine().unwrap();
        assert!(max_abs(&minus(&rows(&got.weight), &w)) < 1e-12);
        for (g, e) in got.bias.iter().zip(&b) {
            assert!((g - e[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn start_layer_leaves_early_layers_alone() {
    let (model, x_r, x_f, coeff) = random_instance(5);
    let spaces = estimate_spaces(&model, &x_r, &x_f, false).unwrap();
    let proj = projection_matrices(&spaces, coeff).unwrap();
    let updated = apply_update(&model, &proj, Variant::InputSuppression, 1).unwrap();
    let idx = model.affine_layer_indices();
    assert_eq!(updated.layers()[idx[0]], model.layers()[idx[0]]);
    assert!(apply_update(&model, &proj, Variant::InputSuppression, idx.len()).is_err());
    assert!(apply_update(&model, &proj, Variant::OutputSuppression, 0).is_err());
}
