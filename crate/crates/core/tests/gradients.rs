mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::linalg::Matrix;
use unlearn_core::nn::{loss_gradients, mlp_with_batchnorm, Layer, LayerSpec, Mode, Model};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn loss_at(model: &Model, x: &Matrix, y: &[usize], mode: Mode) -> f64 {
    let (logits, _) = model.forward_tape(x, mode).unwrap();
    let rows: Vec<Vec<f64>> = (0..logits.rows()).map(|i| logits.row(i).to_vec()).collect();
    oracles::cross_entropy(&rows, y)
}

/// Compares every analytic parameter gradient with a central difference.
fn check(model: &Model, x: &Matrix, y: &[usize], mode: Mode) -> f64 {
    let (grads, _, _) = loss_gradients(model, x, y, mode).unwrap();
    let mut worst: f64 = 0.0;
    let shapes: Vec<usize> = model.param_tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let mut f = |theta: &[f64]| {
                let mut m = model.clone();
                m.param_tensors_mut()[t][i] = theta[0];
                loss_at(&m, x, y, mode)
            };
            let base = [model.param_tensors()[t][i]];
            let numeric = oracles::central_difference(&mut f, &base, 0, H);
            let err = oracles::relative_error(grads.tensors[t][i], numeric);
            worst = worst.max(err);
        }
    }
    worst
}

fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> (Matrix, Vec<usize>) {
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (x, y)
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(&[LayerSpec::linear(3, 4)], 1).unwrap();
    let (x, y) = batch(&mut rng, 7, 3, 4);
    assert!(check(&model, &x, &y, Mode::Eval) < TOL);
}

#[test]
fn relu_between_linears() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(&[LayerSpec::linear(3, 6), LayerSpec::Relu, LayerSpec::linear(6, 3)], 2).unwrap();
    let (x, y) = batch(&mut rng, 9, 3, 3);
    assert!(check(&model, &x, &y, Mode::Eval) < TOL);
}

#[test]
fn batchnorm_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(
        &[
            LayerSpec::linear(3, 5),
            LayerSpec::batchnorm(5),
            LayerSpec::Relu,
            LayerSpec::linear(5, 3),
        ],
        3,
    )
    .unwrap();
    let mut model = model;
    for t in model.param_tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (x, y) = batch(&mut rng, 8, 3, 3);
    assert!(check(&model, &x, &y, Mode::Train) < TOL);
}

#[test]
fn batchnorm_running_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = Model::new(
        &[
            LayerSpec::linear(2, 4),
            LayerSpec::batchnorm(4),
            LayerSpec::Relu,
            LayerSpec::linear(4, 3),
        ],
        4,
    )
    .unwrap();
    for layer in model.layers_mut() {
        if let Layer::Batchnorm1d(bn) = layer {
            for j in 0..bn.gamma.len() {
                bn.running_mean[j] = rng.random_range(-0.5..0.5);
                bn.running_var[j] = rng.random_range(0.5..2.0);
                bn.gamma[j] = rng.random_range(0.5..1.5);
                bn.beta[j] = rng.random_range(-0.5..0.5);
            }
        }
    }
    let (x, y) = batch(&mut rng, 6, 2, 3);
    assert!(check(&model, &x, &y, Mode::Eval) < TOL);
}

#[test]
fn convolution_with_stride_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conv = LayerSpec::Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        padding: 1,
        height: 5,
        width: 5,
    };
    let model = Model::new(&[conv, LayerSpec::Relu, LayerSpec::linear(3 * 9, 4)], 5).unwrap();
    let (x, y) = batch(&mut rng, 4, 50, 4);
    assert!(check(&model, &x, &y, Mode::Eval) < TOL);
}

#[test]
fn toy_architecture_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::new(&mlp_with_batchnorm(2, 5, 5, 4), 6).unwrap();
    let (x, y) = batch(&mut rng, 16, 2, 4);
    assert!(check(&model, &x, &y, Mode::Train) < TOL);
    assert!(check(&model, &x, &y, Mode::Eval) < TOL);
}
