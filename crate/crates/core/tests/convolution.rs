mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::linalg::Matrix;
use unlearn_core::nn::{fold, unfold, ConvGeometry, Layer, LayerSpec, Model};
use unlearn_core::unlearn::build_representation;

struct Case {
    geom: ConvGeometry,
    c_out: usize,
    input: Vec<f64>,
    model: Model,
}

fn random_case(rng: &mut ChaCha8Rng, seed: u64) -> Case {
    loop {
        let geom = ConvGeometry {
            in_channels: rng.random_range(1..4),
            height: rng.random_range(1..8),
            width: rng.random_range(1..8),
            kernel: rng.random_range(1..5),
            stride: rng.random_range(1..4),
            padding: rng.random_range(0..3),
        };
        if geom.validate().is_err() {
            continue;
        }
        let c_out = rng.random_range(1..5);
        let spec = LayerSpec::Conv2d {
            in_channels: geom.in_channels,
            out_channels: c_out,
            kernel: geom.kernel,
            stride: geom.stride,
            padding: geom.padding,
            height: geom.height,
            width: geom.width,
        };
        let model = Model::new(&[spec], seed).unwrap();
        let input = (0..geom.input_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        return Case {
            geom,
            c_out,
            input,
            model,
        };
    }
}

fn reference(case: &Case) -> Vec<f64> {
    let g = &case.geom;
    let img: Vec<Vec<Vec<f64>>> = (0..g.in_channels)
        .map(|c| {
            (0..g.height)
                .map(|y| {
                    (0..g.width)
                        .map(|x| case.input[c * g.height * g.width + y * g.width + x])
                        .collect()
                })
                .collect()
        })
        .collect();
    let Layer::Conv2d { params, .. } = &case.model.layers()[0] else {
        unreachable!()
    };
    let k = g.kernel;
    let weight: Vec<Vec<Vec<Vec<f64>>>> = (0..case.c_out)
        .map(|o| {
            (0..g.in_channels)
                .map(|c| {
                    (0..k)
                        .map(|ky| (0..k).map(|kx| params.weight[(o, c * k * k + ky * k + kx)]).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    oracles::naive_conv2d(&img, &weight, &params.bias, g.stride, g.padding)
        .into_iter()
        .flatten()
        .flatten()
        .collect()
}

#[test]
fn unfold_product_equals_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for seed in 0..50 {
        let case = random_case(&mut rng, seed);
        let expected = reference(&case);

        let x = Matrix::from_vec(1, case.input.len(), case.input.clone()).unwrap();
        let got = case.model.forward(&x).unwrap();
        assert_eq!(got.cols(), expected.len());
        for (a, b) in got.row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "{:?}: {a} vs {b}", case.geom);
        }

        // the representation rows times W^T give the same numbers, location-major
        let patches = unfold(&case.input, &case.geom).unwrap();
        let Layer::Conv2d { params, .. } = &case.model.layers()[0] else {
            unreachable!()
        };
        let prod = patches.matmul_transposed(&params.weight).unwrap();
        let locs = case.geom.locations();
        for p in 0..locs {
            for o in 0..case.c_out {
                let v = prod[(p, o)] + params.bias[o];
                assert!((v - expected[o * locs + p]).abs() < 1e-10);
            }
        }

        let reps = build_representation(&case.model, &x).unwrap();
        assert_eq!(reps[0].input, patches);
        assert_eq!(reps[0].output.shape(), (locs, case.c_out));
    }
}

#[test]
fn fold_is_the_adjoint_of_unfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for seed in 0..20 {
        let case = random_case(&mut rng, seed);
        let patches = unfold(&case.input, &case.geom).unwrap();
        let other = Matrix::from_vec(
            patches.rows(),
            patches.cols(),
            (0..patches.rows() * patches.cols())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let lhs: f64 = patches
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let back = fold(&other, &case.geom).unwrap();
        let rhs: f64 = case.input.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn stacked_representation_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let case = random_case(&mut rng, 4);
    let n = 3;
    let data: Vec<f64> = (0..n * case.geom.input_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let x = Matrix::from_vec(n, case.geom.input_len(), data).unwrap();
    let reps = build_representation(&case.model, &x).unwrap();
    assert_eq!(reps[0].input.rows(), n * case.geom.locations());
    assert_eq!(reps[0].input.cols(), case.geom.patch_len());
}
