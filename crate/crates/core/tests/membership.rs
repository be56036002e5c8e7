mod oracles;

use proptest::prelude::*;
use unlearn_core::eval::MiaClassifier;

fn training_errors(c: &MiaClassifier, pos: &[f64], neg: &[f64]) -> usize {
    pos.iter().filter(|&&x| !c.is_member(x)).count() + neg.iter().filter(|&&x| c.is_member(x)).count()
}

#[test]
fn separable_confidences_flag_every_forget_sample() {
    let members = vec![0.9; 40];
    let nonmembers = vec![0.1; 40];
    let c = MiaClassifier::fit(&members, &nonmembers, 1e-3, 1000, 0).unwrap();
    let forget = [0.05; 25];
    let nonmember = forget.iter().filter(|&&x| !c.is_member(x)).count();
    assert_eq!(100.0 * nonmember as f64 / forget.len() as f64, 100.0);
    assert_eq!(training_errors(&c, &members, &nonmembers), 0);
}

#[test]
fn objective_never_increases() {
    let members: Vec<f64> = (0..30).map(|i| 0.5 + 0.01 * i as f64).collect();
    let nonmembers: Vec<f64> = (0..30).map(|i| 0.3 + 0.012 * i as f64).collect();
    let c = MiaClassifier::fit(&members, &nonmembers, 1e-3, 300, 1).unwrap();
    assert!(c.objective.windows(2).all(|w| w[1] <= w[0]));
}

fn near_separable() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0f64..1.0, 5..60),
        prop::collection::vec(0.0f64..1.0, 5..60),
        0.05f64..0.5,
        any::<bool>(),
        prop::option::of(0.0f64..1.0),
    )
        .prop_map(|(p, n, gap, flip, outlier)| {
            // members on one side of a gap, nonmembers on the other, optionally one stray point
            let sign = if flip { -1.0 } else { 1.0 };
            let mut pos: Vec<f64> = p.iter().map(|u| sign * (gap + u)).collect();
            let neg: Vec<f64> = n.iter().map(|u| -sign * u).collect();
            if let Some(o) = outlier {
                pos.push(-sign * o);
            }
            (pos, neg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn separator_matches_best_threshold((pos, neg) in near_separable()) {
        let c = MiaClassifier::fit(&pos, &neg, 1e-3, 1000, 3).unwrap();
        let best = oracles::best_threshold_errors(&pos, &neg);
        let got = training_errors(&c, &pos, &neg);
        prop_assert!(got <= best + 1, "svm {got} vs threshold {best}");
    }
}
