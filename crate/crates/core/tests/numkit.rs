mod common;

use approx::assert_abs_diff_eq;
use common::{max_relative_error, numeric_gradient, random_batch, random_model};
use fedfair::datakit::{synth_classification, SynthSpec};
use fedfair::numkit::{
    evaluate, train_local, GroupCounts, LabeledBatch, ModelKind, ModelParams, RngStream, SgdConfig,
};
use proptest::prelude::*;

/// Logistic model on one feature that predicts class 1 exactly when `x > cut`.
fn threshold_model(cut: f64) -> ModelParams {
    // layout: weights [w0, w1] then biases [b0, b1]
    let mut p = ModelParams::zeros(ModelKind::Logistic, 1, 2);
    p.values_mut().copy_from_slice(&[0.0, 1.0, 0.0, -cut]);
    p
}

fn accuracy_by_count(p: &ModelParams, data: &LabeledBatch) -> f64 {
    let hits = (0..data.len()).filter(|&i| p.predict(data.row(i)) == data.label(i)).count();
    hits as f64 / data.len() as f64
}

#[test]
fn sgd_separates_well_spaced_blobs() {
    let mut spec = SynthSpec::new(200, 2, 2);
    // centres at -3 sigma and +3 sigma
    spec.separation = 6.0;
    let data = synth_classification(&spec, &[], &mut RngStream::new(11, 1)).unwrap();
    let start = ModelParams::init(ModelKind::Logistic, 2, 2, &mut RngStream::new(11, 2));
    let trained = train_local(&start, &data, &SgdConfig::new(5, 0.5), &mut RngStream::new(11, 3)).unwrap();
    let acc = accuracy_by_count(&trained, &data);
    assert!(acc >= 0.95, "training accuracy {acc}");
    assert_abs_diff_eq!(evaluate(&trained, &data, 1).unwrap().accuracy, acc, epsilon = 1e-15);
}

#[test]
fn constant_predictor_on_single_class_data() {
    let mut rng = RngStream::new(3, 0);
    let data = random_batch(&mut rng, 50, 3, 2).with_labels(vec![0; 50]).unwrap();
    let report = evaluate(&ModelParams::zeros(ModelKind::Logistic, 3, 2), &data, 1).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.samples, 50);
}

#[test]
fn constant_predictor_on_coin_flip_labels() {
    let n = 4000;
    let mut rng = RngStream::new(5, 0);
    let data = random_batch(&mut rng, n, 4, 2);
    let zeros = data.labels().iter().filter(|&&y| y == 0).count();
    let acc = evaluate(&ModelParams::zeros(ModelKind::Logistic, 4, 2), &data, 1).unwrap().accuracy;
    assert_eq!(acc, zeros as f64 / n as f64);
    let half_width = 2.576 * (0.25 / n as f64).sqrt();
    assert!((acc - 0.5).abs() < half_width, "accuracy {acc} outside 0.5 ± {half_width}");
}

#[test]
fn confusion_matches_hand_tally() {
    // (x, label, in group)
    let rows = [
        (0.9, 1, true),  // TP inside
        (0.8, 0, true),  // FP inside
        (0.2, 1, true),  // FN inside
        (0.1, 0, false), // TN outside
        (0.7, 1, false), // TP outside
        (0.3, 0, false), // TN outside
    ];
    let data = LabeledBatch::new(
        rows.iter().map(|r| r.0).collect(),
        1,
        rows.iter().map(|r| r.1).collect(),
        2,
        rows.iter().map(|r| r.2 as u8).collect(),
        1,
    )
    .unwrap();
    let report = evaluate(&threshold_model(0.5), &data, 1).unwrap();
    let c = report.confusion[0];
    assert_eq!(c.inside, GroupCounts { tp: 1, fp: 1, tn: 0, fn_: 1 });
    assert_eq!(c.outside, GroupCounts { tp: 1, fp: 0, tn: 2, fn_: 0 });
    assert_abs_diff_eq!(report.accuracy, 4.0 / 6.0, epsilon = 1e-15);
}

#[test]
fn loss_is_the_mean_cross_entropy() {
    let mut rng = RngStream::new(8, 0);
    let data = random_batch(&mut rng, 30, 5, 3);
    let p = random_model(ModelKind::Mlp, 5, 3, 0.5, &mut rng);
    let expected: f64 = (0..data.len())
        .map(|i| -p.probabilities(data.row(i))[data.label(i)].ln())
        .sum::<f64>()
        / data.len() as f64;
    assert_abs_diff_eq!(p.loss(&data).unwrap(), expected, epsilon = 1e-12);
    assert_abs_diff_eq!(evaluate(&p, &data, 0).unwrap().loss, expected, epsilon = 1e-12);
}

#[test]
fn duplicating_the_data_leaves_the_gradient_unchanged() {
    for kind in [ModelKind::Logistic, ModelKind::Mlp] {
        let mut rng = RngStream::new(21, 0);
        let data = random_batch(&mut rng, 17, 4, 3);
        let p = random_model(kind, 4, 3, 0.6, &mut rng);
        let once = p.gradient(&data).unwrap();
        let twice = p.gradient(&data.repeated(2)).unwrap();
        let worst = once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "{kind:?}: {worst}");
    }
}

#[test]
fn gradient_matches_finite_differences_on_twenty_samples() {
    for kind in [ModelKind::Logistic, ModelKind::Mlp] {
        let mut rng = RngStream::new(31, kind as u64);
        let data = random_batch(&mut rng, 20, 5, 3);
        let p = random_model(kind, 5, 3, 0.7, &mut rng);
        let err = max_relative_error(&p.gradient(&data).unwrap(), &numeric_gradient(&p, &data, 1e-5));
        assert!(err < 1e-4, "{kind:?}: {err}");
    }
}

#[test]
fn gradient_vanishes_at_a_slice_minimum() {
    let mut rng = RngStream::new(41, 0);
    let data = random_batch(&mut rng, 40, 3, 2);
    let mut p = random_model(ModelKind::Logistic, 3, 2, 0.5, &mut rng);
    let coord = 1;
    let along = |t: f64| {
        let mut q = p.clone();
        q.values_mut()[coord] = t;
        q.loss(&data).unwrap()
    };
    // golden-section search; the loss is convex along any line
    let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if along(a) < along(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    p.values_mut()[coord] = (lo + hi) / 2.0;
    let g = p.gradient(&data).unwrap()[coord];
    assert!(g.abs() < 1e-6, "slice gradient {g}");
}

#[test]
fn mlp_trains_below_its_starting_loss() {
    let data = synth_classification(&SynthSpec::new(300, 3, 4), &[], &mut RngStream::new(2, 1)).unwrap();
    let start = ModelParams::init(ModelKind::Mlp, 4, 3, &mut RngStream::new(2, 2));
    let trained = train_local(&start, &data, &SgdConfig::new(5, 0.1), &mut RngStream::new(2, 3)).unwrap();
    assert!(trained.loss(&data).unwrap() < start.loss(&data).unwrap());
}

fn kind_strategy() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::Logistic), Just(ModelKind::Mlp)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn probabilities_form_a_distribution(kind in kind_strategy(), seed in any::<u64>(), classes in 2usize..6) {
        let mut rng = RngStream::new(seed, 0);
        let data = random_batch(&mut rng, 6, 3, classes);
        let p = random_model(kind, 3, classes, 2.0, &mut rng);
        for i in 0..data.len() {
            let probs = p.probabilities(data.row(i));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&v| v >= 0.0));
            let best = probs.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(probs[p.predict(data.row(i))], best);
        }
        prop_assert!(p.loss(&data).unwrap() >= 0.0);
    }

    #[test]
    fn evaluation_counts_cover_every_sample(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = RngStream::new(seed, 1);
        let base = random_batch(&mut rng, n, 2, 2);
        let flags: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let data = LabeledBatch::new(base.features().to_vec(), 2, base.labels().to_vec(), 2, flags, 1).unwrap();
        let p = random_model(ModelKind::Logistic, 2, 2, 1.0, &mut rng);
        let report = evaluate(&p, &data, 1).unwrap();
        let c = report.confusion[0];
        let total = c.inside.positives() + c.inside.negatives() + c.outside.positives() + c.outside.negatives();
        prop_assert_eq!(total as usize, n);
        let correct = c.inside.tp + c.inside.tn + c.outside.tp + c.outside.tn;
        prop_assert!((report.accuracy - correct as f64 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn training_is_reproducible(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let data = random_batch(&mut rng, 25, 3, 2);
        let p = random_model(ModelKind::Mlp, 3, 2, 0.5, &mut rng);
        let cfg = SgdConfig { epochs: 2, lr: 0.05, batch_size: 8 };
        let a = train_local(&p, &data, &cfg, &mut RngStream::new(seed, 3)).unwrap();
        let b = train_local(&p, &data, &cfg, &mut RngStream::new(seed, 3)).unwrap();
        prop_assert_eq!(a, b);
    }
}
