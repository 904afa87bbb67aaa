mod common;

use approx::assert_abs_diff_eq;
use common::{random_batch, random_model};
use fedfair::datakit::{synth_classification, SynthSpec};
use fedfair::numkit::{evaluate, train_local, LabeledBatch, ModelKind, ModelParams, RngStream, SgdConfig};
use fedfair::strategies::{
    aggregate_fedavg, aggregate_qfedavg, ditto_personalize, select_clients, ClientUpdate, StrategyConfig,
    StrategyKind,
};
use proptest::prelude::*;

fn update(id: usize, params: ModelParams, loss: f64) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        params,
        train_size: 10,
        local_loss_before: loss,
    }
}

/// A 1-feature model whose first coordinate is `v` and the rest zero.
fn scalar(v: f64) -> ModelParams {
    let mut p = ModelParams::zeros(ModelKind::Logistic, 1, 2);
    p.values_mut()[0] = v;
    p
}

#[test]
fn qfedavg_two_client_step_matches_closed_form() {
    let cfg = StrategyConfig {
        q: 0.2,
        eta_q: 0.1,
        ..StrategyConfig::new(StrategyKind::Qfedavg)
    };
    let l = 1.0 / cfg.eta_q;
    let losses = [0.5, 1.0];
    let deltas = [0.2, 0.4];
    let theta = 1.0;
    // Δ = L (θ − θ_n), so θ_n = θ − Δ/L
    let updates: Vec<ClientUpdate> = (0..2)
        .map(|n| update(n, scalar(theta - deltas[n] / l), losses[n]))
        .collect();
    let step = aggregate_qfedavg(&scalar(theta), &updates, &cfg).unwrap();
    assert!(!step.fell_back);

    let num: f64 = (0..2).map(|n| losses[n].powf(0.2) * deltas[n]).sum();
    let den: f64 = (0..2)
        .map(|n| 0.2 * losses[n].powf(-0.8) * deltas[n] * deltas[n] + l * losses[n].powf(0.2))
        .sum();
    let got = step.params.values()[0];
    assert_abs_diff_eq!(got, theta - num / den, epsilon = 1e-12);
    assert_abs_diff_eq!(got, 0.969_383_136_290_943_5, epsilon = 1e-12);
    assert!(step.params.values()[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn selecting_five_of_a_hundred() {
    let pop: Vec<usize> = (0..100).collect();
    let a = select_clients(&pop, 5, &mut RngStream::new(1, 4)).unwrap();
    let again = select_clients(&pop, 5, &mut RngStream::new(1, 4)).unwrap();
    let b = select_clients(&pop, 5, &mut RngStream::new(2, 4)).unwrap();
    assert_eq!(a, again);
    assert_ne!(a, b);
    assert_eq!(a.len(), 5);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn selection_frequencies_match_the_participation_rate() {
    let pop: Vec<usize> = (0..100).collect();
    let draws = 10_000;
    let mut counts = [0usize; 100];
    let mut rng = RngStream::new(77, 4);
    for _ in 0..draws {
        for n in select_clients(&pop, 5, &mut rng).unwrap() {
            counts[n] += 1;
        }
    }
    // 99% simultaneous band over 100 clients: z at 1 − 0.01/200
    let p = 0.05;
    let half_width = 3.8906 * (p * (1.0 - p) / draws as f64).sqrt();
    for (n, &c) in counts.iter().enumerate() {
        let freq = c as f64 / draws as f64;
        assert!((freq - p).abs() < half_width, "client {n}: {freq}");
    }
}

#[test]
fn fedavg_keeps_a_common_model() {
    let mut rng = RngStream::new(6, 0);
    let p = random_model(ModelKind::Mlp, 3, 2, 1.0, &mut rng);
    let updates: Vec<ClientUpdate> = (0..4)
        .map(|n| ClientUpdate {
            train_size: 3 + 7 * n,
            ..update(n, p.clone(), 1.0)
        })
        .collect();
    assert!(aggregate_fedavg(&updates).unwrap().max_abs_diff(&p) < 1e-12);
}

fn ditto_cfg(lambda: f64) -> StrategyConfig {
    StrategyConfig {
        lambda,
        eta_l: 0.01,
        personal_epochs: 10,
        ..StrategyConfig::new(StrategyKind::Ditto)
    }
}

#[test]
fn ditto_without_pull_is_plain_sgd() {
    let mut rng = RngStream::new(12, 0);
    let data = random_batch(&mut rng, 40, 4, 3);
    let global = random_model(ModelKind::Logistic, 4, 3, 1.0, &mut rng);
    let personal = random_model(ModelKind::Logistic, 4, 3, 1.0, &mut rng);
    let cfg = ditto_cfg(0.0);
    let ditto = ditto_personalize(&global, &personal, &data, &cfg, 16, &mut RngStream::new(12, 9)).unwrap();
    let sgd = SgdConfig {
        epochs: 10,
        lr: 0.01,
        batch_size: 16,
    };
    let plain = train_local(&personal, &data, &sgd, &mut RngStream::new(12, 9)).unwrap();
    assert_eq!(ditto, plain);
}

#[test]
fn ditto_with_huge_pull_stays_on_the_global_model() {
    let mut rng = RngStream::new(13, 0);
    let data = random_batch(&mut rng, 40, 4, 3);
    let global = random_model(ModelKind::Mlp, 4, 3, 1.0, &mut rng);
    let personal = random_model(ModelKind::Mlp, 4, 3, 1.0, &mut rng);
    let out = ditto_personalize(&global, &personal, &data, &ditto_cfg(1e6), 32, &mut RngStream::new(13, 9)).unwrap();
    assert!(out.max_abs_diff(&global) <= 1e-2, "{}", out.max_abs_diff(&global));
}

/// Keeps every sample of class 0 and one in `keep_every` of the others.
fn skew(data: &LabeledBatch, keep_every: usize) -> LabeledBatch {
    let mut seen = 0;
    let picks: Vec<usize> = (0..data.len())
        .filter(|&i| {
            if data.label(i) == 0 {
                return true;
            }
            seen += 1;
            seen % keep_every == 0
        })
        .collect();
    data.select(&picks)
}

#[test]
fn ditto_personal_model_suits_a_skewed_client() {
    let mut spec = SynthSpec::new(3000, 3, 4);
    spec.separation = 1.5;
    let pooled = synth_classification(&spec, &[], &mut RngStream::new(21, 1)).unwrap();
    let init = ModelParams::init(ModelKind::Logistic, 4, 3, &mut RngStream::new(21, 2));
    let global = train_local(&init, &pooled, &SgdConfig::new(3, 0.05), &mut RngStream::new(21, 3)).unwrap();

    let local = synth_classification(&spec, &[], &mut RngStream::new(22, 1)).unwrap();
    let local = skew(&local, 8);
    let train = local.select(&(0..local.len()).filter(|i| i % 5 != 0).collect::<Vec<_>>());
    let test = local.select(&(0..local.len()).filter(|i| i % 5 == 0).collect::<Vec<_>>());

    let personal =
        ditto_personalize(&global, &global, &train, &ditto_cfg(0.8), 32, &mut RngStream::new(21, 4)).unwrap();
    let personal_acc = evaluate(&personal, &test, 0).unwrap().accuracy;
    let global_acc = evaluate(&global, &test, 0).unwrap().accuracy;
    assert!(personal_acc >= global_acc, "personal {personal_acc} < global {global_acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_clients_step_like_one(q in 0.0f64..5.0, loss in 0.01f64..4.0, clients in 1usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 0);
        let global = random_model(ModelKind::Logistic, 3, 2, 1.0, &mut rng);
        let local = random_model(ModelKind::Logistic, 3, 2, 1.0, &mut rng);
        let cfg = StrategyConfig { q, ..StrategyConfig::new(StrategyKind::Qfedavg) };
        let many: Vec<ClientUpdate> = (0..clients).map(|n| update(n, local.clone(), loss)).collect();
        let a = aggregate_qfedavg(&global, &many, &cfg).unwrap().params;
        let b = aggregate_qfedavg(&global, &many[..1], &cfg).unwrap().params;
        prop_assert!(a.max_abs_diff(&b) < 1e-10, "{}", a.max_abs_diff(&b));
        // a shared Δ shrinks to Δ / (L + q ||Δ||² / F)
        let l = 1.0 / cfg.eta_q;
        let delta: Vec<f64> = global.values().iter().zip(local.values()).map(|(g, p)| l * (g - p)).collect();
        let norm_sq: f64 = delta.iter().map(|d| d * d).sum();
        let scale = 1.0 / (l + q * norm_sq / loss);
        for ((v, g), d) in a.values().iter().zip(global.values()).zip(&delta) {
            prop_assert!((v - (g - scale * d)).abs() < 1e-10);
        }
    }

    #[test]
    fn qfedavg_at_q_zero_averages_the_clients(seed in any::<u64>(), clients in 1usize..6) {
        let mut rng = RngStream::new(seed, 1);
        let global = random_model(ModelKind::Mlp, 2, 2, 1.0, &mut rng);
        let locals: Vec<ModelParams> = (0..clients).map(|_| random_model(ModelKind::Mlp, 2, 2, 1.0, &mut rng)).collect();
        let updates: Vec<ClientUpdate> = locals.iter().enumerate().map(|(n, p)| update(n, p.clone(), 0.5 + n as f64)).collect();
        let cfg = StrategyConfig { q: 0.0, ..StrategyConfig::new(StrategyKind::Qfedavg) };
        let step = aggregate_qfedavg(&global, &updates, &cfg).unwrap().params;
        let refs: Vec<&ModelParams> = locals.iter().collect();
        let mean = ModelParams::average(&refs).unwrap();
        prop_assert!(step.max_abs_diff(&mean) < 1e-10);
    }
}
