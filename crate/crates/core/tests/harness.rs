mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rode_core::curvature::rank_candidates;
use rode_core::data::{Cascade, Event, SocialGraph};
use rode_core::harness::{
    evaluate, evaluate_loss, generate_synthetic, hits_at, map_at, train, EvalReport, SynthConfig, TimePair,
};
use rode_core::model::{init_params, Dims};
use rode_core::numerics::ParamStore;
use rode_core::objective::GraphInputs;
use rode_core::{Error, RunConfig};

use common::*;

fn bytes(p: &ParamStore) -> Vec<u8> {
    let mut b = Vec::new();
    p.write_checkpoint(&mut b).unwrap();
    b
}

fn five_users() -> (SocialGraph, Cascade) {
    let g = SocialGraph::new(5, [(0, 1), (1, 2), (2, 3), (3, 4)], None).unwrap();
    let c = Cascade::new("only", vec![Event::new(0, 0.0), Event::new(1, 1.0), Event::new(2, 1.8), Event::new(4, 3.0)]).unwrap();
    (g, c)
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let (g, c) = five_users();
    let config = RunConfig { dim: 4, time_dim: 2, epochs: 0, seed: 3, ..RunConfig::default() };
    let out = train(&config, &g, &[c], &[], None).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.params, init_params(Dims { features: 5, dim: 4, time_dim: 2 }, 3).unwrap());
}

#[test]
fn fifty_epochs_reduce_the_training_loss() {
    let (g, c) = five_users();
    let config = RunConfig { dim: 4, time_dim: 2, epochs: 50, solver_steps: 8, lr: 1e-2, ..RunConfig::default() };
    let inputs = GraphInputs::new(&g);
    let cascades = [c];
    let init = init_params(Dims { features: 5, dim: 4, time_dim: 2 }, config.seed).unwrap();
    let before = evaluate_loss(&init, &inputs, &cascades, &config).unwrap();
    let out = train(&config, &g, &cascades, &[], None).unwrap();
    let after = evaluate_loss(&out.params, &inputs, &cascades, &config).unwrap();
    assert_eq!(out.log.len(), 50);
    assert!(after.joint < before.joint, "{before:?} -> {after:?}");
}

#[test]
fn same_seed_same_checkpoint_and_evaluation_leaves_parameters_alone() {
    let (g, cascades) = six_user_instance();
    let config = RunConfig { epochs: 4, grid: 8, ..small_config() };
    let a = train(&config, &g, &cascades, &cascades[1..], None).unwrap();
    let b = train(&config, &g, &cascades, &cascades[1..], None).unwrap();
    assert_eq!(bytes(&a.params), bytes(&b.params));
    assert_eq!(a.log, b.log);

    let before = bytes(&a.params);
    let r1 = evaluate(&a.params, &g, &cascades, &[1, 3, 5], &config, false).unwrap();
    let r2 = evaluate(&a.params, &g, &cascades, &[1, 3, 5], &config, false).unwrap();
    assert_eq!(bytes(&a.params), before);
    assert_eq!(r1.to_json(), r2.to_json());
}

#[test]
fn non_finite_loss_names_the_cascade() {
    let (g, cascades) = six_user_instance();
    let config = RunConfig { epochs: 1, ..small_config() };
    let mut params = small_params(&g, &config, 0);
    params.get_mut("head.bias").unwrap().data_mut()[0] = f64::NAN;
    match train(&config, &g, &cascades, &[], Some(params)) {
        Err(Error::Divergence(msg)) => assert!(msg.contains("cascade a"), "{msg}"),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn training_needs_a_cascade() {
    let (g, _) = six_user_instance();
    assert!(matches!(train(&small_config(), &g, &[], &[], None), Err(Error::Validation(_))));
}

#[test]
fn random_scorer_hits_match_the_binomial_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, trials) = (50, 20_000);
    let ranks: Vec<usize> = (0..trials)
        .map(|_| {
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let target = rng.gen_range(0..n);
            rank_candidates(&scores, &[]).iter().position(|&(u, _)| u == target).unwrap() + 1
        })
        .collect();
    for k in [1, 5, 10, 25] {
        let p = k as f64 / n as f64;
        let sigma = 100.0 * (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits_at(&ranks, k) - 100.0 * p).abs() <= 3.0 * sigma, "K={k}");
    }
}

#[test]
fn report_metrics_are_ordered_and_bounded() {
    let ranks = [1, 4, 2, 17, 9, 33, 1, 6];
    let pair = |truth, predicted| TimePair {
        message_id: "m".into(),
        offset: 1,
        user: 0,
        truth,
        predicted,
        truth_wall: truth * 10.0,
        predicted_wall: predicted * 10.0,
    };
    let pairs = [pair(0.5, 1.0), pair(0.5, 1.0), pair(0.5, 1.0)];
    let ks = [1, 3, 5, 10, 50];
    let r = EvalReport::from_parts(&ranks, &pairs, &ks, &RunConfig::default(), false);
    let mut prev = (0.0, 0.0);
    for k in ks {
        let (h, m) = (r.hits_at[&k], r.map_at[&k]);
        assert!((0.0..=100.0).contains(&h) && m <= h && h >= prev.0 && m >= prev.1);
        assert_eq!(m, map_at(&ranks, k));
        prev = (h, m);
    }
    assert!((r.rmse.unwrap() - 0.5).abs() < 1e-15);
    let wall = EvalReport::from_parts(&ranks, &pairs, &ks, &RunConfig::default(), true);
    assert!((wall.rmse.unwrap() - 5.0).abs() < 1e-12);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["hits_at", "map_at", "rmse", "rmse_by_offset", "config", "seed"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn teacher_ranks_its_own_cascades_well() {
    let cfg = SynthConfig { num_users: 30, num_cascades: 40, mean_length: 6, ..SynthConfig::default() };
    let data = generate_synthetic(&cfg).unwrap();
    let config = RunConfig { dim: cfg.dim, time_dim: cfg.time_dim, alpha: cfg.alpha, grid: 8, solver_steps: 4, ..RunConfig::default() };
    let r = evaluate(&data.teacher, &data.graph, &data.cascades, &[1], &config, false).unwrap();
    assert!(r.hits_at[&1] > 3.0 * 100.0 / cfg.num_users as f64, "{:?}", r.hits_at);
}
