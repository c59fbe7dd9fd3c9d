use std::sync::{Arc, Mutex};

use lrmc_core::env::RewardModel;
use lrmc_core::harness::{run_episode, run_policy, PolicySpec};
use lrmc_core::policies::{EtcConfig, EtcPolicy, OctalConfig, OctalPolicy, Policy, PolicyReport, UcbPolicy};
use lrmc_core::RngStream;
use proptest::prelude::*;
use rand::Rng;

/// Every labelled user sits with its true sign class, the two clusters hold
/// different classes, and each cluster keeps its class's best item.
fn check_purity(model: &RewardModel, policy: &OctalPolicy) -> Result<(), String> {
    let r1 = model.rank1().unwrap();
    for state in policy.history() {
        let mut classes = [None, None];
        for (c, (users, items)) in [(&state.cluster1, &state.items1), (&state.cluster2, &state.items2)].into_iter().enumerate() {
            for &u in users.iter() {
                let pos = r1.is_positive(u);
                if *classes[c].get_or_insert(pos) != pos {
                    return Err(format!("phase {}: cluster {} mixes sign classes", state.phase, c + 1));
                }
            }
            if let Some(pos) = classes[c] {
                let best = if pos { r1.best_item_pos } else { r1.best_item_neg };
                if !items.contains(&best) {
                    return Err(format!("phase {}: cluster {} lost item {best}", state.phase, c + 1));
                }
            }
        }
        if classes[0].is_some() && classes[0] == classes[1] {
            return Err(format!("phase {}: both clusters hold one class", state.phase));
        }
    }
    Ok(())
}

fn run_octal(model: &RewardModel, config: OctalConfig, horizon: usize, seed: u64) -> OctalPolicy {
    let mut policy =
        OctalPolicy::new(config, model.num_users(), model.num_items(), horizon, RngStream::derive(seed, 1)).unwrap();
    run_policy(model, &mut policy, horizon, seed, false).unwrap();
    policy
}

#[test]
fn noiseless_octal_clusters_are_pure() {
    let mut rng = RngStream::from_seed(77);
    let mut labelled = 0;
    for instance in 0..200u64 {
        let m = rng.random_range(2..=12);
        let n = rng.random_range(2..=10);
        let model = RewardModel::rank1_gap(m, n, 1.0, 0.0, instance).unwrap();
        let policy = run_octal(&model, OctalConfig::practical(), 200, instance);
        assert!(policy.history().len() > 1, "instance {instance}: no phase finished");
        if let Err(e) = check_purity(&model, &policy) {
            panic!("instance {instance} ({m}x{n}): {e}");
        }
        labelled += usize::from(policy.state().unlabelled.len() < m);
    }
    assert!(labelled >= 180, "only {labelled} instances labelled anyone");
}

#[test]
fn small_m_variant_agrees_on_a_noiseless_toy() {
    let model = RewardModel::rank1_gap(6, 5, 1.0, 0.0, 3).unwrap();
    let horizon = 200;
    let small = OctalConfig { small_m_variant: true, ..OctalConfig::practical() };
    for config in [OctalConfig::practical(), small] {
        let mut policy = OctalPolicy::new(config, 6, 5, horizon, RngStream::from_seed(5)).unwrap();
        let out = run_policy(&model, &mut policy, horizon, 5, false).unwrap();
        check_purity(&model, &policy).unwrap();
        assert_eq!(out.trace.per_round[horizon - 1], 0.0);
    }
}

#[test]
fn etc_commits_to_the_same_items_under_rescaling() {
    for seed in 0..5 {
        let committed = [0.5, 1.0, 2.0].map(|gap| {
            let model = RewardModel::rank1_gap(20, 30, gap, 0.0, seed).unwrap();
            let mut policy = EtcPolicy::new(EtcConfig::fixed(10), 20, 30, 50, RngStream::from_seed(seed)).unwrap();
            run_policy(&model, &mut policy, 50, seed, false).unwrap();
            policy.committed().unwrap().to_vec()
        });
        assert_eq!(committed[0], committed[1]);
        assert_eq!(committed[1], committed[2]);
    }
}

/// Fraction of cells farther than `eta` from the truth.
fn failure_fraction(estimate: &lrmc_core::DMatrix<f64>, truth: &lrmc_core::DMatrix<f64>, eta: f64) -> f64 {
    (estimate - truth).iter().filter(|e| e.abs() > eta).count() as f64 / truth.len() as f64
}

#[test]
fn median_of_passes_beats_a_single_corrupted_pass() {
    let (m, n, trials, eta) = (20, 20, 60, 0.25);
    let (mut single, mut median) = (0.0, 0.0);
    for trial in 0..trials {
        let model = RewardModel::rank1_gap(m, n, 1.0, 0.1, trial).unwrap();
        let hook_rng = Arc::new(Mutex::new(RngStream::derive(trial, 7)));
        let config = EtcConfig { repetitions: Some(5), ..EtcConfig::fixed(25) };
        let mut policy = EtcPolicy::new(config, m, n, 30, RngStream::derive(trial, 1))
            .unwrap()
            .with_pass_hook(Box::new(move |_, est| {
                if hook_rng.lock().unwrap().random_bool(0.3) {
                    est.estimate.iter_mut().for_each(|x| *x = -*x + 3.0);
                }
            }));
        run_policy(&model, &mut policy, 30, trial, false).unwrap();
        let passes = policy.pass_estimates();
        assert_eq!(passes.len(), 5);
        let truth = model.expected_rewards();
        single += failure_fraction(&passes[0].estimate, truth, eta);
        let med = lrmc_core::matcomp::median_of_estimates(passes).unwrap();
        median += failure_fraction(&med.estimate, truth, eta);
    }
    assert!(median < single, "median {median} vs single {single}");
}

#[test]
fn every_policy_logs_exactly_horizon_recommendations_per_user() {
    let model = RewardModel::rank1_gap(12, 15, 1.0, 0.1, 2).unwrap();
    let specs = [
        PolicySpec::Etc(EtcConfig::fixed(5)),
        PolicySpec::Octal(OctalConfig::practical()),
        PolicySpec::Octal(OctalConfig { small_m_variant: true, ..OctalConfig::practical() }),
        PolicySpec::Ucb { exploration_coefficient: 2f64.sqrt() },
        PolicySpec::Oracle,
        PolicySpec::Fixed { item: 3 },
    ];
    for spec in &specs {
        for horizon in [1, 7, 60] {
            let out = run_episode(&model, spec, horizon, 9, true).unwrap();
            assert_eq!(out.trace.horizon(), horizon);
            let mut counts = [0usize; 12];
            for (k, rec) in out.log.iter().enumerate() {
                assert_eq!(rec.round, k / 12);
                counts[rec.user] += 1;
            }
            assert!(counts.iter().all(|&c| c == horizon), "{}: {counts:?}", spec.label());
            let again = run_episode(&model, spec, horizon, 9, true).unwrap();
            assert_eq!(out.log, again.log);
            assert_eq!(out.trace, again.trace);
        }
    }
}

#[test]
fn oracle_has_zero_regret() {
    let model = RewardModel::rank1_gap(5, 6, 1.0, 0.1, 0).unwrap();
    let out = run_episode(&model, &PolicySpec::Oracle, 5, 0, false).unwrap();
    assert_eq!(out.trace.per_round, vec![0.0; 5]);
}

#[test]
fn ucb_plays_round_robin_until_every_item_is_tried() {
    let model = RewardModel::rank1_gap(4, 8, 1.0, 0.1, 1).unwrap();
    let mut policy = UcbPolicy::new(4, 8, 2f64.sqrt(), 8).unwrap();
    let out = run_policy(&model, &mut policy, 8, 1, true).unwrap();
    for rec in &out.log {
        assert_eq!(rec.item, rec.round);
    }
    assert!(matches!(policy.report(), PolicyReport::Ucb(_)));
}

#[test]
fn policies_reject_protocol_violations() {
    let mut policy = UcbPolicy::new(2, 3, 1.0, 4).unwrap();
    assert!(policy.next_recommendations(1).is_err());
    policy.next_recommendations(0).unwrap();
    assert!(policy.next_recommendations(0).is_err());
    assert!(policy.observe(0, &[0.0]).is_err());
    policy.observe(0, &[0.0, 0.0]).unwrap();
    assert!(EtcPolicy::new(EtcConfig { repetitions: Some(2), ..EtcConfig::fixed(5) }, 2, 3, 4, RngStream::from_seed(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn regret_invariants(seed in 0u64..1000, m in 2usize..9, n in 2usize..9, horizon in 1usize..40, which in 0usize..4) {
        let model = RewardModel::rank1_gap(m, n, 1.0, 0.1, seed).unwrap();
        let spec = match which {
            0 => PolicySpec::Etc(EtcConfig::fixed(3)),
            1 => PolicySpec::Octal(OctalConfig::practical()),
            2 => PolicySpec::Ucb { exploration_coefficient: 1.0 },
            _ => PolicySpec::Fixed { item: n - 1 },
        };
        let out = run_episode(&model, &spec, horizon, seed, false).unwrap();
        prop_assert!(out.trace.per_round.iter().all(|&r| r >= 0.0));
        prop_assert!(out.trace.cumulative.windows(2).all(|w| w[1] >= w[0]));
        if let PolicySpec::Octal(c) = &spec {
            let mut policy = OctalPolicy::new(c.clone(), m, n, horizon, RngStream::from_seed(seed)).unwrap();
            run_policy(&model, &mut policy, horizon, seed, false).unwrap();
            for state in policy.history() {
                prop_assert!(state.check_invariants(m, n).is_ok());
            }
        }
    }
}
