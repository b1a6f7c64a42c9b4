//! Independent oracles for exact evaluation, sampling and the randomized
//! policy's return.

use crop_core::crop::{crop_stochastic_policy, CropConfig, CropPolicy, CropVariant};
use crop_core::loss::expected_return_crop;
use crop_core::mdp::{build_chain, Gridworld, ADVANCE, RIGHT};
use crop_core::rng::seeded;
use crop_core::solver::{
    evaluate_policy_exact, expected_return, monte_carlo_return, value_iteration, StochasticPolicy,
};
use crop_core::stats::chi_square_gof;

fn half_advance(n: usize) -> StochasticPolicy {
    StochasticPolicy::new(n, 2, [0.5, 0.5].repeat(n)).unwrap()
}

/// Closed form for the 3-state chain under a fair coin between ADVANCE and
/// STAY: `V1 = 0.5 / (1 − 0.5γ)` and `V0 = 0.5γ V1 / (1 − 0.5γ)`.
#[test]
fn chain_coin_policy_closed_form() {
    let gamma = 0.9;
    let mdp = build_chain(3, gamma).unwrap();
    let (v, q) = evaluate_policy_exact(&mdp, &half_advance(3)).unwrap();
    let v1 = 0.5 / (1.0 - 0.5 * gamma);
    let v0 = 0.5 * gamma * v1 / (1.0 - 0.5 * gamma);
    assert!((v.values[1] - v1).abs() < 1e-12);
    assert!((v.values[0] - v0).abs() < 1e-12);
    assert_eq!(v.values[2], 0.0);
    assert!((q.get(1, ADVANCE) - 1.0).abs() < 1e-12);

    let mc = monte_carlo_return(&mdp, &half_advance(3), 200_000, 2_000, 5);
    assert!(mc.within(v0, 3.0), "{mc:?} vs {v0}");
}

#[test]
fn next_state_frequencies_match_transition_row() {
    let mdp = Gridworld::canonical().build().unwrap();
    let mut rng = seeded(21);
    for (s, a) in [(0, RIGHT), (12, RIGHT), (6, 0)] {
        let row = mdp.transition_row(s, a).to_vec();
        let mut counts = vec![0u64; row.len()];
        for _ in 0..100_000 {
            counts[mdp.sample_next(s, a, &mut rng)] += 1;
        }
        let support: Vec<usize> = (0..row.len()).filter(|&i| row[i] > 0.0).collect();
        assert!(counts.iter().enumerate().all(|(i, &c)| c == 0 || row[i] > 0.0));
        let c: Vec<u64> = support.iter().map(|&i| counts[i]).collect();
        let p: Vec<f64> = support.iter().map(|&i| row[i]).collect();
        let gof = chi_square_gof(&c, &p);
        assert!(gof.p_value > 0.001, "({s}, {a}): {gof:?}");
    }
}

#[test]
fn crop_return_matches_rollouts() {
    let mdp = Gridworld::canonical().build().unwrap();
    let sol = value_iteration(&mdp, 1e-12, 10_000).unwrap();
    for (variant, seed) in [(CropVariant::QDiff, 1), (CropVariant::ADiff, 2), (CropVariant::APlusDiff, 3)] {
        let crop = CropPolicy::new(CropConfig::new(0.5, 0.05, variant).unwrap(), sol.q.clone(), sol.v.clone()).unwrap();
        let exact = expected_return_crop(&mdp, &crop).unwrap();
        let mc = monte_carlo_return(&mdp, &crop, 200_000, 1_000, seed);
        assert!(mc.within(exact, 3.0), "{variant}: {mc:?} vs {exact}");
    }
}

#[test]
fn qdiff_table_and_pair_chain_agree() {
    let mdp = Gridworld::canonical().build().unwrap();
    let sol = value_iteration(&mdp, 1e-12, 10_000).unwrap();
    let crop = CropPolicy::new(CropConfig::new(0.3, 0.1, CropVariant::QDiff).unwrap(), sol.q, sol.v).unwrap();
    let table = crop_stochastic_policy(&crop).unwrap();
    let direct = expected_return(&mdp, &table).unwrap();
    let (aug, aug_table) = crop_core::crop::augmented_model(&mdp, &crop).unwrap();
    let lifted = expected_return(&aug, &aug_table).unwrap();
    assert!((direct - lifted).abs() < 1e-10);
}
