mod common;

use common::*;
use rrmdp_core::eval::q_values;
use rrmdp_core::experiment::sample_random_mdp;
use rrmdp_core::norm::{lp_norm, weighted_lp_norm};
use rrmdp_core::oracle::{brute_force_worst_reward, OracleConfig};
use rrmdp_core::robust::robust_value_exact;
use rrmdp_core::uncertainty::{build, COUPLED, SA_RECT, S_RECT};
use rrmdp_core::{
    holder_conjugate, occupancy_exact, rectangularized_value, return_of, robust_q, robust_value_iteration,
    solve_value_exact, worst_case_reward, worst_case_reward_for, worst_case_reward_rectangular, NormOrder, Policy,
    Table, UncertaintySpec,
};

#[test]
fn conjugate_exponents() {
    assert_eq!(holder_conjugate(2.0).unwrap(), 2.0);
    assert_eq!(holder_conjugate(f64::INFINITY).unwrap(), 1.0);
    assert_eq!(holder_conjugate(1.0).unwrap(), f64::INFINITY);
    let q = holder_conjugate(3.0).unwrap();
    assert!((q - 1.5).abs() < 1e-15);
    assert!((1.0 / 3.0 + 1.0 / q - 1.0).abs() < 1e-12);
    assert!(holder_conjugate(0.5).unwrap_err().is_validation());
}

#[test]
fn zero_radius_leaves_reward_untouched() {
    let mdp = sample_random_mdp(3, 4, 3, 0.9).unwrap();
    let policy = random_policy(3, 4, 3);
    let report = worst_case_reward_for(&mdp, &policy, &UncertaintySpec::coupled(0.0, p(2.0))).unwrap();
    assert_eq!(&report.worst_reward, mdp.reward());
    let nominal = return_of(&mdp, &policy, mdp.reward()).unwrap();
    assert!((report.robust_return - nominal).abs() < 1e-9);
}

#[test]
fn one_by_one_closed_form() {
    let mdp = single_state(0.9, 1.0);
    let report = worst_case_reward_for(&mdp, &Policy::uniform(1, 1), &UncertaintySpec::coupled(0.1, p(2.0))).unwrap();
    assert!((report.penalty[(0, 0)] - 0.1).abs() < 1e-15);
    assert!((report.robust_return - 9.0).abs() < 1e-12);
    assert!((report.regularizer_value - 1.0).abs() < 1e-12);
}

#[test]
fn infinity_ball_charges_full_radius_everywhere() {
    let mdp = sample_random_mdp(7, 3, 3, 0.9).unwrap();
    let policy = Policy::deterministic(3, &[0, 2, 1]).unwrap();
    let report =
        worst_case_reward_for(&mdp, &policy, &UncertaintySpec::coupled(0.25, NormOrder::INFINITY)).unwrap();
    assert!(report.penalty.as_slice().iter().all(|&x| x == 0.25));
    let d = occupancy_exact(&mdp, &policy).unwrap();
    assert!((report.regularizer_value - 0.25 * d.total_mass()).abs() < 1e-12);
}

#[test]
fn l1_ball_spends_radius_on_most_visited_pairs() {
    let mdp = sample_random_mdp(9, 3, 2, 0.9).unwrap();
    let policy = random_policy(9, 3, 2);
    let report = worst_case_reward_for(&mdp, &policy, &UncertaintySpec::coupled(0.4, NormOrder::ONE)).unwrap();
    let d = occupancy_exact(&mdp, &policy).unwrap().state_action;
    let max = d.as_slice().iter().copied().fold(0.0, f64::max);
    let argmax: Vec<usize> = (0..6).filter(|&i| d.as_slice()[i] == max).collect();
    for (i, &pen) in report.penalty.as_slice().iter().enumerate() {
        let expected = if argmax.contains(&i) { 0.4 / argmax.len() as f64 } else { 0.0 };
        assert_eq!(pen, expected);
    }
}

#[test]
fn l1_ties_split_the_budget() {
    // symmetric problem under the uniform policy: every pair has the same occupancy
    let mdp = rrmdp_core::TabularMdp::new(
        vec![vec![vec![0.5, 0.5]; 2]; 2],
        Table::filled(2, 2, 1.0),
        0.9,
        vec![0.5, 0.5],
    )
    .unwrap();
    let report =
        worst_case_reward_for(&mdp, &Policy::uniform(2, 2), &UncertaintySpec::coupled(1.0, NormOrder::ONE)).unwrap();
    assert!(report.penalty.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn closed_form_agrees_with_projected_descent() {
    let mdp = sample_random_mdp(42, 3, 2, 0.9).unwrap();
    let policy = random_policy(42, 3, 2);
    let spec = UncertaintySpec::coupled(0.5, p(2.0));
    let closed = worst_case_reward_for(&mdp, &policy, &spec).unwrap();
    let oracle = brute_force_worst_reward(&mdp, &policy, &spec, &OracleConfig::default()).unwrap();
    assert!(oracle.certified, "certificate error {}", oracle.certificate_error);
    assert!((closed.robust_return - oracle.report.robust_return).abs() <= 1e-6);
    // sign opposition: the adversary lowers every visited pair
    for (r, d) in oracle
        .report
        .penalty
        .as_slice()
        .iter()
        .zip(occupancy_exact(&mdp, &policy).unwrap().state_action.as_slice())
    {
        assert!(*d > 0.0 && *r > 0.0);
    }
}

#[test]
fn oracle_agreement_across_orders_and_weights() {
    let config = OracleConfig::default();
    for (k, order) in [1.0, 1.5, 3.0, f64::INFINITY].into_iter().enumerate() {
        let seed = 50 + k as u64;
        let mdp = sample_random_mdp(seed, 3, 3, 0.8).unwrap();
        let policy = random_policy(seed, 3, 3);
        let weights = Table::from_fn(3, 3, |s, a| 0.5 + 0.25 * (s + a) as f64);
        for spec in [
            UncertaintySpec::coupled(0.3, p(order)),
            UncertaintySpec::coupled(0.3, p(order)).with_weights(weights.clone()),
        ] {
            let closed = worst_case_reward_for(&mdp, &policy, &spec).unwrap();
            let oracle = brute_force_worst_reward(&mdp, &policy, &spec, &config).unwrap();
            assert!(oracle.certified, "p = {order}");
            assert!((closed.robust_return - oracle.report.robust_return).abs() <= 1e-6, "p = {order}");
        }
    }
}

#[test]
fn weighted_penalty_respects_weighted_budget_and_identity() {
    let mdp = sample_random_mdp(14, 4, 2, 0.9).unwrap();
    let policy = random_policy(14, 4, 2);
    let weights = Table::from_fn(4, 2, |s, a| 1.0 + s as f64 + 0.5 * a as f64);
    for order in [1.5, 2.0, 4.0] {
        let spec = UncertaintySpec::coupled(0.7, p(order)).with_weights(weights.clone());
        let report = worst_case_reward_for(&mdp, &policy, &spec).unwrap();
        let norm = weighted_lp_norm(report.penalty.as_slice(), Some(weights.as_slice()), p(order));
        assert!((norm - 0.7).abs() <= 1e-9);
        assert!((report.nominal_return - report.regularizer_value - report.robust_return).abs() <= 1e-9);
    }
}

#[test]
fn coupled_budget_and_holder_equality() {
    for seed in 0..20 {
        let mdp = sample_random_mdp(seed, 5, 3, 0.95).unwrap();
        let policy = random_policy(seed, 5, 3);
        let d = occupancy_exact(&mdp, &policy).unwrap().state_action;
        for order in [1.5, 2.0, 4.0] {
            let spec = UncertaintySpec::coupled(0.6, p(order));
            let report = worst_case_reward_for(&mdp, &policy, &spec).unwrap();
            assert!((lp_norm(report.penalty.as_slice(), p(order)) - 0.6).abs() <= 1e-8);
            let dual = 0.6 * lp_norm(d.as_slice(), p(order).conjugate());
            assert!((report.penalty.dot(&d) - dual).abs() <= 1e-9);
            assert!((report.robust_return - (report.nominal_return - dual)).abs() <= 1e-9);
        }
    }
}

#[test]
fn robust_return_is_monotone_in_radius() {
    let mdp = sample_random_mdp(31, 4, 3, 0.9).unwrap();
    let policy = random_policy(31, 4, 3);
    let returns: Vec<f64> = [0.0, 0.05, 0.1, 0.5, 1.0, 2.0]
        .iter()
        .map(|&a| worst_case_reward_for(&mdp, &policy, &UncertaintySpec::coupled(a, p(3.0))).unwrap().robust_return)
        .collect();
    assert!(returns.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn invalid_specs_are_rejected() {
    let mdp = sample_random_mdp(1, 2, 2, 0.9).unwrap();
    let policy = Policy::uniform(2, 2);
    let negative = UncertaintySpec::coupled(-0.1, p(2.0));
    assert!(worst_case_reward_for(&mdp, &policy, &negative).unwrap_err().is_validation());
    let zero_weight = UncertaintySpec::coupled(0.1, p(2.0)).with_weights(Table::from_fn(2, 2, |s, _| s as f64));
    assert!(worst_case_reward_for(&mdp, &policy, &zero_weight).unwrap_err().is_validation());
    let missing = UncertaintySpec { flavor: S_RECT.into(), ..UncertaintySpec::coupled(0.1, p(2.0)) };
    assert!(worst_case_reward_rectangular(&mdp, &policy, &missing).unwrap_err().is_validation());
    assert!(worst_case_reward_rectangular(&mdp, &policy, &UncertaintySpec::coupled(0.1, p(2.0))).is_err());
}

#[test]
fn rectangular_sets_with_zero_radii_are_nominal() {
    let mdp = sample_random_mdp(2, 3, 2, 0.9).unwrap();
    let policy = random_policy(2, 3, 2);
    for flavor in [S_RECT, SA_RECT] {
        let report =
            worst_case_reward_rectangular(&mdp, &policy, &UncertaintySpec::uniform(flavor, 0.0, p(2.0), 3, 2))
                .unwrap();
        assert!(report.penalty.as_slice().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn state_rectangular_penalty_at_deterministic_policy() {
    let mdp = sample_random_mdp(2, 3, 3, 0.9).unwrap();
    let policy = Policy::deterministic(3, &[2, 0, 1]).unwrap();
    let spec = UncertaintySpec::s_rect(vec![0.1, 0.2, 0.3], p(2.0));
    let report = worst_case_reward_rectangular(&mdp, &policy, &spec).unwrap();
    for (s, chosen) in [2, 0, 1].into_iter().enumerate() {
        for a in 0..3 {
            let expected = if a == chosen { [0.1, 0.2, 0.3][s] } else { 0.0 };
            assert!((report.penalty[(s, a)] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn pair_rectangular_penalty_is_the_radius_table() {
    let mdp = sample_random_mdp(5, 3, 2, 0.9).unwrap();
    let policy = random_policy(5, 3, 2);
    let radii = Table::from_fn(3, 2, |s, a| 0.1 * (1 + s + a) as f64);
    let report = worst_case_reward_rectangular(&mdp, &policy, &UncertaintySpec::sa_rect(radii.clone(), p(3.0))).unwrap();
    assert_eq!(report.penalty, radii);
    let d = occupancy_exact(&mdp, &policy).unwrap().state_action;
    assert!((report.regularizer_value - d.dot(&radii)).abs() < 1e-12);
    assert!((report.robust_return - (report.nominal_return - report.regularizer_value)).abs() < 1e-9);
}

#[test]
fn state_rectangular_matches_statewise_oracle() {
    let mdp = sample_random_mdp(61, 4, 3, 0.9).unwrap();
    let policy = random_policy(61, 4, 3);
    for order in [1.5, 2.0, 4.0] {
        let spec = UncertaintySpec::s_rect(vec![0.2, 0.4, 0.1, 0.3], p(order));
        let closed = worst_case_reward_rectangular(&mdp, &policy, &spec).unwrap();
        let oracle = brute_force_worst_reward(&mdp, &policy, &spec, &OracleConfig::default()).unwrap();
        assert!(oracle.certified);
        assert!((closed.robust_return - oracle.report.robust_return).abs() <= 1e-6);
        assert!((closed.robust_return - (closed.nominal_return - closed.regularizer_value)).abs() <= 1e-9);
    }
}

#[test]
fn robust_value_iteration_matches_closed_form() {
    let mdp = sample_random_mdp(23, 5, 2, 0.9).unwrap();
    let policy = random_policy(23, 5, 2);
    let spec = UncertaintySpec::coupled(0.4, p(2.0));
    let set = build(&spec, 5, 2).unwrap();
    let run = robust_value_iteration(&mdp, &policy, set.as_ref(), 1e-10).unwrap();
    let report = worst_case_reward(&mdp, &policy, set.as_ref()).unwrap();
    assert!((mu_dot(&mdp, &run.values) - report.robust_return).abs() <= 1e-8);
    let substituted = solve_value_exact(&mdp, &policy, &report.worst_reward).unwrap();
    assert!(run.values.max_abs_diff(&substituted) <= 1e-10);
    for w in run.residuals.windows(2) {
        assert!(w[1] <= mdp.gamma() * w[0] * (1.0 + 1e-12));
    }

    let nominal_set = build(&UncertaintySpec::coupled(0.0, p(2.0)), 5, 2).unwrap();
    let nominal = robust_value_iteration(&mdp, &policy, nominal_set.as_ref(), 1e-10).unwrap();
    let v = solve_value_exact(&mdp, &policy, mdp.reward()).unwrap();
    assert!(nominal.values.max_abs_diff(&v) <= 1e-10);
}

#[test]
fn robust_q_averages_to_robust_value() {
    let mdp = sample_random_mdp(24, 4, 3, 0.9).unwrap();
    let policy = random_policy(24, 4, 3);
    let set = build(&UncertaintySpec::coupled(0.3, p(1.5)), 4, 3).unwrap();
    let q = robust_q(&mdp, &policy, set.as_ref()).unwrap();
    let v = robust_value_exact(&mdp, &policy, set.as_ref()).unwrap();
    for s in 0..4 {
        let avg: f64 = (0..3).map(|a| policy.prob(s, a) * q[(s, a)]).sum();
        assert!((avg - v[s]).abs() <= 1e-9);
    }
    // same as the nominal Q of the substituted reward
    let report = worst_case_reward(&mdp, &policy, set.as_ref()).unwrap();
    let substituted = q_values(&mdp, &policy, &report.worst_reward).unwrap();
    assert!(q.max_abs_diff(&substituted) <= 1e-8);
}

#[test]
fn robust_q_of_one_by_one_and_zero_radius() {
    let mdp = single_state(0.9, 1.0);
    let set = build(&UncertaintySpec::coupled(0.1, p(2.0)), 1, 1).unwrap();
    let q = robust_q(&mdp, &Policy::uniform(1, 1), set.as_ref()).unwrap();
    assert!((q[(0, 0)] - 9.0).abs() < 1e-12);

    let mdp = sample_random_mdp(3, 3, 2, 0.9).unwrap();
    let policy = random_policy(3, 3, 2);
    let zero = build(&UncertaintySpec::coupled(0.0, p(2.0)), 3, 2).unwrap();
    let q = robust_q(&mdp, &policy, zero.as_ref()).unwrap();
    assert!(q.max_abs_diff(&q_values(&mdp, &policy, mdp.reward()).unwrap()) <= 1e-12);
}

#[test]
fn rectangularization_is_conservative() {
    let mdp = sample_random_mdp(3, 3, 2, 0.9).unwrap();
    let policy = random_policy(3, 3, 2);
    let spec = UncertaintySpec::coupled(0.3, p(2.0));
    let rect = rectangularized_value(&mdp, &policy, &spec, 1e-11).unwrap().values;
    let coupled = robust_value_exact(&mdp, &policy, build(&spec, 3, 2).unwrap().as_ref()).unwrap();
    let s_rect = robust_value_exact(
        &mdp,
        &policy,
        build(&UncertaintySpec::uniform(S_RECT, 0.3, p(2.0), 3, 2), 3, 2).unwrap().as_ref(),
    )
    .unwrap();
    assert!(rect.max_abs_diff(&s_rect) <= 1e-8);
    assert!(rect.iter().zip(coupled.iter()).all(|(r, c)| *r <= c + 1e-8));
    let margin = rect.iter().zip(coupled.iter()).map(|(r, c)| c - r).fold(0.0, f64::max);
    assert!(margin >= 1e-6, "margin {margin}");
}

#[test]
fn rectangularization_changes_nothing_for_one_state_or_zero_radius() {
    let mdp = sample_random_mdp(4, 1, 3, 0.9).unwrap();
    let policy = random_policy(4, 1, 3);
    let spec = UncertaintySpec::coupled(0.5, p(2.0));
    let rect = rectangularized_value(&mdp, &policy, &spec, 1e-11).unwrap().values;
    let coupled = robust_value_exact(&mdp, &policy, build(&spec, 1, 3).unwrap().as_ref()).unwrap();
    assert!(rect.max_abs_diff(&coupled) <= 1e-9);

    let mdp = sample_random_mdp(4, 4, 2, 0.9).unwrap();
    let policy = random_policy(4, 4, 2);
    let rect = rectangularized_value(&mdp, &policy, &UncertaintySpec::coupled(0.0, p(2.0)), 1e-11).unwrap().values;
    assert!(rect.max_abs_diff(&solve_value_exact(&mdp, &policy, mdp.reward()).unwrap()) <= 1e-9);
}

#[test]
fn nesting_of_flavors() {
    for seed in 0..30 {
        let mdp = sample_random_mdp(seed, 4, 3, 0.9).unwrap();
        let policy = random_policy(seed, 4, 3);
        let ret = |flavor: &str| {
            worst_case_reward_for(&mdp, &policy, &UncertaintySpec::uniform(flavor, 0.2, p(2.0), 4, 3))
                .unwrap()
                .robust_return
        };
        let (sa, s, c) = (ret(SA_RECT), ret(S_RECT), ret(COUPLED));
        assert!(sa <= s + 1e-9 && s <= c + 1e-9, "seed {seed}: {sa} {s} {c}");
    }
}

#[test]
fn report_json_shape() {
    let mdp = single_state(0.9, 1.0);
    let report = worst_case_reward_for(&mdp, &Policy::uniform(1, 1), &UncertaintySpec::coupled(0.1, p(2.0))).unwrap();
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    for key in ["penalty", "worst_reward", "robust_return", "regularizer_value", "spec"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let back: rrmdp_core::WorstCaseReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, report);
}
