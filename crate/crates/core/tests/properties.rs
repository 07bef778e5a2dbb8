mod common;

use common::*;
use proptest::prelude::*;
use rrmdp_core::eval::bellman_policy;
use rrmdp_core::experiment::sample_random_mdp;
use rrmdp_core::norm::weighted_lp_norm;
use rrmdp_core::uncertainty::{COUPLED, SA_RECT, S_RECT};
use rrmdp_core::{
    occupancy_exact, occupancy_iterative, project_simplex, return_of, solve_value_exact, worst_case_reward_for, Table,
    UncertaintySpec,
};

fn order() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(4.0), Just(f64::INFINITY)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bellman_operator_contracts(seed in 0u64..10_000, ns in 1usize..7, na in 1usize..4, gamma in 0.0f64..0.99,
                                  v in prop::collection::vec(-10.0f64..10.0, 6),
                                  u in prop::collection::vec(-10.0f64..10.0, 6)) {
        let mdp = sample_random_mdp(seed, ns, na, gamma).unwrap();
        let policy = random_policy(seed, ns, na);
        let tv = bellman_policy(&mdp, &policy, mdp.reward(), &v[..ns]).unwrap();
        let tu = bellman_policy(&mdp, &policy, mdp.reward(), &u[..ns]).unwrap();
        prop_assert!(sup_diff(&tv, &tu) <= gamma * sup_diff(&v[..ns], &u[..ns]) + 1e-12);
    }

    #[test]
    fn occupancy_duality_mass_and_positivity(seed in 0u64..10_000, ns in 1usize..9, na in 1usize..5, gamma in 0.0f64..0.99) {
        let mdp = sample_random_mdp(seed, ns, na, gamma).unwrap();
        let policy = random_policy(seed, ns, na);
        let d = occupancy_exact(&mdp, &policy).unwrap();
        let rho = return_of(&mdp, &policy, mdp.reward()).unwrap();
        prop_assert!((d.state_action.dot(mdp.reward()) - rho).abs() <= 1e-9);
        prop_assert!((d.total_mass() - 1.0 / (1.0 - gamma)).abs() <= 1e-9);
        let min_mu = mdp.mu().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(d.state.iter().all(|&x| x >= min_mu * (1.0 - 1e-12)));
    }

    #[test]
    fn exact_and_iterative_evaluation_agree(seed in 0u64..10_000, ns in 1usize..8, na in 1usize..4, gamma in 0.0f64..0.95) {
        let mdp = sample_random_mdp(seed, ns, na, gamma).unwrap();
        let policy = random_policy(seed, ns, na);
        let exact = solve_value_exact(&mdp, &policy, mdp.reward()).unwrap();
        let iterated = rrmdp_core::value_iteration(&mdp, &policy, mdp.reward(), 1e-10).unwrap();
        prop_assert!(iterated.values.max_abs_diff(&exact) <= 1e-8);
        let d = occupancy_exact(&mdp, &policy).unwrap();
        let di = occupancy_iterative(&mdp, &policy, 100_000, 1e-10).unwrap();
        prop_assert!(sup_diff(&di.measure.state, &d.state) <= 1e-8);
    }

    #[test]
    fn worst_reward_budget_and_identity(seed in 0u64..10_000, ns in 1usize..7, na in 1usize..4,
                                        gamma in 0.0f64..0.99, alpha in 0.0f64..2.0, order in order(),
                                        weighted in any::<bool>()) {
        let mdp = sample_random_mdp(seed, ns, na, gamma).unwrap();
        let policy = random_policy(seed, ns, na);
        let weights = Table::from_fn(ns, na, |s, a| 0.5 + ((s * 7 + a * 3 + seed as usize) % 5) as f64 * 0.3);
        let mut spec = UncertaintySpec::coupled(alpha, p(order));
        if weighted {
            spec = spec.with_weights(weights.clone());
        }
        let report = worst_case_reward_for(&mdp, &policy, &spec).unwrap();
        let w = weighted.then(|| weights.as_slice());
        let norm = weighted_lp_norm(report.penalty.as_slice(), w, p(order));
        prop_assert!(norm <= alpha * (1.0 + 1e-9) + 1e-15);
        prop_assert!(report.penalty.as_slice().iter().all(|&x| x >= 0.0));
        let d = occupancy_exact(&mdp, &policy).unwrap().state_action;
        prop_assert!((report.robust_return - d.dot(&report.worst_reward)).abs() <= 1e-9);
        prop_assert!((report.nominal_return - report.regularizer_value - report.robust_return).abs() <= 1e-9);
    }

    #[test]
    fn flavors_are_nested(seed in 0u64..10_000, ns in 1usize..7, na in 1usize..4, gamma in 0.0f64..0.99,
                          alpha in 0.0f64..1.0, order in order()) {
        let mdp = sample_random_mdp(seed, ns, na, gamma).unwrap();
        let policy = random_policy(seed, ns, na);
        let ret = |flavor: &str| {
            worst_case_reward_for(&mdp, &policy, &UncertaintySpec::uniform(flavor, alpha, p(order), ns, na))
                .unwrap()
                .robust_return
        };
        let (sa, s, c) = (ret(SA_RECT), ret(S_RECT), ret(COUPLED));
        prop_assert!(sa <= s + 1e-9 && s <= c + 1e-9);
    }

    #[test]
    fn simplex_projection_is_nearest_point(x in prop::collection::vec(-5.0f64..5.0, 1..10),
                                           probe in prop::collection::vec(0.0f64..1.0, 10)) {
        let y = project_simplex(&x);
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        // any other simplex point is no closer
        let total: f64 = probe[..x.len()].iter().sum::<f64>().max(1e-12);
        let z: Vec<f64> = probe[..x.len()].iter().map(|v| v / total).collect();
        let dist = |a: &[f64]| a.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        prop_assert!(dist(&y) <= dist(&z) + 1e-10);
    }
}
