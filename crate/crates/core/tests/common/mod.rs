#![allow(dead_code)]

use rand::Rng;
use rrmdp_core::rng::stream;
use rrmdp_core::{NormOrder, Policy, Table, TabularMdp};

pub fn p(v: f64) -> NormOrder {
    NormOrder::new(v).unwrap()
}

pub fn random_policy(seed: u64, ns: usize, na: usize) -> Policy {
    let mut rng = stream(seed, 7);
    let logits = Table::from_fn(ns, na, |_, _| rng.random_range(-1.5..1.5));
    Policy::softmax(&logits, 1.0)
}

/// One state, one action, reward `r`.
pub fn single_state(gamma: f64, r: f64) -> TabularMdp {
    TabularMdp::new(vec![vec![vec![1.0]]], Table::filled(1, 1, r), gamma, vec![1.0]).unwrap()
}

/// Two states, two actions, rewards equal and the kernel unchanged when the
/// actions are swapped.
pub fn symmetric_mdp() -> TabularMdp {
    let row = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
    TabularMdp::new(
        vec![row.clone(), vec![vec![0.6, 0.4], vec![0.6, 0.4]]],
        Table::filled(2, 2, 0.5),
        0.9,
        vec![0.4, 0.6],
    )
    .unwrap()
}

pub fn mu_dot(mdp: &TabularMdp, v: &[f64]) -> f64 {
    mdp.mu().iter().zip(v).map(|(m, x)| m * x).sum()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Every deterministic policy of an `ns x na` problem.
pub fn deterministic_policies(ns: usize, na: usize) -> Vec<Policy> {
    let total = na.pow(ns as u32);
    (0..total)
        .map(|mut code| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = code % na;
                    code /= na;
                    a
                })
                .collect();
            Policy::deterministic(na, &actions).unwrap()
        })
        .collect()
}
