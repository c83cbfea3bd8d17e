use serde::{Deserialize, Serialize};

use super::{Game, StatePolicyDistribution};
use crate::error::Result;

/// Distance of a state-policy distribution from the equilibrium set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsneCertificate {
    pub epsilon: f64,
    /// Payoff slack of policies that carry more than `epsilon_policy` mass.
    pub epsilon_policy: f64,
    /// Largest deviation of a token row from its stationary law.
    pub epsilon_state: f64,
    /// `(epsilon_policy, epsilon_state)` per class.
    pub per_class: Vec<(f64, f64)>,
}

/// Smallest `e` such that every policy with mass above `e` is within `e` of the best payoff.
///
/// The predicate is monotone in `e`, and a policy with gap `g` and mass `m` stops binding
/// once `e >= min(g, m)`, so the threshold is the largest such minimum.
fn policy_slack(payoffs: &[f64], masses: &[f64]) -> f64 {
    let best = payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    payoffs
        .iter()
        .zip(masses)
        .map(|(&f, &m)| (best - f).min(m).max(0.0))
        .fold(0.0, f64::max)
}

pub fn msne_certificate(game: &Game, mu: &StatePolicyDistribution) -> Result<MsneCertificate> {
    let payoffs = game.payoffs(mu)?;
    let mut per_class = Vec::with_capacity(payoffs.len());
    for (c, f) in payoffs.iter().enumerate() {
        let view = mu.class(c);
        let masses = view.policy_masses();
        let ep = policy_slack(f, &masses);
        let mut es: f64 = 0.0;
        for (u, &m) in masses.iter().enumerate() {
            let eta = game.stationary().get(c, u)?;
            for (x, e) in view.row(u).iter().zip(eta) {
                es = es.max((x - e * m).abs());
            }
        }
        per_class.push((ep, es));
    }
    let epsilon_policy = per_class.iter().map(|p| p.0).fold(0.0, f64::max);
    let epsilon_state = per_class.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(MsneCertificate {
        epsilon: epsilon_policy.max(epsilon_state),
        epsilon_policy,
        epsilon_state,
        per_class,
    })
}

/// Policy slack found by bisection on the monotone predicate, for cross-checking.
pub fn certificate_by_bisection(
    payoffs: &[Vec<f64>],
    masses: &[Vec<f64>],
    iterations: usize,
) -> f64 {
    let holds = |e: f64| {
        payoffs.iter().zip(masses).all(|(f, x)| {
            let best = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            f.iter().zip(x).all(|(&fu, &xu)| xu <= e || best - fu <= e)
        })
    };
    let mut hi = payoffs
        .iter()
        .zip(masses)
        .flat_map(|(f, x)| f.iter().chain(x))
        .fold(0.0f64, |a, v| a.max(v.abs()))
        * 2.0
        + 1.0;
    let mut lo = 0.0;
    if holds(lo) {
        return 0.0;
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
