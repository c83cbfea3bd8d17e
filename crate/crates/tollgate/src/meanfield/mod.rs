//! Mean-field dynamics over state-policy distributions.

mod certificate;
mod distribution;
mod kernels;
mod ode;
mod protocol;

pub use certificate::{certificate_by_bisection, msne_certificate, MsneCertificate};
pub use distribution::{ClassView, StatePolicyDistribution};
pub use ode::{integrate, Dynamics, IntegrationOptions, Sample, Trajectory};
pub use protocol::{payoff_ranges, revision_rates, ProtocolKind, RevisionProtocolSpec};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::model::{sigma_from_distribution, FlowVector, Scenario};
use crate::policy::{enumerate_policies, PolicyFamily};
use crate::wallet::WalletChain;

/// Stationary token distributions per (class, policy).
#[derive(Debug, Clone, Default)]
pub struct StationaryCache {
    eta: Vec<Vec<Vec<f64>>>,
}

impl StationaryCache {
    pub fn get(&self, class: usize, policy: usize) -> Result<&[f64]> {
        self.eta
            .get(class)
            .and_then(|c| c.get(policy))
            .map(Vec::as_slice)
            .ok_or(Error::MissingStationary { class, policy })
    }

    pub fn insert(&mut self, class: usize, policy: usize, eta: Vec<f64>) {
        if self.eta.len() <= class {
            self.eta.resize(class + 1, Vec::new());
        }
        let row = &mut self.eta[class];
        if row.len() <= policy {
            row.resize(policy + 1, Vec::new());
        }
        row[policy] = eta;
    }
}

/// Payoff per (class, policy).
pub type PayoffVector = Vec<Vec<f64>>;

/// A scenario with tolls fixed, its policy families, wallet chains and stationary data.
#[derive(Debug, Clone)]
pub struct Game {
    scenario: Scenario,
    families: Vec<PolicyFamily>,
    chains: Vec<Vec<WalletChain>>,
    stationary: StationaryCache,
    /// Stationary action frequencies: `freq[c][u]` lists `(action, frequency)`.
    freq: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Game {
    pub fn new(scenario: Scenario, max_distinct_actions: usize) -> Result<Self> {
        let families = scenario
            .classes
            .iter()
            .enumerate()
            .map(|(c, class)| {
                enumerate_policies(c, &class.tolls, scenario.max_tokens, max_distinct_actions)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_families(scenario, families)
    }

    pub fn with_families(scenario: Scenario, families: Vec<PolicyFamily>) -> Result<Self> {
        let mut chains = Vec::with_capacity(families.len());
        let mut stationary = StationaryCache::default();
        let mut freq = Vec::with_capacity(families.len());
        for (c, family) in families.iter().enumerate() {
            let tolls = &scenario.classes[c].tolls;
            let mut class_chains = Vec::with_capacity(family.len());
            let mut class_freq = Vec::with_capacity(family.len());
            for (u, policy) in family.policies().iter().enumerate() {
                let chain = WalletChain::build(policy, tolls, &scenario.rates)?;
                let eta = chain.stationary()?;
                let mut f: Vec<(usize, f64)> = Vec::new();
                for (a, start) in policy.segments() {
                    let end = policy
                        .segments()
                        .iter()
                        .find(|s| s.1 > start)
                        .map_or(eta.len(), |s| s.1);
                    let mass: f64 = eta[start..end].iter().sum();
                    match f.iter_mut().find(|(b, _)| *b == a) {
                        Some(entry) => entry.1 += mass,
                        None => f.push((a, mass)),
                    }
                }
                class_freq.push(f);
                stationary.insert(c, u, eta);
                class_chains.push(chain);
            }
            chains.push(class_chains);
            freq.push(class_freq);
        }
        Ok(Game {
            scenario,
            families,
            chains,
            stationary,
            freq,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn families(&self) -> &[PolicyFamily] {
        &self.families
    }

    pub fn stationary(&self) -> &StationaryCache {
        &self.stationary
    }

    pub fn chain(&self, class: usize, policy: usize) -> &WalletChain {
        &self.chains[class][policy]
    }

    pub fn eta(&self, class: usize, policy: usize) -> &[f64] {
        self.stationary.eta[class][policy].as_slice()
    }

    /// Stationary action frequencies of one policy as `(action, frequency)` pairs.
    pub fn action_frequencies(&self, class: usize, policy: usize) -> &[(usize, f64)] {
        &self.freq[class][policy]
    }

    pub fn tokens(&self) -> usize {
        self.scenario.max_tokens + 1
    }

    pub fn policy_counts(&self) -> Vec<usize> {
        self.families.iter().map(PolicyFamily::len).collect()
    }

    pub fn empty_distribution(&self) -> StatePolicyDistribution {
        StatePolicyDistribution::zeros(self.tokens(), &self.policy_counts())
    }

    pub fn sigma(&self, mu: &StatePolicyDistribution) -> Result<FlowVector> {
        sigma_from_distribution(&self.scenario, &self.families, mu)
    }

    /// Rewards of every class action at the given flows.
    pub fn action_rewards(&self, sigma: &FlowVector) -> Vec<Vec<f64>> {
        self.scenario
            .classes
            .iter()
            .map(|class| {
                class
                    .actions
                    .iter()
                    .map(|a| self.scenario.action_reward(a, sigma))
                    .collect()
            })
            .collect()
    }

    /// Payoffs of every policy when action rewards are `rewards`.
    pub fn payoffs_from_rewards(&self, rewards: &[Vec<f64>]) -> PayoffVector {
        self.freq
            .iter()
            .zip(rewards)
            .map(|(class_freq, w)| {
                class_freq
                    .iter()
                    .map(|f| f.iter().map(|&(a, g)| g * w[a]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn payoffs(&self, mu: &StatePolicyDistribution) -> Result<PayoffVector> {
        payoff_map(mu, &self.scenario, &self.families, &self.stationary)
    }

    /// Class-average single-stage reward under `mu`.
    pub fn class_average_rewards(&self, mu: &StatePolicyDistribution) -> Result<Vec<f64>> {
        let sigma = self.sigma(mu)?;
        let rewards = self.action_rewards(&sigma);
        Ok((0..self.scenario.classes.len())
            .map(|c| {
                let masses = self.action_masses(mu, c);
                let m: f64 = masses.iter().sum();
                masses
                    .iter()
                    .zip(&rewards[c])
                    .map(|(x, w)| x * w)
                    .sum::<f64>()
                    / m
            })
            .collect())
    }

    /// Mass of class `c` currently choosing each action.
    pub fn action_masses(&self, mu: &StatePolicyDistribution, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.scenario.classes[c].actions.len()];
        let view = mu.class(c);
        for (u, policy) in self.families[c].policies().iter().enumerate() {
            let row = view.row(u);
            let segs = policy.segments();
            for (i, &(a, start)) in segs.iter().enumerate() {
                let end = segs.get(i + 1).map_or(row.len(), |s| s.1);
                out[a] += row[start..end].iter().sum::<f64>();
            }
        }
        out
    }

    /// Steady-state lift of policy masses `x`.
    pub fn lift(&self, x: &[Vec<f64>]) -> StatePolicyDistribution {
        steady_state_lift(x, &self.stationary, self.tokens(), &self.policy_counts())
    }

    /// Resource flows of the lift of `x`, without building the lift.
    pub fn lifted_sigma(&self, x: &[Vec<f64>]) -> FlowVector {
        let mut sigma = vec![0.0; self.scenario.num_resources()];
        for (c, xc) in x.iter().enumerate() {
            let class = &self.scenario.classes[c];
            for (u, &xu) in xc.iter().enumerate() {
                for &(a, g) in &self.freq[c][u] {
                    for &r in class.actions[a].resources() {
                        sigma[r] += self.scenario.rates.action * xu * g;
                    }
                }
            }
        }
        FlowVector(sigma)
    }

    /// Payoffs at the lift of `x`.
    pub fn lifted_payoffs(&self, x: &[Vec<f64>]) -> PayoffVector {
        let sigma = self.lifted_sigma(x);
        self.payoffs_from_rewards(&self.action_rewards(&sigma))
    }

    /// Potential of the steady-state game at policy masses `x`.
    pub fn potential(&self, x: &[Vec<f64>]) -> f64 {
        potential_of_flows(&self.scenario, &self.lifted_sigma(x))
    }

    /// Uniform policy mix lifted through each stationary distribution, with a small floor on every cell.
    pub fn default_initial(&self) -> StatePolicyDistribution {
        let x: Vec<Vec<f64>> = self
            .scenario
            .classes
            .iter()
            .zip(&self.families)
            .map(|(class, f)| vec![class.mass / f.len() as f64; f.len()])
            .collect();
        let mut mu = self.lift(&x);
        self.floor_and_renormalize(&mut mu, 1e-6);
        mu
    }

    /// Random interior point: Dirichlet policy mix, token rows blending the stationary law with random weights.
    pub fn random_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> StatePolicyDistribution {
        let mut mu = self.empty_distribution();
        let tokens = self.tokens();
        for (c, class) in self.scenario.classes.iter().enumerate() {
            let n = self.families[c].len();
            let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = w.iter().sum();
            for (u, wu) in w.into_iter().enumerate() {
                let xu = class.mass * wu / total;
                let noise: Vec<f64> = (0..tokens).map(|_| rng.gen::<f64>()).collect();
                let nsum: f64 = noise.iter().sum();
                let eta = self.eta(c, u);
                for (k, cell) in mu.policy_row_mut(c, u).iter_mut().enumerate() {
                    *cell = xu * (0.5 * eta[k] + 0.5 * noise[k] / nsum);
                }
            }
        }
        self.floor_and_renormalize(&mut mu, 1e-6);
        mu
    }

    fn floor_and_renormalize(&self, mu: &mut StatePolicyDistribution, floor: f64) {
        for (c, class) in self.scenario.classes.iter().enumerate() {
            let cells = mu.class_mut(c);
            cells.iter_mut().for_each(|v| *v += floor);
            let total: f64 = cells.iter().sum();
            cells.iter_mut().for_each(|v| *v *= class.mass / total);
        }
    }
}

/// Policy payoffs at `mu`: each policy's stationary action frequencies weighted by action rewards.
pub fn payoff_map(
    mu: &StatePolicyDistribution,
    scenario: &Scenario,
    families: &[PolicyFamily],
    cache: &StationaryCache,
) -> Result<PayoffVector> {
    let sigma = sigma_from_distribution(scenario, families, mu)?;
    families
        .iter()
        .enumerate()
        .map(|(c, family)| {
            let class = &scenario.classes[c];
            let rewards: Vec<f64> = class
                .actions
                .iter()
                .map(|a| scenario.action_reward(a, &sigma))
                .collect();
            family
                .policies()
                .iter()
                .enumerate()
                .map(|(u, policy)| {
                    let eta = cache.get(c, u)?;
                    Ok(policy
                        .actions()
                        .iter()
                        .zip(eta)
                        .map(|(&a, &e)| e * rewards[a])
                        .sum())
                })
                .collect()
        })
        .collect()
}

/// `mu[k, u] = x[u] * eta_u(k)`.
pub fn steady_state_lift(
    x: &[Vec<f64>],
    cache: &StationaryCache,
    tokens: usize,
    policies: &[usize],
) -> StatePolicyDistribution {
    let mut mu = StatePolicyDistribution::zeros(tokens, policies);
    for (c, xc) in x.iter().enumerate() {
        for (u, &xu) in xc.iter().enumerate() {
            let eta = cache.get(c, u).expect("lift requires a complete cache");
            for (cell, &e) in mu.policy_row_mut(c, u).iter_mut().zip(eta) {
                *cell = xu * e;
            }
        }
    }
    mu
}

/// `(1 / Rd) * sum_r integral_0^{sigma_r} w_r`.
pub fn potential_of_flows(scenario: &Scenario, sigma: &FlowVector) -> f64 {
    scenario
        .resources
        .iter()
        .zip(sigma.as_slice())
        .map(|(r, &s)| r.reward.integral(s))
        .sum::<f64>()
        / scenario.rates.action
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::fixtures::pigou;
    use crate::model::{Action, ClassSpec, Rates, Resource};
    use crate::reward::RewardFn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn tolled_pigou(max_tokens: usize) -> Game {
        let s = pigou().with_tolls(&[vec![-2, 3]], max_tokens).unwrap();
        Game::new(s, 2).unwrap()
    }

    fn random_x(game: &Game, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        game.families()
            .iter()
            .enumerate()
            .map(|(c, f)| {
                let w: Vec<f64> = (0..f.len()).map(|_| rng.gen::<f64>() + 0.01).collect();
                let t: f64 = w.iter().sum();
                w.iter()
                    .map(|v| v / t * game.scenario().classes[c].mass)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_always_policy_payoff() {
        let s = Scenario {
            name: "one".into(),
            resources: vec![Resource {
                id: 0,
                reward: RewardFn::affine(0.0, 1.0),
            }],
            classes: vec![ClassSpec::new(0, 1.0, vec![Action::new(vec![0]).unwrap()])],
            rates: Rates {
                action: 1.0,
                noise: 0.1,
                revision: 0.01,
            },
            max_tokens: 3,
            seed: 0,
            population: None,
            max_revision_ratio: 0.05,
        };
        let g = Game::new(s, 2).unwrap();
        let mu = g.lift(&[vec![1.0]]);
        assert_eq!(g.sigma(&mu).unwrap().as_slice(), &[1.0]);
        assert!((g.payoffs(&mu).unwrap()[0][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_policies_pay_their_action_reward() {
        let g = Game::new(pigou(), 1).unwrap();
        assert_eq!(g.families()[0].len(), 2);
        let mu = g.lift(&[vec![0.3, 0.7]]);
        let f = g.payoffs(&mu).unwrap();
        let sigma = g.sigma(&mu).unwrap();
        assert!((sigma.as_slice()[0] - 0.3).abs() < 1e-12);
        assert!((f[0][0] - (-1.0 - 1e-3 * 0.3)).abs() < 1e-12);
        assert!((f[0][1] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn sigma_split_between_constant_policies() {
        let g = Game::new(pigou(), 1).unwrap();
        let sigma = g.sigma(&g.lift(&[vec![0.5, 0.5]])).unwrap();
        assert_eq!(sigma.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn sigma_matches_direct_sum() {
        let g = tolled_pigou(12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = g.random_initial(&mut rng);
        let mut oracle = vec![0.0; 2];
        let view = mu.class(0);
        for (u, p) in g.families()[0].policies().iter().enumerate() {
            for k in 0..g.tokens() {
                for a in 0..2 {
                    let plays = (p.action_at(k) == a) as u8 as f64;
                    for &r in g.scenario().classes[0].actions[a].resources() {
                        oracle[r] += g.scenario().rates.action * view.get(k, u) * plays;
                    }
                }
            }
        }
        let sigma = g.sigma(&mu).unwrap();
        for (a, b) in sigma.as_slice().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn sigma_is_linear() {
        let g = tolled_pigou(10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = g.random_initial(&mut rng);
            let b = g.random_initial(&mut rng);
            let t: f64 = rng.gen();
            let mut mix = a.clone();
            for ((m, x), y) in mix
                .as_mut_slice()
                .iter_mut()
                .zip(a.as_slice())
                .zip(b.as_slice())
            {
                *m = t * x + (1.0 - t) * y;
            }
            let (sa, sb, sm) = (
                g.sigma(&a).unwrap(),
                g.sigma(&b).unwrap(),
                g.sigma(&mix).unwrap(),
            );
            for r in 0..2 {
                let want = t * sa.as_slice()[r] + (1.0 - t) * sb.as_slice()[r];
                assert!((sm.as_slice()[r] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let g = tolled_pigou(6);
        let mut mu = g.default_initial();
        mu.as_mut_slice()[0] += 0.1;
        assert!(g.sigma(&mu).is_err());
    }

    #[test]
    fn threshold_payoff_matches_double_sum() {
        let g = tolled_pigou(15);
        let mu = g.default_initial();
        let f = g.payoffs(&mu).unwrap();
        let sigma = g.sigma(&mu).unwrap();
        let w = g.action_rewards(&sigma);
        for (u, p) in g.families()[0].policies().iter().enumerate() {
            let chain =
                WalletChain::build(p, &g.scenario().classes[0].tolls, &g.scenario().rates).unwrap();
            let eta = chain.power_iteration(1e-15, 500_000);
            let oracle: f64 = (0..g.tokens()).map(|k| eta[k] * w[0][p.action_at(k)]).sum();
            assert!((f[0][u] - oracle).abs() < 1e-9, "policy {u}");
        }
        // The fast path through cached frequencies agrees with the direct map.
        let fast = g.payoffs_from_rewards(&w);
        for (a, b) in fast[0].iter().zip(&f[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_cache_entry_is_an_error() {
        let g = tolled_pigou(6);
        let mu = g.default_initial();
        let empty = StationaryCache::default();
        assert!(matches!(
            payoff_map(&mu, g.scenario(), g.families(), &empty),
            Err(Error::MissingStationary { .. })
        ));
    }

    #[test]
    fn lift_marginals_and_point_mass() {
        let g = tolled_pigou(9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_x(&g, &mut rng);
        let mu = g.lift(&x);
        for (a, b) in mu.policy_masses()[0].iter().zip(&x[0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut point = vec![vec![0.0; g.families()[0].len()]];
        point[0][2] = 1.0;
        let mu = g.lift(&point);
        assert_eq!(mu.policy_row(0, 2), g.eta(0, 2));
    }

    #[test]
    fn potential_is_zero_without_flow_and_affine_closed_form() {
        let s = pigou();
        assert_eq!(potential_of_flows(&s, &FlowVector::zeros(2)), 0.0);
        let sigma = FlowVector(vec![0.4, 0.6]);
        let want = (-0.4 - 0.5e-3 * 0.16) + (-0.5 * 0.36);
        assert!((potential_of_flows(&s, &sigma) - want).abs() < 1e-15);
    }

    #[test]
    fn potential_gradient_is_payoff() {
        let g = tolled_pigou(20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let x = random_x(&g, &mut rng);
            let f = g.lifted_payoffs(&x);
            for u in 0..x[0].len() {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[0][u] += h;
                xm[0][u] -= h;
                let fd = (g.potential(&xp) - g.potential(&xm)) / (2.0 * h);
                assert!(
                    (fd - f[0][u]).abs() <= 1e-6 * f[0][u].abs().max(1e-3),
                    "{fd} vs {}",
                    f[0][u]
                );
            }
        }
    }

    #[test]
    fn lifted_payoffs_match_payoff_map() {
        let g = tolled_pigou(11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_x(&g, &mut rng);
        let a = g.lifted_payoffs(&x);
        let b = g.payoffs(&g.lift(&x)).unwrap();
        for (p, q) in a[0].iter().zip(&b[0]) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn protocol_row_sums_respect_revision_rate() {
        let g = tolled_pigou(10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [ProtocolKind::Pairwise, ProtocolKind::Imitative] {
            let spec = RevisionProtocolSpec::new(kind, g.scenario(), g.families());
            for _ in 0..20 {
                let mu = g.random_initial(&mut rng);
                let f = g.payoffs(&mu).unwrap();
                let x = mu.policy_masses();
                let rho = spec.rates(0, &f[0], &x[0], 1.0);
                for row in rho {
                    assert!(row.iter().sum::<f64>() <= g.scenario().rates.revision * (1.0 + 1e-12));
                }
            }
        }
    }
}
