//! System-optimum flows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlowVector, Scenario};

/// Design objective over class-action flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    /// Total reward rate `sum_r sigma_r w_r(sigma_r)`.
    #[default]
    AvgReward,
    /// Worst class average plus `gamma` times the total reward rate.
    MinClassPlusAvg { gamma: f64 },
}

impl Objective {
    pub fn evaluate(&self, total_reward: f64, class_rewards: &[f64]) -> f64 {
        match *self {
            Objective::AvgReward => total_reward,
            Objective::MinClassPlusAvg { gamma } => {
                class_rewards.iter().copied().fold(f64::INFINITY, f64::min) + gamma * total_reward
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOptimum {
    /// Flow per class and action; each class sums to `mass * action rate`.
    pub flows: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    /// Reward of every class action at `sigma`.
    pub action_rewards: Vec<Vec<f64>>,
    /// Flow-weighted average reward per class.
    pub class_rewards: Vec<f64>,
    pub objective: f64,
    /// Relative duality gap (average reward) or projected-gradient residual (min-class).
    pub residual: f64,
}

impl SystemOptimum {
    pub fn from_flows(
        scenario: &Scenario,
        objective: Objective,
        flows: Vec<Vec<f64>>,
        residual: f64,
    ) -> Self {
        let sigma = flows_to_sigma(scenario, &flows);
        let fv = FlowVector(sigma.clone());
        let action_rewards: Vec<Vec<f64>> = scenario
            .classes
            .iter()
            .map(|c| {
                c.actions
                    .iter()
                    .map(|a| scenario.action_reward(a, &fv))
                    .collect()
            })
            .collect();
        let class_rewards: Vec<f64> = flows
            .iter()
            .zip(&action_rewards)
            .map(|(f, w)| f.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() / f.iter().sum::<f64>())
            .collect();
        let total = total_reward(scenario, &sigma);
        SystemOptimum {
            objective: objective.evaluate(total, &class_rewards),
            flows,
            sigma,
            action_rewards,
            class_rewards,
            residual,
        }
    }

    /// Whether an action carries flow, relative to its class demand.
    pub fn is_used(&self, class: usize, action: usize) -> bool {
        let demand: f64 = self.flows[class].iter().sum();
        self.flows[class][action] > USED_FRACTION * demand
    }
}

/// Flows below this fraction of the class demand count as unused.
pub const USED_FRACTION: f64 = 1e-9;

pub fn flows_to_sigma(scenario: &Scenario, flows: &[Vec<f64>]) -> Vec<f64> {
    let mut sigma = vec![0.0; scenario.num_resources()];
    for (class, f) in scenario.classes.iter().zip(flows) {
        for (a, &x) in class.actions.iter().zip(f) {
            for &r in a.resources() {
                sigma[r] += x;
            }
        }
    }
    sigma
}

/// `sum_r sigma_r w_r(sigma_r)`.
pub fn total_reward(scenario: &Scenario, sigma: &[f64]) -> f64 {
    scenario
        .resources
        .iter()
        .zip(sigma)
        .map(|(r, &s)| s * r.reward.value(s))
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_passes: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-6,
            max_passes: 200_000,
            starts: 8,
            seed: 0,
        }
    }
}

pub fn solve_system_optimum(scenario: &Scenario, objective: Objective) -> Result<SystemOptimum> {
    solve_with(
        scenario,
        objective,
        &SolverOptions {
            seed: scenario.seed,
            ..Default::default()
        },
    )
}

pub fn solve_with(
    scenario: &Scenario,
    objective: Objective,
    opts: &SolverOptions,
) -> Result<SystemOptimum> {
    for class in &scenario.classes {
        if class.actions.is_empty() {
            return Err(Error::Invalid(format!("class {} has no actions", class.id)));
        }
    }
    match objective {
        Objective::AvgReward => pairwise_frank_wolfe(scenario, opts),
        Objective::MinClassPlusAvg { gamma } => {
            if !(gamma >= 0.0) {
                return Err(Error::Invalid(format!(
                    "gamma must be nonnegative, got {gamma}"
                )));
            }
            smoothed_projected_gradient(scenario, gamma, opts)
        }
    }
}

fn demands(scenario: &Scenario) -> Vec<f64> {
    scenario
        .classes
        .iter()
        .map(|c| c.mass * scenario.rates.action)
        .collect()
}

fn uniform_flows(scenario: &Scenario) -> Vec<Vec<f64>> {
    scenario
        .classes
        .iter()
        .zip(demands(scenario))
        .map(|(c, d)| vec![d / c.actions.len() as f64; c.actions.len()])
        .collect()
}

/// Marginal total reward of one more unit of flow on each resource.
fn marginal(scenario: &Scenario, sigma: &[f64], r: usize) -> f64 {
    let w = &scenario.resources[r].reward;
    w.value(sigma[r]) + sigma[r] * w.derivative(sigma[r])
}

fn action_marginal(scenario: &Scenario, sigma: &[f64], class: usize, a: usize) -> f64 {
    scenario.classes[class].actions[a]
        .resources()
        .iter()
        .map(|&r| marginal(scenario, sigma, r))
        .sum()
}

/// Block pairwise Frank-Wolfe: per class, shift flow from the worst used action to the best one with exact line search.
fn pairwise_frank_wolfe(scenario: &Scenario, opts: &SolverOptions) -> Result<SystemOptimum> {
    let mut flows = uniform_flows(scenario);
    let mut sigma = flows_to_sigma(scenario, &flows);
    let demand = demands(scenario);
    let mut gap = f64::INFINITY;
    for _ in 0..opts.max_passes {
        gap = 0.0;
        for c in 0..scenario.classes.len() {
            let n = flows[c].len();
            let mr: Vec<f64> = (0..n)
                .map(|a| action_marginal(scenario, &sigma, c, a))
                .collect();
            let best = (0..n)
                .max_by(|&x, &y| mr[x].total_cmp(&mr[y]).then(y.cmp(&x)))
                .unwrap();
            let worst = (0..n)
                .filter(|&a| flows[c][a] > 0.0)
                .min_by(|&x, &y| mr[x].total_cmp(&mr[y]).then(x.cmp(&y)))
                .unwrap();
            let avg: f64 = flows[c].iter().zip(&mr).map(|(f, m)| f * m).sum::<f64>();
            gap += demand[c] * mr[best] - avg;
            if best == worst || mr[best] <= mr[worst] {
                continue;
            }
            let (to, from) = (
                &scenario.classes[c].actions[best],
                &scenario.classes[c].actions[worst],
            );
            let only_to: Vec<usize> = to
                .resources()
                .iter()
                .copied()
                .filter(|&r| !from.contains(r))
                .collect();
            let only_from: Vec<usize> = from
                .resources()
                .iter()
                .copied()
                .filter(|&r| !to.contains(r))
                .collect();
            let slope = |d: f64, sigma: &mut Vec<f64>| {
                only_to.iter().for_each(|&r| sigma[r] += d);
                only_from.iter().for_each(|&r| sigma[r] -= d);
                let v = only_to
                    .iter()
                    .map(|&r| marginal(scenario, sigma, r))
                    .sum::<f64>()
                    - only_from
                        .iter()
                        .map(|&r| marginal(scenario, sigma, r))
                        .sum::<f64>();
                only_to.iter().for_each(|&r| sigma[r] -= d);
                only_from.iter().for_each(|&r| sigma[r] += d);
                v
            };
            let cap = flows[c][worst];
            let step = if slope(cap, &mut sigma) >= 0.0 {
                cap
            } else {
                let (mut lo, mut hi) = (0.0, cap);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if slope(mid, &mut sigma) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-17 * cap.max(1e-300) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            };
            flows[c][best] += step;
            flows[c][worst] = if step == cap {
                0.0
            } else {
                flows[c][worst] - step
            };
            only_to.iter().for_each(|&r| sigma[r] += step);
            only_from.iter().for_each(|&r| sigma[r] -= step);
        }
        sigma = flows_to_sigma(scenario, &flows);
        let scale = total_reward(scenario, &sigma).abs().max(1e-12);
        if gap / scale <= opts.tolerance * 1e-3 {
            break;
        }
    }
    let scale = total_reward(scenario, &sigma).abs().max(1e-12);
    let rel = gap / scale;
    if !(rel <= opts.tolerance) {
        return Err(Error::NotConverged { residual: rel });
    }
    Ok(SystemOptimum::from_flows(
        scenario,
        Objective::AvgReward,
        flows,
        rel,
    ))
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - total) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct Smoothed<'a> {
    scenario: &'a Scenario,
    gamma: f64,
    demand: Vec<f64>,
}

impl Smoothed<'_> {
    fn class_rewards(&self, flows: &[Vec<f64>], sigma: &[f64]) -> Vec<f64> {
        let fv = FlowVector(sigma.to_vec());
        flows
            .iter()
            .enumerate()
            .map(|(c, f)| {
                let actions = &self.scenario.classes[c].actions;
                f.iter()
                    .zip(actions)
                    .map(|(x, a)| x * self.scenario.action_reward(a, &fv))
                    .sum::<f64>()
                    / self.demand[c]
            })
            .collect()
    }

    fn value(&self, flows: &[Vec<f64>], temp: f64) -> (f64, f64) {
        let sigma = flows_to_sigma(self.scenario, flows);
        let wbar = self.class_rewards(flows, &sigma);
        let lo = wbar.iter().copied().fold(f64::INFINITY, f64::min);
        let soft = lo
            - temp
                * wbar
                    .iter()
                    .map(|w| (-(w - lo) / temp).exp())
                    .sum::<f64>()
                    .ln();
        let total = total_reward(self.scenario, &sigma);
        (soft + self.gamma * total, lo + self.gamma * total)
    }

    fn gradient(&self, flows: &[Vec<f64>], temp: f64) -> Vec<Vec<f64>> {
        let s = self.scenario;
        let sigma = flows_to_sigma(s, flows);
        let fv = FlowVector(sigma.clone());
        let wbar = self.class_rewards(flows, &sigma);
        let lo = wbar.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = wbar.iter().map(|w| (-(w - lo) / temp).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let pi: Vec<f64> = weights.iter().map(|w| w / wsum).collect();
        // Per-resource weight: sum_c pi_c * (class c flow on r) / demand_c.
        let mut share = vec![0.0; s.num_resources()];
        for (c, f) in flows.iter().enumerate() {
            for (a, &x) in s.classes[c].actions.iter().zip(f) {
                for &r in a.resources() {
                    share[r] += pi[c] * x / self.demand[c];
                }
            }
        }
        s.classes
            .iter()
            .enumerate()
            .map(|(c, class)| {
                class
                    .actions
                    .iter()
                    .map(|a| {
                        let direct = pi[c] * s.action_reward(a, &fv) / self.demand[c];
                        let through: f64 = a
                            .resources()
                            .iter()
                            .map(|&r| {
                                s.resources[r].reward.derivative(sigma[r]) * share[r]
                                    + self.gamma * marginal(s, &sigma, r)
                            })
                            .sum();
                        direct + through
                    })
                    .collect()
            })
            .collect()
    }

    fn project(&self, flows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        flows
            .iter()
            .zip(&self.demand)
            .map(|(f, &d)| project_simplex(f, d))
            .collect()
    }

    fn step(&self, flows: &[Vec<f64>], grad: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
        let moved: Vec<Vec<f64>> = flows
            .iter()
            .zip(grad)
            .map(|(f, g)| f.iter().zip(g).map(|(x, y)| x + t * y).collect())
            .collect();
        self.project(&moved)
    }

    fn residual(&self, flows: &[Vec<f64>], temp: f64) -> f64 {
        let grad = self.gradient(flows, temp);
        let next = self.step(flows, &grad, 1.0);
        max_diff(&next, flows)
    }

    /// Projected gradient ascent with backtracking at a fixed temperature.
    fn ascend(
        &self,
        mut flows: Vec<Vec<f64>>,
        temp: f64,
        tol: f64,
        max_iter: usize,
    ) -> Vec<Vec<f64>> {
        let mut t = 1.0;
        for _ in 0..max_iter {
            let grad = self.gradient(&flows, temp);
            let (v0, _) = self.value(&flows, temp);
            let mut accepted = None;
            for _ in 0..60 {
                let cand = self.step(&flows, &grad, t);
                let d: f64 = cand
                    .iter()
                    .zip(&flows)
                    .zip(&grad)
                    .map(|((c, f), g)| {
                        c.iter()
                            .zip(f)
                            .zip(g)
                            .map(|((x, y), z)| (x - y) * z)
                            .sum::<f64>()
                    })
                    .sum();
                let dd: f64 = cand
                    .iter()
                    .zip(&flows)
                    .map(|(c, f)| c.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                    .sum();
                let (v1, _) = self.value(&cand, temp);
                if v1 >= v0 + d - dd / (2.0 * t) - 1e-15 * v0.abs() {
                    accepted = Some(cand);
                    break;
                }
                t *= 0.5;
            }
            let Some(next) = accepted else { break };
            let moved = max_diff(&next, &flows);
            flows = next;
            t = (t * 1.5).min(1e6);
            if moved <= tol * t.max(1.0) && self.residual(&flows, temp) <= tol {
                break;
            }
        }
        flows
    }
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

const STATIONARITY_TOLERANCE: f64 = 1e-4;

fn smoothed_projected_gradient(
    scenario: &Scenario,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<SystemOptimum> {
    let problem = Smoothed {
        scenario,
        gamma,
        demand: demands(scenario),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let base = uniform_flows(scenario);
    let scale = {
        let sigma = flows_to_sigma(scenario, &base);
        problem
            .class_rewards(&base, &sigma)
            .iter()
            .map(|w| w.abs())
            .fold(1e-3, f64::max)
    };
    let temps: Vec<f64> = (0..8).map(|i| 0.1 * scale * 0.25f64.powi(i)).collect();
    let final_temp = *temps.last().unwrap();
    let tol = opts.tolerance * 1e-2 * problem.demand.iter().copied().fold(0.0, f64::max);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for start in 0..opts.starts.max(1) {
        let mut flows = if start == 0 {
            base.clone()
        } else {
            let raw: Vec<Vec<f64>> = base
                .iter()
                .map(|f| {
                    let w: Vec<f64> = f
                        .iter()
                        .map(|_| -rng.gen::<f64>().max(1e-300).ln())
                        .collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|x| x / s * f.iter().sum::<f64>()).collect()
                })
                .collect();
            raw
        };
        for &temp in &temps {
            flows = problem.ascend(flows, temp, tol, 20_000);
        }
        let (_, value) = problem.value(&flows, final_temp);
        if best.as_ref().map_or(true, |(v, _)| value > *v) {
            best = Some((value, flows));
        }
    }
    let (_, flows) = best.expect("at least one start");
    let residual = problem.residual(&flows, final_temp);
    // The smoothed objective is badly conditioned at the last temperature, so the
    // gradient-map residual is only held to a looser bound than the flow tolerance.
    if !(residual <= STATIONARITY_TOLERANCE * scale.max(1.0)) {
        return Err(Error::NotConverged { residual });
    }
    Ok(SystemOptimum::from_flows(
        scenario,
        Objective::MinClassPlusAvg { gamma },
        flows,
        residual,
    ))
}
