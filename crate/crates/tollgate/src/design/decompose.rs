//! Splitting optimal class flows into token-balanced one- and two-action components,
//! and turning those components into a state-policy distribution.

use serde::{Deserialize, Serialize};

use super::optimum::{project_simplex, SystemOptimum};
use crate::error::{Error, Result};
use crate::meanfield::{msne_certificate, Game, MsneCertificate, StatePolicyDistribution};
use crate::policy::{threshold_policy, Policy};

/// Most action pairs considered per class.
pub const MAX_PAIRS: usize = 64;

/// One component: flow on one action, or on a pair `(low, high)` with `toll[low] <= 0 < toll[high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub low: usize,
    pub high: Option<usize>,
    pub low_flow: f64,
    pub high_flow: f64,
}

impl Component {
    pub fn total(&self) -> f64 {
        self.low_flow + self.high_flow
    }
}

/// Residuals of the decomposition requirements for one class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResiduals {
    /// Largest token drift `(Rno/Rd) * total - sum toll * flow` over components.
    pub drift: f64,
    /// `|sum of component flows - m * Rd|`.
    pub conservation: f64,
    /// Largest `|sum_i g_a - f_a|` over actions.
    pub flow_match: f64,
    /// Largest `|sum_a w_a g_a - wbar * sum_a g_a|` over components.
    pub payoff_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDecomposition {
    pub class: usize,
    pub components: Vec<Component>,
    pub residuals: DecompositionResiduals,
    /// Whether the pair list was cut at [`MAX_PAIRS`].
    pub pairs_capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDecomposition {
    pub classes: Vec<ClassDecomposition>,
}

/// Decomposes every class's optimal flows under integer tolls.
pub fn decompose_flows(
    so: &SystemOptimum,
    tolls: &[Vec<i64>],
    noise: f64,
    action: f64,
) -> Result<FlowDecomposition> {
    let classes = (0..so.flows.len())
        .map(|c| decompose_class(so, c, &tolls[c], noise / action))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowDecomposition { classes })
}

fn decompose_class(
    so: &SystemOptimum,
    c: usize,
    tolls: &[i64],
    ratio: f64,
) -> Result<ClassDecomposition> {
    let f = &so.flows[c];
    let w = &so.action_rewards[c];
    let wbar = so.class_rewards[c];
    let demand: f64 = f.iter().sum();
    let used: Vec<usize> = (0..f.len()).filter(|&a| so.is_used(c, a)).collect();

    let (components, pairs_capped): (Vec<Component>, bool) = if used.iter().all(|&a| tolls[a] == 0)
    {
        let comps = used
            .iter()
            .map(|&a| Component {
                low: a,
                high: None,
                low_flow: f[a],
                high_flow: 0.0,
            })
            .collect();
        (comps, false)
    } else {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for p in 0..f.len() {
            for q in 0..f.len() {
                if tolls[p] <= 0
                    && tolls[q] > 0
                    && (tolls[q] as f64) >= ratio
                    && ratio >= tolls[p] as f64
                {
                    pairs.push((p, q));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Design {
                class: c,
                message: "no action pair can balance the token drift; increase the toll scale"
                    .into(),
            });
        }
        pairs.sort_by(|x, y| {
            (f[y.0] + f[y.1])
                .total_cmp(&(f[x.0] + f[x.1]))
                .then(x.cmp(y))
        });
        let capped = pairs.len() > MAX_PAIRS;
        pairs.truncate(MAX_PAIRS);
        let split: Vec<(f64, f64)> = pairs
            .iter()
            .map(|&(p, q)| {
                let (tp, tq) = (tolls[p] as f64, tolls[q] as f64);
                ((tq - ratio) / (tq - tp), (ratio - tp) / (tq - tp))
            })
            .collect();
        let mismatch: Vec<f64> = pairs
            .iter()
            .zip(&split)
            .map(|(&(p, q), &(vp, vq))| vp * w[p] + vq * w[q] - wbar)
            .collect();
        let weights = fit_pair_weights(f, &pairs, &split, &mismatch, demand);
        let comps = pairs
            .iter()
            .zip(&split)
            .zip(&weights)
            .filter(|(_, &s)| s > 1e-12 * demand)
            .map(|((&(p, q), &(vp, vq)), &s)| Component {
                low: p,
                high: Some(q),
                low_flow: vp * s,
                high_flow: vq * s,
            })
            .collect();
        (comps, capped)
    };
    let residuals = residuals(f, w, wbar, tolls, ratio, demand, &components);
    Ok(ClassDecomposition {
        class: c,
        components,
        residuals,
        pairs_capped,
    })
}

/// Minimizes `|V s - f|^2 + sum (e_i s_i)^2` over `s >= 0, sum s = demand` by accelerated projected gradient.
fn fit_pair_weights(
    f: &[f64],
    pairs: &[(usize, usize)],
    split: &[(f64, f64)],
    e: &[f64],
    demand: f64,
) -> Vec<f64> {
    let n = pairs.len();
    let apply = |s: &[f64]| {
        let mut out = vec![0.0; f.len()];
        for ((&(p, q), &(vp, vq)), &si) in pairs.iter().zip(split).zip(s) {
            out[p] += vp * si;
            out[q] += vq * si;
        }
        out
    };
    let grad = |s: &[f64]| {
        let r: Vec<f64> = apply(s).iter().zip(f).map(|(x, y)| x - y).collect();
        (0..n)
            .map(|i| {
                let (p, q) = pairs[i];
                2.0 * (split[i].0 * r[p] + split[i].1 * r[q] + e[i] * e[i] * s[i])
            })
            .collect::<Vec<f64>>()
    };
    let frob: f64 = split.iter().map(|(a, b)| a * a + b * b).sum();
    let lip = 2.0 * (frob + e.iter().map(|x| x * x).fold(0.0, f64::max)).max(1e-12);
    let mut s = vec![demand / n as f64; n];
    let mut y = s.clone();
    let mut t = 1.0f64;
    for _ in 0..50_000 {
        let g = grad(&y);
        let next = project_simplex(
            &y.iter()
                .zip(&g)
                .map(|(a, b)| a - b / lip)
                .collect::<Vec<_>>(),
            demand,
        );
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = next
            .iter()
            .zip(&s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        y = next
            .iter()
            .zip(&s)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        s = next;
        t = t_next;
        if moved <= 1e-15 * demand.max(1e-300) {
            break;
        }
    }
    s
}

fn residuals(
    f: &[f64],
    w: &[f64],
    wbar: f64,
    tolls: &[i64],
    ratio: f64,
    demand: f64,
    comps: &[Component],
) -> DecompositionResiduals {
    let mut sum = vec![0.0; f.len()];
    let mut out = DecompositionResiduals::default();
    for comp in comps {
        let mut spent = tolls[comp.low] as f64 * comp.low_flow;
        let mut earned = w[comp.low] * comp.low_flow;
        sum[comp.low] += comp.low_flow;
        if let Some(h) = comp.high {
            spent += tolls[h] as f64 * comp.high_flow;
            earned += w[h] * comp.high_flow;
            sum[h] += comp.high_flow;
        }
        out.drift = out.drift.max((ratio * comp.total() - spent).abs());
        out.payoff_match = out.payoff_match.max((earned - wbar * comp.total()).abs());
    }
    out.conservation = (comps.iter().map(Component::total).sum::<f64>() - demand).abs();
    out.flow_match = sum
        .iter()
        .zip(f)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out
}

/// Candidate equilibrium built from the decomposition, with its certificate and flow match.
#[derive(Debug, Clone)]
pub struct CandidateEquilibrium {
    pub distribution: StatePolicyDistribution,
    pub certificate: MsneCertificate,
    /// Largest `|f_a - Rd * stationary action mass|` over classes and actions.
    pub flow_match: f64,
}

/// Places each component's mass on its threshold (or constant) policy, lifted through the stationary law.
pub fn construct_optimal_msne(
    game: &Game,
    decomposition: &FlowDecomposition,
    so: &SystemOptimum,
) -> Result<CandidateEquilibrium> {
    let scenario = game.scenario();
    let rd = scenario.rates.action;
    let cap = scenario.max_tokens;
    let mut x: Vec<Vec<f64>> = game.policy_counts().iter().map(|&n| vec![0.0; n]).collect();
    for cd in &decomposition.classes {
        let c = cd.class;
        let tolls = &scenario.classes[c].tolls;
        let family = &game.families()[c];
        for comp in &cd.components {
            let policy = match comp.high {
                Some(h) => threshold_policy(c, comp.low, h, tolls, cap)?,
                None => Policy::new(c, vec![comp.low; cap + 1]),
            };
            let u = family.position(&policy).ok_or_else(|| Error::Design {
                class: c,
                message: format!(
                    "component policy on actions {:?} is outside the policy family",
                    policy.segments()
                ),
            })?;
            x[c][u] += comp.total() / rd;
        }
    }
    for (c, xc) in x.iter_mut().enumerate() {
        let total: f64 = xc.iter().sum();
        let mass = scenario.classes[c].mass;
        if total > 0.0 {
            xc.iter_mut().for_each(|v| *v *= mass / total);
        }
    }
    let distribution = game.lift(&x);
    let certificate = msne_certificate(game, &distribution)?;
    let mut flow_match: f64 = 0.0;
    for (c, f) in so.flows.iter().enumerate() {
        let masses = game.action_masses(&distribution, c);
        for (fa, ma) in f.iter().zip(&masses) {
            flow_match = flow_match.max((fa - rd * ma).abs());
        }
    }
    Ok(CandidateEquilibrium {
        distribution,
        certificate,
        flow_match,
    })
}
