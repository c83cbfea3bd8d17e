//! Resources, classes, actions and scenario validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::StatePolicyDistribution;
use crate::policy::PolicyFamily;
use crate::reward::RewardFn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub id: usize,
    pub reward: RewardFn,
}

/// A nonempty, sorted set of resource ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(Vec<usize>);

impl Action {
    pub fn new(mut resources: Vec<usize>) -> Result<Self> {
        if resources.is_empty() {
            return Err(Error::Invalid(
                "an action must use at least one resource".into(),
            ));
        }
        resources.sort_unstable();
        resources.dedup();
        Ok(Action(resources))
    }

    pub fn resources(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, r: usize) -> bool {
        self.0.binary_search(&r).is_ok()
    }
}

/// Event rates per agent per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Action (resource access) rate.
    pub action: f64,
    /// Token gift (noise) rate.
    pub noise: f64,
    /// Policy revision rate.
    pub revision: f64,
}

impl Rates {
    pub fn jump(&self) -> f64 {
        self.action + self.noise
    }

    pub fn noise_ratio(&self) -> f64 {
        self.noise / self.action
    }

    pub fn revision_ratio(&self) -> f64 {
        self.revision / self.jump()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: usize,
    pub mass: f64,
    pub actions: Vec<Action>,
    /// Integer toll per action, same order as `actions`.
    pub tolls: Vec<i64>,
    /// Origin and destination node ids for network games.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od: Option<(usize, usize)>,
}

impl ClassSpec {
    pub fn new(id: usize, mass: f64, actions: Vec<Action>) -> Self {
        let tolls = vec![0; actions.len()];
        ClassSpec {
            id,
            mass,
            actions,
            tolls,
            od: None,
        }
    }
}

/// Per-resource utilization rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowVector(pub Vec<f64>);

impl FlowVector {
    pub fn zeros(n: usize) -> Self {
        FlowVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A complete game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub resources: Vec<Resource>,
    pub classes: Vec<ClassSpec>,
    pub rates: Rates,
    pub max_tokens: usize,
    pub seed: u64,
    pub population: Option<usize>,
    /// Upper bound accepted for revision rate / (action + noise rate).
    pub max_revision_ratio: f64,
}

impl Scenario {
    pub fn num_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.classes.iter().map(|c| c.mass).sum()
    }

    /// Replaces every class's tolls.
    pub fn with_tolls(&self, tolls: &[Vec<i64>], max_tokens: usize) -> Result<Scenario> {
        if tolls.len() != self.classes.len() {
            return Err(Error::Invalid(format!(
                "toll map has {} classes, scenario has {}",
                tolls.len(),
                self.classes.len()
            )));
        }
        let mut out = self.clone();
        for (class, t) in out.classes.iter_mut().zip(tolls) {
            if t.len() != class.actions.len() {
                return Err(Error::Invalid(format!(
                    "class {}: {} tolls for {} actions",
                    class.id,
                    t.len(),
                    class.actions.len()
                )));
            }
            class.tolls = t.clone();
        }
        out.max_tokens = max_tokens;
        Ok(out)
    }

    pub fn zero_tolls(&self) -> Vec<Vec<i64>> {
        self.classes
            .iter()
            .map(|c| vec![0; c.actions.len()])
            .collect()
    }

    /// Largest admissible utilization of each resource: every class able to use it plays it at full rate.
    pub fn max_flows(&self) -> Vec<f64> {
        let mut cap = vec![0.0; self.resources.len()];
        for class in &self.classes {
            let mut touched = vec![false; self.resources.len()];
            for a in &class.actions {
                for &r in a.resources() {
                    touched[r] = true;
                }
            }
            for (c, t) in cap.iter_mut().zip(touched) {
                if t {
                    *c += self.rates.action * class.mass;
                }
            }
        }
        cap
    }

    pub fn action_reward(&self, action: &Action, sigma: &FlowVector) -> f64 {
        single_stage_reward(&self.resources, action, sigma)
    }
}

/// Sum of resource rewards along an action.
pub fn single_stage_reward(resources: &[Resource], action: &Action, sigma: &FlowVector) -> f64 {
    action
        .resources()
        .iter()
        .map(|&r| resources[r].reward.value(sigma.0[r]))
        .sum()
}

/// Resource utilization induced by a state-policy distribution.
pub fn sigma_from_distribution(
    scenario: &Scenario,
    families: &[PolicyFamily],
    mu: &StatePolicyDistribution,
) -> Result<FlowVector> {
    mu.check_masses(scenario, 1e-8)?;
    let mut sigma = vec![0.0; scenario.num_resources()];
    for (c, class) in scenario.classes.iter().enumerate() {
        let dist = mu.class(c);
        let mut action_mass = vec![0.0; class.actions.len()];
        for (u, policy) in families[c].policies().iter().enumerate() {
            for (k, &a) in policy.actions().iter().enumerate() {
                action_mass[a] += dist.get(k, u);
            }
        }
        for (a, mass) in action_mass.into_iter().enumerate() {
            for &r in class.actions[a].resources() {
                sigma[r] += scenario.rates.action * mass;
            }
        }
    }
    Ok(FlowVector(sigma))
}

/// Which modelling assumption a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    /// Every class has an action with nonpositive toll.
    FreeAction,
    /// Rewards are Lipschitz and uniformly decreasing.
    DecreasingRewards,
    /// Noise rate is below a quarter of the action rate.
    NoiseBound,
    /// Revision is slow relative to action and noise events.
    RevisionBound,
    /// Structural checks: masses, action sets, token cap.
    WellFormed,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::FreeAction => "free-action assumption",
            Assumption::DecreasingRewards => "decreasing-reward assumption",
            Assumption::NoiseBound => "noise-rate assumption",
            Assumption::RevisionBound => "revision-rate assumption",
            Assumption::WellFormed => "well-formedness",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub assumption: Assumption,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.assumption, self.message)
    }
}

/// Checks the scenario against the model's standing assumptions; empty when all hold.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |assumption, message: String| {
        out.push(Diagnostic {
            assumption,
            message,
        })
    };
    let rates = s.rates;
    if !(rates.action > 0.0) || !(rates.noise >= 0.0) || !(rates.revision >= 0.0) {
        push(
            Assumption::WellFormed,
            format!(
                "rates must be positive (action {}, noise {}, revision {})",
                rates.action, rates.noise, rates.revision
            ),
        );
    }
    if !(rates.noise < rates.action / 4.0) {
        push(
            Assumption::NoiseBound,
            format!(
                "noise rate {} is not below action rate / 4 = {}",
                rates.noise,
                rates.action / 4.0
            ),
        );
    }
    if !(rates.revision_ratio() <= s.max_revision_ratio) {
        push(
            Assumption::RevisionBound,
            format!(
                "revision ratio {:.4e} exceeds the configured bound {:.4e}",
                rates.revision_ratio(),
                s.max_revision_ratio
            ),
        );
    }
    if s.classes.is_empty() {
        push(Assumption::WellFormed, "scenario has no classes".into());
    }
    if (s.total_mass() - 1.0).abs() > 1e-9 {
        push(
            Assumption::WellFormed,
            format!("class masses sum to {}, expected 1", s.total_mass()),
        );
    }
    for r in &s.resources {
        if !r.reward.is_finite() || !(r.reward.min_decrease_rate() > 0.0) {
            push(
                Assumption::DecreasingRewards,
                format!("resource {} reward is not uniformly decreasing", r.id),
            );
        }
    }
    for class in &s.classes {
        if !(class.mass > 0.0) {
            push(
                Assumption::WellFormed,
                format!("class {} has nonpositive mass", class.id),
            );
        }
        if class.actions.is_empty() {
            push(
                Assumption::WellFormed,
                format!("class {} has no actions", class.id),
            );
            continue;
        }
        if class.tolls.len() != class.actions.len() {
            push(
                Assumption::WellFormed,
                format!("class {} toll count mismatch", class.id),
            );
            continue;
        }
        if class
            .actions
            .iter()
            .flat_map(|a| a.resources())
            .any(|&r| r >= s.resources.len())
        {
            push(
                Assumption::WellFormed,
                format!("class {} uses an unknown resource", class.id),
            );
        }
        if class.tolls.iter().all(|&t| t > 0) {
            push(
                Assumption::FreeAction,
                format!("every toll of class {} is positive", class.id),
            );
        }
        let max_abs = class
            .tolls
            .iter()
            .map(|t| t.unsigned_abs())
            .max()
            .unwrap_or(0);
        if (s.max_tokens as u64) < max_abs {
            push(
                Assumption::WellFormed,
                format!(
                    "token cap {} is below class {} toll magnitude {}",
                    s.max_tokens, class.id, max_abs
                ),
            );
        }
    }
    out
}

/// Soft checks reported alongside the hard ones.
pub fn advisories(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    if s.rates.noise_ratio() > 0.1 {
        out.push(format!(
            "noise rate is only {:.3} of the action rate; the model intends it to be much smaller",
            s.rates.noise_ratio()
        ));
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two parallel links: `w1 = -1 - 1e-3 x`, `w2 = -x`.
    pub fn pigou() -> Scenario {
        Scenario {
            name: "pigou".into(),
            resources: vec![
                Resource {
                    id: 0,
                    reward: RewardFn::affine(-1.0, 1e-3),
                },
                Resource {
                    id: 1,
                    reward: RewardFn::affine(0.0, 1.0),
                },
            ],
            classes: vec![ClassSpec::new(
                0,
                1.0,
                vec![Action::new(vec![0]).unwrap(), Action::new(vec![1]).unwrap()],
            )],
            rates: Rates {
                action: 1.0,
                noise: 0.1,
                revision: 0.011,
            },
            max_tokens: 10,
            seed: 1,
            population: None,
            max_revision_ratio: 0.05,
        }
    }
}
