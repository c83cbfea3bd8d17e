use serde::{Deserialize, Serialize};

use crate::model::Scenario;
use crate::policy::PolicyFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Switch toward better policies in proportion to their popularity.
    Imitative,
    /// Switch toward better policies at a rate proportional to the payoff gap.
    #[default]
    Pairwise,
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imitative" => Ok(ProtocolKind::Imitative),
            "pairwise" | "pairwise-comparison" | "smith" => Ok(ProtocolKind::Pairwise),
            other => Err(format!("unknown revision protocol `{other}`")),
        }
    }
}

/// Revision protocol with per-class scales chosen so switching rates never exceed the revision rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionProtocolSpec {
    pub kind: ProtocolKind,
    pub rate: f64,
    pub scales: Vec<f64>,
}

impl RevisionProtocolSpec {
    pub fn new(kind: ProtocolKind, scenario: &Scenario, families: &[PolicyFamily]) -> Self {
        let ranges = payoff_ranges(scenario);
        let rate = scenario.rates.revision;
        let scales = families
            .iter()
            .zip(ranges)
            .map(|(f, range)| {
                let n = f.len();
                if n < 2 || !(range > 0.0) {
                    return 0.0;
                }
                match kind {
                    ProtocolKind::Pairwise => rate / ((n - 1) as f64 * range),
                    // Popularity weights sum to one, so the row sum is at most scale * range.
                    ProtocolKind::Imitative => rate / range,
                }
            })
            .collect();
        RevisionProtocolSpec { kind, rate, scales }
    }

    /// Switching rates `rho[u][v]` for one class.
    pub fn rates(
        &self,
        class: usize,
        payoffs: &[f64],
        masses: &[f64],
        class_mass: f64,
    ) -> Vec<Vec<f64>> {
        revision_rates(self.kind, self.scales[class], payoffs, masses, class_mass)
    }
}

/// Bound on the spread of any policy payoff in each class, from reward extremes.
pub fn payoff_ranges(scenario: &Scenario) -> Vec<f64> {
    let cap = scenario.max_flows();
    scenario
        .classes
        .iter()
        .map(|class| {
            let best = class
                .actions
                .iter()
                .map(|a| {
                    a.resources()
                        .iter()
                        .map(|&r| scenario.resources[r].reward.value(0.0))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let worst = class
                .actions
                .iter()
                .map(|a| {
                    a.resources()
                        .iter()
                        .map(|&r| scenario.resources[r].reward.value(cap[r]))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            best - worst
        })
        .collect()
}

/// Dense switching-rate matrix; diagonal is zero.
pub fn revision_rates(
    kind: ProtocolKind,
    scale: f64,
    payoffs: &[f64],
    masses: &[f64],
    class_mass: f64,
) -> Vec<Vec<f64>> {
    let n = payoffs.len();
    let mut rho = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let gain = (payoffs[v] - payoffs[u]).max(0.0);
            rho[u][v] = match kind {
                ProtocolKind::Pairwise => scale * gain,
                ProtocolKind::Imitative => masses[v] / class_mass * scale * gain,
            };
        }
    }
    rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_payoffs_never_switch() {
        let rho = revision_rates(ProtocolKind::Pairwise, 2.0, &[0.3; 4], &[0.25; 4], 1.0);
        assert!(rho.iter().flatten().all(|&r| r == 0.0));
    }

    #[test]
    fn extinct_policies_are_not_imitated() {
        let rho = revision_rates(
            ProtocolKind::Imitative,
            1.0,
            &[0.0, 1.0, 2.0],
            &[0.5, 0.5, 0.0],
            1.0,
        );
        assert_eq!(rho[0][2], 0.0);
        assert_eq!(rho[1][2], 0.0);
        assert!(rho[0][1] > 0.0);
    }

    proptest! {
        #[test]
        fn pairwise_is_sign_preserving(f in prop::collection::vec(-1.0f64..1.0, 2..6)) {
            let x = vec![1.0 / f.len() as f64; f.len()];
            let rho = revision_rates(ProtocolKind::Pairwise, 0.7, &f, &x, 1.0);
            for u in 0..f.len() {
                for v in 0..f.len() {
                    if u != v {
                        prop_assert_eq!(rho[u][v] > 0.0, f[v] > f[u]);
                    }
                }
            }
        }
    }
}
