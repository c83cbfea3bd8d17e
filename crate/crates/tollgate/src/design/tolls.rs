//! Continuous and integer tolls, their linear-programming certificate, and the scale/cap choice.

use serde::{Deserialize, Serialize};

use super::optimum::SystemOptimum;
use crate::error::{Error, Result};
use crate::wallet::tail_mass_bound;

/// Gaps smaller than this, relative to the largest reward magnitude, count as zero.
const ZERO_GAP: f64 = 1e-9;

/// `noise/action + alpha * (w_a - wbar_c)` for every class action.
pub fn continuous_tolls(so: &SystemOptimum, alpha: f64, noise: f64, action: f64) -> Vec<Vec<f64>> {
    so.action_rewards
        .iter()
        .zip(&so.class_rewards)
        .map(|(w, &wbar)| {
            w.iter()
                .map(|&wa| noise / action + alpha * (wa - wbar))
                .collect()
        })
        .collect()
}

/// Which part of the class linear program a residual belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpCondition {
    PrimalFeasibility,
    DualFeasibility,
    ComplementarySlackness,
}

impl std::fmt::Display for LpCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpCondition::PrimalFeasibility => "primal feasibility",
            LpCondition::DualFeasibility => "dual feasibility",
            LpCondition::ComplementarySlackness => "complementary slackness",
        })
    }
}

/// Dual solution of one class's best-response program and its residuals.
///
/// The program maximizes `sum_a f_a w_a` over `f >= 0` with `sum_a f_a = m * Rd`
/// (multiplier `mass_price`) and `sum_a f_a toll_a <= m * Rno` (multiplier `toll_price`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub class: usize,
    pub toll_price: f64,
    pub mass_price: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub slackness_residual: f64,
    /// Primal minus dual objective.
    pub duality_gap: f64,
}

impl DualCertificate {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual
            .max(self.dual_residual)
            .max(self.slackness_residual)
            .max(self.duality_gap.abs())
    }

    pub fn violations(&self, tol: f64) -> Vec<LpCondition> {
        let mut out = Vec::new();
        if self.primal_residual > tol {
            out.push(LpCondition::PrimalFeasibility);
        }
        if self.dual_residual > tol {
            out.push(LpCondition::DualFeasibility);
        }
        if self.slackness_residual > tol || self.duality_gap.abs() > tol {
            out.push(LpCondition::ComplementarySlackness);
        }
        out
    }
}

pub const CERTIFICATE_TOLERANCE: f64 = 1e-8;

/// Residuals of the candidate dual `(1/alpha, wbar - Rno/(alpha Rd))` for every class.
pub fn class_lp_residuals(
    so: &SystemOptimum,
    tolls: &[Vec<f64>],
    noise: f64,
    action: f64,
    alpha: f64,
) -> Vec<DualCertificate> {
    so.flows
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let w = &so.action_rewards[c];
            let tau = &tolls[c];
            let demand: f64 = f.iter().sum();
            let mass = demand / action;
            let budget = mass * noise;
            let toll_price = 1.0 / alpha;
            let mass_price = -noise / (alpha * action) + so.class_rewards[c];
            let spent: f64 = f.iter().zip(tau).map(|(x, t)| x * t).sum();
            let negative = f.iter().map(|&x| (-x).max(0.0)).fold(0.0, f64::max);
            let primal_residual = (spent - budget).max(0.0).max(negative);
            let reduced: Vec<f64> = w
                .iter()
                .zip(tau)
                .map(|(wa, t)| t * toll_price + mass_price - wa)
                .collect();
            let dual_residual = reduced.iter().map(|r| (-r).max(0.0)).fold(0.0, f64::max);
            let slackness_residual = f
                .iter()
                .zip(&reduced)
                .map(|(x, r)| (x * r).abs())
                .fold((toll_price * (budget - spent)).abs(), f64::max);
            let primal: f64 = f.iter().zip(w).map(|(x, y)| x * y).sum();
            let dual = toll_price * budget + mass_price * demand;
            DualCertificate {
                class: c,
                toll_price,
                mass_price,
                primal_residual,
                dual_residual,
                slackness_residual,
                duality_gap: primal - dual,
            }
        })
        .collect()
}

/// Certifies that the optimum flows solve every class's program under the given tolls.
pub fn verify_class_lp(
    so: &SystemOptimum,
    tolls: &[Vec<f64>],
    noise: f64,
    action: f64,
    alpha: f64,
) -> Result<Vec<DualCertificate>> {
    let certs = class_lp_residuals(so, tolls, noise, action, alpha);
    for cert in &certs {
        let bad = cert.violations(CERTIFICATE_TOLERANCE);
        if !bad.is_empty() {
            let conditions = bad
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::Certificate {
                class: cert.class,
                conditions,
            });
        }
    }
    Ok(certs)
}

/// Rounds half away from zero and checks that every class keeps a free action.
pub fn discretize_tolls(tolls: &[Vec<f64>]) -> Result<Vec<Vec<i64>>> {
    let out: Vec<Vec<i64>> = tolls
        .iter()
        .map(|c| c.iter().map(|t| t.round() as i64).collect())
        .collect();
    for (c, t) in out.iter().enumerate() {
        if t.iter().all(|&x| x > 0) {
            return Err(Error::Design {
                class: c,
                message: "every rounded toll is positive".into(),
            });
        }
    }
    Ok(out)
}

/// Chosen toll scale and token cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleChoice {
    pub alpha: f64,
    pub max_tokens: usize,
    /// Smallest nonzero reward gap among used actions, if any.
    pub min_gap: Option<f64>,
    /// Geometric bound on the stationary mass at the cap.
    pub tail_bound: Option<f64>,
}

/// Smallest nonzero `|w_a - wbar_c|` over used actions.
pub fn min_used_gap(so: &SystemOptimum) -> Option<f64> {
    let scale = so
        .action_rewards
        .iter()
        .flatten()
        .fold(1.0f64, |m, w| m.max(w.abs()));
    let mut best: Option<f64> = None;
    for (c, w) in so.action_rewards.iter().enumerate() {
        for (a, &wa) in w.iter().enumerate() {
            let gap = (wa - so.class_rewards[c]).abs();
            if so.is_used(c, a) && gap > ZERO_GAP * scale {
                best = Some(best.map_or(gap, |b: f64| b.min(gap)));
            }
        }
    }
    best
}

/// Picks the toll scale so rounding moves tolls by at most `rel_err` of the smallest
/// gap, then the token cap as the smallest multiple of the largest toll meeting the
/// tail tolerance and at least ten times every toll magnitude.
pub fn select_alpha_kbar(
    so: &SystemOptimum,
    noise: f64,
    action: f64,
    rel_err: f64,
    tail_tol: f64,
) -> Result<ScaleChoice> {
    if !(rel_err > 0.0 && rel_err < 1.0) || !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::Invalid(
            "relative error and tail tolerance must lie in (0, 1)".into(),
        ));
    }
    let min_gap = min_used_gap(so);
    let alpha = min_gap.map_or(1.0, |g| (0.5 / (rel_err * g)).max(1.0));
    let tolls = discretize_tolls(&continuous_tolls(so, alpha, noise, action))?;
    let max_abs = tolls
        .iter()
        .flatten()
        .map(|t| t.unsigned_abs() as usize)
        .max()
        .unwrap_or(0);
    let max_pos = tolls.iter().flatten().copied().filter(|&t| t > 0).max();
    let floor = (10 * max_abs).max(1);
    let Some(high) = max_pos else {
        return Ok(ScaleChoice {
            alpha,
            max_tokens: floor,
            min_gap,
            tail_bound: None,
        });
    };
    let step = high as usize;
    let mut cap = step * floor.div_ceil(step);
    let ratio = noise / action;
    while tail_mass_bound(high, cap, ratio)? > tail_tol {
        cap += step;
    }
    Ok(ScaleChoice {
        alpha,
        max_tokens: cap,
        min_gap,
        tail_bound: Some(tail_mass_bound(high, cap, ratio)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::optimum::{solve_system_optimum, Objective};
    use crate::model::fixtures::pigou;

    fn pigou_so() -> SystemOptimum {
        solve_system_optimum(&pigou(), Objective::AvgReward).unwrap()
    }

    #[test]
    fn zero_gap_gives_base_toll() {
        let mut so = pigou_so();
        so.action_rewards[0] = vec![so.class_rewards[0]; 2];
        let t = continuous_tolls(&so, 7.0, 0.1, 1.0);
        assert!(t[0].iter().all(|&x| (x - 0.1).abs() < 1e-15));
        let choice = select_alpha_kbar(&so, 0.1, 1.0, 0.05, 1e-4).unwrap();
        assert_eq!(choice.alpha, 1.0);
        assert_eq!(
            discretize_tolls(&continuous_tolls(&so, choice.alpha, 0.1, 1.0)).unwrap(),
            vec![vec![0, 0]]
        );
    }

    #[test]
    fn pigou_tolls_are_symmetric_about_base() {
        let so = pigou_so();
        let alpha = 40.0;
        let t = continuous_tolls(&so, alpha, 0.1, 1.0);
        let w = &so.action_rewards[0];
        assert!((t[0][1] - t[0][0] - alpha * (w[1] - w[0])).abs() < 1e-12);
        // Gaps are nearly opposite because the optimum splits flow nearly evenly.
        assert!(((t[0][0] - 0.1) + (t[0][1] - 0.1)).abs() < 0.05 * alpha * (w[1] - w[0]).abs());
    }

    #[test]
    fn flow_weighted_toll_identity() {
        let so = pigou_so();
        for alpha in [1.0, 13.0, 400.0] {
            let t = continuous_tolls(&so, alpha, 0.1, 1.0);
            let spent: f64 = so.flows[0].iter().zip(&t[0]).map(|(f, x)| f * x).sum();
            assert!((spent - 0.1).abs() < 1e-8);
        }
    }

    #[test]
    fn pigou_certificate() {
        let so = pigou_so();
        let t = continuous_tolls(&so, 40.0, 0.1, 1.0);
        let certs = verify_class_lp(&so, &t, 0.1, 1.0, 40.0).unwrap();
        assert!(certs[0].max_residual() <= 1e-10);
    }

    #[test]
    fn perturbed_toll_breaks_slackness() {
        let so = pigou_so();
        let mut t = continuous_tolls(&so, 40.0, 0.1, 1.0);
        t[0][0] += 0.1;
        let err = verify_class_lp(&so, &t, 0.1, 1.0, 40.0).unwrap_err();
        match err {
            Error::Certificate { conditions, .. } => {
                assert!(conditions.contains("complementary slackness"))
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rounding_rule() {
        let r = discretize_tolls(&[vec![0.1, 2.5, -2.5, -0.4]]).unwrap();
        assert_eq!(r, vec![vec![0, 3, -3, 0]]);
        assert!(discretize_tolls(&[vec![0.6, 2.0]]).is_err());
    }

    #[test]
    fn alpha_formula() {
        let mut so = pigou_so();
        let wbar = so.class_rewards[0];
        so.action_rewards[0] = vec![wbar - 0.01, wbar + 0.02];
        let choice = select_alpha_kbar(&so, 0.1, 1.0, 0.05, 1e-4).unwrap();
        assert!((choice.alpha - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cap_meets_tail_tolerance() {
        let so = pigou_so();
        let choice = select_alpha_kbar(&so, 0.1, 1.0, 0.05, 1e-4).unwrap();
        let tolls = discretize_tolls(&continuous_tolls(&so, choice.alpha, 0.1, 1.0)).unwrap();
        let high = tolls[0].iter().copied().max().unwrap();
        assert!(tail_mass_bound(high, choice.max_tokens, 0.1).unwrap() <= 1e-4);
        assert_eq!(choice.max_tokens % high as usize, 0);
        assert!(
            choice.max_tokens
                >= 10
                    * tolls[0]
                        .iter()
                        .map(|t| t.unsigned_abs() as usize)
                        .max()
                        .unwrap()
        );
        assert_eq!(tolls, vec![vec![-10, 10]]);
        assert_eq!(choice.max_tokens, 100);
    }
}
