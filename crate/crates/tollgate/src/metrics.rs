//! Efficiency, fairness and dispersion summaries of simulated trajectories.

use serde::{Deserialize, Serialize};

use crate::design::{total_reward, Objective};
use crate::error::{Error, Result};
use crate::model::Scenario;

/// One sampled point: utilization per resource and average reward per class.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub sigma: &'a [f64],
    pub class_rewards: &'a [f64],
}

/// Time-averaged performance over a window of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of `sum_r sigma_r w_r(sigma_r)` over the window.
    pub efficiency: f64,
    /// Mean of the worst class average reward over the window.
    pub fairness: f64,
    /// The configured objective evaluated on the window means.
    pub objective: f64,
    pub class_rewards: Vec<f64>,
    pub sigma: Vec<f64>,
    pub window: (f64, f64),
    pub samples: usize,
    /// Replica seed of a population run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Coefficient of variation of per-agent average rewards in each class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<Vec<f64>>,
    /// Equilibrium certificate at the last sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

/// The same metrics under zero tolls, with the relative objective gain of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub efficiency: f64,
    pub fairness: f64,
    pub objective: f64,
    /// `(designed - baseline) / |baseline|`.
    pub relative_gain: f64,
}

impl MetricsReport {
    pub fn with_baseline(mut self, baseline: &MetricsReport) -> Self {
        self.baseline = Some(BaselineComparison {
            efficiency: baseline.efficiency,
            fairness: baseline.fairness,
            objective: baseline.objective,
            relative_gain: relative_gain(self.objective, baseline.objective),
        });
        self
    }

    /// True when every reported number is finite.
    pub fn is_finite(&self) -> bool {
        let scalars = [self.efficiency, self.fairness, self.objective];
        scalars
            .iter()
            .chain(&self.class_rewards)
            .chain(&self.sigma)
            .all(|v| v.is_finite())
            && self.dispersion.iter().flatten().all(|v| v.is_finite())
            && self.epsilon.is_none_or(f64::is_finite)
    }
}

pub fn relative_gain(designed: f64, baseline: f64) -> f64 {
    (designed - baseline) / baseline.abs()
}

/// Worst class average reward.
pub fn worst_class(class_rewards: &[f64]) -> f64 {
    class_rewards.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Averages the points with `t >= from` and evaluates the metrics on them.
pub fn summarize(
    scenario: &Scenario,
    objective: Objective,
    points: &[Point<'_>],
    from: f64,
) -> Result<MetricsReport> {
    let window: Vec<&Point> = points.iter().filter(|p| p.t >= from).collect();
    let (first, last) = match (window.first(), window.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::Invalid(format!("no samples at or after t = {from}"))),
    };
    let n = window.len() as f64;
    let mut sigma = vec![0.0; scenario.num_resources()];
    let mut class_rewards = vec![0.0; scenario.classes.len()];
    let (mut efficiency, mut fairness) = (0.0, 0.0);
    for p in &window {
        if p.sigma.len() != sigma.len() || p.class_rewards.len() != class_rewards.len() {
            return Err(Error::Invalid(format!(
                "sample at t = {} has the wrong width",
                p.t
            )));
        }
        efficiency += total_reward(scenario, p.sigma) / n;
        fairness += worst_class(p.class_rewards) / n;
        sigma.iter_mut().zip(p.sigma).for_each(|(a, s)| *a += s / n);
        class_rewards
            .iter_mut()
            .zip(p.class_rewards)
            .for_each(|(a, w)| *a += w / n);
    }
    let objective = match objective {
        Objective::AvgReward => efficiency,
        Objective::MinClassPlusAvg { gamma } => fairness + gamma * efficiency,
    };
    Ok(MetricsReport {
        efficiency,
        fairness,
        objective,
        class_rewards,
        sigma,
        window: (first, last),
        samples: window.len(),
        seed: None,
        dispersion: None,
        epsilon: None,
        baseline: None,
    })
}

/// Coefficient of variation (population standard deviation over absolute mean).
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        return if var == 0.0 { 0.0 } else { f64::INFINITY };
    }
    var.sqrt() / mean.abs()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and spread of one metric across replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

/// Replica-level aggregate of several reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub replicas: usize,
    pub efficiency: Spread,
    pub fairness: Spread,
    pub objective: Spread,
    /// Largest per-class dispersion seen in any replica.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dispersion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_objective: Option<Spread>,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let spread = |f: &dyn Fn(&MetricsReport) -> f64| {
        let (mean, std) = mean_std(&reports.iter().map(f).collect::<Vec<_>>());
        Spread { mean, std }
    };
    let dispersions: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.dispersion.as_ref())
        .flatten()
        .copied()
        .collect();
    let baselines: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.baseline.as_ref().map(|b| b.objective))
        .collect();
    AggregateReport {
        replicas: reports.len(),
        efficiency: spread(&|r| r.efficiency),
        fairness: spread(&|r| r.fairness),
        objective: spread(&|r| r.objective),
        max_dispersion: (!dispersions.is_empty())
            .then(|| dispersions.iter().copied().fold(0.0, f64::max)),
        baseline_objective: (baselines.len() == reports.len() && !baselines.is_empty()).then(
            || {
                let (mean, std) = mean_std(&baselines);
                Spread { mean, std }
            },
        ),
    }
}
