//! Per-resource reward functions of the utilization rate.

use serde::{Deserialize, Serialize};

/// A decreasing reward `w(x)` of the normalized utilization rate `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardFn {
    /// `w(x) = intercept - slope * x`.
    Affine { intercept: f64, slope: f64 },
    /// Negated BPR travel time plus a small linear term:
    /// `w(x) = -t0 * (1 + b * (x * scale / capacity)^power) - linear * x`.
    NegBpr {
        free_flow: f64,
        capacity: f64,
        b: f64,
        power: f64,
        /// Converts normalized flow into the units of `capacity`.
        flow_scale: f64,
        linear: f64,
    },
}

/// Default linear slope added to negated BPR rewards, as a fraction of the free-flow value.
pub const BPR_LINEAR_FRACTION: f64 = 1e-3;

impl RewardFn {
    pub fn affine(intercept: f64, slope: f64) -> Self {
        RewardFn::Affine { intercept, slope }
    }

    pub fn neg_bpr(free_flow: f64, capacity: f64, b: f64, power: f64, flow_scale: f64) -> Self {
        RewardFn::NegBpr {
            free_flow,
            capacity,
            b,
            power,
            flow_scale,
            linear: BPR_LINEAR_FRACTION * free_flow,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            RewardFn::Affine { intercept, slope } => intercept - slope * x,
            RewardFn::NegBpr {
                free_flow,
                capacity,
                b,
                power,
                flow_scale,
                linear,
            } => {
                let v = (x.max(0.0) * flow_scale / capacity).powf(power);
                -free_flow * (1.0 + b * v) - linear * x
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            RewardFn::Affine { slope, .. } => -slope,
            RewardFn::NegBpr {
                free_flow,
                capacity,
                b,
                power,
                flow_scale,
                linear,
            } => {
                let scale = flow_scale / capacity;
                let dv = if power == 0.0 {
                    0.0
                } else {
                    power * scale * (x.max(0.0) * scale).powf(power - 1.0)
                };
                -free_flow * b * dv - linear
            }
        }
    }

    /// `∫_0^x w(s) ds`.
    pub fn integral(&self, x: f64) -> f64 {
        match *self {
            RewardFn::Affine { intercept, slope } => intercept * x - 0.5 * slope * x * x,
            RewardFn::NegBpr {
                free_flow,
                capacity,
                b,
                power,
                flow_scale,
                linear,
            } => {
                let scale = flow_scale / capacity;
                let x = x.max(0.0);
                let poly = (x * scale).powf(power) * x / (power + 1.0);
                -free_flow * (x + b * poly) - 0.5 * linear * x * x
            }
        }
    }

    /// Guaranteed decrease rate: `w(x) - w(y) <= -rate * (x - y)` for `x > y >= 0`.
    pub fn min_decrease_rate(&self) -> f64 {
        match *self {
            RewardFn::Affine { slope, .. } => slope,
            RewardFn::NegBpr { linear, .. } => linear,
        }
    }

    /// Reward at zero flow (free-flow reward).
    pub fn free_value(&self) -> f64 {
        self.value(0.0)
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            RewardFn::Affine { intercept, slope } => intercept.is_finite() && slope.is_finite(),
            RewardFn::NegBpr {
                free_flow,
                capacity,
                b,
                power,
                flow_scale,
                linear,
            } => [free_flow, capacity, b, power, flow_scale, linear]
                .iter()
                .all(|v| v.is_finite()),
        }
    }
}
