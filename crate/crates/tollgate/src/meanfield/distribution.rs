use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;

/// Mass over (token count, policy) cells for every class, stored flat.
///
/// Within a class the layout is policy-major: cell `(k, u)` sits at `u * tokens + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePolicyDistribution {
    tokens: usize,
    policies: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl StatePolicyDistribution {
    pub fn zeros(tokens: usize, policies: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(policies.len() + 1);
        let mut acc = 0;
        for &n in policies {
            offsets.push(acc);
            acc += n * tokens;
        }
        offsets.push(acc);
        StatePolicyDistribution {
            tokens,
            policies: policies.to_vec(),
            offsets,
            data: vec![0.0; acc],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        let mut out = other.clone();
        out.data.fill(0.0);
        out
    }

    /// Exchanges the cell values with `cells`, which must have the same length.
    pub(crate) fn swap_cells(&mut self, cells: &mut Vec<f64>) {
        debug_assert_eq!(cells.len(), self.data.len());
        std::mem::swap(&mut self.data, cells);
    }

    /// Number of token levels (`max_tokens + 1`).
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn num_classes(&self) -> usize {
        self.policies.len()
    }

    pub fn num_policies(&self, class: usize) -> usize {
        self.policies[class]
    }

    pub fn class(&self, class: usize) -> ClassView<'_> {
        ClassView {
            tokens: self.tokens,
            data: &self.data[self.offsets[class]..self.offsets[class + 1]],
        }
    }

    pub fn class_mut(&mut self, class: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[class], self.offsets[class + 1]);
        &mut self.data[a..b]
    }

    pub fn policy_row(&self, class: usize, policy: usize) -> &[f64] {
        let start = self.offsets[class] + policy * self.tokens;
        &self.data[start..start + self.tokens]
    }

    pub fn policy_row_mut(&mut self, class: usize, policy: usize) -> &mut [f64] {
        let start = self.offsets[class] + policy * self.tokens;
        &mut self.data[start..start + self.tokens]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn class_mass(&self, class: usize) -> f64 {
        self.class(class).data.iter().sum()
    }

    /// Policy marginals `mu[K, u]` per class.
    pub fn policy_masses(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes())
            .map(|c| self.class(c).policy_masses())
            .collect()
    }

    /// Sum of absolute differences over all cells.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.offsets != other.offsets || self.tokens != other.tokens {
            return Err(Error::Invalid("distributions have different shapes".into()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub fn check_masses(&self, scenario: &Scenario, tol: f64) -> Result<()> {
        if self.num_classes() != scenario.classes.len() {
            return Err(Error::Contract(format!(
                "distribution has {} classes, scenario {}",
                self.num_classes(),
                scenario.classes.len()
            )));
        }
        for (c, class) in scenario.classes.iter().enumerate() {
            let m = self.class_mass(c);
            if (m - class.mass).abs() > tol {
                return Err(Error::Contract(format!(
                    "class {c} carries mass {m}, expected {}",
                    class.mass
                )));
            }
        }
        if self.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract(
                "distribution has negative or non-finite entries".into(),
            ));
        }
        Ok(())
    }
}

/// Read-only view of one class.
#[derive(Debug, Clone, Copy)]
pub struct ClassView<'a> {
    tokens: usize,
    data: &'a [f64],
}

impl<'a> ClassView<'a> {
    pub fn get(&self, k: usize, u: usize) -> f64 {
        self.data[u * self.tokens + k]
    }

    pub fn row(&self, u: usize) -> &'a [f64] {
        &self.data[u * self.tokens..(u + 1) * self.tokens]
    }

    pub fn policy_masses(&self) -> Vec<f64> {
        self.data
            .chunks(self.tokens)
            .map(|r| r.iter().sum())
            .collect()
    }
}
