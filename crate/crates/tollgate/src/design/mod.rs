//! Toll design: system optimum, continuous and integer tolls, certificates, and the candidate equilibrium.

mod decompose;
mod optimum;
mod tolls;

pub use decompose::{
    construct_optimal_msne, decompose_flows, CandidateEquilibrium, ClassDecomposition, Component,
    DecompositionResiduals, FlowDecomposition, MAX_PAIRS,
};
pub use optimum::{
    flows_to_sigma, project_simplex, solve_system_optimum, solve_with, total_reward, Objective,
    SolverOptions, SystemOptimum, USED_FRACTION,
};
pub use tolls::{
    class_lp_residuals, continuous_tolls, discretize_tolls, min_used_gap, select_alpha_kbar,
    verify_class_lp, DualCertificate, LpCondition, ScaleChoice, CERTIFICATE_TOLERANCE,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::meanfield::{Game, MsneCertificate};
use crate::model::Scenario;
use crate::policy::DEFAULT_MAX_DISTINCT_ACTIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    pub objective: Objective,
    /// Allowed rounding error relative to the smallest reward gap.
    pub rel_err: f64,
    /// Bound on the stationary mass at the token cap.
    pub tail_tol: f64,
    pub max_distinct_actions: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            objective: Objective::AvgReward,
            rel_err: 0.05,
            tail_tol: 1e-4,
            max_distinct_actions: DEFAULT_MAX_DISTINCT_ACTIONS,
        }
    }
}

/// Everything the design pipeline produces, in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub scenario: String,
    pub config: DesignConfig,
    pub optimum: SystemOptimum,
    pub continuous_tolls: Vec<Vec<f64>>,
    pub tolls: Vec<Vec<i64>>,
    pub alpha: f64,
    pub max_tokens: usize,
    pub tail_bound: Option<f64>,
    pub dual: Vec<DualCertificate>,
    pub decomposition: FlowDecomposition,
    pub candidate: MsneCertificate,
    /// Largest gap between optimal action flows and those of the candidate equilibrium.
    pub candidate_flow_match: f64,
}

impl DesignResult {
    /// The scenario with the designed tolls and token cap installed.
    pub fn apply(&self, scenario: &Scenario) -> Result<Scenario> {
        scenario.with_tolls(&self.tolls, self.max_tokens)
    }

    pub fn max_certificate_residual(&self) -> f64 {
        self.dual
            .iter()
            .map(DualCertificate::max_residual)
            .fold(0.0, f64::max)
    }
}

/// Runs the full pipeline and returns the result with the designed game.
pub fn design(scenario: &Scenario, cfg: &DesignConfig) -> Result<(DesignResult, Game)> {
    let rates = scenario.rates;
    let so = solve_system_optimum(scenario, cfg.objective)?;
    let choice = select_alpha_kbar(&so, rates.noise, rates.action, cfg.rel_err, cfg.tail_tol)?;
    let cont = continuous_tolls(&so, choice.alpha, rates.noise, rates.action);
    let dual = verify_class_lp(&so, &cont, rates.noise, rates.action, choice.alpha)?;
    let tolls = discretize_tolls(&cont)?;
    let decomposition = decompose_flows(&so, &tolls, rates.noise, rates.action)?;
    let tolled = scenario.with_tolls(&tolls, choice.max_tokens)?;
    let game = Game::new(tolled, cfg.max_distinct_actions)?;
    let candidate = construct_optimal_msne(&game, &decomposition, &so)?;
    let result = DesignResult {
        scenario: scenario.name.clone(),
        config: cfg.clone(),
        optimum: so,
        continuous_tolls: cont,
        tolls,
        alpha: choice.alpha,
        max_tokens: choice.max_tokens,
        tail_bound: choice.tail_bound,
        dual,
        decomposition,
        candidate: candidate.certificate,
        candidate_flow_match: candidate.flow_match,
    };
    Ok((result, game))
}
