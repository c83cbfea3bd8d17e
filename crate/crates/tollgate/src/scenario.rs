//! Scenario files: TOML descriptions of a game plus the solver and simulation settings.
//!
//! A file either lists `[[resources]]` and `[[classes]]` directly or points `[network]` at
//! an edge list and a demand file (or gives both inline), in which case each class's
//! actions are its K shortest paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{DesignConfig, Objective};
use crate::error::{Error, Result};
use crate::meanfield::ProtocolKind;
use crate::model::{Action, ClassSpec, Rates, Resource, Scenario};
use crate::network::{enumerate_actions, load_network, load_od, Edge, Network, OdPair};
use crate::policy::DEFAULT_MAX_DISTINCT_ACTIONS;
use crate::reward::RewardFn;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    name: String,
    #[serde(default)]
    seed: u64,
    /// Marks scenarios too large for routine runs.
    #[serde(default)]
    heavy: bool,
    rates: RawRates,
    #[serde(default)]
    tokens: RawTokens,
    #[serde(default)]
    population: PopulationConfig,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    resources: Vec<RewardFn>,
    #[serde(default)]
    classes: Vec<RawClass>,
    network: Option<RawNetwork>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    action: f64,
    noise: f64,
    revision: Option<f64>,
    /// Revision rate as a fraction of `action + noise`; alternative to `revision`.
    revision_ratio: Option<f64>,
    #[serde(default = "default_max_revision_ratio")]
    max_revision_ratio: f64,
}

fn default_max_revision_ratio() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTokens {
    #[serde(default = "default_max_tokens")]
    max: usize,
    #[serde(default = "default_distinct")]
    max_distinct_actions: usize,
}

fn default_max_tokens() -> usize {
    10
}

fn default_distinct() -> usize {
    DEFAULT_MAX_DISTINCT_ACTIONS
}

impl Default for RawTokens {
    fn default() -> Self {
        RawTokens {
            max: default_max_tokens(),
            max_distinct_actions: default_distinct(),
        }
    }
}

/// Finite-population settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default = "default_agents")]
    pub agents: usize,
    /// Fraction of the horizon excluded from per-agent averages.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_agents() -> usize {
    1000
}

fn default_burn_in() -> f64 {
    0.5
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            agents: default_agents(),
            burn_in: default_burn_in(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(default)]
    objective: RawObjective,
    gamma: Option<f64>,
    rel_err: Option<f64>,
    tail_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawObjective {
    #[default]
    AvgReward,
    MinClassPlusAvg,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    #[serde(default)]
    protocol: ProtocolKind,
    horizon: Option<f64>,
    samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    mass: f64,
    actions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    file: Option<PathBuf>,
    od_file: Option<PathBuf>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    od: Vec<RawOd>,
    /// Converts normalized flow into the units of edge capacities.
    #[serde(default = "default_flow_scale")]
    flow_scale: f64,
    #[serde(default = "default_max_paths")]
    max_paths: usize,
}

fn default_flow_scale() -> f64 {
    1.0
}

fn default_max_paths() -> usize {
    3
}

/// Inline edge with an affine reward `intercept - slope * x`; paths rank by `-intercept`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    tail: usize,
    head: usize,
    intercept: f64,
    slope: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOd {
    origin: usize,
    destination: usize,
    mass: f64,
}

/// Simulation defaults carried by a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub protocol: ProtocolKind,
    pub horizon: f64,
    pub samples: usize,
}

/// A parsed scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub design: DesignConfig,
    pub simulation: SimulationConfig,
    pub population: PopulationConfig,
    pub heavy: bool,
    /// Non-fatal notes, such as path menus cut at the cap.
    pub warnings: Vec<String>,
    pub source: PathBuf,
}

/// Horizon used when a file sets none: fifty revision time units.
pub fn default_horizon(rates: &Rates) -> f64 {
    50.0 / rates.revision
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

/// Parses scenario text; relative network paths resolve against the directory of `path`.
pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioConfig> {
    let raw: RawFile =
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rates = rates(&raw.rates)?;
    let mut warnings = Vec::new();

    let (resources, classes) = match (
        &raw.network,
        raw.resources.is_empty(),
        raw.classes.is_empty(),
    ) {
        (Some(net), true, true) => network_game(net, base, &mut warnings)?,
        (None, false, false) => explicit_game(&raw.resources, &raw.classes)?,
        (Some(_), _, _) => {
            return Err(Error::Config(
                "give either [network] or resources and classes, not both".into(),
            ))
        }
        (None, _, _) => {
            return Err(Error::Config(
                "scenario needs [network] or both [[resources]] and [[classes]]".into(),
            ))
        }
    };

    let scenario = Scenario {
        name: raw.name.clone(),
        resources,
        classes,
        rates,
        max_tokens: raw.tokens.max,
        seed: raw.seed,
        population: Some(raw.population.agents),
        max_revision_ratio: raw.rates.max_revision_ratio,
    };
    let objective = match raw.solver.objective {
        RawObjective::AvgReward => Objective::AvgReward,
        RawObjective::MinClassPlusAvg => Objective::MinClassPlusAvg {
            gamma: raw.solver.gamma.unwrap_or(0.1),
        },
    };
    let defaults = DesignConfig::default();
    let design = DesignConfig {
        objective,
        rel_err: raw.solver.rel_err.unwrap_or(defaults.rel_err),
        tail_tol: raw.solver.tail_tol.unwrap_or(defaults.tail_tol),
        max_distinct_actions: raw.tokens.max_distinct_actions,
    };
    let simulation = SimulationConfig {
        protocol: raw.simulation.protocol,
        horizon: raw
            .simulation
            .horizon
            .unwrap_or_else(|| default_horizon(&rates)),
        samples: raw.simulation.samples.unwrap_or(200),
    };
    if !(simulation.horizon > 0.0) || simulation.samples == 0 {
        return Err(Error::Config(
            "simulation horizon and sample count must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&raw.population.burn_in) {
        return Err(Error::Config(
            "population burn-in must lie in [0, 1)".into(),
        ));
    }
    Ok(ScenarioConfig {
        scenario,
        design,
        simulation,
        population: raw.population,
        heavy: raw.heavy,
        warnings,
        source: path.to_path_buf(),
    })
}

fn rates(raw: &RawRates) -> Result<Rates> {
    let revision = match (raw.revision, raw.revision_ratio) {
        (Some(r), None) => r,
        (None, Some(q)) => q * (raw.action + raw.noise),
        (None, None) => 0.01 * (raw.action + raw.noise),
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set rates.revision or rates.revision_ratio, not both".into(),
            ))
        }
    };
    let out = Rates {
        action: raw.action,
        noise: raw.noise,
        revision,
    };
    if !(out.action > 0.0) || !(out.noise >= 0.0) || !(out.revision >= 0.0) {
        return Err(Error::Config(
            "rates must be nonnegative and the action rate positive".into(),
        ));
    }
    Ok(out)
}

fn explicit_game(
    rewards: &[RewardFn],
    raw: &[RawClass],
) -> Result<(Vec<Resource>, Vec<ClassSpec>)> {
    let resources: Vec<Resource> = rewards
        .iter()
        .cloned()
        .enumerate()
        .map(|(id, reward)| Resource { id, reward })
        .collect();
    let total: f64 = raw.iter().map(|c| c.mass).sum();
    let classes = raw
        .iter()
        .enumerate()
        .map(|(id, c)| {
            if !(c.mass > 0.0) {
                return Err(Error::Config(format!("class {id}: mass must be positive")));
            }
            let actions = c
                .actions
                .iter()
                .map(|a| {
                    if let Some(&r) = a.iter().find(|&&r| r >= resources.len()) {
                        return Err(Error::Config(format!("class {id}: unknown resource {r}")));
                    }
                    Action::new(a.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassSpec::new(id, c.mass / total, actions))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((resources, classes))
}

fn network_game(
    net: &RawNetwork,
    base: &Path,
    warnings: &mut Vec<String>,
) -> Result<(Vec<Resource>, Vec<ClassSpec>)> {
    let (network, resources) = match (&net.file, net.edges.is_empty()) {
        (Some(file), true) => {
            let network = load_network(&base.join(file))?;
            let resources = network
                .edges()
                .iter()
                .enumerate()
                .map(|(id, e)| Resource {
                    id,
                    reward: RewardFn::neg_bpr(
                        e.free_flow,
                        e.capacity,
                        e.b,
                        e.power,
                        net.flow_scale,
                    ),
                })
                .collect();
            (network, resources)
        }
        (None, false) => {
            let edges = net
                .edges
                .iter()
                .enumerate()
                .map(|(id, e)| Edge {
                    id,
                    tail: e.tail,
                    head: e.head,
                    free_flow: -e.intercept,
                    capacity: 1.0,
                    b: 0.0,
                    power: 1.0,
                })
                .collect();
            let resources = net
                .edges
                .iter()
                .enumerate()
                .map(|(id, e)| Resource {
                    id,
                    reward: RewardFn::affine(e.intercept, e.slope),
                })
                .collect();
            (Network::new(edges, None)?, resources)
        }
        _ => {
            return Err(Error::Config(
                "[network] needs exactly one of `file` or inline `edges`".into(),
            ))
        }
    };
    let ods: Vec<OdPair> = match (&net.od_file, net.od.is_empty()) {
        (Some(file), true) => load_od(&base.join(file))?,
        (None, false) => {
            let total: f64 = net.od.iter().map(|o| o.mass).sum();
            net.od
                .iter()
                .enumerate()
                .map(|(class, o)| OdPair {
                    class,
                    origin: o.origin,
                    destination: o.destination,
                    mass: o.mass / total,
                })
                .collect()
        }
        _ => {
            return Err(Error::Config(
                "[network] needs exactly one of `od_file` or inline `od`".into(),
            ))
        }
    };
    for od in &ods {
        if !network.has_node(od.origin) || !network.has_node(od.destination) {
            return Err(Error::Config(format!(
                "class {}: unknown node in OD pair",
                od.class
            )));
        }
    }
    let paths = enumerate_actions(&network, &ods, net.max_paths)?;
    let cut = paths.truncated.iter().filter(|&&t| t).count();
    if cut > 0 {
        warnings.push(format!(
            "{cut} of {} classes have more than {} paths; only the shortest are used",
            ods.len(),
            net.max_paths
        ));
    }
    let classes = ods
        .iter()
        .zip(paths.actions)
        .map(|(od, actions)| {
            let mut spec = ClassSpec::new(od.class, od.mass, actions);
            spec.od = Some((od.origin, od.destination));
            spec
        })
        .collect();
    Ok((resources, classes))
}
