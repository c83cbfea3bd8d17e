//! Command implementations. Each writes into `<out>/<scenario name>/` and prints a short summary.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use tollgate::design::{self, DesignResult, CERTIFICATE_TOLERANCE};
use tollgate::io::{self, TrajectoryRow};
use tollgate::meanfield::{
    integrate, Game, IntegrationOptions, RevisionProtocolSpec, StatePolicyDistribution,
};
use tollgate::metrics::{self, coefficient_of_variation, MetricsReport, Point};
use tollgate::model::{advisories, validate_scenario, Scenario};
use tollgate::population::{self, init_population, RunOptions};
use tollgate::scenario::{load_scenario, ScenarioConfig};

/// Certificate level whose first entry time is reported by mean-field runs.
const ENTRY_EPSILON: f64 = 1e-3;

/// Command failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error(transparent)]
    Library(#[from] tollgate::Error),
    /// A certificate or assumption check failed.
    #[error("{0}")]
    Check(String),
    /// Unusable inputs or options.
    #[error("{0}")]
    Input(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Library(e) if e.is_input_error() => 2,
            Failure::Input(_) => 2,
            Failure::Library(_) | Failure::Check(_) => 1,
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn load(path: &Path) -> Outcome<ScenarioConfig> {
    let cfg = load_scenario(path)?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn scenario_dir(out: &Path, cfg: &ScenarioConfig) -> PathBuf {
    out.join(&cfg.scenario.name)
}

fn check_assumptions(scenario: &Scenario) -> Outcome {
    for note in advisories(scenario) {
        eprintln!("note: {note}");
    }
    let diagnostics = validate_scenario(scenario);
    if diagnostics.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = diagnostics.iter().map(ToString::to_string).collect();
    Err(Failure::Check(lines.join("\n")))
}

pub fn validate(path: &Path) -> Outcome {
    let cfg = load(path)?;
    check_assumptions(&cfg.scenario)?;
    let s = &cfg.scenario;
    let ratio = s.rates.noise_ratio();
    println!(
        "{}: {} resources, {} classes",
        s.name,
        s.num_resources(),
        s.classes.len()
    );
    println!("noise/action = {ratio:.4} (must be below 0.25; intended to be small)");
    println!(
        "revision ratio = {:.4e} (bound {:.4e})",
        s.rates.revision_ratio(),
        s.max_revision_ratio
    );
    println!("ok");
    Ok(())
}

pub fn design(path: &Path, out: &Path) -> Outcome {
    let cfg = load(path)?;
    check_assumptions(&cfg.scenario)?;
    let (result, game) = design::design(&cfg.scenario, &cfg.design)?;
    let dir = scenario_dir(out, &cfg);
    io::write_json(&dir.join("design.json"), &result)?;
    io::write_tolls(&dir.join("tolls.csv"), &result.tolls, result.max_tokens)?;
    io::write_eta(&dir.join("eta.csv"), &game)?;
    println!(
        "tolls {:?}, alpha {:.6}, token cap {}",
        result.tolls, result.alpha, result.max_tokens
    );
    println!(
        "largest dual residual {:.3e}",
        result.max_certificate_residual()
    );
    println!(
        "candidate equilibrium certificate {:.3e}",
        result.candidate.epsilon
    );
    for c in result
        .decomposition
        .classes
        .iter()
        .filter(|c| c.pairs_capped)
    {
        eprintln!(
            "warning: class {} decomposition used only the largest-flow action pairs",
            c.class
        );
    }
    println!("wrote {}", dir.display());
    if result.max_certificate_residual() > CERTIFICATE_TOLERANCE {
        return Err(Failure::Check(format!(
            "dual certificate residual {:.3e} exceeds {CERTIFICATE_TOLERANCE:e}",
            result.max_certificate_residual()
        )));
    }
    Ok(())
}

pub struct SimulateOptions {
    pub scenario: PathBuf,
    pub population: bool,
    pub design: Option<PathBuf>,
    pub baseline: bool,
    pub seeds: Option<Vec<u64>>,
    pub agents: Option<usize>,
    pub horizon: Option<f64>,
    pub samples: Option<usize>,
    pub random_start: Option<u64>,
}

/// Horizon, sample stride, burn-in time and seeds shared by the designed and baseline runs.
struct Plan {
    horizon: f64,
    stride: f64,
    burn_in: f64,
    seeds: Vec<u64>,
    agents: usize,
    random_start: Option<u64>,
}

fn designed_scenario(
    cfg: &ScenarioConfig,
    design: Option<&Path>,
    out: &Path,
    required: bool,
) -> Outcome<Option<Scenario>> {
    let path = design
        .map(Path::to_path_buf)
        .unwrap_or_else(|| scenario_dir(out, cfg).join("design.json"));
    if !path.exists() {
        if required || design.is_some() {
            return Err(Failure::Input(format!(
                "no design result at {}; run `tollgate design` first or pass --baseline-zero-tolls",
                path.display()
            )));
        }
        return Ok(None);
    }
    let result: DesignResult = io::read_json(&path)?;
    Ok(Some(result.apply(&cfg.scenario)?))
}

/// The scenario with every toll zero and the file's token cap.
pub fn baseline_scenario(scenario: &Scenario) -> Outcome<Scenario> {
    Ok(scenario.with_tolls(&scenario.zero_tolls(), scenario.max_tokens)?)
}

pub fn simulate(opts: &SimulateOptions, out: &Path) -> Outcome {
    let cfg = load(&opts.scenario)?;
    let designed = designed_scenario(&cfg, opts.design.as_deref(), out, !opts.baseline)?;
    let horizon = opts.horizon.unwrap_or(cfg.simulation.horizon);
    let samples = opts.samples.unwrap_or(cfg.simulation.samples);
    if !(horizon > 0.0) || samples == 0 {
        return Err(Failure::Input(
            "horizon and sample count must be positive".into(),
        ));
    }
    let plan = Plan {
        horizon,
        stride: horizon / samples as f64,
        burn_in: cfg.population.burn_in * horizon,
        seeds: opts
            .seeds
            .clone()
            .unwrap_or_else(|| cfg.population.seeds.clone()),
        agents: opts.agents.unwrap_or(cfg.population.agents),
        random_start: opts.random_start,
    };
    if opts.population && (plan.seeds.is_empty() || plan.agents == 0) {
        return Err(Failure::Input(
            "population mode needs at least one seed and one agent".into(),
        ));
    }
    let mode = if opts.population {
        "population"
    } else {
        "meanfield"
    };
    let root = scenario_dir(out, &cfg).join(mode);
    let mut runs = Vec::new();
    if let Some(s) = designed {
        runs.push(("designed", s));
    }
    if opts.baseline {
        runs.push(("baseline", baseline_scenario(&cfg.scenario)?));
    }
    let mut summaries = Vec::new();
    for (label, scenario) in &runs {
        let dir = root.join(label);
        let reports = if opts.population {
            simulate_population(&cfg, scenario, &plan, &dir)?
        } else {
            vec![simulate_meanfield(&cfg, scenario, &plan, &dir)?]
        };
        summaries.push((*label, dir, reports));
    }
    if let [(_, dir, designed), (_, _, baseline)] = summaries.as_mut_slice() {
        for (d, b) in designed.iter_mut().zip(baseline.iter()) {
            *d = d.clone().with_baseline(b);
            let name = match d.seed {
                Some(seed) => format!("seed-{seed}/metrics.json"),
                None => "metrics.json".into(),
            };
            io::write_json(&dir.join(name), d)?;
        }
        let (d, b) = (mean_objective(designed), mean_objective(baseline));
        let gain = metrics::relative_gain(d, b);
        println!("objective gain over zero tolls: {:.2}%", 100.0 * gain);
        io::write_json(
            &root.join("comparison.json"),
            &Comparison {
                designed: d,
                baseline: b,
                relative_gain: gain,
            },
        )?;
    }
    for (label, dir, reports) in &summaries {
        if opts.population {
            let agg = metrics::aggregate(reports);
            io::write_json(&dir.join("aggregate.json"), &agg)?;
            println!(
                "{label}: objective {:.6} ± {:.6} over {} seeds, largest dispersion {:.4}",
                agg.objective.mean,
                agg.objective.std,
                agg.replicas,
                agg.max_dispersion.unwrap_or(0.0)
            );
        } else {
            let r = &reports[0];
            println!(
                "{label}: objective {:.6}, efficiency {:.6}, worst class {:.6}, certificate {:.3e}",
                r.objective,
                r.efficiency,
                r.fairness,
                r.epsilon.unwrap_or(f64::NAN)
            );
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Comparison {
    designed: f64,
    baseline: f64,
    relative_gain: f64,
}

fn mean_objective(reports: &[MetricsReport]) -> f64 {
    reports.iter().map(|r| r.objective).sum::<f64>() / reports.len() as f64
}

fn protocol(cfg: &ScenarioConfig, game: &Game) -> RevisionProtocolSpec {
    RevisionProtocolSpec::new(cfg.simulation.protocol, game.scenario(), game.families())
}

fn simulate_meanfield(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    plan: &Plan,
    dir: &Path,
) -> Outcome<MetricsReport> {
    let game = Game::new(scenario.clone(), cfg.design.max_distinct_actions)?;
    let mu0 = match plan.random_start {
        Some(seed) => game.random_initial(&mut ChaCha8Rng::seed_from_u64(seed)),
        None => game.default_initial(),
    };
    let traj = integrate(
        &game,
        &protocol(cfg, &game),
        &mu0,
        &IntegrationOptions::new(plan.horizon, plan.stride),
    )?;
    let rows: Vec<TrajectoryRow> = traj.samples.iter().map(TrajectoryRow::from).collect();
    io::write_trajectory(&dir.join("trajectory.csv"), scenario, &rows)?;
    let points: Vec<Point> = rows.iter().map(TrajectoryRow::point).collect();
    let mut report = metrics::summarize(scenario, cfg.design.objective, &points, plan.burn_in)?;
    report.epsilon = Some(traj.last().epsilon);
    match traj.first_entry(ENTRY_EPSILON) {
        Some(t) => println!(
            "{}: certificate first at or below {ENTRY_EPSILON:e} at t = {t}",
            scenario.name
        ),
        None => println!(
            "{}: certificate stayed above {ENTRY_EPSILON:e} over the horizon",
            scenario.name
        ),
    }
    io::write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

fn simulate_population(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    plan: &Plan,
    dir: &Path,
) -> Outcome<Vec<MetricsReport>> {
    let game = Game::new(scenario.clone(), cfg.design.max_distinct_actions)?;
    let spec = protocol(cfg, &game);
    let mu0 = game.default_initial();
    let mut opts = RunOptions::new(plan.horizon, plan.stride);
    opts.burn_in = cfg.population.burn_in;
    // Replicas are independent; each runs on its own thread and results are collected in seed order.
    let runs: Vec<tollgate::Result<population::PopulationRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .seeds
            .iter()
            .map(|&seed| {
                let (game, spec, mu0, opts) = (&game, &spec, &mu0, &opts);
                scope.spawn(move || {
                    population::run(
                        init_population(game, plan.agents, mu0, seed)?,
                        game,
                        spec,
                        opts,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect()
    });
    let mut reports = Vec::new();
    for (&seed, run) in plan.seeds.iter().zip(runs) {
        let run = run?;
        let seed_dir = dir.join(format!("seed-{seed}"));
        let rows: Vec<TrajectoryRow> = run.samples.iter().map(TrajectoryRow::from).collect();
        io::write_trajectory(&seed_dir.join("trajectory.csv"), scenario, &rows)?;
        io::write_agents(&seed_dir.join("agents.csv"), &io::agent_rows(&run.agents))?;
        let points: Vec<Point> = rows.iter().map(TrajectoryRow::point).collect();
        let mut report = metrics::summarize(scenario, cfg.design.objective, &points, plan.burn_in)?;
        report.epsilon = rows.last().map(|r| r.epsilon);
        report.dispersion = Some(
            (0..scenario.classes.len())
                .map(|c| coefficient_of_variation(&run.class_averages(c)))
                .collect(),
        );
        report.seed = Some(seed);
        io::write_json(&seed_dir.join("metrics.json"), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

pub struct CompareOptions {
    pub scenario: PathBuf,
    pub design: Option<PathBuf>,
    pub agents: Vec<usize>,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
}

/// One row of the convergence table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceRow {
    pub agents: usize,
    pub sup_distance: f64,
}

/// Every class starts on its first policy with a half-full wallet.
fn concentrated_start(game: &Game) -> StatePolicyDistribution {
    let mut mu = game.empty_distribution();
    for (c, class) in game.scenario().classes.iter().enumerate() {
        mu.policy_row_mut(c, 0)[game.scenario().max_tokens / 2] = class.mass;
    }
    mu
}

pub fn compare(opts: &CompareOptions, out: &Path) -> Outcome {
    let cfg = load(&opts.scenario)?;
    if opts.agents.is_empty()
        || opts.agents.contains(&0)
        || !(opts.horizon > 0.0)
        || opts.samples == 0
    {
        return Err(Failure::Input(
            "need positive population sizes, horizon and sample count".into(),
        ));
    }
    let scenario =
        designed_scenario(&cfg, opts.design.as_deref(), out, true)?.expect("required design");
    let game = Game::new(scenario, cfg.design.max_distinct_actions)?;
    let spec = protocol(&cfg, &game);
    let mu0 = concentrated_start(&game);
    let stride = opts.horizon / opts.samples as f64;
    let mut mf_opts = IntegrationOptions::new(opts.horizon, stride);
    mf_opts.keep_states = true;
    mf_opts.certify_samples = false;
    let mf = integrate(&game, &spec, &mu0, &mf_opts)?;
    let mut run_opts = RunOptions::new(opts.horizon, stride);
    run_opts.keep_states = true;
    let distances: Vec<tollgate::Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = opts
            .agents
            .iter()
            .map(|&n| {
                let (game, spec, mu0, run_opts, mf) = (&game, &spec, &mu0, &run_opts, &mf);
                scope.spawn(move || {
                    let run = population::run(
                        init_population(game, n, mu0, opts.seed)?,
                        game,
                        spec,
                        run_opts,
                    )?;
                    Ok(population::compare_to_meanfield(&run, mf)?.sup)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep thread panicked"))
            .collect()
    });
    let rows: Vec<DistanceRow> = opts
        .agents
        .iter()
        .zip(distances)
        .map(|(&agents, d)| {
            d.map(|sup_distance| DistanceRow {
                agents,
                sup_distance,
            })
        })
        .collect::<tollgate::Result<_>>()?;
    let dir = scenario_dir(out, &cfg).join("compare");
    io::write_rows(&dir.join("distances.csv"), "distances", &rows)?;
    for r in &rows {
        println!("N = {:>8}  sup distance {:.4}", r.agents, r.sup_distance);
    }
    if rows.len() < 2 {
        return Ok(());
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.agents);
    let decreasing = sorted
        .windows(2)
        .all(|w| w[1].sup_distance < w[0].sup_distance);
    println!(
        "{}",
        if decreasing {
            "distance strictly decreasing in N"
        } else {
            "distance NOT strictly decreasing in N"
        }
    );
    if decreasing {
        Ok(())
    } else {
        Err(Failure::Check(
            "distance to the mean field does not shrink with the population size".into(),
        ))
    }
}
