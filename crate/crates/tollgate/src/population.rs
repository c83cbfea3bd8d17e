//! Finite-population simulation: every agent carries a wallet and a policy and acts on
//! its own Poisson clocks.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{
    msne_certificate, Game, PayoffVector, ProtocolKind, RevisionProtocolSpec,
    StatePolicyDistribution, Trajectory,
};
use crate::model::FlowVector;
use crate::wallet::{action_kernel, noise_kernel};

/// One agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub class: usize,
    pub tokens: usize,
    pub policy: usize,
    /// Reward collected at action events after the burn-in time.
    pub reward_sum: f64,
    /// Action events after the burn-in time.
    pub actions: u64,
}

impl AgentState {
    /// Long-run average reward per action, or `None` before the first counted action.
    pub fn average_reward(&self) -> Option<f64> {
        (self.actions > 0).then(|| self.reward_sum / self.actions as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Action,
    Noise,
    Revision,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub action: u64,
    pub noise: u64,
    pub revision: u64,
}

impl EventCounts {
    pub fn total(&self) -> u64 {
        self.action + self.noise + self.revision
    }
}

/// Agents, clock and bookkeeping for one simulation run.
#[derive(Debug, Clone)]
pub struct PopulationState {
    agents: Vec<AgentState>,
    time: f64,
    rng: ChaCha8Rng,
    events: EventCounts,
    /// Agents per class.
    class_counts: Vec<usize>,
    /// Agents per class and policy.
    policy_counts: Vec<Vec<usize>>,
    /// Agents per class currently choosing each action.
    action_counts: Vec<Vec<usize>>,
    /// Agents whose current action uses each resource.
    resource_counts: Vec<usize>,
    /// Rewards at or after this time count toward per-agent averages.
    record_from: f64,
}

/// Largest-remainder split of `n` agents by class mass.
pub fn class_counts(masses: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = masses.iter().sum();
    let quotas: Vec<f64> = masses.iter().map(|m| m / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let missing = n - counts.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        counts[c] += 1;
    }
    counts
}

/// Samples `n` agents from `mu0`: class sizes by largest remainder, then `(k, u)` i.i.d. per class.
pub fn init_population(
    game: &Game,
    n: usize,
    mu0: &StatePolicyDistribution,
    seed: u64,
) -> Result<PopulationState> {
    let scenario = game.scenario();
    if n < scenario.classes.len() {
        return Err(Error::Invalid(format!(
            "{n} agents cannot cover {} classes",
            scenario.classes.len()
        )));
    }
    mu0.check_masses(scenario, 1e-8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses: Vec<f64> = scenario.classes.iter().map(|c| c.mass).collect();
    let counts = class_counts(&masses, n);
    let tokens = game.tokens();
    let mut agents = Vec::with_capacity(n);
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let weights = class_cells(mu0, c);
        let pick = WeightedIndex::new(weights)
            .map_err(|e| Error::Invalid(format!("class {c} initial law: {e}")))?;
        for _ in 0..count {
            let cell = pick.sample(&mut rng);
            agents.push(AgentState {
                class: c,
                tokens: cell % tokens,
                policy: cell / tokens,
                reward_sum: 0.0,
                actions: 0,
            });
        }
    }
    Ok(PopulationState::from_agents(game, agents, rng))
}

fn class_cells(mu: &StatePolicyDistribution, class: usize) -> Vec<f64> {
    (0..mu.num_policies(class))
        .flat_map(|u| mu.policy_row(class, u).iter().copied())
        .collect()
}

impl PopulationState {
    fn from_agents(game: &Game, agents: Vec<AgentState>, rng: ChaCha8Rng) -> Self {
        let scenario = game.scenario();
        let mut state = PopulationState {
            time: 0.0,
            rng,
            events: EventCounts::default(),
            class_counts: vec![0; scenario.classes.len()],
            policy_counts: game.families().iter().map(|f| vec![0; f.len()]).collect(),
            action_counts: scenario
                .classes
                .iter()
                .map(|c| vec![0; c.actions.len()])
                .collect(),
            resource_counts: vec![0; scenario.num_resources()],
            record_from: 0.0,
            agents: Vec::new(),
        };
        for agent in &agents {
            state.class_counts[agent.class] += 1;
            state.policy_counts[agent.class][agent.policy] += 1;
            let a = current_action(game, agent);
            state.adjust_action(game, agent.class, a, true);
        }
        state.agents = agents;
        state
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> EventCounts {
        self.events
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Rewards at or after `t` count toward per-agent averages.
    pub fn record_from(&mut self, t: f64) {
        self.record_from = t;
    }

    fn adjust_action(&mut self, game: &Game, class: usize, action: usize, add: bool) {
        let resources = game.scenario().classes[class].actions[action].resources();
        if add {
            self.action_counts[class][action] += 1;
            resources.iter().for_each(|&r| self.resource_counts[r] += 1);
        } else {
            self.action_counts[class][action] -= 1;
            resources.iter().for_each(|&r| self.resource_counts[r] -= 1);
        }
    }

    /// Mass carried by one agent.
    fn unit(&self, game: &Game) -> f64 {
        game.scenario().total_mass() / self.agents.len() as f64
    }

    /// Empirical resource utilization.
    pub fn sigma(&self, game: &Game) -> FlowVector {
        let scale = game.scenario().rates.action * self.unit(game);
        FlowVector(
            self.resource_counts
                .iter()
                .map(|&n| n as f64 * scale)
                .collect(),
        )
    }

    /// Empirical state-policy distribution (each agent carries mass `M / N`).
    pub fn empirical_distribution(&self, game: &Game) -> StatePolicyDistribution {
        let mut mu = game.empty_distribution();
        let unit = self.unit(game);
        for a in &self.agents {
            mu.policy_row_mut(a.class, a.policy)[a.tokens] += unit;
        }
        mu
    }

    /// Average current reward per class at the empirical flows.
    pub fn class_rewards(&self, game: &Game) -> Vec<f64> {
        let sigma = self.sigma(game);
        let rewards = game.action_rewards(&sigma);
        self.action_counts
            .iter()
            .zip(&rewards)
            .zip(&self.class_counts)
            .map(|((counts, w), &n)| {
                let total: f64 = counts.iter().zip(w).map(|(&k, w)| k as f64 * w).sum();
                if n == 0 {
                    f64::NAN
                } else {
                    total / n as f64
                }
            })
            .collect()
    }

    /// Time to the next event and the event it would be, without applying it.
    fn draw_event(&mut self, game: &Game) -> (f64, usize, EventKind) {
        let rates = game.scenario().rates;
        let total = rates.action + rates.noise + rates.revision;
        let n = self.agents.len();
        let gap = Exp::new(n as f64 * total)
            .expect("positive event rate")
            .sample(&mut self.rng);
        let agent = self.rng.gen_range(0..n);
        let pick = self.rng.gen::<f64>() * total;
        let kind = if pick < rates.action {
            EventKind::Action
        } else if pick < rates.action + rates.noise {
            EventKind::Noise
        } else {
            EventKind::Revision
        };
        (gap, agent, kind)
    }

    /// Advances the clock and applies one event.
    pub fn step_event(
        &mut self,
        game: &Game,
        protocol: &RevisionProtocolSpec,
    ) -> Result<EventKind> {
        let (gap, agent, kind) = self.draw_event(game);
        self.time += gap;
        self.apply(game, protocol, agent, kind)?;
        Ok(kind)
    }

    fn apply(
        &mut self,
        game: &Game,
        protocol: &RevisionProtocolSpec,
        i: usize,
        kind: EventKind,
    ) -> Result<()> {
        let scenario = game.scenario();
        let c = self.agents[i].class;
        let before = current_action(game, &self.agents[i]);
        match kind {
            EventKind::Action => {
                self.events.action += 1;
                let toll = scenario.classes[c].tolls[before];
                if self.time >= self.record_from {
                    let reward = scenario
                        .action_reward(&scenario.classes[c].actions[before], &self.sigma(game));
                    self.agents[i].reward_sum += reward;
                    self.agents[i].actions += 1;
                }
                self.agents[i].tokens =
                    action_kernel(self.agents[i].tokens, toll, scenario.max_tokens)?;
            }
            EventKind::Noise => {
                self.events.noise += 1;
                self.agents[i].tokens = noise_kernel(self.agents[i].tokens, scenario.max_tokens);
            }
            EventKind::Revision => {
                self.events.revision += 1;
                if let Some(v) = self.revise(game, protocol, i) {
                    let u = self.agents[i].policy;
                    self.policy_counts[c][u] -= 1;
                    self.policy_counts[c][v] += 1;
                    self.agents[i].policy = v;
                }
            }
        }
        let after = current_action(game, &self.agents[i]);
        if after != before {
            self.adjust_action(game, c, before, false);
            self.adjust_action(game, c, after, true);
        }
        Ok(())
    }

    /// Target policy of a revision, or `None` to keep the current one.
    fn revise(&mut self, game: &Game, protocol: &RevisionProtocolSpec, i: usize) -> Option<usize> {
        let rate = protocol.rate;
        if !(rate > 0.0) {
            return None;
        }
        let (c, u) = (self.agents[i].class, self.agents[i].policy);
        let payoffs = self.payoffs(game, c);
        let scale = protocol.scales[c];
        let class_size = self.class_counts[c] as f64;
        let mut target = self.rng.gen::<f64>() * rate;
        for (v, &fv) in payoffs.iter().enumerate() {
            let gain = (fv - payoffs[u]).max(0.0);
            if v == u || gain == 0.0 {
                continue;
            }
            let weight = match protocol.kind {
                ProtocolKind::Pairwise => 1.0,
                ProtocolKind::Imitative => self.policy_counts[c][v] as f64 / class_size,
            };
            target -= scale * weight * gain;
            if target < 0.0 {
                return Some(v);
            }
        }
        None
    }

    /// Policy payoffs of class `c` at the empirical flows.
    fn payoffs(&self, game: &Game, c: usize) -> Vec<f64> {
        let sigma = self.sigma(game);
        let class = &game.scenario().classes[c];
        let rewards: Vec<f64> = class
            .actions
            .iter()
            .map(|a| game.scenario().action_reward(a, &sigma))
            .collect();
        (0..game.families()[c].len())
            .map(|u| {
                game.action_frequencies(c, u)
                    .iter()
                    .map(|&(a, g)| g * rewards[a])
                    .sum()
            })
            .collect()
    }

    /// Policy payoffs of every class at the empirical flows.
    pub fn payoff_vector(&self, game: &Game) -> PayoffVector {
        (0..game.families().len())
            .map(|c| self.payoffs(game, c))
            .collect()
    }
}

fn current_action(game: &Game, agent: &AgentState) -> usize {
    game.families()[agent.class].policies()[agent.policy].action_at(agent.tokens)
}

/// Settings for [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    pub sample_every: f64,
    /// Fraction of the horizon excluded from per-agent averages.
    pub burn_in: f64,
    /// Keep the empirical distribution at each sample.
    pub keep_states: bool,
}

impl RunOptions {
    pub fn new(t_end: f64, sample_every: f64) -> Self {
        RunOptions {
            t_end,
            sample_every,
            burn_in: 0.5,
            keep_states: false,
        }
    }
}

/// Empirical quantities at one sample time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSample {
    pub t: f64,
    pub sigma: Vec<f64>,
    pub class_rewards: Vec<f64>,
    /// Potential of the empirical policy masses.
    pub potential: f64,
    /// Equilibrium certificate of the empirical distribution.
    pub epsilon: f64,
    #[serde(skip)]
    pub state: Option<StatePolicyDistribution>,
}

/// Result of a population run.
#[derive(Debug, Clone)]
pub struct PopulationRun {
    pub samples: Vec<PopulationSample>,
    pub agents: Vec<AgentState>,
    pub events: EventCounts,
    /// Start of the window used for per-agent averages.
    pub burn_in_time: f64,
}

impl PopulationRun {
    /// Per-agent average rewards of one class, skipping agents without counted actions.
    pub fn class_averages(&self, class: usize) -> Vec<f64> {
        self.agents
            .iter()
            .filter(|a| a.class == class)
            .filter_map(AgentState::average_reward)
            .collect()
    }
}

/// Runs the event loop to `opts.t_end`, sampling on the grid `0, stride, 2 stride, ...`.
///
/// The state is piecewise constant between events, so a sample at time `s` records the
/// state left by the last event before `s`.
pub fn run(
    mut state: PopulationState,
    game: &Game,
    protocol: &RevisionProtocolSpec,
    opts: &RunOptions,
) -> Result<PopulationRun> {
    if !(opts.t_end > 0.0) || !(opts.sample_every > 0.0) || !(0.0..1.0).contains(&opts.burn_in) {
        return Err(Error::Invalid(
            "horizon and stride must be positive and burn-in in [0, 1)".into(),
        ));
    }
    let burn_in_time = opts.burn_in * opts.t_end;
    state.record_from(burn_in_time);
    let grid = sample_grid(opts.t_end, opts.sample_every);
    let mut samples = Vec::with_capacity(grid.len());
    let mut next = 0;
    loop {
        let (gap, agent, kind) = state.draw_event(game);
        let t_next = state.time + gap;
        while next < grid.len() && grid[next] <= t_next {
            let mu = state.empirical_distribution(game);
            samples.push(PopulationSample {
                t: grid[next],
                sigma: state.sigma(game).0,
                class_rewards: state.class_rewards(game),
                potential: game.potential(&mu.policy_masses()),
                epsilon: msne_certificate(game, &mu)?.epsilon,
                state: opts.keep_states.then_some(mu),
            });
            next += 1;
        }
        if t_next > opts.t_end {
            break;
        }
        state.time = t_next;
        state.apply(game, protocol, agent, kind)?;
    }
    Ok(PopulationRun {
        samples,
        agents: state.agents,
        events: state.events,
        burn_in_time,
    })
}

/// Sample times `0, stride, ...` up to and including `t_end`.
pub fn sample_grid(t_end: f64, stride: f64) -> Vec<f64> {
    let n = (t_end / stride * (1.0 + 1e-12)).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|j| (j as f64 * stride).min(t_end)).collect();
    if grid.last().is_some_and(|&t| t < t_end * (1.0 - 1e-12)) {
        grid.push(t_end);
    }
    grid
}

/// Sup-norm over sample times of the L1 distance between the empirical and mean-field laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub sup: f64,
}

pub fn compare_to_meanfield(
    population: &PopulationRun,
    meanfield: &Trajectory,
) -> Result<Comparison> {
    let pop: Vec<(f64, &StatePolicyDistribution)> = population
        .samples
        .iter()
        .filter_map(|s| s.state.as_ref().map(|m| (s.t, m)))
        .collect();
    let mf: Vec<(f64, &StatePolicyDistribution)> = meanfield
        .samples
        .iter()
        .filter_map(|s| s.state.as_ref().map(|m| (s.t, m)))
        .collect();
    compare_states(&pop, &mf)
}

/// Distances between two sampled state sequences on a common time grid.
pub fn compare_states(
    a: &[(f64, &StatePolicyDistribution)],
    b: &[(f64, &StatePolicyDistribution)],
) -> Result<Comparison> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} stored states",
            a.len(),
            b.len()
        )));
    }
    let mut times = Vec::with_capacity(a.len());
    let mut distances = Vec::with_capacity(a.len());
    for (&(ta, ma), &(tb, mb)) in a.iter().zip(b) {
        if (ta - tb).abs() > 1e-9 * ta.abs().max(tb.abs()).max(1.0) {
            return Err(Error::GridMismatch(format!("t = {ta} vs t = {tb}")));
        }
        times.push(ta);
        distances.push(ma.l1_distance(mb)?);
    }
    let sup = distances.iter().copied().fold(0.0, f64::max);
    Ok(Comparison {
        times,
        distances,
        sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::tests::tolled_pigou;
    use crate::model::sigma_from_distribution;

    fn pigou_protocol(game: &Game) -> RevisionProtocolSpec {
        RevisionProtocolSpec::new(ProtocolKind::Pairwise, game.scenario(), game.families())
    }

    #[test]
    fn largest_remainder_split() {
        assert_eq!(class_counts(&[0.3, 0.7], 10), vec![3, 7]);
        assert_eq!(class_counts(&[1.0 / 3.0; 3], 10).iter().sum::<usize>(), 10);
        assert_eq!(class_counts(&[0.25, 0.25, 0.5], 3), vec![1, 1, 1]);
        assert_eq!(class_counts(&[0.2, 0.3, 0.5], 4), vec![1, 1, 2]);
    }

    #[test]
    fn single_agent_from_point_mass() {
        let game = tolled_pigou(6);
        let mut mu = game.empty_distribution();
        mu.policy_row_mut(0, 1)[4] = 1.0;
        let state = init_population(&game, 1, &mu, 3).unwrap();
        assert_eq!(state.agents().len(), 1);
        assert_eq!((state.agents()[0].tokens, state.agents()[0].policy), (4, 1));
    }

    #[test]
    fn too_few_agents_for_classes() {
        let game = tolled_pigou(6);
        let mut s = game.scenario().clone();
        s.classes.push(s.classes[0].clone());
        s.classes[0].mass = 0.5;
        s.classes[1].mass = 0.5;
        s.classes[1].id = 1;
        let game = Game::new(s, 2).unwrap();
        let err = init_population(&game, 1, &game.default_initial(), 1).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn empirical_law_matches_recount() {
        let game = tolled_pigou(8);
        let state = init_population(&game, 500, &game.default_initial(), 5).unwrap();
        let mu = state.empirical_distribution(&game);
        for u in 0..game.families()[0].len() {
            for k in 0..game.tokens() {
                let count = state
                    .agents()
                    .iter()
                    .filter(|a| a.policy == u && a.tokens == k)
                    .count();
                assert!((mu.class(0).get(k, u) - count as f64 / 500.0).abs() < 1e-15);
            }
        }
        let direct = sigma_from_distribution(game.scenario(), game.families(), &mu).unwrap();
        for (a, b) in state.sigma(&game).0.iter().zip(&direct.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_sample_is_close_to_initial_law() {
        let game = tolled_pigou(8);
        let mu0 = game.default_initial();
        let state = init_population(&game, 10_000, &mu0, 7).unwrap();
        let mu = state.empirical_distribution(&game);
        // 9 policies x 9 wallet levels: the expected L1 error is about sqrt(81 / 10^4).
        assert!(mu.l1_distance(&mu0).unwrap() < 0.15);
    }

    #[test]
    fn no_revisions_at_zero_revision_rate() {
        let mut s = tolled_pigou(6).scenario().clone();
        s.rates.revision = 0.0;
        let game = Game::new(s, 2).unwrap();
        let spec = pigou_protocol(&game);
        let mut state = init_population(&game, 20, &game.default_initial(), 1).unwrap();
        for _ in 0..2000 {
            assert_ne!(state.step_event(&game, &spec).unwrap(), EventKind::Revision);
        }
        assert_eq!(state.events().revision, 0);
    }

    #[test]
    fn free_policy_wallet_climbs_to_cap() {
        let mut s = tolled_pigou(5).scenario().clone();
        s.rates.revision = 0.0;
        let game = Game::new(s, 2).unwrap();
        let spec = pigou_protocol(&game);
        let earning = game.families()[0]
            .policies()
            .iter()
            .position(|p| p.actions().iter().all(|&a| a == 0))
            .unwrap();
        let mut mu = game.empty_distribution();
        mu.policy_row_mut(0, earning)[0] = 1.0;
        let mut state = init_population(&game, 1, &mu, 2).unwrap();
        let mut last = 0;
        for _ in 0..200 {
            state.step_event(&game, &spec).unwrap();
            let k = state.agents()[0].tokens;
            assert!(k >= last);
            last = k;
        }
        assert_eq!(last, game.scenario().max_tokens);
    }

    #[test]
    fn event_mix_matches_rates() {
        let game = tolled_pigou(8);
        let mut s = game.scenario().clone();
        s.rates.revision = 0.05;
        let game = Game::new(s, 2).unwrap();
        let spec = pigou_protocol(&game);
        let mut state = init_population(&game, 100, &game.default_initial(), 9).unwrap();
        let n = 100_000;
        for _ in 0..n {
            state.step_event(&game, &spec).unwrap();
        }
        let r = game.scenario().rates;
        let total = r.action + r.noise + r.revision;
        let e = state.events();
        for (count, rate) in [
            (e.action, r.action),
            (e.noise, r.noise),
            (e.revision, r.revision),
        ] {
            let p = rate / total;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - n as f64 * p).abs() <= 3.0 * sd,
                "{count} vs {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn event_gaps_are_exponential() {
        // Kolmogorov-Smirnov against Exp(N * total rate); the 1% critical value is 1.628 / sqrt(n).
        let game = tolled_pigou(8);
        let spec = pigou_protocol(&game);
        let mut state = init_population(&game, 50, &game.default_initial(), 13).unwrap();
        let n = 10_000;
        let mut gaps = Vec::with_capacity(n);
        for _ in 0..n {
            let t0 = state.time();
            state.step_event(&game, &spec).unwrap();
            gaps.push(state.time() - t0);
        }
        gaps.sort_by(f64::total_cmp);
        let lambda = 50.0 * game.scenario().rates.jump() + 50.0 * game.scenario().rates.revision;
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-lambda * x).exp();
                (cdf - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn wallets_stay_in_bounds_and_masses_are_fixed() {
        let game = tolled_pigou(10);
        let mut s = game.scenario().clone();
        s.rates.revision = 0.1;
        let game = Game::new(s, 2).unwrap();
        let spec = pigou_protocol(&game);
        let mut state = init_population(&game, 200, &game.default_initial(), 4).unwrap();
        for _ in 0..20_000 {
            state.step_event(&game, &spec).unwrap();
            assert!(state
                .agents()
                .iter()
                .all(|a| a.tokens <= game.scenario().max_tokens));
        }
        let mu = state.empirical_distribution(&game);
        assert!((mu.class_mass(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reruns_are_identical() {
        let game = tolled_pigou(8);
        let spec = pigou_protocol(&game);
        let go = || {
            let state = init_population(&game, 300, &game.default_initial(), 21).unwrap();
            run(state, &game, &spec, &RunOptions::new(20.0, 2.0)).unwrap()
        };
        let (a, b) = (go(), go());
        assert_eq!(a.agents, b.agents);
        assert_eq!(a.events, b.events);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.sigma, y.sigma);
        }
    }

    #[test]
    fn sample_grid_includes_both_ends() {
        assert_eq!(sample_grid(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(sample_grid(1.0, 0.3).last(), Some(&1.0));
    }

    #[test]
    fn identical_states_compare_to_zero() {
        let game = tolled_pigou(8);
        let mu = game.default_initial();
        let seq = vec![(0.0, &mu), (1.0, &mu)];
        let cmp = compare_states(&seq, &seq).unwrap();
        assert_eq!(cmp.sup, 0.0);
        let short = vec![(0.0, &mu)];
        assert!(matches!(
            compare_states(&seq, &short),
            Err(Error::GridMismatch(_))
        ));
    }
}
