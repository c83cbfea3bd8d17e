use serde::{Deserialize, Serialize};

use super::kernels::{fast_sum, revision_row, rk_finish, rk_stage};
use super::{msne_certificate, Game, RevisionProtocolSpec, StatePolicyDistribution};
use crate::error::{Error, Result};
use crate::meanfield::ProtocolKind;
use crate::model::FlowVector;

/// Right-hand side of the mean-field ODE for one game and revision protocol.
pub struct Dynamics<'a> {
    game: &'a Game,
    protocol: &'a RevisionProtocolSpec,
    /// Per class and policy: `(action, start, end)` token intervals.
    segments: Vec<Vec<Vec<(usize, usize, usize)>>>,
    offsets: Vec<usize>,
    tokens: usize,
}

#[derive(Default)]
struct Scratch {
    below_mass: Vec<f64>,
    below_weighted: Vec<f64>,
    /// Per class, policies by increasing payoff from the previous call.
    orders: Vec<Vec<usize>>,
}

/// Sorts `order` by `(payoff, index)`; cheap when the order is already nearly sorted.
fn resort(order: &mut Vec<usize>, f: &[f64]) {
    if order.len() != f.len() {
        order.clear();
        order.extend(0..f.len());
    }
    let before = |a: usize, b: usize| f[a] < f[b] || (f[a] == f[b] && a < b);
    for i in 1..order.len() {
        let u = order[i];
        let mut j = i;
        while j > 0 && before(u, order[j - 1]) {
            order[j] = order[j - 1];
            j -= 1;
        }
        order[j] = u;
    }
}

impl<'a> Dynamics<'a> {
    pub fn new(game: &'a Game, protocol: &'a RevisionProtocolSpec) -> Self {
        let tokens = game.tokens();
        let segments = game
            .families()
            .iter()
            .map(|f| {
                f.policies()
                    .iter()
                    .map(|p| {
                        let segs = p.segments();
                        segs.iter()
                            .enumerate()
                            .map(|(i, &(a, s))| (a, s, segs.get(i + 1).map_or(tokens, |n| n.1)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut offsets = vec![0];
        for f in game.families() {
            offsets.push(offsets.last().unwrap() + f.len() * tokens);
        }
        Dynamics {
            game,
            protocol,
            segments,
            offsets,
            tokens,
        }
    }

    pub fn game(&self) -> &Game {
        self.game
    }

    fn sigma(&self, mu: &[f64]) -> FlowVector {
        let scenario = self.game.scenario();
        let mut sigma = vec![0.0; scenario.num_resources()];
        for (c, class) in scenario.classes.iter().enumerate() {
            let base = self.offsets[c];
            let mut masses = vec![0.0; class.actions.len()];
            for (u, segs) in self.segments[c].iter().enumerate() {
                let row = &mu[base + u * self.tokens..base + (u + 1) * self.tokens];
                for &(a, s, e) in segs {
                    masses[a] += fast_sum(&row[s..e]);
                }
            }
            for (a, m) in masses.into_iter().enumerate() {
                for &r in class.actions[a].resources() {
                    sigma[r] += scenario.rates.action * m;
                }
            }
        }
        FlowVector(sigma)
    }

    /// Evaluates `d mu / dt`.
    pub fn drift(&self, mu: &StatePolicyDistribution) -> StatePolicyDistribution {
        let mut out = StatePolicyDistribution::zeros_like(mu);
        self.drift_into(mu.as_slice(), out.as_mut_slice(), &mut Scratch::default());
        out
    }

    /// Token-chain part of the drift only.
    pub fn chain_drift(&self, mu: &StatePolicyDistribution) -> StatePolicyDistribution {
        let mut out = StatePolicyDistribution::zeros_like(mu);
        let (src, dst) = (mu.as_slice(), out.as_mut_slice());
        for c in 0..self.segments.len() {
            for u in 0..self.segments[c].len() {
                let start = self.offsets[c] + u * self.tokens;
                self.chain_part(
                    c,
                    u,
                    &src[start..start + self.tokens],
                    &mut dst[start..start + self.tokens],
                );
            }
        }
        out
    }

    fn chain_part(&self, c: usize, u: usize, row: &[f64], out: &mut [f64]) {
        let rates = self.game.scenario().rates;
        let (rate, wn) = (rates.jump(), rates.noise);
        let cap = row.len() - 1;
        out[0] -= rate * row[0];
        // Noise moves every state up by one, saturating at the cap.
        for ((o, &m), &prev) in out[1..].iter_mut().zip(&row[1..]).zip(&row[..cap]) {
            *o += wn * prev - rate * m;
        }
        out[cap] += wn * row[cap];
        self.action_part(c, u, row, out);
    }

    /// Each action interval shifts down by its toll; targets past the cap pile up there.
    fn action_part(&self, c: usize, u: usize, row: &[f64], out: &mut [f64]) {
        let wa = self.game.scenario().rates.action;
        let tolls = &self.game.scenario().classes[c].tolls;
        let cap = row.len() - 1;
        for &(a, s, e) in &self.segments[c][u] {
            let toll = tolls[a];
            let last = ((cap as i64 + toll).min(e as i64 - 1)).max(s as i64 - 1);
            let split = (last + 1) as usize;
            let lo = (s as i64 - toll) as usize;
            out[lo..lo + (split - s)]
                .iter_mut()
                .zip(&row[s..split])
                .for_each(|(o, &m)| *o += wa * m);
            out[cap] += wa * fast_sum(&row[split..e]);
        }
    }

    /// Writes the full drift into `out`, one fused pass per policy row plus the action shifts.
    fn drift_into(&self, mu: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        let game = self.game;
        let rates = game.scenario().rates;
        let (rate, wn) = (rates.jump(), rates.noise);
        let sigma = self.sigma(mu);
        let payoffs = game.payoffs_from_rewards(&game.action_rewards(&sigma));
        let k_len = self.tokens;
        let cap = k_len - 1;
        for (c, class) in game.scenario().classes.iter().enumerate() {
            let base = self.offsets[c];
            let n = self.segments[c].len();
            let scale = if n < 2 { 0.0 } else { self.protocol.scales[c] };
            let f = &payoffs[c];
            let imitative = self.protocol.kind == ProtocolKind::Imitative;
            let x: Vec<f64> = if imitative {
                (0..n)
                    .map(|u| mu[base + u * k_len..base + (u + 1) * k_len].iter().sum())
                    .collect()
            } else {
                Vec::new()
            };
            scratch.orders.resize_with(self.segments.len(), Vec::new);
            let order = &mut scratch.orders[c];
            resort(order, f);
            // Outflow rate of each policy: sum over better policies of (weight * gain).
            let mut outflow = vec![0.0; n];
            let (mut wsum, mut wfsum) = (0.0, 0.0);
            for &u in order.iter().rev() {
                outflow[u] = scale * (wfsum - f[u] * wsum);
                let w = if imitative { x[u] / class.mass } else { 1.0 };
                wsum += w;
                wfsum += w * f[u];
            }
            let (below_mass, below_weighted) =
                (&mut scratch.below_mass, &mut scratch.below_weighted);
            below_mass.clear();
            below_mass.resize(k_len, 0.0);
            below_weighted.clear();
            below_weighted.resize(k_len, 0.0);
            for &u in order.iter() {
                let s = base + u * k_len;
                let fu = f[u];
                let gain = if imitative {
                    scale * x[u] / class.mass
                } else {
                    scale
                };
                let row = &mu[s..s + k_len];
                let dst = &mut out[s..s + k_len];
                let leave = rate + outflow[u];
                // Inflow from worse policies at the same token count, minus decay and outflow.
                dst[0] = gain * (fu * below_mass[0] - below_weighted[0]) - leave * row[0];
                below_mass[0] += row[0];
                below_weighted[0] += fu * row[0];
                revision_row(
                    &mut dst[1..],
                    &row[1..],
                    &row[..cap],
                    &mut below_mass[1..],
                    &mut below_weighted[1..],
                    [wn, gain, fu, leave],
                );
                dst[cap] += wn * row[cap];
                self.action_part(c, u, row, dst);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrationOptions {
    pub t_end: f64,
    /// Nominal RK4 step; `None` selects the default from the rates.
    pub step: Option<f64>,
    pub sample_every: f64,
    /// Keep the full distribution at each sample.
    pub keep_states: bool,
    /// Compute the equilibrium certificate at each sample.
    pub certify_samples: bool,
    /// Stop at the first sample whose certificate is at most this value.
    pub stop_below: Option<f64>,
    /// Stop at the first sample after this much wall-clock time.
    #[serde(default)]
    pub wall_limit: Option<std::time::Duration>,
}

impl IntegrationOptions {
    pub fn new(t_end: f64, sample_every: f64) -> Self {
        IntegrationOptions {
            t_end,
            step: None,
            sample_every,
            keep_states: false,
            certify_samples: true,
            stop_below: None,
            wall_limit: None,
        }
    }
}

/// One sampled point of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub sigma: Vec<f64>,
    pub class_rewards: Vec<f64>,
    pub potential: f64,
    pub epsilon: f64,
    #[serde(skip)]
    pub state: Option<StatePolicyDistribution>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_state: StatePolicyDistribution,
    pub steps: usize,
    pub rejected_steps: usize,
    /// The wall-clock limit ended the run before the horizon or the certificate target.
    pub timed_out: bool,
}

impl Trajectory {
    /// First sampled time with certificate at most `eps`.
    pub fn first_entry(&self, eps: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.epsilon <= eps).map(|s| s.t)
    }

    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectories hold at least one sample")
    }
}

/// Default RK4 step from the event rates.
pub fn default_step(game: &Game) -> f64 {
    let r = game.scenario().rates;
    let by_revision = if r.revision > 0.0 {
        0.05 / r.revision
    } else {
        f64::INFINITY
    };
    (0.05 / r.jump()).min(by_revision)
}

const CLIP_TOLERANCE: f64 = 1e-8;
const MIN_STEP: f64 = 1e-12;

/// Classical RK4 from `mu0` to `opts.t_end`, clipping small negative excursions.
pub fn integrate(
    game: &Game,
    protocol: &RevisionProtocolSpec,
    mu0: &StatePolicyDistribution,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    mu0.check_masses(game.scenario(), 1e-8)?;
    let dynamics = Dynamics::new(game, protocol);
    let nominal = opts.step.unwrap_or_else(|| default_step(game));
    if !(nominal > 0.0) || !(opts.sample_every > 0.0) || !(opts.t_end >= 0.0) {
        return Err(Error::Invalid(
            "step, sample stride and horizon must be positive".into(),
        ));
    }
    let masses: Vec<f64> = game.scenario().classes.iter().map(|c| c.mass).collect();
    let mut y = mu0.clone();
    let n = y.as_slice().len();
    let mut scratch = Scratch::default();
    let mut k = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut next = vec![0.0; n];
    let started = std::time::Instant::now();
    let mut timed_out = false;
    let mut samples = vec![make_sample(game, &y, 0.0, opts)?];
    let (mut t, mut h, mut steps, mut rejected) = (0.0_f64, nominal, 0usize, 0usize);
    let mut next_sample = opts.sample_every.min(opts.t_end);
    while t < opts.t_end {
        let target = next_sample.min(opts.t_end);
        let dt = h.min(target - t);
        let cur = y.as_slice();
        // Classical RK4 with the weighted sum accumulated in `next` as each stage lands.
        dynamics.drift_into(cur, &mut k, &mut scratch);
        rk_stage(&mut next, &mut stage, cur, &k, dt / 6.0, 0.5 * dt, true);
        dynamics.drift_into(&stage, &mut k, &mut scratch);
        rk_stage(&mut next, &mut stage, cur, &k, dt / 3.0, 0.5 * dt, false);
        dynamics.drift_into(&stage, &mut k, &mut scratch);
        rk_stage(&mut next, &mut stage, cur, &k, dt / 3.0, dt, false);
        dynamics.drift_into(&stage, &mut k, &mut scratch);
        let clipped = rk_finish(&mut next, &k, dt / 6.0);
        if clipped > CLIP_TOLERANCE {
            h = dt / 2.0;
            rejected += 1;
            if h < MIN_STEP {
                return Err(Error::StepUnderflow { time: t });
            }
            continue;
        }
        y.swap_cells(&mut next);
        if clipped > 0.0 {
            for (c, &m) in masses.iter().enumerate() {
                let cells = y.class_mut(c);
                let total: f64 = cells.iter().sum();
                cells.iter_mut().for_each(|v| *v *= m / total);
            }
        }
        t = if dt == target - t { target } else { t + dt };
        steps += 1;
        h = (h * 2.0).min(nominal);
        if t >= next_sample || t >= opts.t_end {
            let sample = make_sample(game, &y, t, opts)?;
            let done = opts.stop_below.is_some_and(|eps| sample.epsilon <= eps);
            samples.push(sample);
            if done {
                break;
            }
            if opts
                .wall_limit
                .is_some_and(|limit| started.elapsed() >= limit)
            {
                timed_out = true;
                break;
            }
            next_sample = (next_sample + opts.sample_every).min(opts.t_end);
        }
    }
    y.check_masses(game.scenario(), 1e-8)?;
    Ok(Trajectory {
        samples,
        final_state: y,
        steps,
        rejected_steps: rejected,
        timed_out,
    })
}

fn make_sample(
    game: &Game,
    mu: &StatePolicyDistribution,
    t: f64,
    opts: &IntegrationOptions,
) -> Result<Sample> {
    let sigma = game.sigma(mu)?;
    let epsilon = if opts.certify_samples {
        msne_certificate(game, mu)?.epsilon
    } else {
        f64::NAN
    };
    Ok(Sample {
        t,
        class_rewards: game.class_average_rewards(mu)?,
        potential: game.potential(&mu.policy_masses()),
        sigma: sigma.0,
        epsilon,
        state: opts.keep_states.then(|| mu.clone()),
    })
}
