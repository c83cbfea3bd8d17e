//! Token-wallet Markov chains: kernels, stationary distributions and tail bounds.

use crate::error::{Error, Result};
use crate::model::Rates;
use crate::policy::Policy;

/// Next token count after paying `toll` with `tokens` in the wallet.
pub fn action_kernel(tokens: usize, toll: i64, max_tokens: usize) -> Result<usize> {
    if tokens > max_tokens {
        return Err(Error::Contract(format!(
            "token count {tokens} above cap {max_tokens}"
        )));
    }
    if toll > tokens as i64 {
        return Err(Error::Contract(format!(
            "toll {toll} unaffordable with {tokens} tokens"
        )));
    }
    let next = tokens as i64 - toll;
    Ok((next as usize).min(max_tokens))
}

/// Next token count after a one-token gift.
pub fn noise_kernel(tokens: usize, max_tokens: usize) -> usize {
    (tokens + 1).min(max_tokens)
}

/// Combined action and noise jump chain on `{0, ..., max_tokens}`.
///
/// Each row has at most two nonzero entries, so the chain is stored as two target
/// arrays and mixed with the weights `action_weight` and `noise_weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalletChain {
    action_next: Vec<usize>,
    noise_next: Vec<usize>,
    action_weight: f64,
    noise_weight: f64,
    jump_rate: f64,
}

impl WalletChain {
    pub fn build(policy: &Policy, tolls: &[i64], rates: &Rates) -> Result<Self> {
        let max_tokens = policy.max_tokens();
        let action_next = policy
            .actions()
            .iter()
            .enumerate()
            .map(|(k, &a)| action_kernel(k, tolls[a], max_tokens))
            .collect::<Result<Vec<_>>>()?;
        let noise_next = (0..=max_tokens)
            .map(|k| noise_kernel(k, max_tokens))
            .collect();
        Ok(Self::from_targets(action_next, noise_next, rates))
    }

    fn from_targets(action_next: Vec<usize>, noise_next: Vec<usize>, rates: &Rates) -> Self {
        let jump_rate = rates.jump();
        WalletChain {
            action_next,
            noise_next,
            action_weight: rates.action / jump_rate,
            noise_weight: rates.noise / jump_rate,
            jump_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.action_next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_next.is_empty()
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    pub fn action_target(&self, k: usize) -> usize {
        self.action_next[k]
    }

    pub fn noise_target(&self, k: usize) -> usize {
        self.noise_next[k]
    }

    pub fn action_weight(&self) -> f64 {
        self.action_weight
    }

    pub fn noise_weight(&self) -> f64 {
        self.noise_weight
    }

    /// Dense row-stochastic transition matrix, row-major.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut p = vec![vec![0.0; n]; n];
        for (k, row) in p.iter_mut().enumerate() {
            row[self.action_next[k]] += self.action_weight;
            row[self.noise_next[k]] += self.noise_weight;
        }
        p
    }

    /// `eta^T P`.
    pub fn push_forward(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, &m) in eta.iter().enumerate() {
            out[self.action_next[k]] += self.action_weight * m;
            out[self.noise_next[k]] += self.noise_weight * m;
        }
        out
    }

    /// `max_k |(eta^T P)_k - eta_k|`.
    pub fn residual(&self, eta: &[f64]) -> f64 {
        self.push_forward(eta)
            .iter()
            .zip(eta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn edges(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let a = (self.action_weight > 0.0).then_some(self.action_next[k]);
        let n = (self.noise_weight > 0.0).then_some(self.noise_next[k]);
        a.into_iter().chain(n)
    }

    /// Number of closed communicating classes of the support graph.
    pub fn closed_classes(&self) -> usize {
        let comp = strongly_connected(self.len(), |k| self.edges(k).collect());
        let ncomp = comp.iter().copied().max().map_or(0, |m| m + 1);
        let mut leaks = vec![false; ncomp];
        for k in 0..self.len() {
            if self.edges(k).any(|j| comp[j] != comp[k]) {
                leaks[comp[k]] = true;
            }
        }
        leaks.iter().filter(|&&l| !l).count()
    }

    /// Stationary distribution by direct elimination.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let classes = self.closed_classes();
        if classes != 1 {
            return Err(Error::NonUniqueStationary { classes });
        }
        let eta = match self.eliminate_banded() {
            Some(eta) => eta,
            None => self.dense_solve()?,
        };
        let res = self.residual(&eta);
        if !(res <= 1e-10) {
            return Err(Error::Stationary(format!("residual {res:e} above 1e-10")));
        }
        Ok(eta)
    }

    /// Grassmann-Taksar-Heyman state reduction, eliminating states upward.
    ///
    /// Works in band storage; fill-in stays inside the band because every jump is at
    /// most `max toll` down or `max(1, -min toll)` up. Returns `None` if a pivot vanishes.
    fn eliminate_banded(&self) -> Option<Vec<f64>> {
        let n = self.len();
        let (mut lower, mut upper) = (0usize, 0usize);
        for k in 0..n {
            for j in [self.action_next[k], self.noise_next[k]] {
                if j < k {
                    lower = lower.max(k - j);
                } else {
                    upper = upper.max(j - k);
                }
            }
        }
        let width = lower + upper + 1;
        let idx = |i: usize, j: usize| i * width + (j + lower - i);
        let mut p = vec![0.0; n * width];
        for k in 0..n {
            p[idx(k, self.action_next[k])] += self.action_weight;
            p[idx(k, self.noise_next[k])] += self.noise_weight;
        }
        let mut pivots = vec![0.0; n];
        for m in 0..n.saturating_sub(1) {
            let hi = (m + upper).min(n - 1);
            let s: f64 = (m + 1..=hi).map(|j| p[idx(m, j)]).sum();
            if !(s > 0.0) {
                return None;
            }
            pivots[m] = s;
            for i in m + 1..=(m + lower).min(n - 1) {
                let pim = p[idx(i, m)];
                if pim == 0.0 {
                    continue;
                }
                let f = pim / s;
                for j in m + 1..=hi {
                    let pmj = p[idx(m, j)];
                    if pmj != 0.0 {
                        p[idx(i, j)] += f * pmj;
                    }
                }
            }
        }
        let mut eta = vec![0.0; n];
        eta[n - 1] = 1.0;
        for m in (0..n.saturating_sub(1)).rev() {
            let hi = (m + lower).min(n - 1);
            let inflow: f64 = (m + 1..=hi).map(|i| eta[i] * p[idx(i, m)]).sum();
            eta[m] = inflow / pivots[m];
        }
        let total: f64 = eta.iter().sum();
        eta.iter_mut().for_each(|v| *v /= total);
        Some(eta)
    }

    /// Dense Gaussian elimination with partial pivoting on `(P^T - I) eta = 0`, last row replaced by normalization.
    fn dense_solve(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let p = self.matrix();
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        a[n - 1].iter_mut().take(n).for_each(|v| *v = 1.0);
        a[n - 1][n] = 1.0;
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap_or(col);
            if a[piv][col].abs() < 1e-300 {
                return Err(Error::Stationary("singular system".into()));
            }
            a.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for j in col..=n {
                        a[row][j] -= f * a[col][j];
                    }
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (a[i][n] - s) / a[i][i];
        }
        Ok(x)
    }

    /// Fixed point of the lazy chain `(I + P) / 2`, started from the uniform distribution.
    pub fn power_iteration(&self, tol: f64, max_iter: usize) -> Vec<f64> {
        let n = self.len();
        let mut eta = vec![1.0 / n as f64; n];
        for _ in 0..max_iter {
            let pushed = self.push_forward(&eta);
            let next: Vec<f64> = eta
                .iter()
                .zip(&pushed)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let delta = next
                .iter()
                .zip(&eta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            eta = next;
            if delta < tol {
                break;
            }
        }
        eta
    }
}

/// Kosaraju's algorithm; returns a component id per vertex.
fn strongly_connected(n: usize, succ: impl Fn(usize) -> Vec<usize>) -> Vec<usize> {
    let adj: Vec<Vec<usize>> = (0..n).map(&succ).collect();
    let mut radj = vec![Vec::new(); n];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            radj[v].push(u);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![(start, 0usize)];
        while let Some((u, i)) = stack.pop() {
            if i < adj[u].len() {
                stack.push((u, i + 1));
                let v = adj[u][i];
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &radj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Geometric ratio of the top-state tail bound for a given noise/action ratio.
pub fn tail_ratio(noise_over_action: f64) -> Result<f64> {
    if !(0.0..0.25).contains(&noise_over_action) {
        return Err(Error::Invalid(format!(
            "noise/action ratio {noise_over_action} must lie in [0, 1/4)"
        )));
    }
    Ok(0.5 - (0.25 - noise_over_action).sqrt())
}

/// Upper bound on the stationary mass at the token cap under a threshold policy
/// whose expensive action costs `high_toll`.
pub fn tail_mass_bound(high_toll: i64, max_tokens: usize, noise_over_action: f64) -> Result<f64> {
    if high_toll < 1 {
        return Err(Error::Invalid(format!(
            "toll {high_toll} must be at least 1"
        )));
    }
    let gamma = tail_ratio(noise_over_action)?;
    let chunks = (max_tokens as i64 - high_toll + 1).div_euclid(high_toll) - 1;
    Ok(gamma.powi(chunks as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;

    fn rates(noise: f64) -> Rates {
        Rates {
            action: 1.0,
            noise,
            revision: 0.0,
        }
    }

    fn threshold(low: i64, high: i64, max_tokens: usize) -> (Policy, Vec<i64>) {
        let tolls = vec![low, high];
        let p = crate::policy::threshold_policy(0, 0, 1, &tolls, max_tokens).unwrap();
        (p, tolls)
    }

    #[test]
    fn action_kernel_cases() {
        assert_eq!(action_kernel(5, 2, 10).unwrap(), 3);
        assert_eq!(action_kernel(9, -3, 10).unwrap(), 10);
        assert!(action_kernel(1, 2, 10).is_err());
    }

    #[test]
    fn noise_kernel_cases() {
        assert_eq!(noise_kernel(0, 7), 1);
        assert_eq!(noise_kernel(7, 7), 7);
        assert_eq!(noise_kernel(6, 7), 7);
    }

    #[test]
    fn free_policy_chain_is_identity_plus_shift() {
        let p = Policy::new(0, vec![0; 6]);
        let chain = WalletChain::build(&p, &[0], &rates(0.1)).unwrap();
        let m = chain.matrix();
        let (wd, wn) = (1.0 / 1.1, 0.1 / 1.1);
        for k in 0..6 {
            for j in 0..6 {
                let mut want = if j == k { wd } else { 0.0 };
                if j == (k + 1).min(5) {
                    want += wn;
                }
                assert!((m[k][j] - want).abs() < 1e-15);
            }
        }
        let eta = chain.stationary().unwrap();
        assert!((eta[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_chain_matches_hand_built_matrix() {
        let (p, tolls) = threshold(-1, 1, 4);
        let m = WalletChain::build(&p, &tolls, &rates(0.1))
            .unwrap()
            .matrix();
        let (wd, wn) = (1.0 / 1.1, 0.1 / 1.1);
        // k=0 plays the paid action (+1), k>=1 pays one token.
        let mut want = vec![vec![0.0; 5]; 5];
        want[0][1] = wd + wn;
        for k in 1..5 {
            want[k][k - 1] += wd;
            want[k][(k + 1).min(4)] += wn;
        }
        for k in 0..5 {
            for j in 0..5 {
                assert!((m[k][j] - want[k][j]).abs() < 1e-15, "({k},{j})");
            }
            assert!((m[k].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_matches_power_iteration() {
        let (p, tolls) = threshold(-1, 1, 20);
        let chain = WalletChain::build(&p, &tolls, &rates(0.1)).unwrap();
        let eta = chain.stationary().unwrap();
        let oracle = chain.power_iteration(1e-16, 200_000);
        for (a, b) in eta.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_and_banded_solves_agree() {
        let (p, tolls) = threshold(-3, 4, 40);
        let chain = WalletChain::build(&p, &tolls, &rates(0.07)).unwrap();
        let a = chain.eliminate_banded().unwrap();
        let b = chain.dense_solve().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_split_without_noise_is_detected() {
        // Even tolls, odd cap, no noise: even and odd token counts never mix.
        let tolls = vec![-2, 2];
        let p = crate::policy::threshold_policy(0, 0, 1, &tolls, 7).unwrap();
        let chain = WalletChain::build(&p, &tolls, &rates(0.0)).unwrap();
        assert!(matches!(
            chain.stationary(),
            Err(Error::NonUniqueStationary { classes: 2 })
        ));
    }

    #[test]
    fn free_policy_without_noise_has_many_classes() {
        let p = Policy::new(0, vec![0; 4]);
        let chain = WalletChain::build(&p, &[0], &rates(0.0)).unwrap();
        assert_eq!(chain.closed_classes(), 4);
    }

    #[test]
    fn tail_ratio_value() {
        assert!((tail_ratio(0.1).unwrap() - 0.112_701_665_379_258_3).abs() < 1e-12);
        assert!(tail_ratio(0.25).is_err());
    }

    #[test]
    fn tail_bound_decreases_in_cap() {
        let mut last = f64::INFINITY;
        for cap in (10..200).step_by(3) {
            let b = tail_mass_bound(3, cap, 0.1).unwrap();
            assert!(b <= last);
            last = b;
        }
        assert!(last < 1e-50);
    }
}
