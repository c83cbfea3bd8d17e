//! Monotone deterministic policies mapping token counts to affordable actions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of distinct actions a policy may use.
pub const DEFAULT_MAX_DISTINCT_ACTIONS: usize = 2;
/// Default ceiling on the size of an enumerated family.
pub const DEFAULT_POLICY_LIMIT: usize = 100_000;

/// Action choice per token count `0..=max_tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    class: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(class: usize, actions: Vec<usize>) -> Self {
        assert!(
            !actions.is_empty(),
            "a policy covers at least token count 0"
        );
        Policy { class, actions }
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn action_at(&self, tokens: usize) -> usize {
        self.actions[tokens]
    }

    pub fn max_tokens(&self) -> usize {
        self.actions.len() - 1
    }

    pub fn is_affordable(&self, tolls: &[i64]) -> bool {
        self.actions
            .iter()
            .enumerate()
            .all(|(k, &a)| tolls[a] <= k as i64)
    }

    /// Maximal runs `(action, first token count)` in token order.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for (k, &a) in self.actions.iter().enumerate() {
            if out.last().map_or(true, |&(b, _)| b != a) {
                out.push((a, k));
            }
        }
        out
    }
}

/// Actions affordable with `tokens` in the wallet.
pub fn affordable_actions(class: usize, tokens: usize, tolls: &[i64]) -> Result<Vec<usize>> {
    let out: Vec<usize> = (0..tolls.len())
        .filter(|&a| tolls[a] <= tokens as i64)
        .collect();
    if out.is_empty() {
        return Err(Error::NothingAffordable { class, tokens });
    }
    Ok(out)
}

/// True iff the toll paid is non-decreasing in the token count.
pub fn is_monotone(policy: &Policy, tolls: &[i64]) -> bool {
    policy
        .actions
        .windows(2)
        .all(|w| tolls[w[0]] <= tolls[w[1]])
}

/// Enumerated monotone policies of one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFamily {
    class: usize,
    max_distinct_actions: usize,
    policies: Vec<Policy>,
    #[serde(skip)]
    index: HashMap<Vec<usize>, usize>,
}

impl PolicyFamily {
    pub fn from_policies(class: usize, max_distinct_actions: usize, policies: Vec<Policy>) -> Self {
        let index = policies
            .iter()
            .enumerate()
            .map(|(i, p)| (p.actions.clone(), i))
            .collect();
        PolicyFamily {
            class,
            max_distinct_actions,
            policies,
            index,
        }
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn max_distinct_actions(&self) -> usize {
        self.max_distinct_actions
    }

    /// True when the contiguity restriction removes monotone policies (cap of three or more).
    pub fn is_contiguity_approximation(&self) -> bool {
        self.max_distinct_actions >= 3
    }

    pub fn position(&self, policy: &Policy) -> Option<usize> {
        self.index.get(&policy.actions).copied()
    }
}

/// All monotone policies using at most `max_distinct_actions` actions, each on one contiguous token interval.
pub fn enumerate_policies(
    class: usize,
    tolls: &[i64],
    max_tokens: usize,
    max_distinct_actions: usize,
) -> Result<PolicyFamily> {
    enumerate_policies_with_limit(
        class,
        tolls,
        max_tokens,
        max_distinct_actions,
        DEFAULT_POLICY_LIMIT,
    )
}

pub fn enumerate_policies_with_limit(
    class: usize,
    tolls: &[i64],
    max_tokens: usize,
    max_distinct_actions: usize,
    limit: usize,
) -> Result<PolicyFamily> {
    if max_distinct_actions == 0 {
        return Err(Error::Invalid(
            "distinct-action cap must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..tolls.len()).collect();
    order.sort_by_key(|&a| (tolls[a], a));
    let mut gen = Generator {
        tolls,
        order: &order,
        max_tokens,
        cap: max_distinct_actions,
        limit,
        class,
        out: Vec::new(),
        seq: Vec::new(),
    };
    for &first in &order {
        if tolls[first] <= 0 {
            gen.seq.push((first, 0));
            gen.extend()?;
            gen.seq.pop();
        }
    }
    if gen.out.is_empty() {
        return Err(Error::NothingAffordable { class, tokens: 0 });
    }
    Ok(PolicyFamily::from_policies(
        class,
        max_distinct_actions,
        gen.out,
    ))
}

struct Generator<'a> {
    tolls: &'a [i64],
    order: &'a [usize],
    max_tokens: usize,
    cap: usize,
    limit: usize,
    class: usize,
    out: Vec<Policy>,
    /// (action, first token count of its interval)
    seq: Vec<(usize, usize)>,
}

impl Generator<'_> {
    fn extend(&mut self) -> Result<()> {
        self.emit()?;
        if self.seq.len() == self.cap {
            return Ok(());
        }
        let &(last, start) = self.seq.last().expect("sequence is nonempty");
        for &next in self.order {
            if self.tolls[next] < self.tolls[last] || self.seq.iter().any(|&(a, _)| a == next) {
                continue;
            }
            let lo = (start + 1).max(self.tolls[next].max(0) as usize);
            for t in lo..=self.max_tokens {
                self.seq.push((next, t));
                self.extend()?;
                self.seq.pop();
            }
        }
        Ok(())
    }

    fn emit(&mut self) -> Result<()> {
        if self.out.len() >= self.limit {
            return Err(Error::TooManyPolicies {
                class: self.class,
                limit: self.limit,
            });
        }
        let mut actions = vec![0; self.max_tokens + 1];
        for (i, &(a, start)) in self.seq.iter().enumerate() {
            let end = self.seq.get(i + 1).map_or(self.max_tokens + 1, |s| s.1);
            actions[start..end].fill(a);
        }
        self.out.push(Policy::new(self.class, actions));
        Ok(())
    }
}

/// Plays `low` below the toll of `high` and `high` from there up to the cap.
pub fn threshold_policy(
    class: usize,
    low: usize,
    high: usize,
    tolls: &[i64],
    max_tokens: usize,
) -> Result<Policy> {
    let (tl, th) = (tolls[low], tolls[high]);
    if !(tl <= 0 && th > 0) {
        return Err(Error::Contract(format!(
            "threshold policy needs a nonpositive and a positive toll, got {tl} and {th}"
        )));
    }
    if (th as usize) > max_tokens {
        return Err(Error::Contract(format!(
            "toll {th} exceeds token cap {max_tokens}"
        )));
    }
    let actions = (0..=max_tokens)
        .map(|k| if (k as i64) < th { low } else { high })
        .collect();
    Ok(Policy::new(class, actions))
}
