//! Finite-horizon tabular MDPs and exact backward induction.

use serde::{Deserialize, Serialize};

use crate::dist::Categorical;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Episodic tabular MDP with a fixed initial state and known rewards.
///
/// Rows are indexed `s * A + a`. All fields are validated at construction
/// and immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    branching: usize,
    initial_state: usize,
    reward: Vec<f64>,
    transition: Vec<Categorical>,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        branching: usize,
        initial_state: usize,
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        Self::build(num_states, num_actions, horizon, branching, initial_state, reward, transition, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        branching: usize,
        initial_state: usize,
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
        check_reward_range: bool,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 || branching == 0 {
            return Err(Error::validation("S, A, H and B must all be positive"));
        }
        if initial_state >= num_states {
            return Err(Error::validation(format!("s1 = {initial_state} out of range for S = {num_states}")));
        }
        if reward.len() != num_states || transition.len() != num_states {
            return Err(Error::validation(format!(
                "expected {num_states} reward and transition rows, got {} and {}",
                reward.len(),
                transition.len()
            )));
        }
        let mut r = Vec::with_capacity(num_states * num_actions);
        let mut p = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            if reward[s].len() != num_actions || transition[s].len() != num_actions {
                return Err(Error::validation(format!("state {s}: expected {num_actions} actions")));
            }
            for a in 0..num_actions {
                let x = reward[s][a];
                if !x.is_finite() || (check_reward_range && !(0.0..=1.0).contains(&x)) {
                    return Err(Error::validation(format!("r({s},{a}) = {x} outside [0,1]")));
                }
                r.push(x);
                let row = &transition[s][a];
                if row.len() != num_states {
                    return Err(Error::validation(format!(
                        "P({s},{a}) has {} entries, expected {num_states}",
                        row.len()
                    )));
                }
                let c = Categorical::from_dense(row)
                    .map_err(|e| Error::validation(format!("P({s},{a}): {e}")))?;
                if c.support().len() > branching {
                    return Err(Error::validation(format!(
                        "P({s},{a}) has support {} above branching bound {branching}",
                        c.support().len()
                    )));
                }
                p.push(c);
            }
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            horizon,
            branching,
            initial_state,
            reward: r,
            transition: p,
        })
    }

    /// Same as [`TabularMdp::new`] but without the `[0,1]` reward check.
    /// Only used to test value shifts.
    #[cfg(test)]
    pub(crate) fn new_unbounded_rewards(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        branching: usize,
        initial_state: usize,
        reward: Vec<Vec<f64>>,
        transition: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        Self::build(num_states, num_actions, horizon, branching, initial_state, reward, transition, false)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transition(&self, s: usize, a: usize) -> &Categorical {
        &self.transition[s * self.num_actions + a]
    }

    /// Same dynamics with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::validation("horizon must be positive"));
        }
        Ok(TabularMdp { horizon, ..self.clone() })
    }

    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.reward(s, a)).collect())
            .collect()
    }

    pub fn transition_table(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| self.transition(s, a).to_dense()).collect())
            .collect()
    }

    /// Plays one episode of `policy` and returns the realized return.
    pub fn rollout(&self, policy: &TimedPolicy, rng: &mut RngStream) -> f64 {
        let mut s = self.initial_state;
        let mut total = 0.0;
        for h in 1..=self.horizon {
            let a = policy.action(h, s);
            total += self.reward(s, a);
            s = self.transition(s, a).sample(rng);
        }
        total
    }
}

/// Deterministic non-stationary policy `pi_h(s)`, `h = 1..=H`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedPolicy {
    actions: Vec<Vec<usize>>,
}

impl TimedPolicy {
    /// `actions[h-1][s]`.
    pub fn new(actions: Vec<Vec<usize>>) -> Self {
        TimedPolicy { actions }
    }

    pub fn constant(horizon: usize, num_states: usize, a: usize) -> Self {
        TimedPolicy { actions: vec![vec![a; num_states]; horizon] }
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h - 1][s]
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.actions
    }

    fn check(&self, m: &TabularMdp) -> Result<()> {
        if self.actions.len() != m.horizon {
            return Err(Error::validation(format!(
                "policy covers {} steps, horizon is {}",
                self.actions.len(),
                m.horizon
            )));
        }
        for (h, row) in self.actions.iter().enumerate() {
            if row.len() != m.num_states {
                return Err(Error::validation(format!("policy step {} has {} states", h + 1, row.len())));
            }
            if let Some(&a) = row.iter().find(|&&a| a >= m.num_actions) {
                return Err(Error::validation(format!("policy step {} uses action {a}", h + 1)));
            }
        }
        Ok(())
    }
}

/// `values[h-1][s]` for `h = 1..=H+1`; the last row is zero.
pub type ValueTables = Vec<Vec<f64>>;

pub fn evaluate_policy(m: &TabularMdp, pi: &TimedPolicy) -> Result<ValueTables> {
    pi.check(m)?;
    let mut v = vec![vec![0.0; m.num_states]; m.horizon + 1];
    for h in (1..=m.horizon).rev() {
        for s in 0..m.num_states {
            let a = pi.action(h, s);
            v[h - 1][s] = m.reward(s, a) + m.transition(s, a).expect(&v[h]);
        }
    }
    Ok(v)
}

/// Bellman optimality backup with lowest-index tie-breaking.
pub fn optimal_value(m: &TabularMdp) -> (ValueTables, TimedPolicy) {
    let mut v = vec![vec![0.0; m.num_states]; m.horizon + 1];
    let mut pi = vec![vec![0; m.num_states]; m.horizon];
    for h in (1..=m.horizon).rev() {
        for s in 0..m.num_states {
            let mut best = f64::NEG_INFINITY;
            for a in 0..m.num_actions {
                let q = m.reward(s, a) + m.transition(s, a).expect(&v[h]);
                if q > best {
                    best = q;
                    pi[h - 1][s] = a;
                }
            }
            v[h - 1][s] = best;
        }
    }
    (v, TimedPolicy::new(pi))
}

/// On-disk instance: the base MDP plus optional delay block and metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "B")]
    pub branching: usize,
    pub s1: usize,
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<crate::delay::DelayFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl InstanceFile {
    pub fn from_mdp(m: &TabularMdp) -> Self {
        InstanceFile {
            num_states: m.num_states,
            num_actions: m.num_actions,
            horizon: m.horizon,
            branching: m.branching,
            s1: m.initial_state,
            r: m.reward_table(),
            p: m.transition_table(),
            delay: None,
            meta: None,
        }
    }

    pub fn mdp(&self) -> Result<TabularMdp> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.branching,
            self.s1,
            self.r.clone(),
            self.p.clone(),
        )
    }

    pub fn delay_model(&self) -> Result<Option<crate::delay::DelayModel>> {
        self.delay
            .as_ref()
            .map(|d| d.to_model(self.num_states, self.num_actions))
            .transpose()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}
