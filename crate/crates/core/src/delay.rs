//! Inter-arrival distributions and the conditional reveal probability.

use serde::{Deserialize, Serialize};

use crate::dist::Categorical;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Per-(s,a) inter-arrival law over `[-1, delta_max]` with cap `d_max`.
///
/// Row `s * A + a`, column `delta + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    p_delay: Vec<Categorical>,
    num_actions: usize,
    delta_max: usize,
    d_max: usize,
    known: bool,
    constant: Option<usize>,
}

/// Situation of the pending reveal when the reveal probability is queried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RevealFlags {
    /// The action queue holds `d_max + 1` actions.
    pub queue_full: bool,
    /// The step being entered is `H + 1`.
    pub horizon_end: bool,
    /// Every taken action has been resolved: the pending inter-arrival
    /// starts from zero accumulated delay.
    pub queue_empty: bool,
    /// Constant mode only: the pending state is `s_2`, whose delay is
    /// offset by the initial delay.
    pub first_step: bool,
}

/// How the reveal probability at a node is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Exception {
    /// `P(d) / P(>= d)`.
    None,
    /// Nothing left to reveal in this step.
    NoReveal,
    /// Clipping at `d_max`, `d = delta_max`, or end of horizon.
    Forced,
    /// Zero accumulated delay: `-1` is clipped to `0`, so the first
    /// reveal probability is `P(<= 0)`.
    ClippedLow,
    /// Constant mode, first pending state.
    FirstStep,
}

impl DelayModel {
    /// `rows[s * A + a][delta + 1]`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        rows: Vec<Vec<f64>>,
        delta_max: usize,
        d_max: usize,
        known: bool,
    ) -> Result<Self> {
        if delta_max > d_max {
            return Err(Error::validation(format!("delta_max = {delta_max} exceeds d_max = {d_max}")));
        }
        if rows.len() != num_states * num_actions {
            return Err(Error::validation(format!(
                "p_delay has {} rows, expected S*A = {}",
                rows.len(),
                num_states * num_actions
            )));
        }
        let mut p_delay = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != delta_max + 2 {
                return Err(Error::validation(format!(
                    "p_delay row {i} has {} columns, expected delta_max + 2 = {}",
                    row.len(),
                    delta_max + 2
                )));
            }
            p_delay.push(Categorical::from_dense(row).map_err(|e| Error::validation(format!("p_delay row {i}: {e}")))?);
        }
        Ok(DelayModel { p_delay, num_actions, delta_max, d_max, known, constant: None })
    }

    /// Every inter-arrival is `0`: the undelayed MDP.
    pub fn zero(num_states: usize, num_actions: usize) -> Self {
        DelayModel {
            p_delay: vec![Categorical::point_mass(2, 1); num_states * num_actions],
            num_actions,
            delta_max: 0,
            d_max: 0,
            known: true,
            constant: None,
        }
    }

    /// Constant delay `d` realized through the initial delay `D_0 = d`.
    pub fn constant(num_states: usize, num_actions: usize, d: usize) -> Self {
        DelayModel {
            p_delay: vec![Categorical::point_mass(d + 2, 1); num_states * num_actions],
            num_actions,
            delta_max: d,
            d_max: d,
            known: true,
            constant: if d == 0 { None } else { Some(d) },
        }
    }

    pub fn with_known(mut self, known: bool) -> Self {
        self.known = known;
        self
    }

    /// Enables constant mode. Requires every row to be a point mass at `0`,
    /// `d <= d_max` and `d <= delta_max`.
    pub fn with_constant(mut self, d: usize) -> Result<Self> {
        if d > self.d_max || d > self.delta_max {
            return Err(Error::validation(format!(
                "constant delay {d} exceeds d_max = {} or delta_max = {}",
                self.d_max, self.delta_max
            )));
        }
        if self.p_delay.iter().any(|c| c.support() != [1]) {
            return Err(Error::validation("constant mode needs every inter-arrival row to be a point mass at 0"));
        }
        self.constant = if d == 0 { None } else { Some(d) };
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.p_delay.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn delta_max(&self) -> usize {
        self.delta_max
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn known(&self) -> bool {
        self.known
    }

    pub fn constant_delay(&self) -> Option<usize> {
        self.constant
    }

    /// Delay before the first step: `D_0`.
    pub fn initial_delay(&self) -> usize {
        self.constant.unwrap_or(0)
    }

    pub fn row(&self, s: usize, a: usize) -> &Categorical {
        &self.p_delay[s * self.num_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, delta: i32) -> f64 {
        if delta < -1 || delta > self.delta_max as i32 {
            return 0.0;
        }
        self.row(s, a).prob((delta + 1) as usize)
    }

    pub fn sample(&self, s: usize, a: usize, rng: &mut RngStream) -> i32 {
        self.row(s, a).sample(rng) as i32 - 1
    }

    /// Flags at a decision node `(s, q, dt, h)` before the action is queued.
    pub fn decision_flags(&self, queue_len: usize, h: usize, horizon: usize) -> RevealFlags {
        RevealFlags {
            queue_full: queue_len + 1 == self.d_max + 1,
            horizon_end: h + 1 == horizon + 1,
            queue_empty: queue_len == 0,
            first_step: self.constant.is_some() && h == queue_len + 1,
        }
    }

    /// Flags at a `-1` node `(s, q, -1, h)`.
    pub fn chain_flags(&self, queue_len: usize, h: usize, horizon: usize) -> RevealFlags {
        RevealFlags {
            queue_full: queue_len == self.d_max + 1,
            horizon_end: h == horizon + 1,
            queue_empty: queue_len == 0,
            first_step: false,
        }
    }

    pub fn exception(&self, delta_tilde: i32, flags: RevealFlags) -> Exception {
        if flags.queue_full || flags.horizon_end || delta_tilde == self.delta_max as i32 {
            Exception::Forced
        } else if flags.queue_empty && delta_tilde == -1 {
            Exception::NoReveal
        } else if flags.first_step {
            Exception::FirstStep
        } else if flags.queue_empty {
            Exception::ClippedLow
        } else {
            Exception::None
        }
    }

    /// Probability that the pending state is revealed now, given that it has
    /// not been revealed during the last `delta_tilde` steps.
    pub fn p_tran(&self, s: usize, a: usize, delta_tilde: i32, flags: RevealFlags) -> Result<f64> {
        if delta_tilde < -1 || delta_tilde > self.delta_max as i32 {
            return Err(Error::validation(format!(
                "delta_tilde = {delta_tilde} outside [-1, {}]",
                self.delta_max
            )));
        }
        self.reveal_prob(s, a, delta_tilde, self.exception(delta_tilde, flags))
    }

    /// Reveal probability once the exception class is known.
    pub fn reveal_prob(&self, s: usize, a: usize, delta_tilde: i32, exception: Exception) -> Result<f64> {
        let offset = match exception {
            Exception::Forced => return Ok(1.0),
            Exception::NoReveal => return Ok(0.0),
            Exception::FirstStep => Some(self.initial_delay() as i32),
            Exception::ClippedLow => Some(0),
            Exception::None => None,
        };
        let (mut num, mut den) = (0.0, 0.0);
        for (i, p) in self.row(s, a).iter() {
            let delta = i as i32 - 1;
            let eff = match offset {
                Some(b) => (b + delta).clamp(0, self.d_max as i32),
                None => delta,
            };
            if eff == delta_tilde {
                num += p;
            }
            if eff >= delta_tilde {
                den += p;
            }
        }
        if den <= 0.0 {
            return Err(Error::UnreachableReveal { state: s, action: a, delta_tilde });
        }
        Ok((num / den).min(1.0))
    }

    pub fn to_file(&self) -> DelayFile {
        DelayFile {
            delta_max: self.delta_max,
            d_max: self.d_max,
            known: self.known,
            p_delay: self.p_delay.iter().map(Categorical::to_dense).collect(),
            constant: self.constant,
        }
    }
}

/// JSON form of a [`DelayModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayFile {
    pub delta_max: usize,
    pub d_max: usize,
    pub known: bool,
    pub p_delay: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<usize>,
}

impl DelayFile {
    pub fn to_model(&self, num_states: usize, num_actions: usize) -> Result<DelayModel> {
        let m = DelayModel::new(num_states, num_actions, self.p_delay.clone(), self.delta_max, self.d_max, self.known)?;
        match self.constant {
            Some(d) => m.with_constant(d),
            None => Ok(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_012() -> DelayModel {
        let third = 1.0 / 3.0;
        DelayModel::new(1, 1, vec![vec![0.0, third, third, 1.0 - 2.0 * third]], 2, 4, true).unwrap()
    }

    const PLAIN: RevealFlags = RevealFlags { queue_full: false, horizon_end: false, queue_empty: false, first_step: false };

    #[test]
    fn uniform_reveal_probabilities() {
        let d = uniform_012();
        assert!((d.p_tran(0, 0, 0, PLAIN).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.p_tran(0, 0, 1, PLAIN).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(d.p_tran(0, 0, 2, PLAIN).unwrap(), 1.0);
    }

    #[test]
    fn point_mass_zero() {
        let d = DelayModel::new(1, 1, vec![vec![0.0, 1.0, 0.0]], 1, 1, true).unwrap();
        assert_eq!(d.p_tran(0, 0, 0, PLAIN).unwrap(), 1.0);
    }

    #[test]
    fn forced_branches() {
        let d = DelayModel::new(1, 1, vec![vec![0.2, 0.3, 0.5, 0.0]], 2, 3, true).unwrap();
        assert_eq!(d.p_tran(0, 0, 2, PLAIN).unwrap(), 1.0);
        let full = RevealFlags { queue_full: true, ..PLAIN };
        assert_eq!(d.p_tran(0, 0, 0, full).unwrap(), 1.0);
        let end = RevealFlags { horizon_end: true, ..PLAIN };
        assert_eq!(d.p_tran(0, 0, 1, end).unwrap(), 1.0);
    }

    #[test]
    fn empty_queue_rules() {
        let d = DelayModel::new(1, 1, vec![vec![0.2, 0.3, 0.5]], 1, 2, true).unwrap();
        let empty = RevealFlags { queue_empty: true, ..PLAIN };
        assert_eq!(d.p_tran(0, 0, -1, empty).unwrap(), 0.0);
        // -1 at zero accumulated delay behaves like 0.
        assert!((d.p_tran(0, 0, 0, empty).unwrap() - 0.5).abs() < 1e-15);
        assert!((d.p_tran(0, 0, 0, PLAIN).unwrap() - 0.3 / 0.8).abs() < 1e-15);
        assert!((d.p_tran(0, 0, -1, PLAIN).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unreachable_reveal_is_an_error() {
        let d = DelayModel::new(1, 1, vec![vec![0.0, 1.0, 0.0, 0.0]], 2, 2, true).unwrap();
        assert!(matches!(d.p_tran(0, 0, 1, PLAIN), Err(Error::UnreachableReveal { delta_tilde: 1, .. })));
    }

    #[test]
    fn constant_first_step() {
        let d = DelayModel::constant(1, 1, 2);
        let f = d.decision_flags(0, 1, 6);
        assert!(f.first_step);
        assert_eq!(d.p_tran(0, 0, 0, f).unwrap(), 0.0);
        let f = d.decision_flags(1, 2, 6);
        assert_eq!(d.p_tran(0, 0, 1, f).unwrap(), 0.0);
        let f = d.decision_flags(2, 3, 6);
        assert_eq!(d.p_tran(0, 0, 2, f).unwrap(), 1.0);
        // After the first reveal every state follows one step behind.
        let f = d.decision_flags(2, 4, 6);
        assert!(!f.first_step);
        assert_eq!(d.p_tran(0, 0, 0, f).unwrap(), 1.0);
    }

    #[test]
    fn validation() {
        assert!(DelayModel::new(1, 1, vec![vec![0.5, 0.5]], 1, 0, true).is_err());
        assert!(DelayModel::new(1, 1, vec![vec![0.5, 0.5]], 1, 1, true).is_err());
        assert!(DelayModel::new(1, 1, vec![vec![0.5, 0.6, 0.0]], 1, 1, true).is_err());
        let m = DelayModel::new(1, 1, vec![vec![0.5, 0.5, 0.0]], 1, 1, true).unwrap();
        assert!(m.with_constant(1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = DelayModel::constant(2, 2, 3);
        let back = d.to_file().to_model(2, 2).unwrap();
        assert_eq!(back, d);
    }
}
