//! Simulator for MDPs whose states are observed with stochastic delay.
//!
//! After action `a_h`, the successor `s_{h+1}` is revealed at the start of
//! step `h + 1 + D_h`, where `D_h = clip(D_{h-1} + Delta_h; 0, D_max)`.
//! Reveal times never decrease, so states arrive in order; several may
//! arrive in one step when inter-arrivals of `-1` chain.

use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::{Purpose, RngStream, SeedSpec};

/// What the agent sees at the start of step `h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayedObservation {
    pub last_state: usize,
    /// `(a_{t_h}, ..., a_{h-1})`.
    pub queue: Vec<usize>,
    pub delta_tilde: i32,
    pub step: usize,
    /// `(t, s_t)` for every state revealed at this step, in order.
    pub newly_revealed: Vec<(usize, usize)>,
}

/// Full record of an episode, disclosed once it is over.
///
/// Vectors are 0-based: `states[0]` is `s_1`, `deltas[0]` is `Delta_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub deltas: Vec<i32>,
    pub delays: Vec<usize>,
    /// `D_0`; non-zero only in constant mode.
    pub initial_delay: usize,
    pub rewards: Vec<f64>,
    /// Step at which `s_t` was revealed, `None` when after the horizon.
    pub reveal_step: Vec<Option<usize>>,
    pub total_reward: f64,
}

impl EpisodeLog {
    /// Checks the delay recursion and reveal schedule.
    pub fn check(&self, d_max: usize) -> Result<()> {
        let h = self.actions.len();
        if self.states.len() != h + 1 || self.deltas.len() != h || self.delays.len() != h {
            return Err(Error::Inconsistent("episode log lengths disagree".into()));
        }
        let mut prev = self.initial_delay as i64;
        for t in 0..h {
            let expect = (prev + self.deltas[t] as i64).clamp(0, d_max as i64);
            if self.delays[t] as i64 != expect {
                return Err(Error::Inconsistent(format!("D_{} = {} but recursion gives {expect}", t + 1, self.delays[t])));
            }
            prev = expect;
            let due = t + 2 + self.delays[t];
            let want = if due <= h { Some(due) } else { None };
            if self.reveal_step[t + 1] != want {
                return Err(Error::Inconsistent(format!("s_{} revealed at {:?}, expected {want:?}", t + 2, self.reveal_step[t + 1])));
            }
        }
        let total: f64 = self.rewards.iter().sum();
        if total != self.total_reward {
            return Err(Error::Inconsistent("total reward mismatch".into()));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log serializes")
    }
}

/// One episode-at-a-time environment handle.
#[derive(Debug, Clone)]
pub struct DelayedEnv<'a> {
    mdp: &'a TabularMdp,
    delay: &'a DelayModel,
    seed: SeedSpec,
    trans_rng: RngStream,
    delay_rng: RngStream,
    h: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    deltas: Vec<i32>,
    delays: Vec<usize>,
    rewards: Vec<f64>,
    reveal_time: Vec<usize>,
    /// 1-based index of the last revealed state.
    t: usize,
}

impl<'a> DelayedEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, delay: &'a DelayModel, seed: SeedSpec) -> Result<Self> {
        if delay.num_states() != mdp.num_states() || delay.num_actions() != mdp.num_actions() {
            return Err(Error::validation("delay model dimensions do not match the MDP"));
        }
        Ok(DelayedEnv {
            mdp,
            delay,
            seed,
            trans_rng: seed.stream(0, Purpose::Transition),
            delay_rng: seed.stream(0, Purpose::Delay),
            h: mdp.horizon() + 1,
            states: Vec::new(),
            actions: Vec::new(),
            deltas: Vec::new(),
            delays: Vec::new(),
            rewards: Vec::new(),
            reveal_time: Vec::new(),
            t: 0,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    pub fn delay(&self) -> &DelayModel {
        self.delay
    }

    /// Starts episode `episode`; its randomness depends only on the seed
    /// labels, not on earlier episodes.
    pub fn reset(&mut self, episode: u64) -> DelayedObservation {
        self.trans_rng = self.seed.stream(episode, Purpose::Transition);
        self.delay_rng = self.seed.stream(episode, Purpose::Delay);
        let s1 = self.mdp.initial_state();
        self.h = 1;
        self.states = vec![s1];
        self.actions.clear();
        self.deltas.clear();
        self.delays.clear();
        self.rewards.clear();
        self.reveal_time = vec![1];
        self.t = 1;
        DelayedObservation {
            last_state: s1,
            queue: Vec::new(),
            delta_tilde: 0,
            step: 1,
            newly_revealed: vec![(1, s1)],
        }
    }

    pub fn step_index(&self) -> usize {
        self.h
    }

    pub fn is_done(&self) -> bool {
        self.h > self.mdp.horizon()
    }

    pub fn step(&mut self, action: usize) -> Result<DelayedObservation> {
        let horizon = self.mdp.horizon();
        if self.h > horizon {
            return Err(Error::EpisodeFinished { horizon });
        }
        if action >= self.mdp.num_actions() {
            return Err(Error::validation(format!("action {action} out of range")));
        }
        let s = self.states[self.h - 1];
        let next = self.mdp.transition(s, action).sample(&mut self.trans_rng);
        let delta = self.delay.sample(s, action, &mut self.delay_rng);
        let prev = self.delays.last().copied().unwrap_or(self.delay.initial_delay()) as i64;
        let d = (prev + delta as i64).clamp(0, self.delay.d_max() as i64) as usize;
        self.states.push(next);
        self.actions.push(action);
        self.deltas.push(delta);
        self.delays.push(d);
        self.rewards.push(self.mdp.reward(s, action));
        self.reveal_time.push(self.h + 1 + d);
        self.h += 1;

        let mut newly_revealed = Vec::new();
        if self.h <= horizon {
            while self.t < self.h && self.reveal_time[self.t] == self.h {
                self.t += 1;
                newly_revealed.push((self.t, self.states[self.t - 1]));
            }
            debug_assert!(self.t == self.h || self.reveal_time[self.t] > self.h);
        }
        Ok(self.observation(newly_revealed))
    }

    fn observation(&self, newly_revealed: Vec<(usize, usize)>) -> DelayedObservation {
        DelayedObservation {
            last_state: self.states[self.t - 1],
            queue: self.actions[self.t - 1..].to_vec(),
            delta_tilde: self.h as i32 - self.reveal_time[self.t - 1] as i32,
            step: self.h,
            newly_revealed,
        }
    }

    pub fn finish_episode(&self) -> Result<EpisodeLog> {
        let horizon = self.mdp.horizon();
        if self.h != horizon + 1 {
            return Err(Error::EpisodeRunning { step: self.h, horizon });
        }
        let reveal_step = self
            .reveal_time
            .iter()
            .map(|&r| if r <= horizon { Some(r) } else { None })
            .collect();
        Ok(EpisodeLog {
            states: self.states.clone(),
            actions: self.actions.clone(),
            deltas: self.deltas.clone(),
            delays: self.delays.clone(),
            initial_delay: self.delay.initial_delay(),
            rewards: self.rewards.clone(),
            reveal_step,
            total_reward: self.rewards.iter().sum(),
        })
    }
}

/// How a constant-delay instance is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdmdpMode {
    /// Auxiliary start state with inter-arrival `D`; one extra step.
    Strict,
    /// Initial delay `D_0 = D` on the original instance.
    Fast,
}

/// Constant-delay version of `m` with delay `d`.
///
/// In strict mode the returned MDP has state `S` as its start state, which
/// moves to `s_1` under every action with reward 0, and horizon `H + 1`.
pub fn make_cdmdp(m: &TabularMdp, d: usize, d_max: usize, mode: CdmdpMode) -> Result<(TabularMdp, DelayModel)> {
    if d > d_max {
        return Err(Error::validation(format!("constant delay {d} exceeds d_max = {d_max}")));
    }
    let (s_n, a_n) = (m.num_states(), m.num_actions());
    match mode {
        CdmdpMode::Fast => {
            let rows = vec![point_row(d, 0); s_n * a_n];
            let model = DelayModel::new(s_n, a_n, rows, d, d_max, true)?.with_constant(d)?;
            Ok((m.clone(), model))
        }
        CdmdpMode::Strict => {
            let start = s_n;
            let mut r = m.reward_table();
            let mut p: Vec<Vec<Vec<f64>>> = m
                .transition_table()
                .into_iter()
                .map(|rows| rows.into_iter().map(|mut row| {
                    row.push(0.0);
                    row
                }).collect())
                .collect();
            r.push(vec![0.0; a_n]);
            let mut to_s1 = vec![0.0; s_n + 1];
            to_s1[m.initial_state()] = 1.0;
            p.push(vec![to_s1; a_n]);
            let aug = TabularMdp::new(s_n + 1, a_n, m.horizon() + 1, m.branching(), start, r, p)?;
            let mut rows = vec![point_row(d, 0); (s_n + 1) * a_n];
            for a in 0..a_n {
                rows[start * a_n + a] = point_row(d, d as i32);
            }
            let model = DelayModel::new(s_n + 1, a_n, rows, d, d_max, true)?;
            Ok((aug, model))
        }
    }
}

fn point_row(delta_max: usize, at: i32) -> Vec<f64> {
    let mut row = vec![0.0; delta_max + 2];
    row[(at + 1) as usize] = 1.0;
    row
}
