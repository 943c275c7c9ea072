//! The augmented MDP over `(last observed state, action queue, tag, h)`.
//!
//! Decision nodes carry a tag `dt >= 0`. Queueing an action moves to step
//! `h + 1`, either into a `tran` node (the pending state is revealed) or to
//! `dt + 1`. A `tran` node resolves the head of the queue by sampling the
//! revealed state and pays its reward; it lands on a `-1` node, which may
//! chain into another reveal within the same step.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::delay::DelayModel;
use crate::env::DelayedObservation;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::splitmix64;

/// Default limit on memoized augmented states.
pub const DEFAULT_BUDGET: usize = 10_000_000;

/// Action queue packed in base `A`, first action most significant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Queue {
    code: u64,
    len: u8,
}

impl Queue {
    pub const EMPTY: Queue = Queue { code: 0, len: 0 };

    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn code(self) -> u64 {
        self.code
    }
}

/// Packs and unpacks [`Queue`]s for a fixed action count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueCodec {
    base: u64,
    pow: Vec<u64>,
}

impl QueueCodec {
    /// Supports queues up to `max_len`; fails if `A^max_len` overflows.
    pub fn new(num_actions: usize, max_len: usize) -> Result<Self> {
        let base = num_actions as u64;
        if max_len > u8::MAX as usize {
            return Err(Error::validation(format!("queue length {max_len} too large")));
        }
        let mut pow = Vec::with_capacity(max_len + 1);
        let mut x: u64 = 1;
        pow.push(x);
        for _ in 0..max_len {
            x = x.checked_mul(base).ok_or_else(|| {
                Error::validation(format!("A^{max_len} with A = {num_actions} does not fit in 64 bits"))
            })?;
            pow.push(x);
        }
        Ok(QueueCodec { base, pow })
    }

    pub fn max_len(&self) -> usize {
        self.pow.len() - 1
    }

    pub fn push(&self, q: Queue, a: usize) -> Queue {
        debug_assert!(q.len() < self.max_len());
        Queue { code: q.code * self.base + a as u64, len: q.len + 1 }
    }

    pub fn first(&self, q: Queue) -> usize {
        debug_assert!(!q.is_empty());
        (q.code / self.pow[q.len() - 1]) as usize
    }

    pub fn last(&self, q: Queue) -> usize {
        debug_assert!(!q.is_empty());
        (q.code % self.base) as usize
    }

    pub fn pop_back(&self, q: Queue) -> Queue {
        debug_assert!(!q.is_empty());
        Queue { code: q.code / self.base, len: q.len - 1 }
    }

    pub fn pop_front(&self, q: Queue) -> Queue {
        debug_assert!(!q.is_empty());
        Queue { code: q.code % self.pow[q.len() - 1], len: q.len - 1 }
    }

    pub fn from_slice(&self, actions: &[usize]) -> Queue {
        actions.iter().fold(Queue::EMPTY, |q, &a| self.push(q, a))
    }

    pub fn to_vec(&self, q: Queue) -> Vec<usize> {
        (0..q.len())
            .map(|i| ((q.code / self.pow[q.len() - 1 - i]) % self.base) as usize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    Delta(i32),
    Tran,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Delta(d) => write!(f, "{d}"),
            Tag::Tran => write!(f, "tran"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugState {
    pub s: usize,
    pub queue: Queue,
    pub tag: Tag,
    pub h: usize,
}

impl AugState {
    /// Stable 64-bit digest, independent of the process hasher.
    pub fn key64(&self) -> u64 {
        let tag = match self.tag {
            Tag::Delta(d) => d as i64 as u64,
            Tag::Tran => u64::MAX,
        };
        [self.s as u64, self.queue.code, self.queue.len as u64, tag, self.h as u64]
            .iter()
            .fold(0x51_7c_c1_b7_27_22_0a_95, |acc, &x| splitmix64(acc ^ x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Decision,
    Tran,
    Chain,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugOutcome {
    pub next: AugState,
    pub prob: f64,
    pub reward: f64,
}

pub type Outcomes = SmallVec<[AugOutcome; 8]>;

/// The augmented MDP of an instance and its delay model.
#[derive(Debug, Clone)]
pub struct AugMdp<'a> {
    mdp: &'a TabularMdp,
    delay: &'a DelayModel,
    codec: QueueCodec,
}

impl<'a> AugMdp<'a> {
    pub fn new(mdp: &'a TabularMdp, delay: &'a DelayModel) -> Result<Self> {
        if delay.num_states() != mdp.num_states() || delay.num_actions() != mdp.num_actions() {
            return Err(Error::validation("delay model dimensions do not match the MDP"));
        }
        let codec = QueueCodec::new(mdp.num_actions(), delay.d_max() + 1)?;
        Ok(AugMdp { mdp, delay, codec })
    }

    pub fn mdp(&self) -> &'a TabularMdp {
        self.mdp
    }

    pub fn delay(&self) -> &'a DelayModel {
        self.delay
    }

    pub fn codec(&self) -> &QueueCodec {
        &self.codec
    }

    pub fn initial(&self) -> AugState {
        AugState { s: self.mdp.initial_state(), queue: Queue::EMPTY, tag: Tag::Delta(0), h: 1 }
    }

    /// The decision node matching what the agent observes.
    pub fn observe(&self, obs: &DelayedObservation) -> AugState {
        AugState {
            s: obs.last_state,
            queue: self.codec.from_slice(&obs.queue),
            tag: Tag::Delta(obs.delta_tilde),
            h: obs.step,
        }
    }

    pub fn category(&self, st: &AugState) -> Category {
        match st.tag {
            Tag::Tran => Category::Tran,
            Tag::Delta(-1) if st.queue.is_empty() && st.h == self.mdp.horizon() + 1 => Category::Terminal,
            Tag::Delta(-1) => Category::Chain,
            Tag::Delta(_) => Category::Decision,
        }
    }

    pub fn successors(&self, st: &AugState, action: Option<usize>) -> Result<Outcomes> {
        let horizon = self.mdp.horizon();
        let mut out = Outcomes::new();
        match (self.category(st), action) {
            (Category::Decision, Some(a)) => {
                let Tag::Delta(dt) = st.tag else { unreachable!() };
                if st.h > horizon || a >= self.mdp.num_actions() {
                    return Err(Error::validation(format!("no decision at {}", self.describe(st))));
                }
                let flags = self.delay.decision_flags(st.queue.len(), st.h, horizon);
                let q = self.codec.push(st.queue, a);
                let p = self.delay.p_tran(st.s, self.codec.first(q), dt, flags)?;
                push_split(&mut out, st.s, q, dt + 1, st.h + 1, p, 0.0);
            }
            (Category::Tran, None) => {
                let a = self.codec.first(st.queue);
                let rest = self.codec.pop_front(st.queue);
                let r = self.mdp.reward(st.s, a);
                for (s2, p) in self.mdp.transition(st.s, a).iter() {
                    out.push(AugOutcome { next: AugState { s: s2, queue: rest, tag: Tag::Delta(-1), h: st.h }, prob: p, reward: r });
                }
            }
            (Category::Chain, None) if st.queue.is_empty() => {
                out.push(AugOutcome { next: AugState { tag: Tag::Delta(0), ..*st }, prob: 1.0, reward: 0.0 });
            }
            (Category::Chain, None) => {
                let flags = self.delay.chain_flags(st.queue.len(), st.h, horizon);
                let p = self.delay.p_tran(st.s, self.codec.first(st.queue), -1, flags)?;
                push_split(&mut out, st.s, st.queue, 0, st.h, p, 0.0);
            }
            (Category::Terminal, None) => {}
            (cat, a) => {
                return Err(Error::validation(format!(
                    "{cat:?} node {} cannot take action {a:?}",
                    self.describe(st)
                )))
            }
        }
        Ok(out)
    }

    pub fn describe(&self, st: &AugState) -> String {
        format!("(s={}, a={:?}, tag={}, h={})", st.s, self.codec.to_vec(st.queue), st.tag, st.h)
    }

    pub fn to_json(&self, st: &AugState) -> serde_json::Value {
        let tag = match st.tag {
            Tag::Delta(d) => serde_json::json!(d),
            Tag::Tran => serde_json::json!("tran"),
        };
        serde_json::json!({ "s": st.s, "queue": self.codec.to_vec(st.queue), "tag": tag, "h": st.h })
    }

    /// Every reachable node with its outcome lists, in depth-first order,
    /// as JSON lines.
    pub fn reachable_graph(&self, budget: usize) -> Result<Vec<String>> {
        let mut seen = FxHashMap::default();
        let mut stack = vec![self.initial()];
        let mut lines = Vec::new();
        seen.insert(self.initial(), ());
        while let Some(st) = stack.pop() {
            let actions: Vec<Option<usize>> = match self.category(&st) {
                Category::Decision => (0..self.mdp.num_actions()).map(Some).collect(),
                Category::Terminal => Vec::new(),
                _ => vec![None],
            };
            let mut entries = Vec::new();
            for a in actions {
                let outs = self.successors(&st, a)?;
                let list: Vec<serde_json::Value> = outs
                    .iter()
                    .map(|o| serde_json::json!({ "next": self.to_json(&o.next), "p": o.prob, "r": o.reward }))
                    .collect();
                entries.push(serde_json::json!({ "action": a, "outcomes": list }));
                for o in outs.iter().rev() {
                    if seen.insert(o.next, ()).is_none() {
                        if seen.len() > budget {
                            return Err(Error::Budget { reached: seen.len(), budget });
                        }
                        stack.push(o.next);
                    }
                }
            }
            lines.push(serde_json::json!({ "state": self.to_json(&st), "actions": entries }).to_string());
        }
        Ok(lines)
    }
}

fn push_split(out: &mut Outcomes, s: usize, q: Queue, next_dt: i32, h: usize, p: f64, reward: f64) {
    if p > 0.0 {
        out.push(AugOutcome { next: AugState { s, queue: q, tag: Tag::Tran, h }, prob: p, reward });
    }
    if p < 1.0 {
        out.push(AugOutcome { next: AugState { s, queue: q, tag: Tag::Delta(next_dt), h }, prob: 1.0 - p, reward });
    }
}

/// What a delayed policy does at a decision node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction {
    Pick(usize),
    /// Uniformly random over all actions.
    UniformOverAll,
}

/// A policy over decision nodes `(s_{t_h}, queue, dt, h)`.
pub trait DelayedPolicy {
    fn act(&mut self, st: &AugState) -> Result<PolicyAction>;
}

/// Deterministic decisions stored per node.
#[derive(Debug, Clone, Default)]
pub struct DecisionMap {
    pub actions: FxHashMap<AugState, usize>,
}

impl DelayedPolicy for DecisionMap {
    fn act(&mut self, st: &AugState) -> Result<PolicyAction> {
        self.actions
            .get(st)
            .map(|&a| PolicyAction::Pick(a))
            .ok_or_else(|| Error::PolicyUndefined(format!("{st:?}")))
    }
}

/// Uniformly random action at every node.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl DelayedPolicy for UniformPolicy {
    fn act(&mut self, _st: &AugState) -> Result<PolicyAction> {
        Ok(PolicyAction::UniformOverAll)
    }
}

/// Arbitrary but fixed deterministic policy: the action is a hash of the
/// node and `seed`.
#[derive(Debug, Clone, Copy)]
pub struct HashPolicy {
    pub seed: u64,
    pub num_actions: usize,
}

impl DelayedPolicy for HashPolicy {
    fn act(&mut self, st: &AugState) -> Result<PolicyAction> {
        Ok(PolicyAction::Pick((splitmix64(st.key64() ^ self.seed) % self.num_actions as u64) as usize))
    }
}

impl<P: DelayedPolicy + ?Sized> DelayedPolicy for &mut P {
    fn act(&mut self, st: &AugState) -> Result<PolicyAction> {
        (**self).act(st)
    }
}

/// Optimal delayed value at the initial node, and the optimal decisions at
/// every node reachable under some policy.
#[derive(Debug, Clone)]
pub struct OptimalDelayed {
    pub value: f64,
    pub policy: DecisionMap,
    pub states: usize,
}

pub fn optimal_delayed_value(mdp: &TabularMdp, delay: &DelayModel, budget: usize) -> Result<OptimalDelayed> {
    let aug = AugMdp::new(mdp, delay)?;
    let mut solver = Solver { aug: &aug, memo: FxHashMap::default(), budget, policy: DecisionMap::default() };
    let value = solver.optimal(&aug.initial())?;
    let states = solver.memo.len();
    Ok(OptimalDelayed { value, policy: solver.policy, states })
}

/// Exact expected return of `policy`, visiting only nodes it can reach.
pub fn evaluate_delayed_policy(
    mdp: &TabularMdp,
    delay: &DelayModel,
    policy: &mut dyn DelayedPolicy,
    budget: usize,
) -> Result<f64> {
    let aug = AugMdp::new(mdp, delay)?;
    let mut solver = Solver { aug: &aug, memo: FxHashMap::default(), budget, policy: DecisionMap::default() };
    solver.evaluate(&aug.initial(), policy)
}

struct Solver<'s, 'a> {
    aug: &'s AugMdp<'a>,
    memo: FxHashMap<AugState, f64>,
    budget: usize,
    policy: DecisionMap,
}

impl Solver<'_, '_> {
    fn remember(&mut self, st: AugState, v: f64) -> Result<f64> {
        self.memo.insert(st, v);
        if self.memo.len() > self.budget {
            return Err(Error::Budget { reached: self.memo.len(), budget: self.budget });
        }
        Ok(v)
    }

    /// `r + sum p V`; all outcomes of one node share the reward.
    fn backup(&mut self, outs: &Outcomes, mut next: impl FnMut(&mut Self, &AugState) -> Result<f64>) -> Result<f64> {
        let mut q = 0.0;
        for o in outs {
            q += o.prob * next(self, &o.next)?;
        }
        Ok(outs.first().map_or(0.0, |o| o.reward) + q)
    }

    fn optimal(&mut self, st: &AugState) -> Result<f64> {
        if let Some(&v) = self.memo.get(st) {
            return Ok(v);
        }
        let v = match self.aug.category(st) {
            Category::Terminal => 0.0,
            Category::Decision => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for a in 0..self.aug.mdp.num_actions() {
                    let outs = self.aug.successors(st, Some(a))?;
                    let q = self.backup(&outs, |me, n| me.optimal(n))?;
                    if q > best {
                        best = q;
                        arg = a;
                    }
                }
                self.policy.actions.insert(*st, arg);
                best
            }
            _ => {
                let outs = self.aug.successors(st, None)?;
                self.backup(&outs, |me, n| me.optimal(n))?
            }
        };
        self.remember(*st, v)
    }

    fn evaluate(&mut self, st: &AugState, policy: &mut dyn DelayedPolicy) -> Result<f64> {
        if let Some(&v) = self.memo.get(st) {
            return Ok(v);
        }
        let v = match self.aug.category(st) {
            Category::Terminal => 0.0,
            Category::Decision => match policy.act(st)? {
                PolicyAction::Pick(a) => {
                    if a >= self.aug.mdp.num_actions() {
                        return Err(Error::PolicyUndefined(format!("{} chose action {a}", self.aug.describe(st))));
                    }
                    let outs = self.aug.successors(st, Some(a))?;
                    self.backup(&outs, |me, n| me.evaluate(n, policy))?
                }
                PolicyAction::UniformOverAll => {
                    let n_a = self.aug.mdp.num_actions();
                    let mut total = 0.0;
                    for a in 0..n_a {
                        let outs = self.aug.successors(st, Some(a))?;
                        total += self.backup(&outs, |me, n| me.evaluate(n, policy))?;
                    }
                    total / n_a as f64
                }
            },
            _ => {
                let outs = self.aug.successors(st, None)?;
                self.backup(&outs, |me, n| me.evaluate(n, policy))?
            }
        };
        self.remember(*st, v)
    }
}
