//! MVP-Delayed: optimistic planning on the augmented MDP, run through the
//! partially-known-dynamics planner.
//!
//! The planner state is `x = (s, tag)`, `y = (queue, h)`. Queue and step
//! evolve deterministically; what is uncertain is the revealed state at a
//! `tran` node (estimated from `N(s, a)`) and, in unknown mode, whether the
//! pending state is revealed at a decision or `-1` node (estimated from the
//! inter-arrival counts `N(s, a, dt)`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augmented::{
    evaluate_delayed_policy, optimal_delayed_value, AugMdp, AugState, DelayedPolicy, PolicyAction, Queue, QueueCodec,
    Tag, UniformPolicy,
};
use crate::delay::{DelayModel, Exception};
use crate::env::{DelayedEnv, EpisodeLog};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::pkd::{feature_value, EffKind, EffModel, PkdSpec, Planner, XDist, YDist};
use crate::rng::{Purpose, SeedSpec};
use crate::trace::{RegretAccumulator, RegretTrace};

/// `(D log A + log(64 H (D+1)^2 Dm S A K / delta)) min (b log(32 H b Dm S A K / delta))`
/// with `Dm = max(delta_max, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn ell_star_delayed(
    d: usize,
    b: f64,
    horizon: usize,
    delta_max: usize,
    num_states: usize,
    num_actions: usize,
    episodes: u64,
    delta: f64,
) -> f64 {
    let dm = delta_max.max(1) as f64;
    let core = horizon as f64 * dm * num_states as f64 * num_actions as f64 * episodes as f64 / delta;
    let d = d as f64;
    let first = d * (num_actions as f64).ln() + (64.0 * (d + 1.0) * (d + 1.0) * core).ln();
    let second = b * (32.0 * b * core).ln();
    first.min(second)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayMode {
    /// Reveal probabilities come from the true delay model.
    Known,
    /// Reveal probabilities are estimated from logged inter-arrivals.
    Unknown,
}

impl fmt::Display for DelayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DelayMode::Known => "known",
            DelayMode::Unknown => "unknown",
        })
    }
}

impl FromStr for DelayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known" => Ok(DelayMode::Known),
            "unknown" => Ok(DelayMode::Unknown),
            _ => Err(Error::validation(format!("delay mode must be known or unknown, got {s:?}"))),
        }
    }
}

/// Visit counts, successor counts and inter-arrival tail counts per `(s, a)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayedEstimator {
    num_states: usize,
    num_actions: usize,
    delta_max: usize,
    n_sa: Vec<u64>,
    /// `N(s, a, dt)`: visits with `Delta >= dt`, `dt` in `[-1, delta_max]`.
    n_geq: Vec<u64>,
    next: Vec<BTreeMap<usize, u64>>,
}

impl DelayedEstimator {
    pub fn new(num_states: usize, num_actions: usize, delta_max: usize) -> Self {
        let pairs = num_states * num_actions;
        DelayedEstimator {
            num_states,
            num_actions,
            delta_max,
            n_sa: vec![0; pairs],
            n_geq: vec![0; pairs * (delta_max + 2)],
            next: vec![BTreeMap::new(); pairs],
        }
    }

    fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// One visit of `(s, a)` with inter-arrival `delta` and successor `s2`.
    pub fn record(&mut self, s: usize, a: usize, delta: i32, s2: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions || s2 >= self.num_states {
            return Err(Error::validation(format!("visit ({s}, {a}) -> {s2} out of range")));
        }
        if delta < -1 || delta > self.delta_max as i32 {
            return Err(Error::validation(format!("inter-arrival {delta} outside [-1, {}]", self.delta_max)));
        }
        let i = self.pair(s, a);
        self.n_sa[i] += 1;
        let base = i * (self.delta_max + 2);
        for c in &mut self.n_geq[base..=base + (delta + 1) as usize] {
            *c += 1;
        }
        *self.next[i].entry(s2).or_default() += 1;
        Ok(())
    }

    pub fn update_from_log(&mut self, log: &EpisodeLog) -> Result<()> {
        if log.states.len() != log.actions.len() + 1 || log.deltas.len() != log.actions.len() {
            return Err(Error::Inconsistent("episode log lengths disagree".into()));
        }
        for t in 0..log.actions.len() {
            self.record(log.states[t], log.actions[t], log.deltas[t], log.states[t + 1])?;
        }
        Ok(())
    }

    pub fn n(&self, s: usize, a: usize) -> u64 {
        self.n_sa[self.pair(s, a)]
    }

    /// `N(s, a, dt)`; zero above `delta_max`.
    pub fn n_geq(&self, s: usize, a: usize, dt: i32) -> u64 {
        if dt > self.delta_max as i32 {
            return 0;
        }
        let dt = dt.max(-1);
        self.n_geq[self.pair(s, a) * (self.delta_max + 2) + (dt + 1) as usize]
    }

    /// Empirical successor distribution, `None` before the first visit.
    pub fn p_hat(&self, s: usize, a: usize) -> Option<Vec<(usize, f64)>> {
        let i = self.pair(s, a);
        let n = self.n_sa[i];
        (n > 0).then(|| self.next[i].iter().map(|(&s2, &c)| (s2, c as f64 / n as f64)).collect())
    }

    /// `(N(dt) - N(dt+1)) / N(dt)`, `None` when `N(dt) = 0`.
    pub fn p_tran_hat(&self, s: usize, a: usize, dt: i32) -> Option<f64> {
        let den = self.n_geq(s, a, dt);
        (den > 0).then(|| (den - self.n_geq(s, a, dt + 1)) as f64 / den as f64)
    }

    /// Reveal probability with zero accumulated delay, `P(Delta <= 0)`.
    pub fn p_tran_hat_clipped(&self, s: usize, a: usize) -> Option<f64> {
        let den = self.n_geq(s, a, -1);
        (den > 0).then(|| (den - self.n_geq(s, a, 1)) as f64 / den as f64)
    }

    /// Visited pairs with their counts, as JSON.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut pairs = Vec::new();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let i = self.pair(s, a);
                if self.n_sa[i] == 0 {
                    continue;
                }
                let base = i * (self.delta_max + 2);
                pairs.push(serde_json::json!({
                    "s": s,
                    "a": a,
                    "n": self.n_sa[i],
                    "n_geq": &self.n_geq[base..base + self.delta_max + 2],
                    "next": self.next[i].iter().map(|(s2, c)| [*s2 as u64, *c]).collect::<Vec<_>>(),
                }));
            }
        }
        serde_json::json!({ "delta_max": self.delta_max, "pairs": pairs })
    }
}

/// Feature of a planner transition. `depth` is the queue length used by
/// the log term; counts never depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DelayFeature {
    pub s: usize,
    pub a: usize,
    pub tag: Tag,
    pub exception: Exception,
    pub depth: u8,
}

type X = (usize, Tag);
type Y = (Queue, usize);

#[derive(Debug, Clone)]
pub struct DelayedSpec<'a> {
    mdp: &'a TabularMdp,
    delay: &'a DelayModel,
    codec: QueueCodec,
    mode: DelayMode,
    episodes: u64,
    delta: f64,
}

impl<'a> DelayedSpec<'a> {
    pub fn new(mdp: &'a TabularMdp, delay: &'a DelayModel, mode: DelayMode, episodes: u64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::validation(format!("delta = {delta} outside (0, 1)")));
        }
        if mode == DelayMode::Known && !delay.known() {
            return Err(Error::validation("known mode needs a delay model marked known"));
        }
        if mode == DelayMode::Unknown && delay.constant_delay().is_some() {
            return Err(Error::validation("unknown mode is not supported with a constant initial delay"));
        }
        let aug = AugMdp::new(mdp, delay)?;
        Ok(DelayedSpec { mdp, delay, codec: aug.codec().clone(), mode, episodes: episodes.max(1), delta })
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

    pub fn mode(&self) -> DelayMode {
        self.mode
    }

    pub fn ell(&self, depth: usize, b: f64) -> f64 {
        let m = self.mdp;
        ell_star_delayed(
            depth,
            b,
            m.horizon(),
            self.delay.delta_max(),
            m.num_states(),
            m.num_actions(),
            self.episodes,
            self.delta,
        )
    }
}

impl PkdSpec for DelayedSpec<'_> {
    type X = X;
    type Y = Y;
    type Z = DelayFeature;

    fn horizon(&self) -> f64 {
        self.mdp.horizon() as f64
    }

    fn initial(&self) -> (X, Y) {
        ((self.mdp.initial_state(), Tag::Delta(0)), (Queue::EMPTY, 1))
    }

    fn num_actions(&self, (_, tag): X, (q, h): Y) -> usize {
        match tag {
            Tag::Tran => 1,
            Tag::Delta(-1) if q.is_empty() && h == self.mdp.horizon() + 1 => 0,
            Tag::Delta(-1) => 1,
            Tag::Delta(_) if h <= self.mdp.horizon() => self.mdp.num_actions(),
            Tag::Delta(_) => 0,
        }
    }

    fn reward(&self, (s, tag): X, (q, _): Y, _a: usize) -> f64 {
        match tag {
            Tag::Tran => self.mdp.reward(s, self.codec.first(q)),
            Tag::Delta(_) => 0.0,
        }
    }

    fn y_kernel(&self, (_, tag): X, (q, h): Y, a: usize, out: &mut YDist<Y>) -> Result<()> {
        let y2 = match tag {
            Tag::Tran => (self.codec.pop_front(q), h),
            Tag::Delta(-1) => (q, h),
            Tag::Delta(_) => (self.codec.push(q, a), h + 1),
        };
        out.push((y2, 1.0));
        Ok(())
    }

    fn feature(&self, (s, tag): X, (q, h): Y, a: usize, _y2: Y) -> Result<DelayFeature> {
        let horizon = self.mdp.horizon();
        let z = match tag {
            Tag::Tran => DelayFeature { s, a: self.codec.first(q), tag, exception: Exception::None, depth: q.len() as u8 },
            Tag::Delta(-1) if q.is_empty() => DelayFeature { s, a: 0, tag, exception: Exception::NoReveal, depth: 0 },
            Tag::Delta(-1) => {
                let flags = self.delay.chain_flags(q.len(), h, horizon);
                let exception = self.delay.exception(-1, flags);
                DelayFeature { s, a: self.codec.first(q), tag, exception, depth: q.len() as u8 }
            }
            Tag::Delta(dt) => {
                let flags = self.delay.decision_flags(q.len(), h, horizon);
                let exception = self.delay.exception(dt, flags);
                let q2 = self.codec.push(q, a);
                DelayFeature { s, a: self.codec.first(q2), tag, exception, depth: q2.len() as u8 }
            }
        };
        Ok(z)
    }

    fn ell_star(&self, z: DelayFeature) -> f64 {
        match z.tag {
            Tag::Tran => self.ell(z.depth as usize, self.mdp.branching() as f64),
            Tag::Delta(_) => self.ell(z.depth as usize, 2.0),
        }
    }
}

/// Effective kernels of [`DelayedSpec`] given the current counts.
#[derive(Debug, Clone, Copy)]
pub struct DelayedModel<'e> {
    pub est: &'e DelayedEstimator,
}

impl EffModel<DelayedSpec<'_>> for DelayedModel<'_> {
    fn eff(&self, spec: &DelayedSpec<'_>, z: DelayFeature, out: &mut XDist<X>) -> Result<EffKind> {
        let DelayFeature { s, a, tag, exception, .. } = z;
        let dt = match tag {
            Tag::Tran => {
                let n = self.est.n(s, a);
                if n > 1 {
                    for (s2, p) in self.est.p_hat(s, a).unwrap_or_default() {
                        out.push(((s2, Tag::Delta(-1)), p));
                    }
                }
                return Ok(EffKind::Estimated { count: n });
            }
            Tag::Delta(dt) => dt,
        };
        match exception {
            Exception::Forced => {
                out.push(((s, Tag::Tran), 1.0));
                return Ok(EffKind::Known);
            }
            Exception::NoReveal => {
                out.push(((s, Tag::Delta(dt + 1)), 1.0));
                return Ok(EffKind::Known);
            }
            _ => {}
        }
        let (p, kind) = match spec.mode {
            DelayMode::Known => (spec.delay.reveal_prob(s, a, dt, exception)?, EffKind::Known),
            DelayMode::Unknown => {
                let (n, p) = match exception {
                    Exception::None => (self.est.n_geq(s, a, dt), self.est.p_tran_hat(s, a, dt)),
                    Exception::ClippedLow => (self.est.n_geq(s, a, -1), self.est.p_tran_hat_clipped(s, a)),
                    _ => return Err(Error::Inconsistent(format!("no estimate for {exception:?}"))),
                };
                if n <= 1 {
                    return Ok(EffKind::Estimated { count: n });
                }
                (p.unwrap_or(0.0), EffKind::Estimated { count: n })
            }
        };
        if p > 0.0 {
            out.push(((s, Tag::Tran), p));
        }
        if p < 1.0 {
            out.push(((s, Tag::Delta(dt + 1)), 1.0 - p));
        }
        Ok(kind)
    }
}

fn split(st: &AugState) -> (X, Y) {
    ((st.s, st.tag), (st.queue, st.h))
}

/// Learner state: a `DelayedSpec` plus counts and the current plan.
#[derive(Debug, Clone)]
pub struct MvpDelayed<'a> {
    spec: DelayedSpec<'a>,
    est: DelayedEstimator,
    planner: Planner<X, Y>,
}

impl<'a> MvpDelayed<'a> {
    pub fn new(spec: DelayedSpec<'a>, budget: usize) -> Self {
        let m = spec.mdp;
        let est = DelayedEstimator::new(m.num_states(), m.num_actions(), spec.delay.delta_max());
        MvpDelayed { spec, est, planner: Planner::new(budget) }
    }

    pub fn spec(&self) -> &DelayedSpec<'a> {
        &self.spec
    }

    pub fn estimator(&self) -> &DelayedEstimator {
        &self.est
    }

    /// Replacing the counts drops the current plan.
    pub fn set_estimator(&mut self, est: DelayedEstimator) {
        self.est = est;
        self.planner.clear();
    }

    /// Drops the previous plan and returns the value at the initial node.
    pub fn plan(&mut self) -> Result<f64> {
        self.planner.clear();
        let (x, y) = self.spec.initial();
        self.planner.value(&self.spec, &DelayedModel { est: &self.est }, x, y)
    }

    pub fn value(&mut self, st: &AugState) -> Result<f64> {
        let (x, y) = split(st);
        self.planner.value(&self.spec, &DelayedModel { est: &self.est }, x, y)
    }

    pub fn action(&mut self, st: &AugState) -> Result<usize> {
        let (x, y) = split(st);
        self.planner.action(&self.spec, &DelayedModel { est: &self.est }, x, y)
    }

    /// Optimistic estimate of the node `(s, queue, dt, h)` reached after a
    /// decision (`dt >= 0`, `queue` includes the new action) or of the `-1`
    /// node `(s, queue, -1, h)`.
    pub fn q_estimate(&mut self, s: usize, queue: &[usize], dt: i32, h: usize) -> Result<f64> {
        let codec = &self.spec.codec;
        let q = codec.from_slice(queue);
        let (x, y, a) = if dt >= 0 {
            if queue.is_empty() || h < 2 {
                return Err(Error::validation("a decision estimate needs a non-empty queue and h >= 2"));
            }
            ((s, Tag::Delta(dt)), (codec.pop_back(q), h - 1), codec.last(q))
        } else {
            ((s, Tag::Delta(-1)), (q, h), 0)
        };
        let y2 = (q, h);
        let model = DelayedModel { est: &self.est };
        let z = self.spec.feature(x, y, a, y2)?;
        let (spec, planner) = (&self.spec, &mut self.planner);
        feature_value(spec, &model, 0.0, z, y2, &mut |x2, y3| planner.value(spec, &model, x2, y3))
    }

    pub fn update(&mut self, log: &EpisodeLog) -> Result<()> {
        self.est.update_from_log(log)
    }

    /// Every node valued so far in the current plan.
    pub fn planned(&self) -> Vec<(AugState, f64)> {
        let mut out: Vec<_> = self
            .planner
            .entries()
            .map(|(&((s, tag), (queue, h)), &v)| (AugState { s, queue, tag, h }, v))
            .collect();
        out.sort_by_key(|x| x.0);
        out
    }
}

impl DelayedPolicy for MvpDelayed<'_> {
    fn act(&mut self, st: &AugState) -> Result<PolicyAction> {
        self.action(st).map(PolicyAction::Pick)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedRunOptions {
    pub episodes: u64,
    pub delta: f64,
    pub mode: DelayMode,
    pub seed: SeedSpec,
    /// Exact evaluation every `stride` episodes; `0` disables it.
    pub stride: usize,
    pub budget: usize,
}

pub fn run_mvp_delayed(mdp: &TabularMdp, delay: &DelayModel, opts: &DelayedRunOptions) -> Result<RegretTrace> {
    run_mvp_delayed_with(mdp, delay, opts, &mut |_, _| Ok(()))
}

/// Like [`run_mvp_delayed`], calling `after` with the episode index and
/// the updated learner at the end of every episode.
pub fn run_mvp_delayed_with(
    mdp: &TabularMdp,
    delay: &DelayModel,
    opts: &DelayedRunOptions,
    after: &mut dyn FnMut(u64, &MvpDelayed<'_>) -> Result<()>,
) -> Result<RegretTrace> {
    let spec = DelayedSpec::new(mdp, delay, opts.mode, opts.episodes, opts.delta)?;
    let mut learner = MvpDelayed::new(spec, opts.budget);
    let aug = AugMdp::new(mdp, delay)?;
    let optimal = if opts.stride > 0 { Some(optimal_delayed_value(mdp, delay, opts.budget)?.value) } else { None };
    let mut acc = RegretAccumulator::new(optimal, opts.stride, opts.seed.master_seed);
    let mut env = DelayedEnv::new(mdp, delay, opts.seed)?;
    for k in 1..=opts.episodes {
        let estimate = learner.plan()?;
        let exact = if acc.wants_exact(k) {
            Some(evaluate_delayed_policy(mdp, delay, &mut learner, opts.budget)?)
        } else {
            None
        };
        let mut obs = env.reset(k - 1);
        while !env.is_done() {
            let a = learner.action(&aug.observe(&obs))?;
            obs = env.step(a)?;
        }
        let log = env.finish_episode()?;
        learner.update(&log)?;
        acc.push(k, Some(estimate), log.total_reward, exact);
        after(k, &learner)?;
    }
    Ok(acc.finish())
}

/// Uniformly random actions; the exact value is that of the uniform policy.
pub fn run_random_policy(
    mdp: &TabularMdp,
    delay: &DelayModel,
    episodes: u64,
    seed: SeedSpec,
    stride: usize,
    budget: usize,
) -> Result<RegretTrace> {
    let (optimal, uniform) = if stride > 0 {
        let opt = optimal_delayed_value(mdp, delay, budget)?.value;
        (Some(opt), Some(evaluate_delayed_policy(mdp, delay, &mut UniformPolicy, budget)?))
    } else {
        (None, None)
    };
    let mut acc = RegretAccumulator::new(optimal, stride, seed.master_seed);
    let mut env = DelayedEnv::new(mdp, delay, seed)?;
    for k in 1..=episodes {
        let mut rng = seed.stream(k - 1, Purpose::Policy);
        env.reset(k - 1);
        while !env.is_done() {
            env.step(rng.below(mdp.num_actions()))?;
        }
        let log = env.finish_episode()?;
        let exact = if acc.wants_exact(k) { uniform } else { None };
        acc.push(k, None, log.total_reward, exact);
    }
    Ok(acc.finish())
}
