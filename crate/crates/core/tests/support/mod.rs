//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the learner's planner or estimator. The dense sweep
//! keeps its own counts from raw episode logs and values every reachable
//! augmented node in a fixed backward order.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use delayrl_core::augmented::Category;
use delayrl_core::instances::CodeMdp;
use delayrl_core::{
    AugMdp, AugState, DelayMode, DelayModel, DelayedEnv, DelayedPolicy, EpisodeLog, PolicyAction, Queue, SeedSpec,
    TabularMdp, Tag,
};

const C1: f64 = 20.0 / 3.0;
const C2: f64 = 400.0 / 9.0;

/// Raw `(s, a, delta, s')` samples.
#[derive(Debug, Clone, Default)]
pub struct RawCounts {
    samples: HashMap<(usize, usize), Vec<(i32, usize)>>,
}

impl RawCounts {
    pub fn add_log(&mut self, log: &EpisodeLog) {
        for t in 0..log.actions.len() {
            self.samples
                .entry((log.states[t], log.actions[t]))
                .or_default()
                .push((log.deltas[t], log.states[t + 1]));
        }
    }

    pub fn n(&self, s: usize, a: usize) -> u64 {
        self.samples.get(&(s, a)).map_or(0, |v| v.len() as u64)
    }

    pub fn n_geq(&self, s: usize, a: usize, dt: i32) -> u64 {
        self.samples.get(&(s, a)).map_or(0, |v| v.iter().filter(|x| x.0 >= dt).count() as u64)
    }

    pub fn next(&self, s: usize, a: usize) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        let Some(v) = self.samples.get(&(s, a)) else { return out };
        for &(_, s2) in v {
            *out.entry(s2).or_insert(0.0) += 1.0;
        }
        for c in out.values_mut() {
            *c /= v.len() as f64;
        }
        out
    }
}

pub fn ell(d: usize, b: f64, mdp: &TabularMdp, delay: &DelayModel, episodes: u64, delta: f64) -> f64 {
    let core = mdp.horizon() as f64
        * delay.delta_max().max(1) as f64
        * (mdp.num_states() * mdp.num_actions()) as f64
        * episodes as f64
        / delta;
    let d = d as f64;
    let first = d * (mdp.num_actions() as f64).ln() + (64.0 * (d + 1.0).powi(2) * core).ln();
    let second = b * (32.0 * b * core).ln();
    first.min(second)
}

/// Two-pass optimistic backup.
pub fn mvp(r: f64, pv: &[(f64, f64)], n: u64, ell: f64, h: f64) -> f64 {
    if n <= 1 {
        return h;
    }
    let mean: f64 = pv.iter().map(|(p, v)| p * v).sum();
    let var: f64 = pv.iter().map(|(p, v)| p * (v - mean) * (v - mean)).sum();
    let n = n as f64;
    (r + mean + C1 * (var * ell / n).sqrt() + C2 * h * ell / n).min(h)
}

/// Every node reachable under the true model with some policy.
pub fn reachable(aug: &AugMdp<'_>) -> Vec<AugState> {
    let mut seen = HashSet::new();
    let mut stack = vec![aug.initial()];
    seen.insert(aug.initial());
    while let Some(st) = stack.pop() {
        let actions: Vec<Option<usize>> = match aug.category(&st) {
            Category::Decision => (0..aug.mdp().num_actions()).map(Some).collect(),
            Category::Terminal => vec![],
            _ => vec![None],
        };
        for a in actions {
            for o in aug.successors(&st, a).unwrap() {
                if seen.insert(o.next) {
                    stack.push(o.next);
                }
            }
        }
    }
    seen.into_iter().collect()
}

/// Reveal probability of the pending state, from the raw delay rows.
fn true_reveal(delay: &DelayModel, s: usize, a: usize, dt: i32, clipped: bool) -> f64 {
    if clipped {
        return delay.prob(s, a, -1) + delay.prob(s, a, 0);
    }
    let tail: f64 = (dt..=delay.delta_max() as i32).map(|d| delay.prob(s, a, d)).sum();
    delay.prob(s, a, dt) / tail
}

/// Full-table backward sweep of the optimistic augmented values.
pub fn dense_sweep(
    mdp: &TabularMdp,
    delay: &DelayModel,
    mode: DelayMode,
    counts: &RawCounts,
    episodes: u64,
    delta: f64,
) -> HashMap<AugState, f64> {
    let aug = AugMdp::new(mdp, delay).unwrap();
    let codec = aug.codec().clone();
    let horizon = mdp.horizon();
    let hf = horizon as f64;
    let d_max = delay.d_max();
    let delta_max = delay.delta_max() as i32;
    let mut nodes = reachable(&aug);
    // Later steps first; within a step decisions, then by queue length with
    // tran before -1.
    let rank = |st: &AugState| -> (std::cmp::Reverse<usize>, usize, usize) {
        let phase = match aug.category(st) {
            Category::Decision | Category::Terminal => 0,
            Category::Tran => 1,
            Category::Chain => 2,
        };
        if phase == 0 {
            (std::cmp::Reverse(st.h), 0, 0)
        } else {
            (std::cmp::Reverse(st.h), 1 + st.queue.len(), phase)
        }
    };
    nodes.sort_by_key(|st| (rank(st), *st));
    let mut v: HashMap<AugState, f64> = HashMap::new();
    let get = |v: &HashMap<AugState, f64>, st: AugState| -> f64 {
        *v.get(&st).unwrap_or_else(|| panic!("sweep order broken at {st:?}"))
    };
    // Split between a tran node and the next delta node.
    let split = |v: &HashMap<AugState, f64>, s: usize, a: usize, q: Queue, dt: i32, next_dt: i32, h: usize, forced: bool, clipped: bool, depth: usize| -> f64 {
        let tran = AugState { s, queue: q, tag: Tag::Tran, h };
        if forced {
            return get(v, tran).min(hf);
        }
        let wait = AugState { s, queue: q, tag: Tag::Delta(next_dt), h };
        let (p, n) = match mode {
            DelayMode::Known => (true_reveal(delay, s, a, dt, clipped), None),
            DelayMode::Unknown => {
                let (lo, hi) = if clipped { (-1, 1) } else { (dt, dt + 1) };
                let n = counts.n_geq(s, a, lo);
                if n <= 1 {
                    return hf;
                }
                ((n - counts.n_geq(s, a, hi)) as f64 / n as f64, Some(n))
            }
        };
        let mut pv = Vec::new();
        if p > 0.0 {
            pv.push((p, get(v, tran)));
        }
        if p < 1.0 {
            pv.push((1.0 - p, get(v, wait)));
        }
        match n {
            None => pv.iter().map(|(p, x)| p * x).sum::<f64>().min(hf),
            Some(n) => mvp(0.0, &pv, n, ell(depth, 2.0, mdp, delay, episodes, delta), hf),
        }
    };
    for st in nodes {
        let value = match aug.category(&st) {
            Category::Terminal => 0.0,
            Category::Decision => {
                let Tag::Delta(dt) = st.tag else { unreachable!() };
                let mut best = f64::NEG_INFINITY;
                for a in 0..mdp.num_actions() {
                    let q2 = codec.push(st.queue, a);
                    let first = codec.first(q2);
                    let forced = q2.len() == d_max + 1 || st.h == horizon || dt == delta_max;
                    let clipped = st.queue.is_empty();
                    let x = split(&v, st.s, first, q2, dt, dt + 1, st.h + 1, forced, clipped, q2.len());
                    best = best.max(x);
                }
                best
            }
            Category::Tran => {
                let a = codec.first(st.queue);
                let n = counts.n(st.s, a);
                if n <= 1 {
                    hf
                } else {
                    let rest = codec.pop_front(st.queue);
                    let pv: Vec<(f64, f64)> = counts
                        .next(st.s, a)
                        .into_iter()
                        .map(|(s2, p)| (p, get(&v, AugState { s: s2, queue: rest, tag: Tag::Delta(-1), h: st.h })))
                        .collect();
                    let l = ell(st.queue.len(), mdp.branching() as f64, mdp, delay, episodes, delta);
                    mvp(mdp.reward(st.s, a), &pv, n, l, hf)
                }
            }
            Category::Chain if st.queue.is_empty() => get(&v, AugState { tag: Tag::Delta(0), ..st }).min(hf),
            Category::Chain => {
                let a = codec.first(st.queue);
                let forced = st.queue.len() == d_max + 1 || st.h == horizon + 1;
                split(&v, st.s, a, st.queue, -1, 0, st.h, forced, false, st.queue.len())
            }
        };
        v.insert(st, value);
    }
    v
}

/// Expected return of every open-loop action sequence over the `D` blind
/// steps, by forward propagation through the built tables.
pub fn code_brute_force(code: &CodeMdp) -> Vec<f64> {
    let (mdp, _) = code.build().unwrap();
    let d = code.depth();
    let n = mdp.num_states();
    (0..1usize << d)
        .map(|bits| {
            let mut dist = vec![0.0; n];
            dist[mdp.initial_state()] = 1.0;
            let mut total = 0.0;
            for h in 1..=mdp.horizon() {
                let a = if (2..=d + 1).contains(&h) { (bits >> (h - 2)) & 1 } else { 0 };
                let mut next = vec![0.0; n];
                for s in 0..n {
                    if dist[s] == 0.0 {
                        continue;
                    }
                    total += dist[s] * mdp.reward(s, a);
                    for (s2, p) in mdp.transition(s, a).iter() {
                        next[s2] += dist[s] * p;
                    }
                }
                dist = next;
            }
            total
        })
        .collect()
}

/// Index of a codeword in [`code_brute_force`] output.
pub fn sequence_index(word: &[usize]) -> usize {
    word.iter().enumerate().map(|(i, &b)| b << i).sum()
}

/// Monte-Carlo mean and standard error of a delayed policy's return.
pub fn monte_carlo(
    mdp: &TabularMdp,
    delay: &DelayModel,
    policy: &mut dyn DelayedPolicy,
    episodes: u64,
    seed: u64,
) -> (f64, f64) {
    let aug = AugMdp::new(mdp, delay).unwrap();
    let mut env = DelayedEnv::new(mdp, delay, SeedSpec::new(seed)).unwrap();
    let (mut sum, mut sq) = (0.0, 0.0);
    for k in 0..episodes {
        let mut obs = env.reset(k);
        while !env.is_done() {
            let a = match policy.act(&aug.observe(&obs)).unwrap() {
                PolicyAction::Pick(a) => a,
                PolicyAction::UniformOverAll => unreachable!("deterministic policies only"),
            };
            obs = env.step(a).unwrap();
        }
        let ret = env.finish_episode().unwrap().total_reward;
        sum += ret;
        sq += ret * ret;
    }
    let n = episodes as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
