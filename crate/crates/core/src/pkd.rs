//! Optimistic planning for MDPs with partially known dynamics.
//!
//! States are pairs `(x, y)`. After action `a`, `y'` follows a known kernel
//! and `x'` follows an effective kernel that only depends on a feature
//! `z = phi(x, y, a, y')`. Effective kernels are either known or estimated
//! from counts; estimated ones are valued with the MVP-Est bonus rule.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::hash::Hash;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mdp::{evaluate_policy, optimal_value, TabularMdp, TimedPolicy};
use crate::rng::{Purpose, RngStream, SeedSpec};
use crate::trace::{RegretAccumulator, RegretTrace};

pub const C1: f64 = 20.0 / 3.0;
pub const C2: f64 = 400.0 / 9.0;

pub type YDist<Y> = SmallVec<[(Y, f64); 4]>;
pub type XDist<X> = SmallVec<[(X, f64); 8]>;

/// Optimistic estimate `min(r + PV + c1 sqrt(Var ell / N) + c2 H ell / N, H)`,
/// or `H` when `n <= 1`.
pub fn mvp_est(r: f64, probs: &[f64], values: &[f64], n: u64, ell: f64, horizon: f64) -> f64 {
    if n <= 1 {
        return horizon;
    }
    let (mean, var) = weighted_mean_var(probs, values);
    let n = n as f64;
    (r + mean + C1 * (var * ell / n).sqrt() + C2 * horizon * ell / n).min(horizon)
}

/// One pass: compensated `sum p v` and West's weighted variance update.
fn weighted_mean_var(probs: &[f64], values: &[f64]) -> (f64, f64) {
    debug_assert_eq!(probs.len(), values.len());
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let (mut w, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &v) in probs.iter().zip(values) {
        let term = p * v;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        if p > 0.0 {
            w += p;
            let d = v - mean;
            mean += d * p / w;
            m2 += p * d * (v - mean);
        }
    }
    let var = if w > 0.0 { (m2 / w).max(0.0) } else { 0.0 };
    (sum + comp, var)
}

/// `min(log(32 H |Y| |Z| K / delta), B log(32 H B |Z| K / delta))`.
pub fn ell_star_generic(y_card: f64, z_card: f64, horizon: f64, episodes: f64, delta: f64, b: f64) -> f64 {
    let first = (32.0 * horizon * y_card * z_card * episodes / delta).ln();
    let second = b * (32.0 * horizon * b * z_card * episodes / delta).ln();
    first.min(second)
}

/// Problem description consumed by the planner.
pub trait PkdSpec {
    type X: Copy + Eq + Hash + Ord + Debug;
    type Y: Copy + Eq + Hash + Ord + Debug;
    type Z: Copy + Eq + Hash + Ord + Debug;

    /// Value cap `H`.
    fn horizon(&self) -> f64;
    fn initial(&self) -> (Self::X, Self::Y);
    /// `0` marks a terminal state.
    fn num_actions(&self, x: Self::X, y: Self::Y) -> usize;
    fn reward(&self, x: Self::X, y: Self::Y, a: usize) -> f64;
    fn y_kernel(&self, x: Self::X, y: Self::Y, a: usize, out: &mut YDist<Self::Y>) -> Result<()>;
    fn feature(&self, x: Self::X, y: Self::Y, a: usize, y2: Self::Y) -> Result<Self::Z>;
    fn ell_star(&self, z: Self::Z) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffKind {
    Known,
    Estimated { count: u64 },
}

/// Effective kernels `z -> distribution over X`.
pub trait EffModel<S: PkdSpec + ?Sized> {
    /// Fills `out` (no zero entries) unless the kernel is estimated from at
    /// most one sample, in which case `out` may be left empty.
    fn eff(&self, spec: &S, z: S::Z, out: &mut XDist<S::X>) -> Result<EffKind>;
}

/// Value of reaching feature `z` with successor `y2`, where `v` looks up
/// `V(x', y2)`.
pub fn feature_value<S: PkdSpec + ?Sized, M: EffModel<S> + ?Sized>(
    spec: &S,
    model: &M,
    r: f64,
    z: S::Z,
    y2: S::Y,
    v: &mut dyn FnMut(S::X, S::Y) -> Result<f64>,
) -> Result<f64> {
    let mut dist = XDist::new();
    let kind = model.eff(spec, z, &mut dist)?;
    let horizon = spec.horizon();
    match kind {
        EffKind::Known => {
            let mut total = 0.0;
            for &(x2, p) in &dist {
                total += p * v(x2, y2)?;
            }
            Ok((r + total).min(horizon))
        }
        EffKind::Estimated { count } if count <= 1 => Ok(horizon),
        EffKind::Estimated { count } => {
            let mut probs: SmallVec<[f64; 8]> = SmallVec::new();
            let mut vals: SmallVec<[f64; 8]> = SmallVec::new();
            for &(x2, p) in &dist {
                probs.push(p);
                vals.push(v(x2, y2)?);
            }
            Ok(mvp_est(r, &probs, &vals, count, spec.ell_star(z), horizon))
        }
    }
}

/// Counts and empirical kernels per feature. Storage is created on first
/// visit; unseen features report a count of zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffEstimator<Z: Ord, X: Ord> {
    table: BTreeMap<Z, (u64, BTreeMap<X, u64>)>,
}

impl<Z: Ord + Copy, X: Ord + Copy> Default for EffEstimator<Z, X> {
    fn default() -> Self {
        EffEstimator { table: BTreeMap::new() }
    }
}

impl<Z: Ord + Copy, X: Ord + Copy> EffEstimator<Z, X> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, z: Z, x2: X) {
        let e = self.table.entry(z).or_default();
        e.0 += 1;
        *e.1.entry(x2).or_default() += 1;
    }

    pub fn update(&mut self, transitions: &[(Z, X)]) {
        for &(z, x2) in transitions {
            self.record(z, x2);
        }
    }

    pub fn count(&self, z: Z) -> u64 {
        self.table.get(&z).map_or(0, |e| e.0)
    }

    /// Empirical distribution, `None` for unseen features.
    pub fn dist(&self, z: Z) -> Option<Vec<(X, f64)>> {
        let (n, next) = self.table.get(&z)?;
        Some(next.iter().map(|(&x, &c)| (x, c as f64 / *n as f64)).collect())
    }

    pub fn features(&self) -> impl Iterator<Item = Z> + '_ {
        self.table.keys().copied()
    }
}

impl<S: PkdSpec + ?Sized> EffModel<S> for EffEstimator<S::Z, S::X> {
    fn eff(&self, _spec: &S, z: S::Z, out: &mut XDist<S::X>) -> Result<EffKind> {
        let Some((n, next)) = self.table.get(&z) else {
            return Ok(EffKind::Estimated { count: 0 });
        };
        if *n > 1 {
            out.extend(next.iter().map(|(&x, &c)| (x, c as f64 / *n as f64)));
        }
        Ok(EffKind::Estimated { count: *n })
    }
}

/// Lazy memoized planner. Values are computed on first request and kept
/// until [`Planner::clear`].
#[derive(Debug, Clone)]
pub struct Planner<X, Y> {
    values: FxHashMap<(X, Y), f64>,
    actions: FxHashMap<(X, Y), usize>,
    budget: usize,
}

impl<X: Copy + Eq + Hash + Debug, Y: Copy + Eq + Hash + Debug> Planner<X, Y> {
    pub fn new(budget: usize) -> Self {
        Planner { values: FxHashMap::default(), actions: FxHashMap::default(), budget }
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.actions.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Already computed value, if any.
    pub fn cached(&self, x: X, y: Y) -> Option<f64> {
        self.values.get(&(x, y)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(X, Y), &f64)> {
        self.values.iter()
    }

    pub fn value<S, M>(&mut self, spec: &S, model: &M, x: X, y: Y) -> Result<f64>
    where
        S: PkdSpec<X = X, Y = Y> + ?Sized,
        M: EffModel<S> + ?Sized,
    {
        if let Some(&v) = self.values.get(&(x, y)) {
            return Ok(v);
        }
        let n = spec.num_actions(x, y);
        let cap = spec.horizon();
        let mut best = 0.0;
        let mut arg = 0;
        for a in 0..n {
            let q = self.q_value(spec, model, x, y, a)?;
            if a == 0 || q > best {
                best = q;
                arg = a;
            }
            // Nothing exceeds the cap and ties keep the lowest index.
            if best >= cap {
                break;
            }
        }
        if n > 0 {
            self.actions.insert((x, y), arg);
        }
        self.values.insert((x, y), best);
        if self.values.len() > self.budget {
            return Err(Error::Budget { reached: self.values.len(), budget: self.budget });
        }
        Ok(best)
    }

    pub fn q_value<S, M>(&mut self, spec: &S, model: &M, x: X, y: Y, a: usize) -> Result<f64>
    where
        S: PkdSpec<X = X, Y = Y> + ?Sized,
        M: EffModel<S> + ?Sized,
    {
        let mut ys = YDist::new();
        spec.y_kernel(x, y, a, &mut ys)?;
        let r = spec.reward(x, y, a);
        let mut q = 0.0;
        for &(y2, py) in &ys {
            let z = spec.feature(x, y, a, y2)?;
            let fv = feature_value(spec, model, r, z, y2, &mut |x2, y3| self.value(spec, model, x2, y3))?;
            q += py * fv;
        }
        Ok(q)
    }

    /// Greedy action (lowest index among maximizers).
    pub fn action<S, M>(&mut self, spec: &S, model: &M, x: X, y: Y) -> Result<usize>
    where
        S: PkdSpec<X = X, Y = Y> + ?Sized,
        M: EffModel<S> + ?Sized,
    {
        self.value(spec, model, x, y)?;
        self.actions
            .get(&(x, y))
            .copied()
            .ok_or_else(|| Error::PolicyUndefined(format!("terminal state {:?}", (x, y))))
    }
}

/// Which log term a flat spec uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogTerm {
    /// `ell_star_generic` with `|Y| = 1`, `|Z| = S A`, `B(z) = B`.
    Generic { episodes: u64, delta: f64 },
    Fixed(f64),
}

/// An ordinary MDP as a spec: `x = s`, `y = h`, `z = (s, a)`.
#[derive(Debug, Clone)]
pub struct FlatMdpSpec<'a> {
    pub mdp: &'a TabularMdp,
    pub log: LogTerm,
}

impl PkdSpec for FlatMdpSpec<'_> {
    type X = usize;
    type Y = usize;
    type Z = (usize, usize);

    fn horizon(&self) -> f64 {
        self.mdp.horizon() as f64
    }

    fn initial(&self) -> (usize, usize) {
        (self.mdp.initial_state(), 1)
    }

    fn num_actions(&self, _x: usize, h: usize) -> usize {
        if h <= self.mdp.horizon() {
            self.mdp.num_actions()
        } else {
            0
        }
    }

    fn reward(&self, s: usize, _h: usize, a: usize) -> f64 {
        self.mdp.reward(s, a)
    }

    fn y_kernel(&self, _s: usize, h: usize, _a: usize, out: &mut YDist<usize>) -> Result<()> {
        out.push((h + 1, 1.0));
        Ok(())
    }

    fn feature(&self, s: usize, _h: usize, a: usize, _h2: usize) -> Result<(usize, usize)> {
        Ok((s, a))
    }

    fn ell_star(&self, _z: (usize, usize)) -> f64 {
        match self.log {
            LogTerm::Fixed(l) => l,
            LogTerm::Generic { episodes, delta } => ell_star_generic(
                1.0,
                (self.mdp.num_states() * self.mdp.num_actions()) as f64,
                self.mdp.horizon() as f64,
                episodes as f64,
                delta,
                self.mdp.branching() as f64,
            ),
        }
    }
}

/// Dense backward sweep over all `(h, s)` for a flat spec.
pub fn plan_flat_dense<'a, M: EffModel<FlatMdpSpec<'a>>>(spec: &FlatMdpSpec<'a>, model: &M) -> Result<(Vec<Vec<f64>>, TimedPolicy)> {
    let m = spec.mdp;
    let (s_n, a_n, h_n) = (m.num_states(), m.num_actions(), m.horizon());
    let mut v = vec![vec![0.0; s_n]; h_n + 1];
    let mut pi = vec![vec![0; s_n]; h_n];
    for h in (1..=h_n).rev() {
        for s in 0..s_n {
            let mut best = 0.0;
            for a in 0..a_n {
                let next = &v[h];
                let q = feature_value(spec, model, m.reward(s, a), (s, a), h + 1, &mut |x2, _| Ok(next[x2]))?;
                if a == 0 || q > best {
                    best = q;
                    pi[h - 1][s] = a;
                }
            }
            v[h - 1][s] = best;
        }
    }
    Ok((v, TimedPolicy::new(pi)))
}

/// Full-state environment driven by [`run`].
pub trait PkdEnv<S: PkdSpec> {
    fn reset(&mut self, episode: u64) -> Result<(S::X, S::Y)>;
    /// Returns `(x', y', reward)`.
    fn step(&mut self, action: usize) -> Result<(S::X, S::Y, f64)>;
    fn optimal_value(&mut self) -> Result<Option<f64>>;
    /// Exact value of the deterministic policy `act`.
    fn policy_value(&mut self, act: &mut dyn FnMut(S::X, S::Y) -> Result<usize>) -> Result<Option<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub episodes: u64,
    pub seed: SeedSpec,
    /// Exact evaluation every `stride` episodes; `0` disables it.
    pub stride: usize,
    pub budget: usize,
}

/// K episodes of plan, execute, update.
pub fn run<S, E>(spec: &S, env: &mut E, opts: &RunOptions) -> Result<RegretTrace>
where
    S: PkdSpec,
    E: PkdEnv<S>,
{
    let optimal = if opts.stride > 0 { env.optimal_value()? } else { None };
    let mut acc = RegretAccumulator::new(optimal, opts.stride, opts.seed.master_seed);
    let mut est: EffEstimator<S::Z, S::X> = EffEstimator::new();
    let mut planner = Planner::new(opts.budget);
    let mut ys = YDist::new();
    for k in 1..=opts.episodes {
        planner.clear();
        let (mut x, mut y) = env.reset(k - 1)?;
        if (x, y) != spec.initial() {
            return Err(Error::Inconsistent(format!("reset gave {:?}, spec starts at {:?}", (x, y), spec.initial())));
        }
        let estimate = planner.value(spec, &est, x, y)?;
        let exact = if acc.wants_exact(k) {
            env.policy_value(&mut |x, y| planner.action(spec, &est, x, y))?
        } else {
            None
        };
        let mut realized = 0.0;
        let mut seen = Vec::new();
        while spec.num_actions(x, y) > 0 {
            let a = planner.action(spec, &est, x, y)?;
            let (x2, y2, r) = env.step(a)?;
            ys.clear();
            spec.y_kernel(x, y, a, &mut ys)?;
            if !ys.iter().any(|&(yy, p)| yy == y2 && p > 0.0) {
                return Err(Error::Inconsistent(format!("step from {:?} with action {a} reached y = {y2:?}", (x, y))));
            }
            if r != spec.reward(x, y, a) {
                return Err(Error::Inconsistent(format!("reward {r} at {:?} differs from the PkdSpec reward", (x, y))));
            }
            seen.push((spec.feature(x, y, a, y2)?, x2));
            realized += r;
            x = x2;
            y = y2;
        }
        est.update(&seen);
        acc.push(k, Some(estimate), realized, exact);
    }
    Ok(acc.finish())
}

/// Plain simulator for [`FlatMdpSpec`]; draws transitions from the same
/// labelled streams as the delayed simulator.
#[derive(Debug, Clone)]
pub struct FlatMdpEnv<'a> {
    mdp: &'a TabularMdp,
    seed: SeedSpec,
    rng: RngStream,
    s: usize,
    h: usize,
}

impl<'a> FlatMdpEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, seed: SeedSpec) -> Self {
        FlatMdpEnv { mdp, seed, rng: seed.stream(0, Purpose::Transition), s: mdp.initial_state(), h: 1 }
    }
}

impl<'a> PkdEnv<FlatMdpSpec<'a>> for FlatMdpEnv<'a> {
    fn reset(&mut self, episode: u64) -> Result<(usize, usize)> {
        self.rng = self.seed.stream(episode, Purpose::Transition);
        self.s = self.mdp.initial_state();
        self.h = 1;
        Ok((self.s, self.h))
    }

    fn step(&mut self, action: usize) -> Result<(usize, usize, f64)> {
        if self.h > self.mdp.horizon() {
            return Err(Error::EpisodeFinished { horizon: self.mdp.horizon() });
        }
        let r = self.mdp.reward(self.s, action);
        self.s = self.mdp.transition(self.s, action).sample(&mut self.rng);
        self.h += 1;
        Ok((self.s, self.h, r))
    }

    fn optimal_value(&mut self) -> Result<Option<f64>> {
        let (v, _) = optimal_value(self.mdp);
        Ok(Some(v[0][self.mdp.initial_state()]))
    }

    fn policy_value(&mut self, act: &mut dyn FnMut(usize, usize) -> Result<usize>) -> Result<Option<f64>> {
        let m = self.mdp;
        let mut table = vec![vec![0; m.num_states()]; m.horizon()];
        for (h, row) in table.iter_mut().enumerate() {
            for (s, a) in row.iter_mut().enumerate() {
                *a = act(s, h + 1)?;
            }
        }
        let v = evaluate_policy(m, &TimedPolicy::new(table))?;
        Ok(Some(v[0][m.initial_state()]))
    }
}
