//! Instance generators: random delayed MDPs, CodeMDPs and the tree plus
//! CodeMDP hard instances.

use rand::seq::index;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::delay::DelayModel;
use crate::error::{Error, Result};
use crate::mdp::{InstanceFile, TabularMdp};
use crate::rng::{Purpose, SeedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSdmdpConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub branching: usize,
    pub delta_max: usize,
    pub d_max: usize,
    #[serde(default = "yes")]
    pub known: bool,
    /// Give `Delta = -1` zero mass everywhere.
    #[serde(default)]
    pub no_negative: bool,
}

fn yes() -> bool {
    true
}

/// Flat Dirichlet(1) weights from normalized exponentials.
fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1).max(f64::MIN_POSITIVE)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random instance with exactly `branching` successors per pair and
/// uniform rewards. Identical seeds give identical instances.
pub fn random_sdmdp(cfg: &RandomSdmdpConfig, seed: u64) -> Result<(TabularMdp, DelayModel)> {
    let RandomSdmdpConfig { states, actions, horizon, branching, delta_max, d_max, known, no_negative } = *cfg;
    if branching == 0 || branching > states {
        return Err(Error::validation(format!("branching {branching} must be in [1, S = {states}]")));
    }
    if delta_max > d_max {
        return Err(Error::validation(format!("delta_max = {delta_max} exceeds d_max = {d_max}")));
    }
    let mut stream = SeedSpec::new(seed).stream(0, Purpose::Instance);
    let rng = stream.rng();
    let mut reward = vec![vec![0.0; actions]; states];
    let mut trans = vec![vec![vec![0.0; states]; actions]; states];
    for s in 0..states {
        for a in 0..actions {
            reward[s][a] = rng.random::<f64>();
            let mut support = index::sample(rng, states, branching).into_vec();
            support.sort_unstable();
            for (s2, w) in support.into_iter().zip(dirichlet(rng, branching)) {
                trans[s][a][s2] = w;
            }
        }
    }
    let mut rows = Vec::with_capacity(states * actions);
    for _ in 0..states * actions {
        let mut row = vec![0.0; delta_max + 2];
        let skip = usize::from(no_negative);
        for (slot, w) in row[skip..].iter_mut().zip(dirichlet(rng, delta_max + 2 - skip)) {
            *slot = w;
        }
        rows.push(row);
    }
    let mdp = TabularMdp::new(states, actions, horizon, branching, 0, reward, trans)?;
    let delay = DelayModel::new(states, actions, rows, delta_max, d_max, known)?;
    Ok((mdp, delay))
}

/// What happens after the success state pays its reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardConvention {
    /// Success pays once and moves to failure: returns are 0 or 1.
    SingleReward,
    /// Success loops on itself paying 1 per step.
    SelfLoop,
}

/// Closed-form optimal values of a CodeMDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeValue {
    /// `1/2 + |theta|_1 / (2D)`.
    pub plain: f64,
    /// `sum_i (Ht - i) / (2D) + weighted_theta`.
    pub weighted: f64,
    /// `sum_i (Ht - i) |theta_i| / (2D)`.
    pub weighted_theta: f64,
}

pub fn code_value(theta: &[f64], code_horizon: usize) -> CodeValue {
    let d = theta.len() as f64;
    let l1: f64 = theta.iter().map(|t| t.abs()).sum();
    let weight = |i: usize| code_horizon as f64 - (i + 1) as f64;
    let base: f64 = (0..theta.len()).map(weight).sum::<f64>() / (2.0 * d);
    let weighted_theta = theta.iter().enumerate().map(|(i, t)| weight(i) * t.abs()).sum::<f64>() / (2.0 * d);
    CodeValue { plain: 0.5 + l1 / (2.0 * d), weighted: base + weighted_theta, weighted_theta }
}

/// Sign codeword `1{theta_i >= 0}`.
pub fn codeword(theta: &[f64]) -> Vec<usize> {
    theta.iter().map(|&t| usize::from(t >= 0.0)).collect()
}

/// Landing distribution over the `2D` code states, index `2(i-1) + b`.
pub fn landing_distribution(theta: &[f64]) -> Vec<f64> {
    let d = theta.len() as f64;
    theta.iter().flat_map(|t| [(1.0 - t) / (2.0 * d), (1.0 + t) / (2.0 * d)]).collect()
}

fn check_theta(theta: &[f64]) -> Result<()> {
    if theta.is_empty() {
        return Err(Error::validation("theta must have at least one coordinate"));
    }
    if let Some(t) = theta.iter().find(|t| !(t.abs() <= 1.0)) {
        return Err(Error::validation(format!("theta entry {t} outside [-1, 1]")));
    }
    Ok(())
}

/// Standalone CodeMDP behind a start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMdp {
    pub theta: Vec<f64>,
    /// Steps spent inside the code part, at least `D + 1`.
    pub code_horizon: usize,
    pub convention: RewardConvention,
}

impl CodeMdp {
    pub fn new(theta: Vec<f64>, code_horizon: usize, convention: RewardConvention) -> Result<Self> {
        check_theta(&theta)?;
        if code_horizon < theta.len() + 1 {
            return Err(Error::validation(format!(
                "code horizon {code_horizon} shorter than depth + 1 = {}",
                theta.len() + 1
            )));
        }
        Ok(CodeMdp { theta, code_horizon, convention })
    }

    pub fn depth(&self) -> usize {
        self.theta.len()
    }

    pub fn code_state(&self, i: usize, b: usize) -> usize {
        2 * (i - 1) + b
    }

    pub fn success(&self) -> usize {
        2 * self.depth()
    }

    pub fn failure(&self) -> usize {
        2 * self.depth() + 1
    }

    pub fn start(&self) -> usize {
        2 * self.depth() + 2
    }

    /// Two actions, horizon `code_horizon + 1`, start state last; the delay
    /// is constant at the depth.
    pub fn build(&self) -> Result<(TabularMdp, DelayModel)> {
        let n = self.start() + 1;
        let mut reward = vec![vec![0.0; 2]; n];
        let mut trans = vec![vec![vec![0.0; n]; 2]; n];
        CodeLayout { base: 0, depth: self.depth(), convention: self.convention }.fill(&mut reward, &mut trans, 2);
        let landing = landing_distribution(&self.theta);
        for a in 0..2 {
            trans[self.start()][a][..landing.len()].copy_from_slice(&landing);
        }
        let mdp = TabularMdp::new(n, 2, self.code_horizon + 1, 2 * self.depth(), self.start(), reward, trans)?;
        Ok((mdp, DelayModel::constant(n, 2, self.depth())))
    }

    pub fn value(&self) -> f64 {
        let v = code_value(&self.theta, self.code_horizon);
        match self.convention {
            RewardConvention::SingleReward => v.plain,
            RewardConvention::SelfLoop => v.weighted,
        }
    }
}

/// Code states `(i, b)` at `base + 2(i-1) + b`, then success, then failure.
struct CodeLayout {
    base: usize,
    depth: usize,
    convention: RewardConvention,
}

impl CodeLayout {
    fn fill(&self, reward: &mut [Vec<f64>], trans: &mut [Vec<Vec<f64>>], num_actions: usize) {
        let at = |i: usize, b: usize| self.base + 2 * (i - 1) + b;
        let (succ, fail) = (self.base + 2 * self.depth, self.base + 2 * self.depth + 1);
        for i in 1..=self.depth {
            for b in 0..2 {
                for a in 0..num_actions {
                    let to = if i > 1 {
                        at(i - 1, b)
                    } else if a == b {
                        succ
                    } else {
                        fail
                    };
                    trans[at(i, b)][a][to] = 1.0;
                }
            }
        }
        for a in 0..num_actions {
            reward[succ][a] = 1.0;
            let after = match self.convention {
                RewardConvention::SingleReward => fail,
                RewardConvention::SelfLoop => succ,
            };
            trans[succ][a][after] = 1.0;
            trans[fail][a][fail] = 1.0;
        }
    }
}

/// How leaf-action vectors are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaSpec {
    /// Every coordinate has magnitude `base` with seeded signs; one seeded
    /// leaf-action pair gets magnitude `base + gap`.
    TwoPoint { base: f64, gap: f64, seed: u64 },
    /// One vector per leaf-action pair, leaf-major.
    Explicit { thetas: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub d_max: usize,
    pub branching: usize,
    pub theta: ThetaSpec,
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    pub mdp: TabularMdp,
    pub delay: DelayModel,
    /// Code depth, also the constant delay.
    pub depth: usize,
    pub leaves: Vec<usize>,
    /// States on a root-to-leaf path.
    pub tree_height: usize,
    pub code_horizon: usize,
    /// `thetas[l * A + a]`.
    pub thetas: Vec<Vec<f64>>,
    /// Pair with the largest weighted code value, lowest index on ties.
    pub best_pair: (usize, usize),
}

/// Largest power of two `L` with `S/8 <= L < S/4`.
pub fn leaf_count(states: usize) -> Option<usize> {
    let mut l = 1usize;
    let mut best = None;
    while 4 * l < states {
        if 8 * l >= states {
            best = Some(l);
        }
        l *= 2;
    }
    best
}

/// Depth `min(D_max, H/4, B/2, S/4 - 1)`.
pub fn code_depth(states: usize, horizon: usize, d_max: usize, branching: usize) -> usize {
    d_max.min(horizon / 4).min(branching / 2).min((states / 4).saturating_sub(1))
}

pub fn build_hard_instance(cfg: &HardInstanceConfig) -> Result<HardInstance> {
    let HardInstanceConfig { states, actions, horizon, d_max, branching, ref theta } = *cfg;
    if actions < 2 {
        return Err(Error::validation("hard instances need at least two actions"));
    }
    let min_h = 8.0 + 4.0 * (states as f64).ln() / (actions as f64).ln();
    if (horizon as f64) < min_h {
        return Err(Error::validation(format!("H = {horizon} violates H >= 8 + 4 log_A S = {min_h:.3}")));
    }
    let leaves_n = leaf_count(states)
        .ok_or_else(|| Error::validation(format!("no power of two L with S/8 <= L < S/4 for S = {states}")))?;
    let depth = code_depth(states, horizon, d_max, branching);
    if depth == 0 {
        return Err(Error::validation(format!(
            "code depth min(D_max, H/4, B/2, S/4 - 1) is 0 for D_max = {d_max}, H = {horizon}, B = {branching}, S = {states}"
        )));
    }
    // Bottom-up level sizes, then ids assigned root first.
    let mut levels = vec![leaves_n];
    while *levels.last().unwrap() > 1 {
        let n = *levels.last().unwrap();
        levels.push(n.div_ceil(actions));
    }
    levels.reverse();
    let tree_height = levels.len();
    if horizon < 4 * tree_height {
        return Err(Error::validation(format!("H = {horizon} violates H >= 4 H_tree = {}", 4 * tree_height)));
    }
    let offsets: Vec<usize> = levels.iter().scan(0, |acc, &n| {
        let o = *acc;
        *acc += n;
        Some(o)
    }).collect();
    let n_tree: usize = levels.iter().sum();
    let n = n_tree + 2 * depth + 2;
    if n > states {
        return Err(Error::validation(format!("construction needs {n} states, more than S = {states}")));
    }
    let code_horizon = horizon - tree_height;
    let thetas = make_thetas(theta, leaves_n, actions, depth)?;

    let mut reward = vec![vec![0.0; actions]; n];
    let mut trans = vec![vec![vec![0.0; n]; actions]; n];
    for lv in 0..tree_height - 1 {
        let children = levels[lv + 1];
        for j in 0..levels[lv] {
            for a in 0..actions {
                // The last parent may have fewer than A children.
                let child = (j * actions + a).min(children - 1);
                trans[offsets[lv] + j][a][offsets[lv + 1] + child] = 1.0;
            }
        }
    }
    let leaf_base = offsets[tree_height - 1];
    for l in 0..leaves_n {
        for a in 0..actions {
            let landing = landing_distribution(&thetas[l * actions + a]);
            trans[leaf_base + l][a][n_tree..n_tree + 2 * depth].copy_from_slice(&landing);
        }
    }
    CodeLayout { base: n_tree, depth, convention: RewardConvention::SelfLoop }.fill(&mut reward, &mut trans, actions);
    let mdp = TabularMdp::new(n, actions, horizon, 2 * depth, 0, reward, trans)?;
    let delay = DelayModel::constant(n, actions, depth);
    let mut best_pair = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for (i, t) in thetas.iter().enumerate() {
        let v = code_value(t, code_horizon).weighted_theta;
        if v > best {
            best = v;
            best_pair = (i / actions, i % actions);
        }
    }
    Ok(HardInstance {
        mdp,
        delay,
        depth,
        leaves: (leaf_base..leaf_base + leaves_n).collect(),
        tree_height,
        code_horizon,
        thetas,
        best_pair,
    })
}

fn make_thetas(spec: &ThetaSpec, leaves: usize, actions: usize, depth: usize) -> Result<Vec<Vec<f64>>> {
    let pairs = leaves * actions;
    match spec {
        ThetaSpec::Explicit { thetas } => {
            if thetas.len() != pairs || thetas.iter().any(|t| t.len() != depth) {
                return Err(Error::validation(format!("expected {pairs} theta vectors of length {depth}")));
            }
            for t in thetas {
                check_theta(t)?;
            }
            Ok(thetas.clone())
        }
        &ThetaSpec::TwoPoint { base, gap, seed } => {
            if !(0.0..=1.0).contains(&base) || !(0.0..=1.0).contains(&(base + gap)) || gap < 0.0 {
                return Err(Error::validation(format!("need 0 <= base <= base + gap <= 1, got {base} and {gap}")));
            }
            let mut rng = SeedSpec::new(seed).stream(1, Purpose::Instance);
            let special = rng.below(pairs);
            Ok((0..pairs)
                .map(|p| {
                    let m = if p == special { base + gap } else { base };
                    (0..depth).map(|_| if rng.below(2) == 0 { -m } else { m }).collect()
                })
                .collect())
        }
    }
}

impl HardInstance {
    /// Instance file with the construction recorded under `meta`.
    pub fn to_file(&self, cfg: &HardInstanceConfig) -> InstanceFile {
        let mut file = InstanceFile::from_mdp(&self.mdp);
        file.delay = Some(self.delay.to_file());
        file.meta = Some(serde_json::json!({
            "generator": "hard_instance",
            "config": cfg,
            "depth": self.depth,
            "tree_height": self.tree_height,
            "code_horizon": self.code_horizon,
            "leaves": self.leaves,
            "thetas": self.thetas,
            "best_pair": [self.best_pair.0, self.best_pair.1],
        }));
        file
    }
}
