//! Config-driven experiment grids, manifests and trace summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augmented::DEFAULT_BUDGET;
use crate::delay::DelayModel;
use crate::delayed::{run_mvp_delayed_with, run_random_policy, DelayMode, DelayedRunOptions};
use crate::error::{Error, Result};
use crate::instances::{build_hard_instance, random_sdmdp, CodeMdp, HardInstanceConfig, RandomSdmdpConfig, RewardConvention};
use crate::mdp::{InstanceFile, TabularMdp};
use crate::pkd::{run, FlatMdpEnv, FlatMdpSpec, LogTerm, RunOptions};
use crate::rng::SeedSpec;
use crate::trace::RegretTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    MvpDelayedKnown,
    MvpDelayedUnknown,
    /// Generic engine on the undelayed base MDP.
    PkdGeneric,
    RandomPolicy,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MvpDelayedKnown => "mvp_delayed_known",
            Algorithm::MvpDelayedUnknown => "mvp_delayed_unknown",
            Algorithm::PkdGeneric => "pkd_generic",
            Algorithm::RandomPolicy => "random_policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Instance JSON, relative to the config file.
    File { path: PathBuf },
    Random {
        #[serde(flatten)]
        config: RandomSdmdpConfig,
        seed: u64,
    },
    Hard {
        #[serde(flatten)]
        config: HardInstanceConfig,
    },
    Code { theta: Vec<f64>, code_horizon: usize, convention: RewardConvention },
}

fn default_delta() -> f64 {
    0.1
}

fn default_stride() -> usize {
    10
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub instance: InstanceSource,
    pub algorithms: Vec<Algorithm>,
    pub episodes: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seeds: Vec<u64>,
    /// Exact evaluation every `stride` episodes.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Output directory, relative to the config file.
    pub output: PathBuf,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Instance fields to sweep, e.g. `{"d_max": [2, 4, 8]}`.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<serde_json::Value>>,
    /// Dump the delayed learner's counts every this many episodes.
    #[serde(default)]
    pub snapshot_every: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if self.episodes == 0 {
            return Err(Error::validation("episodes must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds must not be empty"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::validation("algorithms must not be empty"));
        }
        if !self.sweep.is_empty() && matches!(self.instance, InstanceSource::File { .. }) {
            return Err(Error::validation("sweeps need a generated instance"));
        }
        if self.sweep.values().any(Vec::is_empty) {
            return Err(Error::validation("sweep axes must not be empty"));
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A loaded instance with its on-disk form.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub mdp: TabularMdp,
    pub delay: DelayModel,
    pub file: InstanceFile,
}

impl LoadedInstance {
    pub fn sha256(&self) -> String {
        sha256_hex(self.file.to_json().as_bytes())
    }
}

/// Instance file for `mdp` and `delay`, plus optional metadata.
pub fn instance_file(mdp: &TabularMdp, delay: &DelayModel, meta: Option<serde_json::Value>) -> InstanceFile {
    let mut file = InstanceFile::from_mdp(mdp);
    file.delay = Some(delay.to_file());
    file.meta = meta;
    file
}

/// A file instance without a delay block is undelayed.
pub fn load_instance_file(path: &Path) -> Result<LoadedInstance> {
    let text = fs::read_to_string(path)?;
    let file = InstanceFile::from_json(&text)?;
    let mdp = file.mdp()?;
    let delay = file.delay_model()?.unwrap_or_else(|| DelayModel::zero(mdp.num_states(), mdp.num_actions()));
    Ok(LoadedInstance { mdp, delay, file })
}

impl InstanceSource {
    pub fn load(&self, base_dir: &Path) -> Result<LoadedInstance> {
        match self {
            InstanceSource::File { path } => load_instance_file(&base_dir.join(path)),
            InstanceSource::Random { config, seed } => {
                let (mdp, delay) = random_sdmdp(config, *seed)?;
                let meta = serde_json::json!({ "generator": "random", "config": config, "seed": seed });
                let file = instance_file(&mdp, &delay, Some(meta));
                Ok(LoadedInstance { mdp, delay, file })
            }
            InstanceSource::Hard { config } => {
                let hi = build_hard_instance(config)?;
                let file = hi.to_file(config);
                Ok(LoadedInstance { mdp: hi.mdp, delay: hi.delay, file })
            }
            InstanceSource::Code { theta, code_horizon, convention } => {
                let code = CodeMdp::new(theta.clone(), *code_horizon, *convention)?;
                let (mdp, delay) = code.build()?;
                let meta = serde_json::json!({ "generator": "code", "code": code, "value": code.value() });
                let file = instance_file(&mdp, &delay, Some(meta));
                Ok(LoadedInstance { mdp, delay, file })
            }
        }
    }

    /// Copy with `key` replaced by `value` in the generator parameters.
    pub fn with_override(&self, key: &str, value: &serde_json::Value) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("instance source is an object");
        let slot = if obj.contains_key(key) {
            obj.get_mut(key)
        } else {
            obj.get_mut("config").and_then(|c| c.as_object_mut()).and_then(|c| c.get_mut(key))
        };
        match slot {
            Some(s) => *s = value.clone(),
            None => return Err(Error::validation(format!("sweep key {key:?} is not an instance parameter"))),
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// One sweep point: overrides in axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub overrides: Vec<(String, serde_json::Value)>,
}

impl SweepPoint {
    /// `key{value}` pieces joined by `-`, or empty.
    pub fn label(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| {
                let v = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                let v: String = v.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
                format!("{k}{v}")
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

pub fn sweep_points(sweep: &BTreeMap<String, Vec<serde_json::Value>>) -> Vec<SweepPoint> {
    let mut points = vec![SweepPoint { overrides: Vec::new() }];
    for (key, values) in sweep {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut o = p.overrides.clone();
                    o.push((key.clone(), v.clone()));
                    SweepPoint { overrides: o }
                })
            })
            .collect();
    }
    points
}

pub fn cell_name(algorithm: Algorithm, point: &SweepPoint) -> String {
    let label = point.label();
    if label.is_empty() {
        algorithm.name().to_string()
    } else {
        format!("{}-{label}", algorithm.name())
    }
}

pub fn trace_file_name(cell: &str, seed: u64) -> String {
    format!("{cell}__seed{seed}.csv")
}

/// Inverse of [`trace_file_name`].
pub fn parse_trace_file_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let (cell, seed) = stem.rsplit_once("__seed")?;
    Some((cell.to_string(), seed.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// A memo table or oracle ran out of budget.
    Budget,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub file: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: String,
    pub algorithm: Algorithm,
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub instance_sha256: String,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub code_version: String,
    pub instances: BTreeMap<String, String>,
    pub cells: Vec<CellRecord>,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.runs.iter().all(|r| r.status == RunStatus::Ok))
    }

    pub fn any_budget(&self) -> bool {
        self.cells.iter().any(|c| c.runs.iter().any(|r| r.status == RunStatus::Budget))
    }
}

/// Runs one algorithm on one instance and seed.
pub fn run_cell(
    algorithm: Algorithm,
    inst: &LoadedInstance,
    cfg: &ExperimentConfig,
    seed: u64,
    snapshots: Option<&mut Vec<String>>,
) -> Result<RegretTrace> {
    let seed_spec = SeedSpec::new(seed);
    let (mdp, delay) = (&inst.mdp, &inst.delay);
    match algorithm {
        Algorithm::MvpDelayedKnown | Algorithm::MvpDelayedUnknown => {
            let mode = if algorithm == Algorithm::MvpDelayedKnown { DelayMode::Known } else { DelayMode::Unknown };
            let unknown_delay;
            let delay = if mode == DelayMode::Unknown && delay.known() {
                unknown_delay = delay.clone().with_known(false);
                &unknown_delay
            } else {
                delay
            };
            let opts = DelayedRunOptions {
                episodes: cfg.episodes,
                delta: cfg.delta,
                mode,
                seed: seed_spec,
                stride: cfg.stride,
                budget: cfg.budget,
            };
            let every = cfg.snapshot_every.filter(|&e| e > 0);
            let mut sink = snapshots;
            run_mvp_delayed_with(mdp, delay, &opts, &mut |k, learner| {
                if let (Some(e), Some(out)) = (every, sink.as_deref_mut()) {
                    if k % e == 0 {
                        out.push(serde_json::json!({ "episode": k, "estimator": learner.estimator().snapshot() }).to_string());
                    }
                }
                Ok(())
            })
        }
        Algorithm::PkdGeneric => {
            let spec = FlatMdpSpec { mdp, log: LogTerm::Generic { episodes: cfg.episodes, delta: cfg.delta } };
            let opts = RunOptions { episodes: cfg.episodes, seed: seed_spec, stride: cfg.stride, budget: cfg.budget };
            run(&spec, &mut FlatMdpEnv::new(mdp, seed_spec), &opts)
        }
        Algorithm::RandomPolicy => run_random_policy(mdp, delay, cfg.episodes, seed_spec, cfg.stride, cfg.budget),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs every `(cell, seed)` on `jobs` worker threads and writes the trace
/// CSVs and `manifest.json` into the output directory. Budget failures are
/// recorded per run; other errors abort before any work starts.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, jobs: usize) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = base_dir.join(&cfg.output);
    fs::create_dir_all(&out_dir)?;
    let points = sweep_points(&cfg.sweep);
    let mut instances = Vec::with_capacity(points.len());
    for p in &points {
        let mut src = cfg.instance.clone();
        for (k, v) in &p.overrides {
            src = src.with_override(k, v)?;
        }
        instances.push(src.load(base_dir)?);
    }
    let mut work = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        for &alg in &cfg.algorithms {
            for &seed in &cfg.seeds {
                work.push((pi, alg, cell_name(alg, p), seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    let records: Vec<Result<RunRecord>> = pool.install(|| {
        work.par_iter()
            .map(|(pi, alg, cell, seed)| {
                let file = trace_file_name(cell, *seed);
                let mut snaps = Vec::new();
                let want = cfg.snapshot_every.is_some() && matches!(alg, Algorithm::MvpDelayedKnown | Algorithm::MvpDelayedUnknown);
                let result = run_cell(*alg, &instances[*pi], cfg, *seed, want.then_some(&mut snaps));
                let (status, message, csv_sha256) = match result {
                    Ok(trace) => {
                        let csv = trace.to_csv();
                        write_atomic(&out_dir.join(&file), csv.as_bytes())?;
                        if want {
                            let mut body = snaps.join("\n");
                            body.push('\n');
                            write_atomic(&out_dir.join(format!("{cell}__seed{seed}.snapshots.jsonl")), body.as_bytes())?;
                        }
                        (RunStatus::Ok, None, Some(sha256_hex(csv.as_bytes())))
                    }
                    Err(e @ Error::Budget { .. }) => (RunStatus::Budget, Some(e.to_string()), None),
                    Err(e) => (RunStatus::Failed, Some(e.to_string()), None),
                };
                Ok(RunRecord { seed: *seed, file, status, message, csv_sha256 })
            })
            .collect()
    });
    let mut cells: BTreeMap<String, CellRecord> = BTreeMap::new();
    for ((pi, alg, cell, _), rec) in work.iter().zip(records) {
        let rec = rec?;
        cells
            .entry(cell.clone())
            .or_insert_with(|| CellRecord {
                cell: cell.clone(),
                algorithm: *alg,
                overrides: points[*pi].overrides.iter().cloned().collect(),
                instance_sha256: instances[*pi].sha256(),
                runs: Vec::new(),
            })
            .runs
            .push(rec);
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_sha256: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        instances: points.iter().zip(&instances).map(|(p, i)| (p.label(), i.sha256())).collect(),
        cells: cells.into_values().collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// Least-squares slope of `log y` against `log x` over points with
/// `x >= x_max / 2` and `y > 0`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x >= x_max / 2.0 && x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-episode median of cumulative regret across traces of equal length.
pub fn median_curve(traces: &[RegretTrace]) -> Result<Vec<(f64, f64)>> {
    let Some(first) = traces.first() else { return Ok(Vec::new()) };
    if traces.iter().any(|t| t.len() != first.len()) {
        return Err(Error::Inconsistent("traces of one cell differ in length".into()));
    }
    let mut out = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let mut vals: Vec<f64> = traces.iter().filter_map(|t| t.rows[i].cumulative_regret).collect();
        if vals.len() != traces.len() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        out.push((first.rows[i].episode as f64, quantile(&vals, 0.5)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub final_regret_median: Option<f64>,
    pub final_regret_q1: Option<f64>,
    pub final_regret_q3: Option<f64>,
    /// Slope of the median cumulative regret over the second half.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    /// Cell name with the axis value removed.
    pub group: String,
    pub axis: String,
    pub values: Vec<f64>,
    pub medians: Vec<f64>,
    pub strictly_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub cells: Vec<CellSummary>,
    pub monotone: Vec<MonotoneCheck>,
}

impl SummaryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }
}

pub fn summarize_glob(pattern: &str) -> Result<SummaryReport> {
    let paths = glob::glob(pattern)
        .map_err(|e| Error::validation(format!("bad pattern {pattern:?}: {e}")))?
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Io(e.to_string()))?;
    summarize_files(&paths)
}

/// Groups `<cell>__seed<seed>.csv` files by cell. Other files are ignored.
pub fn summarize_files(paths: &[PathBuf]) -> Result<SummaryReport> {
    let mut by_cell: BTreeMap<String, BTreeMap<u64, RegretTrace>> = BTreeMap::new();
    for p in paths {
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
        let Some((cell, seed)) = parse_trace_file_name(name) else { continue };
        let text = fs::read_to_string(p)?;
        let trace = RegretTrace::from_csv(&text, &p.display().to_string())?;
        by_cell.entry(cell).or_default().insert(seed, trace);
    }
    let mut cells = Vec::new();
    for (cell, runs) in &by_cell {
        let traces: Vec<RegretTrace> = runs.values().cloned().collect();
        let mut finals: Vec<f64> = traces.iter().filter_map(RegretTrace::final_regret).collect();
        finals.sort_by(f64::total_cmp);
        let stat = |q| (!finals.is_empty()).then(|| quantile(&finals, q));
        let curve = median_curve(&traces)?;
        cells.push(CellSummary {
            cell: cell.clone(),
            seeds: runs.keys().copied().collect(),
            episodes: traces.first().map_or(0, |t| t.len() as u64),
            final_regret_median: stat(0.5),
            final_regret_q1: stat(0.25),
            final_regret_q3: stat(0.75),
            slope: loglog_slope(&curve),
        });
    }
    let monotone = monotone_checks(&cells);
    Ok(SummaryReport { cells, monotone })
}

/// Splits `piece` into a key and a numeric value, e.g. `d_max4`.
fn numeric_piece(piece: &str) -> Option<(String, f64)> {
    let idx = piece.find(|c: char| c.is_ascii_digit() || c == '-')?;
    if idx == 0 {
        return None;
    }
    Some((piece[..idx].to_string(), piece[idx..].parse().ok()?))
}

fn monotone_checks(cells: &[CellSummary]) -> Vec<MonotoneCheck> {
    // (group, axis) -> (value, median)
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        let Some(median) = c.final_regret_median else { continue };
        let pieces: Vec<&str> = c.cell.split('-').collect();
        for (i, piece) in pieces.iter().enumerate().skip(1) {
            let Some((axis, value)) = numeric_piece(piece) else { continue };
            let mut rest = pieces.clone();
            rest[i] = "*";
            groups.entry((rest.join("-"), axis)).or_default().push((value, median));
        }
    }
    groups
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|((group, axis), mut v)| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let strictly_increasing = v.windows(2).all(|w| w[1].1 > w[0].1);
            MonotoneCheck {
                group,
                axis,
                values: v.iter().map(|p| p.0).collect(),
                medians: v.iter().map(|p| p.1).collect(),
                strictly_increasing,
            }
        })
        .collect()
}
