//! Reinforcement learning with delayed state observation.
//!
//! * [`mdp`]: tabular MDPs and exact backward induction.
//! * [`delay`], [`env`]: inter-arrival models and the delayed simulator.
//! * [`augmented`]: the augmented MDP and exact delayed-policy oracles.
//! * [`pkd`]: the optimistic learner for partially known dynamics.
//! * [`delayed`]: MVP-Delayed on top of [`pkd`].
//! * [`instances`]: random, code and hard instances.
//! * [`trace`], [`experiment`]: regret traces, configs and summaries.

pub mod augmented;
pub mod delay;
pub mod delayed;
pub mod dist;
pub mod env;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod mdp;
pub mod pkd;
pub mod rng;
pub mod trace;

pub use augmented::{
    evaluate_delayed_policy, optimal_delayed_value, AugMdp, AugOutcome, AugState, DecisionMap, DelayedPolicy, HashPolicy,
    PolicyAction, Queue, QueueCodec, Tag, UniformPolicy,
};
pub use delay::{DelayModel, Exception, RevealFlags};
pub use delayed::{
    ell_star_delayed, run_mvp_delayed, run_random_policy, DelayFeature, DelayMode, DelayedEstimator, DelayedRunOptions,
    DelayedSpec, MvpDelayed,
};
pub use dist::Categorical;
pub use env::{make_cdmdp, CdmdpMode, DelayedEnv, DelayedObservation, EpisodeLog};
pub use error::{Error, Result};
pub use experiment::{run_experiment, summarize_files, summarize_glob, Algorithm, ExperimentConfig, InstanceSource, Manifest, SummaryReport};
pub use mdp::{evaluate_policy, optimal_value, InstanceFile, TabularMdp, TimedPolicy, ValueTables};
pub use pkd::{mvp_est, EffEstimator, EffKind, EffModel, FlatMdpEnv, FlatMdpSpec, LogTerm, PkdEnv, PkdSpec, Planner, RunOptions};
pub use rng::{Purpose, RngStream, SeedSpec};
pub use trace::{RegretTrace, TraceRow};
