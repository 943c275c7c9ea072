//! Fixed instances for the criterion benches.

use delayrl_core::instances::{random_sdmdp, RandomSdmdpConfig};
use delayrl_core::{DelayModel, DelayedEstimator, DelayedEnv, Purpose, SeedSpec, TabularMdp};

pub const BUDGET: usize = 10_000_000;

/// Random SDMDP with `S = 5`, `A = 2`, `B = 2`, `Delta_max = 2`.
pub fn instance(horizon: usize, d_max: usize) -> (TabularMdp, DelayModel) {
    let cfg = RandomSdmdpConfig {
        states: 5,
        actions: 2,
        horizon,
        branching: 2,
        delta_max: d_max.min(2),
        d_max,
        known: true,
        no_negative: false,
    };
    random_sdmdp(&cfg, 1).expect("fixed config is valid")
}

/// Counts from `episodes` uniformly random episodes, so planning runs
/// past the capped regime.
pub fn warm_estimator(mdp: &TabularMdp, delay: &DelayModel, episodes: u64) -> DelayedEstimator {
    let mut est = DelayedEstimator::new(mdp.num_states(), mdp.num_actions(), delay.delta_max());
    let mut env = DelayedEnv::new(mdp, delay, SeedSpec::new(7)).expect("dimensions match");
    let mut rng = SeedSpec::new(7).stream(0, Purpose::Policy);
    for k in 0..episodes {
        env.reset(k);
        while !env.is_done() {
            env.step(rng.below(mdp.num_actions())).expect("episode running");
        }
        est.update_from_log(&env.finish_episode().expect("episode over")).expect("valid log");
    }
    est
}
