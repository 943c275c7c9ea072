use delayrl_core::instances::{
    build_hard_instance, code_value, random_sdmdp, HardInstanceConfig, RandomSdmdpConfig, ThetaSpec,
};
use delayrl_core::{optimal_delayed_value, InstanceFile, Purpose, SeedSpec};

const BUDGET: usize = 10_000_000;

fn hard(d_max: usize, theta: ThetaSpec) -> HardInstanceConfig {
    HardInstanceConfig { states: 36, actions: 2, horizon: 32, d_max, branching: 16, theta }
}

#[test]
fn sixteen_states_two_actions_give_two_leaves() {
    let cfg = HardInstanceConfig {
        states: 16,
        actions: 2,
        horizon: 24,
        d_max: 3,
        branching: 8,
        theta: ThetaSpec::TwoPoint { base: 0.1, gap: 0.2, seed: 0 },
    };
    let hi = build_hard_instance(&cfg).unwrap();
    assert_eq!(hi.leaves.len(), 2);
    assert!(hi.tree_height <= 3);
}

#[test]
fn zero_theta_makes_every_leaf_pair_optimal() {
    for d in 1..=4 {
        let depth = build_hard_instance(&hard(d, ThetaSpec::TwoPoint { base: 0.0, gap: 0.0, seed: 0 })).unwrap().depth;
        let pairs = 8 * 2;
        let cfg = hard(d, ThetaSpec::Explicit { thetas: vec![vec![0.0; depth]; pairs] });
        let hi = build_hard_instance(&cfg).unwrap();
        let opt = optimal_delayed_value(&hi.mdp, &hi.delay, BUDGET).unwrap();
        let base = code_value(&vec![0.0; depth], hi.code_horizon).weighted;
        assert!((opt.value - base).abs() < 1e-12, "D = {d}: {} vs {base}", opt.value);
        for t in &hi.thetas {
            assert_eq!(code_value(t, hi.code_horizon).weighted, base);
        }
    }
}

#[test]
fn inflated_pair_is_selected_by_the_augmented_dp() {
    for d in 1..=4 {
        let mut rng = SeedSpec::new(d as u64).stream(0, Purpose::Oracle);
        let pairs = 16;
        let special = rng.below(pairs);
        let thetas: Vec<Vec<f64>> = (0..pairs)
            .map(|p| {
                let m = if p == special { 0.5 } else { 0.2 };
                (0..d).map(|_| if rng.below(2) == 0 { -m } else { m }).collect()
            })
            .collect();
        let hi = build_hard_instance(&hard(d, ThetaSpec::Explicit { thetas: thetas.clone() })).unwrap();
        assert_eq!(hi.depth, d);
        assert_eq!(hi.best_pair, (special / 2, special % 2));
        let opt = optimal_delayed_value(&hi.mdp, &hi.delay, BUDGET).unwrap();
        let values: Vec<f64> = thetas.iter().map(|t| code_value(t, hi.code_horizon).weighted).collect();
        let runner_up = values.iter().enumerate().filter(|&(i, _)| i != special).map(|(_, v)| *v).fold(f64::MIN, f64::max);
        assert!((opt.value - values[special]).abs() < 1e-12, "D = {d}: {} vs {}", opt.value, values[special]);
        let gap = code_value(&thetas[special], hi.code_horizon).weighted_theta
            - code_value(&thetas[(special + 1) % pairs], hi.code_horizon).weighted_theta;
        assert!((opt.value - runner_up - gap).abs() < 1e-12);
        assert!(gap > 0.0);
    }
}

#[test]
fn hard_instances_respect_their_budgets() {
    let mut built = 0;
    for states in [16, 24, 36, 64, 100] {
        for actions in [2, 3] {
            for horizon in [16, 24, 32, 48] {
                for d_max in [1, 2, 4, 8] {
                    for branching in [2, 4, 16] {
                        let cfg = HardInstanceConfig {
                            states,
                            actions,
                            horizon,
                            d_max,
                            branching,
                            theta: ThetaSpec::TwoPoint { base: 0.2, gap: 0.3, seed: 3 },
                        };
                        match build_hard_instance(&cfg) {
                            Ok(hi) => {
                                built += 1;
                                assert!(hi.mdp.num_states() <= states);
                                assert!(hi.mdp.branching() <= branching);
                                assert!(hi.tree_height + hi.depth <= horizon / 2);
                                assert_eq!(hi.delay.constant_delay(), Some(hi.depth));
                                assert_eq!(hi.thetas.len(), hi.leaves.len() * actions);
                            }
                            Err(e) => assert!(e.to_string().starts_with("validation error"), "{e}"),
                        }
                    }
                }
            }
        }
    }
    assert!(built > 50, "only {built} feasible configs");
}

#[test]
fn random_instances_validate_and_reproduce() {
    for seed in 0..100u64 {
        let mut rng = SeedSpec::new(seed).stream(0, Purpose::Oracle);
        let states = 1 + rng.below(6);
        let d_max = rng.below(4);
        let cfg = RandomSdmdpConfig {
            states,
            actions: 1 + rng.below(3),
            horizon: 1 + rng.below(6),
            branching: 1 + rng.below(states),
            delta_max: rng.below(d_max + 1),
            d_max,
            known: rng.below(2) == 0,
            no_negative: rng.below(2) == 0,
        };
        let (mdp, delay) = random_sdmdp(&cfg, seed).unwrap();
        let mut file = InstanceFile::from_mdp(&mdp);
        file.delay = Some(delay.to_file());
        let text = file.to_json();
        let back = InstanceFile::from_json(&text).unwrap();
        assert_eq!(back.mdp().unwrap(), mdp);
        assert_eq!(back.delay_model().unwrap().unwrap(), delay);
        let (m2, d2) = random_sdmdp(&cfg, seed).unwrap();
        let mut f2 = InstanceFile::from_mdp(&m2);
        f2.delay = Some(d2.to_file());
        assert_eq!(f2.to_json(), text);
    }
}

#[test]
fn branching_one_is_deterministic() {
    let cfg = RandomSdmdpConfig {
        states: 5,
        actions: 3,
        horizon: 4,
        branching: 1,
        delta_max: 1,
        d_max: 1,
        known: true,
        no_negative: false,
    };
    let (mdp, _) = random_sdmdp(&cfg, 11).unwrap();
    for s in 0..5 {
        for a in 0..3 {
            assert_eq!(mdp.transition(s, a).probs(), &[1.0]);
        }
    }
}
