mod common;

use frd_core::env::{run_episode, Action, CartPole, EnvConfig, EnvState, TerminationCause};
use rand::Rng;

#[test]
fn fifty_right_pushes_match_euler_oracle() {
    let cfg = EnvConfig::<f64>::default();
    let mut state = EnvState::zero();
    let mut oracle = [0.0; 4];
    for step in 0..50 {
        state = cfg.dynamics(&state, Action::Right);
        oracle = common::euler_step(oracle, 1.0);
        for (c, (got, want)) in state.to_array().iter().zip(oracle).enumerate() {
            assert!((got - want).abs() < 1e-6, "step {step} component {c}: {got} vs {want}");
        }
    }
}

#[test]
fn random_actions_from_random_states_match_oracle() {
    let cfg = EnvConfig::<f64>::default();
    let mut rng = common::seeded(11);
    for _ in 0..200 {
        let start: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
        let mut state = EnvState::from_array(start);
        let mut oracle = start;
        for _ in 0..30 {
            let right = rng.random_bool(0.5);
            let action = if right { Action::Right } else { Action::Left };
            state = cfg.dynamics(&state, action);
            oracle = common::euler_step(oracle, if right { 1.0 } else { -1.0 });
        }
        for (got, want) in state.to_array().iter().zip(oracle) {
            assert!((got - want).abs() < 1e-9);
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let c32 = EnvConfig::<f32>::default();
    let c64 = EnvConfig::<f64>::default();
    let mut s32 = EnvState::<f32>::new(0.01, -0.02, 0.03, 0.01);
    let mut s64 = EnvState::<f64>::new(0.01, -0.02, 0.03, 0.01);
    for i in 0..40 {
        let a = if i % 3 == 0 { Action::Left } else { Action::Right };
        s32 = c32.dynamics(&s32, a);
        s64 = c64.dynamics(&s64, a);
    }
    for (a, b) in s32.to_array().iter().zip(s64.to_array()) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}

#[test]
fn uniform_random_policy_median_is_short() {
    let mut scores: Vec<f64> = (0..1000)
        .map(|seed| run_episode(EnvConfig::<f32>::default(), seed, |_| [0.5, 0.5]).score() as f64)
        .collect();
    let median = common::median(&mut scores);
    assert!((15.0..=40.0).contains(&median), "median {median}");
}

#[test]
fn every_episode_ends_with_a_cause_and_reward_per_step() {
    for seed in 0..50 {
        let ep = run_episode(EnvConfig::<f32>::default(), seed, |_| [0.5, 0.5]);
        let rewards: f32 = ep.trajectory.iter().map(|t| t.reward).sum();
        assert_eq!(rewards as u32, ep.score());
        assert!(matches!(ep.cause, TerminationCause::PoleFell | TerminationCause::CartOutOfRange));
    }
}

#[test]
fn episode_cap_is_max_score() {
    let cfg = EnvConfig::<f64> { max_steps: 5, ..Default::default() };
    let ep = run_episode(cfg, 3, |s| if s.pole_angle > 0.0 { [0.0, 1.0] } else { [1.0, 0.0] });
    assert_eq!(ep.cause, TerminationCause::MaxScore);
    assert_eq!(ep.score(), 5);
}

#[test]
fn reset_seed_fixes_the_start() {
    let mut a = CartPole::new(EnvConfig::<f32>::default());
    let first = a.reset(9);
    a.step(Action::Left).unwrap();
    assert_eq!(a.reset(9), first);
    assert_eq!(a.steps(), 0);
}
