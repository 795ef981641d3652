//! Cross-module checks on a small identified plant.

use std::sync::{Arc, OnceLock};

use h2df_core::agents::{evaluate_policy, metrics_from_trace, ppo_train, td3_train, AgentConfig, Policy};
use h2df_core::engine::{collect_dataset, EngineInputs, MeasurementNoise, PrbsConfig, SplitFractions};
use h2df_core::env::{generate_reference, Action, EnvConfig, EpisodeConfig, PlantEnv, TraceRow, OBS_BASE, OBS_FULL};
use h2df_core::nn::{Activation, Mlp};
use h2df_core::rng;
use h2df_core::runtime::{CascadeConfig, Controller, Reply, StatePacket, Status};
use h2df_core::sysid::{train_plant, PlantModel, PlantTrainConfig};

fn plant() -> Arc<PlantModel> {
    static PLANT: OnceLock<Arc<PlantModel>> = OnceLock::new();
    PLANT
        .get_or_init(|| {
            let data = collect_dataset(2000, &PrbsConfig::default(), SplitFractions::default(), &MeasurementNoise::default()).unwrap();
            let cfg = PlantTrainConfig { max_epochs: 5, ..PlantTrainConfig::default() };
            Arc::new(train_plant(PlantModel::for_dataset(&data, 3).unwrap(), &data, &cfg).unwrap().model)
        })
        .clone()
}

fn short_env(no_augment: bool) -> PlantEnv {
    let cfg = EnvConfig {
        episode: EpisodeConfig { length: 120, segment_min: 20, segment_max: 40, ..EpisodeConfig::default() },
        no_augment,
        ..EnvConfig::default()
    };
    PlantEnv::new(plant(), cfg).unwrap()
}

fn random_policy(obs: usize, seed: u64) -> Policy {
    Policy::new(Mlp::new(&[obs, 16, 4], Activation::Tanh, Activation::Tanh, &mut rng::seeded(seed)), None).unwrap()
}

#[test]
fn observation_width_follows_augmentation() {
    assert_eq!(short_env(false).obs_dim(), OBS_FULL);
    assert_eq!(short_env(true).obs_dim(), OBS_BASE);
    let mut env = short_env(true);
    let o = env.reset(0);
    assert_eq!(o.len(), OBS_BASE);
    let t = env.step(&Action([0.0; 4])).unwrap();
    assert_eq!(t.observation.len(), OBS_BASE);
}

#[test]
fn evaluation_metrics_match_trace_reaggregation() {
    let env = short_env(false);
    let reference = generate_reference(&EpisodeConfig { length: 300, ..EpisodeConfig::validation() }).unwrap();
    let m = evaluate_policy(&random_policy(OBS_FULL, 4), &env, &reference, true, 0).unwrap();
    assert_eq!(m.trace.len(), 300);
    let n = m.trace.len() as f64;
    let rmse = (m.trace.iter().map(|r| (r.imep - r.reference).powi(2)).sum::<f64>() / n).sqrt();
    let p = &env.config().polytope;
    let outside = |r: &TraceRow| {
        let y = [r.imep, r.nox, r.soot, r.mprr];
        (0..4).map(|c| y[c] < p.lower[c] || y[c] > p.upper[c]).collect::<Vec<_>>()
    };
    let any = m.trace.iter().filter(|r| outside(r).iter().any(|&v| v)).count() as f64 / n;
    let mean_reward = m.trace.iter().map(|r| r.reward).sum::<f64>() / n;
    assert!((m.rmse - rmse).abs() < 1e-12);
    assert!((m.violation_fraction - any).abs() < 1e-12);
    assert!((m.mean_reward - mean_reward).abs() < 1e-9 * mean_reward.abs().max(1.0));
    for c in 0..4 {
        let frac = m.trace.iter().filter(|r| outside(r)[c]).count() as f64 / n;
        assert!((m.violation_by_channel[c] - frac).abs() < 1e-12);
    }
    assert_eq!(metrics_from_trace(&m.trace, p).unwrap(), m);
}

#[test]
fn deterministic_evaluation_is_repeatable() {
    let env = short_env(false);
    let reference = generate_reference(&EpisodeConfig { length: 200, ..EpisodeConfig::validation() }).unwrap();
    let policy = random_policy(OBS_FULL, 9);
    let a = evaluate_policy(&policy, &env, &reference, true, 0).unwrap();
    let b = evaluate_policy(&policy, &env, &reference, true, 1).unwrap();
    assert_eq!(a, b);
}

/// Feeding the environment's own measurements to the packet controller
/// reproduces the environment-side policy actions: the observer tracks the
/// environment's hidden state.
#[test]
fn controller_observer_tracks_environment_hidden_state() {
    let mut env = short_env(false);
    let policy = random_policy(OBS_FULL, 5);
    let ranges = env.config().observation.clone();
    let mut ctl = Controller::new(vec![(0, policy.clone())], CascadeConfig::single(0, 0.0, 17.0), plant(), ranges).unwrap();
    let mut obs = env.reset(3);
    let reference = env.reference().to_vec();
    let mut y = h2df_core::env::idle_outputs();
    for (t, &r) in reference.iter().enumerate() {
        let pkt = StatePacket { seq: t as u32 + 1, imep: y.imep as f32, nox: y.nox as f32, soot: y.soot as f32, mprr: y.mprr as f32, reference: r as f32 };
        let Reply::Action(reply) = ctl.handle(&pkt) else { panic!("dropped") };
        assert_eq!(reply.status, Status::Ok);
        let expected = policy.act(obs.as_slice()).unwrap().to_plant().to_array();
        for (k, (got, want)) in reply.actions.iter().zip(expected).enumerate() {
            assert!((*got as f64 - want).abs() < 1e-4, "step {t} channel {k}");
        }
        let applied = EngineInputs::from_array(reply.actions.map(f64::from));
        let tr = env.step(&Action::from_plant(&applied)).unwrap();
        y = tr.info.measured;
        obs = tr.observation;
    }
    assert_eq!(ctl.observer().steps(), reference.len() as u64 - 1);
}

#[test]
fn tiny_trainers_run_and_are_reproducible() {
    let env = short_env(false);
    let cfg = AgentConfig {
        max_episodes: 3,
        hidden: vec![16],
        td3: h2df_core::agents::Td3Config { warmup_steps: 100, batch_size: 32, ..Default::default() },
        ppo: h2df_core::agents::PpoConfig { rollout_len: 120, minibatch: 40, epochs: 2, ..Default::default() },
        ..AgentConfig::default()
    };
    let a = td3_train(&env, &cfg).unwrap();
    let b = td3_train(&env, &cfg).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.total_steps, 360);
    let p = ppo_train(&env, &cfg).unwrap();
    assert_eq!(p.curve.len(), 3);
    assert!(p.policy.log_std.is_some());
    assert_eq!(ppo_train(&env, &cfg).unwrap().policy, p.policy);
}
