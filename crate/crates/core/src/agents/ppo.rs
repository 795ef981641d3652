use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{AgentConfig, Curve, Monitor, Policy, TrainOutcome};
use crate::env::{Action, PlantEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{clip_gradients, Activation, AdamConfig, AdamState, Mlp, MlpBatch, ParamRole, Parameters, Tensor};
use crate::rng::{self, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian policy: tanh-squashed mean network plus a
/// state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianActor {
    pub mean: Mlp,
    pub log_std: Tensor,
}

impl GaussianActor {
    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        let ls = self.log_std.data();
        (0..ACTION_DIM)
            .map(|i| {
                let z = (action[i] - mean[i]) * math::exp(-ls[i]);
                -0.5 * z * z - ls[i] - 0.5 * LN_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.data().iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
    }

    pub fn policy(&self) -> Policy {
        Policy { actor: self.mean.clone(), log_std: Some(self.log_std.data().to_vec()) }
    }
}

impl Parameters for GaussianActor {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor, ParamRole)) {
        self.mean.visit(f);
        f(&self.log_std, ParamRole::Bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(&'a mut Tensor, ParamRole)) {
        self.mean.visit_mut(f);
        f(&mut self.log_std, ParamRole::Bias);
    }
}

/// One collected episode (or its first `rollout_len` steps).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub obs: Vec<f64>,
    /// Sampled policy-space actions before clamping.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Rewards multiplied by the learning scale.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Value of the observation after the last step.
    pub last_value: f64,
    /// Unscaled reward sum.
    pub raw_return: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Everything one worker needs to collect one rollout.
pub struct RolloutJob<'a> {
    pub env: &'a mut PlantEnv,
    pub actor: &'a GaussianActor,
    pub value: &'a Mlp,
    pub episode: u64,
    pub rng: Rng,
    pub reward_scale: f64,
    pub max_steps: usize,
}

impl RolloutJob<'_> {
    pub fn run(mut self) -> Result<Rollout> {
        let mut r = Rollout::default();
        let mut obs = self.env.reset(self.episode);
        let std: Vec<f64> = self.actor.log_std.data().iter().map(|s| math::exp(*s)).collect();
        loop {
            let mean = self.actor.mean.forward(obs.as_slice())?;
            let a: [f64; ACTION_DIM] = core::array::from_fn(|i| mean[i] + std[i] * rng::normal(&mut self.rng));
            r.log_probs.push(self.actor.log_prob(&mean, &a));
            r.values.push(self.value.forward(obs.as_slice())?[0]);
            r.obs.extend_from_slice(obs.as_slice());
            r.actions.extend_from_slice(&a);
            let t = self.env.step(&Action(a))?;
            if !t.reward.is_finite() {
                return Err(Error::NonFinite("reward"));
            }
            r.rewards.push(t.reward * self.reward_scale);
            r.raw_return += t.reward;
            obs = t.observation;
            if t.done || r.len() >= self.max_steps {
                break;
            }
        }
        r.last_value = self.value.forward(obs.as_slice())?[0];
        Ok(r)
    }
}

/// Executes rollout jobs; results come back in job order.
pub trait RolloutRunner {
    fn run_all(&self, jobs: Vec<RolloutJob<'_>>) -> Vec<Result<Rollout>>;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct SequentialRunner;

impl RolloutRunner for SequentialRunner {
    fn run_all(&self, jobs: Vec<RolloutJob<'_>>) -> Vec<Result<Rollout>> {
        jobs.into_iter().map(RolloutJob::run).collect()
    }
}

/// Generalized advantage estimates and value targets for a rollout that
/// ends by truncation (the final value bootstraps).
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    for a in adv {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// `min(ratio·A, clip(ratio, 1 ± eps)·A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Policy and value networks with their optimizers.
#[derive(Clone, Debug)]
pub struct PpoAgent {
    pub actor: GaussianActor,
    pub value: Mlp,
    actor_opt: AdamState,
    value_opt: AdamState,
    actor_cache: MlpBatch,
    value_cache: MlpBatch,
}

impl PpoAgent {
    pub fn new(obs_dim: usize, cfg: &AgentConfig, rng: &mut Rng) -> Self {
        let mean = Mlp::new(&cfg.layer_sizes(obs_dim, ACTION_DIM), Activation::Tanh, Activation::Tanh, rng);
        let log_std = Tensor::from_vec(&[ACTION_DIM], vec![cfg.ppo.init_log_std; ACTION_DIM]).expect("static shape");
        let actor = GaussianActor { mean, log_std };
        let value = Mlp::new(&cfg.layer_sizes(obs_dim, 1), Activation::Tanh, Activation::Linear, rng);
        let adam = AdamConfig::default();
        Self {
            actor_opt: AdamState::new(&actor, adam),
            value_opt: AdamState::new(&value, adam),
            actor,
            value,
            actor_cache: MlpBatch::default(),
            value_cache: MlpBatch::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.mean.input_size()
    }

    /// Probability ratios of the current policy against the one that
    /// collected `rollout`.
    pub fn ratios(&self, rollout: &Rollout) -> Result<Vec<f64>> {
        let n = self.obs_dim();
        (0..rollout.len())
            .map(|t| {
                let mean = self.actor.mean.forward(&rollout.obs[t * n..(t + 1) * n])?;
                let lp = self.actor.log_prob(&mean, &rollout.actions[t * ACTION_DIM..(t + 1) * ACTION_DIM]);
                Ok(math::exp(lp - rollout.log_probs[t]))
            })
            .collect()
    }

    /// Clipped-surrogate and value updates over the merged rollouts.
    pub fn update(&mut self, rollouts: &[Rollout], cfg: &AgentConfig, rng: &mut Rng) -> Result<()> {
        let n = self.obs_dim();
        let p = &cfg.ppo;
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut old_lp = Vec::new();
        let mut adv = Vec::new();
        let mut returns = Vec::new();
        for r in rollouts {
            let (a, ret) = gae(&r.rewards, &r.values, r.last_value, cfg.gamma, p.gae_lambda);
            obs.extend_from_slice(&r.obs);
            actions.extend_from_slice(&r.actions);
            old_lp.extend_from_slice(&r.log_probs);
            adv.extend(a);
            returns.extend(ret);
        }
        normalize_advantages(&mut adv);
        let total = adv.len();
        let mut order: Vec<usize> = (0..total).collect();
        let (mut mb_obs, mut mb_dy) = (Vec::new(), Vec::new());
        for _ in 0..p.epochs {
            shuffle(&mut order, rng);
            for chunk in order.chunks(p.minibatch) {
                let b = chunk.len();
                mb_obs.clear();
                for &i in chunk {
                    mb_obs.extend_from_slice(&obs[i * n..(i + 1) * n]);
                }

                let ls: Vec<f64> = self.actor.log_std.data().to_vec();
                let inv_var: Vec<f64> = ls.iter().map(|s| math::exp(-2.0 * s)).collect();
                let mean = self.actor.mean.forward_batch(&mb_obs, b, &mut self.actor_cache).to_vec();
                let mut grad = self.actor.zeros_like();
                mb_dy.clear();
                mb_dy.resize(b * ACTION_DIM, 0.0);
                let mut d_log_std = [-p.entropy_coef; ACTION_DIM];
                for (k, &i) in chunk.iter().enumerate() {
                    let mu = &mean[k * ACTION_DIM..(k + 1) * ACTION_DIM];
                    let a = &actions[i * ACTION_DIM..(i + 1) * ACTION_DIM];
                    let ratio = math::exp(self.actor.log_prob(mu, a) - old_lp[i]);
                    let unclipped = ratio * adv[i];
                    if unclipped > clipped_surrogate(ratio, adv[i], p.clip) {
                        continue;
                    }
                    let d_lp = -adv[i] * ratio / b as f64;
                    for j in 0..ACTION_DIM {
                        let diff = a[j] - mu[j];
                        mb_dy[k * ACTION_DIM + j] = d_lp * diff * inv_var[j];
                        d_log_std[j] += d_lp * (diff * diff * inv_var[j] - 1.0);
                    }
                }
                self.actor.mean.backward_batch(&mut self.actor_cache, &mb_dy, &mut grad.mean, None);
                grad.log_std.data_mut().copy_from_slice(&d_log_std);
                if !grad.all_finite() {
                    return Err(Error::NonFinite("policy gradient"));
                }
                clip_gradients(&mut grad, cfg.grad_clip);
                self.actor_opt.update(&mut self.actor, &grad, cfg.lr, 0.0)?;

                let v = self.value.forward_batch(&mb_obs, b, &mut self.value_cache);
                mb_dy.clear();
                mb_dy.extend(chunk.iter().zip(v).map(|(&i, v)| p.value_coef * 2.0 * (v - returns[i]) / b as f64));
                let mut vgrad = self.value.zeros_like();
                self.value.backward_batch(&mut self.value_cache, &mb_dy, &mut vgrad, None);
                if !vgrad.all_finite() {
                    return Err(Error::NonFinite("value gradient"));
                }
                clip_gradients(&mut vgrad, cfg.grad_clip);
                self.value_opt.update(&mut self.value, &vgrad, cfg.lr, 0.0)?;
            }
        }
        Ok(())
    }
}

fn shuffle(v: &mut [usize], rng: &mut Rng) {
    for i in (1..v.len()).rev() {
        let j = rng::int_inclusive(rng, 0, i);
        v.swap(i, j);
    }
}

pub fn ppo_train(env: &PlantEnv, cfg: &AgentConfig) -> Result<TrainOutcome> {
    ppo_train_with(env, cfg, &mut (), &SequentialRunner)
}

/// PPO on training episodes `0, 1, 2, ...`; with `workers > 1` each update
/// uses one episode per worker, merged in worker order.
pub fn ppo_train_with(env: &PlantEnv, cfg: &AgentConfig, monitor: &mut dyn Monitor, runner: &dyn RolloutRunner) -> Result<TrainOutcome> {
    cfg.validate()?;
    let workers = cfg.ppo.workers;
    let mut envs: Vec<PlantEnv> = (0..workers).map(|_| env.clone()).collect();
    let mut agent = PpoAgent::new(env.obs_dim(), cfg, &mut rng::derive(cfg.seed, 1));
    let mut learn_rng = rng::derive(cfg.seed, 3);
    let mut curve = Curve::new(cfg);
    let mut total_steps = 0usize;
    let mut stopped_at = None;
    let mut episode = 0usize;
    'outer: while episode < cfg.max_episodes {
        let batch = workers.min(cfg.max_episodes - episode);
        let jobs = envs
            .iter_mut()
            .take(batch)
            .enumerate()
            .map(|(w, env)| RolloutJob {
                env,
                actor: &agent.actor,
                value: &agent.value,
                episode: (episode + w) as u64,
                rng: rng::derive(cfg.seed, 0x1000 + (episode + w) as u64),
                reward_scale: cfg.reward_scale,
                max_steps: cfg.ppo.rollout_len,
            })
            .collect();
        let rollouts = runner.run_all(jobs).into_iter().collect::<Result<Vec<_>>>()?;
        for r in &rollouts {
            total_steps += r.len();
            episode += 1;
            if curve.push(r.raw_return, r.len(), monitor) {
                stopped_at = Some(episode);
                break 'outer;
            }
        }
        agent.update(&rollouts, cfg, &mut learn_rng)?;
    }
    Ok(TrainOutcome { policy: agent.actor.policy(), curve: curve.records, stopped_at, total_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{collect_dataset, MeasurementNoise, PrbsConfig, SplitFractions};
    use crate::env::EnvConfig;
    use crate::sysid::PlantModel;
    use alloc::sync::Arc;
    use proptest::prelude::*;

    fn tiny_env() -> PlantEnv {
        let data = collect_dataset(300, &PrbsConfig::default(), SplitFractions::default(), &MeasurementNoise::NONE).unwrap();
        PlantEnv::new(Arc::new(PlantModel::for_dataset(&data, 2).unwrap()), EnvConfig::default()).unwrap()
    }

    fn tiny_cfg() -> AgentConfig {
        AgentConfig { hidden: vec![8], max_episodes: 3, ..Default::default() }
    }

    #[test]
    fn gae_matches_hand_recursion() {
        let (adv, ret) = gae(&[1.0, 2.0], &[0.5, 0.25], 4.0, 0.9, 0.5);
        let d1 = 2.0 + 0.9 * 4.0 - 0.25;
        let d0 = 1.0 + 0.9 * 0.25 - 0.5;
        assert!((adv[1] - d1).abs() < 1e-15);
        assert!((adv[0] - (d0 + 0.45 * d1)).abs() < 1e-15);
        assert!((ret[0] - (adv[0] + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn constant_advantages_normalize_to_zero() {
        let mut a = vec![3.5; 50];
        normalize_advantages(&mut a);
        assert!(a.iter().all(|v| v.abs() < 1e-6));
        let mut b = vec![1.0, 2.0, 3.0];
        normalize_advantages(&mut b);
        assert!(b.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let mut r = rng::seeded(2);
        let mut agent = PpoAgent::new(3, &AgentConfig { hidden: vec![4], ..Default::default() }, &mut r);
        agent.actor.log_std = Tensor::from_vec(&[4], vec![0.0, -1.0, 0.5, 0.2]).unwrap();
        let mu = [0.1, -0.2, 0.3, 0.0];
        let a = [0.4, 0.0, -0.3, 1.0];
        let mut expect = 0.0;
        for i in 0..4 {
            let s = math::exp(agent.actor.log_std.data()[i]);
            expect += -((a[i] - mu[i]) * (a[i] - mu[i])) / (2.0 * s * s) - math::ln(s * math::sqrt(2.0 * core::f64::consts::PI));
        }
        assert!((agent.actor.log_prob(&mu, &a) - expect).abs() < 1e-12);
    }

    #[test]
    fn first_ratio_is_one_and_updates_stay_finite() {
        let env = tiny_env();
        let cfg = tiny_cfg();
        let mut agent = PpoAgent::new(env.obs_dim(), &cfg, &mut rng::seeded(4));
        let mut e = env.clone();
        let job = RolloutJob {
            env: &mut e,
            actor: &agent.actor,
            value: &agent.value,
            episode: 0,
            rng: rng::seeded(5),
            reward_scale: cfg.reward_scale,
            max_steps: 625,
        };
        let roll = job.run().unwrap();
        assert_eq!(roll.len(), 625);
        assert!(agent.ratios(&roll).unwrap().iter().all(|&r| r == 1.0));
        agent.update(core::slice::from_ref(&roll), &cfg, &mut rng::seeded(6)).unwrap();
        let r = agent.ratios(&roll).unwrap();
        assert!(r.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(r.iter().any(|&v| v != 1.0));
    }

    #[test]
    fn training_is_reproducible() {
        let env = tiny_env();
        let a = ppo_train(&env, &tiny_cfg()).unwrap();
        let b = ppo_train(&env, &tiny_cfg()).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.total_steps, 3 * 625);
    }

    #[test]
    fn workers_merge_in_order() {
        let env = tiny_env();
        let cfg = AgentConfig { ppo: crate::agents::PpoConfig { workers: 2, ..Default::default() }, ..tiny_cfg() };
        let a = ppo_train(&env, &cfg).unwrap();
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.curve, ppo_train(&env, &cfg).unwrap().curve);
        let single = ppo_train(&env, &tiny_cfg()).unwrap();
        assert_eq!(a.curve[0], single.curve[0]);
    }

    proptest! {
        #[test]
        fn clipping_never_helps(ratio in 0.0..3.0f64, adv in -5.0..5.0f64) {
            let s = clipped_surrogate(ratio, adv, 0.2);
            prop_assert!(s <= ratio * adv);
            if adv > 0.0 && ratio > 1.2 {
                prop_assert!((s - 1.2 * adv).abs() < 1e-12);
            }
        }
    }
}
