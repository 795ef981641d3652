use alloc::vec::Vec;

use super::replay::{concat_rows, Batch, ReplayBuffer};
use super::{AgentConfig, Curve, Monitor, Policy, TrainOutcome};
use crate::env::{Action, PlantEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{clip_gradients, soft_update, Activation, AdamConfig, AdamState, Mlp, MlpBatch, Parameters};
use crate::rng::{self, Rng};

/// Actor, twin critics, their target copies and optimizer state.
#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    /// Critic updates performed so far.
    pub updates: u64,
    scratch: Scratch,
}

#[derive(Clone, Debug, Default)]
struct Scratch {
    batch: Batch,
    next_actions: Vec<f64>,
    x: Vec<f64>,
    x_next: Vec<f64>,
    targets: Vec<f64>,
    dy: Vec<f64>,
    dx: Vec<f64>,
    d_actions: Vec<f64>,
    actor_cache: MlpBatch,
    critic_caches: [MlpBatch; 2],
    target_cache: MlpBatch,
}

impl Td3Agent {
    pub fn new(obs_dim: usize, cfg: &AgentConfig, rng: &mut Rng) -> Self {
        let actor = Mlp::new(&cfg.layer_sizes(obs_dim, ACTION_DIM), Activation::Tanh, Activation::Tanh, rng);
        let critic_sizes = cfg.layer_sizes(obs_dim + ACTION_DIM, 1);
        let critics = [
            Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, rng),
            Mlp::new(&critic_sizes, Activation::Relu, Activation::Linear, rng),
        ];
        let adam = AdamConfig::default();
        Self {
            actor_opt: AdamState::new(&actor, adam),
            critic_opts: [AdamState::new(&critics[0], adam), AdamState::new(&critics[1], adam)],
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            updates: 0,
            scratch: Scratch::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_size()
    }

    pub fn policy(&self) -> Policy {
        Policy { actor: self.actor.clone(), log_std: None }
    }

    /// Exploratory action: actor output plus clamped Gaussian noise.
    pub fn explore(&self, obs: &[f64], std: f64, rng: &mut Rng) -> Result<Action> {
        let mut a = self.actor.forward(obs)?;
        for v in &mut a {
            *v = (*v + std * rng::normal(rng)).clamp(-1.0, 1.0);
        }
        Action::from_slice(&a)
    }

    /// One critic step on a sampled minibatch; every `policy_delay` calls
    /// also one actor step and a soft update of all targets.
    pub fn update(&mut self, buffer: &ReplayBuffer, cfg: &AgentConfig, rng: &mut Rng) -> Result<()> {
        let t = &cfg.td3;
        let n = self.obs_dim();
        let idx = buffer.sample_indices(t.batch_size, rng);
        let s = &mut self.scratch;
        buffer.gather(&idx, &mut s.batch);
        let b = s.batch.len();

        // Smoothed target actions and clipped double-Q targets.
        s.next_actions.clear();
        s.next_actions.extend_from_slice(self.actor_target.forward_batch(&s.batch.next_obs, b, &mut s.target_cache));
        for a in &mut s.next_actions {
            let eps = (t.target_noise * rng::normal(rng)).clamp(-t.target_noise_clip, t.target_noise_clip);
            *a = (*a + eps).clamp(-1.0, 1.0);
        }
        concat_rows(&s.batch.next_obs, n, &s.next_actions, ACTION_DIM, &mut s.x_next);
        s.targets.clear();
        s.targets.extend_from_slice(self.critic_targets[0].forward_batch(&s.x_next, b, &mut s.target_cache));
        let q2 = self.critic_targets[1].forward_batch(&s.x_next, b, &mut s.target_cache);
        // Episodes end only on the time limit, so every target bootstraps.
        for (i, y) in s.targets.iter_mut().enumerate() {
            *y = s.batch.rewards[i] + cfg.gamma * y.min(q2[i]);
        }

        concat_rows(&s.batch.obs, n, &s.batch.actions, ACTION_DIM, &mut s.x);
        for k in 0..2 {
            let q = self.critics[k].forward_batch(&s.x, b, &mut s.critic_caches[k]);
            s.dy.clear();
            s.dy.extend(q.iter().zip(&s.targets).map(|(q, y)| 2.0 * (q - y) / b as f64));
            let mut grad = self.critics[k].zeros_like();
            self.critics[k].backward_batch(&mut s.critic_caches[k], &s.dy, &mut grad, None);
            if !grad.all_finite() {
                return Err(Error::NonFinite("critic gradient"));
            }
            clip_gradients(&mut grad, cfg.grad_clip);
            self.critic_opts[k].update(&mut self.critics[k], &grad, cfg.lr, 0.0)?;
        }
        self.updates += 1;

        if self.updates.is_multiple_of(t.policy_delay as u64) {
            let mu = self.actor.forward_batch(&s.batch.obs, b, &mut s.actor_cache);
            concat_rows(&s.batch.obs, n, mu, ACTION_DIM, &mut s.x);
            self.critics[0].forward_batch(&s.x, b, &mut s.critic_caches[0]);
            s.dy.clear();
            s.dy.resize(b, -1.0 / b as f64);
            let mut sink = self.critics[0].zeros_like();
            self.critics[0].backward_batch(&mut s.critic_caches[0], &s.dy, &mut sink, Some(&mut s.dx));
            s.d_actions.clear();
            for r in 0..b {
                s.d_actions.extend_from_slice(&s.dx[r * (n + ACTION_DIM) + n..(r + 1) * (n + ACTION_DIM)]);
            }
            let mut grad = self.actor.zeros_like();
            self.actor.backward_batch(&mut s.actor_cache, &s.d_actions, &mut grad, None);
            if !grad.all_finite() {
                return Err(Error::NonFinite("actor gradient"));
            }
            clip_gradients(&mut grad, cfg.grad_clip);
            self.actor_opt.update(&mut self.actor, &grad, cfg.lr, 0.0)?;
            soft_update(&mut self.actor_target, &self.actor, t.tau);
            for k in 0..2 {
                soft_update(&mut self.critic_targets[k], &self.critics[k], t.tau);
            }
        }
        Ok(())
    }
}

pub fn td3_train(env: &PlantEnv, cfg: &AgentConfig) -> Result<TrainOutcome> {
    td3_train_with(env, cfg, &mut ())
}

/// TD3 on training episodes `0, 1, 2, ...` of `env`.
pub fn td3_train_with(env: &PlantEnv, cfg: &AgentConfig, monitor: &mut dyn Monitor) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (agent, outcome, _) = run(env, cfg, monitor)?;
    drop(agent);
    Ok(outcome)
}

/// Training loop returning the final agent and replay buffer as well.
pub(crate) fn run(env: &PlantEnv, cfg: &AgentConfig, monitor: &mut dyn Monitor) -> Result<(Td3Agent, TrainOutcome, ReplayBuffer)> {
    let mut env = env.clone();
    let n = env.obs_dim();
    let mut agent = Td3Agent::new(n, cfg, &mut rng::derive(cfg.seed, 1));
    let mut buffer = ReplayBuffer::new(cfg.td3.buffer_capacity, n);
    let mut act_rng = rng::derive(cfg.seed, 2);
    let mut learn_rng = rng::derive(cfg.seed, 3);
    let mut curve = Curve::new(cfg);
    let mut total_steps = 0usize;
    let mut stopped_at = None;
    let learn_from = cfg.td3.warmup_steps.max(cfg.td3.batch_size);

    for episode in 0..cfg.max_episodes {
        let mut obs = env.reset(episode as u64);
        let (mut ret, mut steps) = (0.0, 0usize);
        loop {
            let a = if total_steps < cfg.td3.warmup_steps {
                Action(core::array::from_fn(|_| rng::uniform(&mut act_rng, -1.0, 1.0)))
            } else {
                agent.explore(obs.as_slice(), cfg.td3.exploration_noise, &mut act_rng)?
            };
            let t = env.step(&a)?;
            if !t.reward.is_finite() {
                return Err(Error::NonFinite("reward"));
            }
            buffer.push(obs.as_slice(), &a.0, t.reward * cfg.reward_scale, t.observation.as_slice(), t.done)?;
            ret += t.reward;
            steps += 1;
            total_steps += 1;
            if buffer.len() >= learn_from {
                agent.update(&buffer, cfg, &mut learn_rng)?;
            }
            obs = t.observation;
            if t.done {
                break;
            }
        }
        if curve.push(ret, steps, monitor) {
            stopped_at = Some(episode + 1);
            break;
        }
    }
    let outcome = TrainOutcome { policy: agent.policy(), curve: curve.records, stopped_at, total_steps };
    Ok((agent, outcome, buffer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Td3Config;
    use alloc::sync::Arc;
    use alloc::vec;
    use crate::engine::{collect_dataset, MeasurementNoise, PrbsConfig, SplitFractions};
    use crate::env::EnvConfig;
    use crate::sysid::PlantModel;

    fn tiny_env() -> PlantEnv {
        let data = collect_dataset(300, &PrbsConfig::default(), SplitFractions::default(), &MeasurementNoise::NONE).unwrap();
        PlantEnv::new(Arc::new(PlantModel::for_dataset(&data, 2).unwrap()), EnvConfig::default()).unwrap()
    }

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            hidden: vec![8],
            max_episodes: 2,
            td3: Td3Config { batch_size: 16, warmup_steps: 100, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn two_episode_bookkeeping() {
        let (agent, out, buf) = run(&tiny_env(), &tiny_cfg(), &mut ()).unwrap();
        assert_eq!(out.curve.len(), 2);
        assert_eq!(buf.len(), 1250);
        assert_eq!(out.total_steps, 1250);
        assert_eq!(agent.updates, 1250 - 100 + 1);
        assert!(out.curve.iter().all(|r| r.steps == 625 && r.reward.is_finite()));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let env = tiny_env();
        let a = td3_train(&env, &tiny_cfg()).unwrap();
        let b = td3_train(&env, &tiny_cfg()).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy, b.policy);
        let c = td3_train(&env, &AgentConfig { seed: 99, ..tiny_cfg() }).unwrap();
        assert_ne!(a.policy, c.policy);
    }

    #[test]
    fn targets_start_equal_and_track_by_polyak_average() {
        let cfg = tiny_cfg();
        let mut rng = rng::seeded(5);
        let mut agent = Td3Agent::new(16, &cfg, &mut rng);
        assert_eq!(agent.actor, agent.actor_target);
        assert_eq!(agent.critics, agent.critic_targets);
        let mut buf = ReplayBuffer::new(64, 16);
        for k in 0..64 {
            let v = (k as f64 * 0.37).sin();
            buf.push(&[v; 16], &[v * 0.5; 4], v, &[-v; 16], false).unwrap();
        }
        agent.update(&buf, &cfg, &mut rng).unwrap();
        assert_eq!(agent.actor, agent.actor_target, "no target update before the policy delay");
        let old_actor_target = agent.actor_target.to_flat();
        let old_critic_target = agent.critic_targets[1].to_flat();
        agent.update(&buf, &cfg, &mut rng).unwrap();
        let tau = cfg.td3.tau;
        for ((t, old), src) in agent.actor_target.to_flat().iter().zip(&old_actor_target).zip(agent.actor.to_flat()) {
            assert_eq!(*t, tau * src + (1.0 - tau) * old);
        }
        for ((t, old), src) in agent.critic_targets[1].to_flat().iter().zip(&old_critic_target).zip(agent.critics[1].to_flat()) {
            assert_eq!(*t, tau * src + (1.0 - tau) * old);
        }
    }

    #[test]
    fn exploration_stays_in_bounds() {
        let cfg = tiny_cfg();
        let mut rng = rng::seeded(1);
        let agent = Td3Agent::new(16, &cfg, &mut rng);
        for k in 0..200 {
            let a = agent.explore(&[k as f64 * 0.1 - 10.0; 16], 3.0, &mut rng).unwrap();
            assert!(a.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
