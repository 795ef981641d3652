//! TD3 and PPO trainers on [`PlantEnv`], policy evaluation and the
//! state-augmentation ablation.

mod ppo;
mod replay;
mod td3;

pub use ppo::{
    clipped_surrogate, gae, normalize_advantages, ppo_train, ppo_train_with, GaussianActor, PpoAgent, Rollout, RolloutJob, RolloutRunner,
    SequentialRunner,
};
pub use replay::{Batch, ReplayBuffer, StoredTransition};
pub use td3::{td3_train, td3_train_with, Td3Agent};

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::{Action, PlantEnv, TraceRow, ACTION_DIM};
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Activation, Mlp};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub batch_size: usize,
    pub tau: f64,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub exploration_noise: f64,
    /// Uniform-random steps collected before learning starts.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            batch_size: 256,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            warmup_steps: 2500,
            buffer_capacity: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout_len: usize,
    pub value_coef: f64,
    pub init_log_std: f64,
    /// Episodes collected per update, one per worker seed stream.
    pub workers: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            epochs: 10,
            minibatch: 125,
            rollout_len: 625,
            value_coef: 0.5,
            init_log_std: -0.5,
            workers: 1,
        }
    }
}

/// Settings shared by both trainers plus per-algorithm sections.
///
/// An episode's score is its mean per-step reward times `score_scale`;
/// training stops once the moving average of the last `moving_window`
/// scores reaches `stop_threshold`. Learners see rewards multiplied by
/// `reward_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub lr: f64,
    pub grad_clip: f64,
    pub gamma: f64,
    pub stop_threshold: f64,
    pub score_scale: f64,
    pub reward_scale: f64,
    pub moving_window: usize,
    pub max_episodes: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub td3: Td3Config,
    pub ppo: PpoConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            grad_clip: 2.0,
            gamma: 0.99,
            stop_threshold: 9.0,
            score_scale: 1.0 / 150.0,
            reward_scale: 1e-3,
            moving_window: 20,
            max_episodes: 300,
            hidden: alloc::vec![64, 64],
            seed: 1,
            td3: Td3Config::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("agent needs lr > 0, grad_clip > 0 and gamma in [0, 1]");
        }
        if self.moving_window == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("agent needs a positive moving window and non-empty hidden widths");
        }
        if !(self.score_scale > 0.0) || !(self.reward_scale > 0.0) {
            return bad("score_scale and reward_scale must be positive");
        }
        let t = &self.td3;
        if t.batch_size == 0 || t.policy_delay == 0 || t.buffer_capacity == 0 || !(0.0..=1.0).contains(&t.tau) {
            return bad("td3 needs positive batch, delay, capacity and tau in [0, 1]");
        }
        if t.target_noise < 0.0 || t.target_noise_clip < 0.0 || t.exploration_noise < 0.0 {
            return bad("td3 noise settings must be non-negative");
        }
        let p = &self.ppo;
        if p.epochs == 0 || p.minibatch == 0 || p.rollout_len == 0 || p.workers == 0 || !(p.clip > 0.0) {
            return bad("ppo needs positive epochs, minibatch, rollout length, workers and clip");
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) || p.entropy_coef < 0.0 || p.value_coef <= 0.0 {
            return bad("ppo needs gae_lambda in [0, 1], entropy_coef >= 0 and value_coef > 0");
        }
        Ok(())
    }

    pub(crate) fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = alloc::vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(output);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Td3,
    Ppo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Td3 => "td3",
            Algorithm::Ppo => "ppo",
        }
    }
}

/// Deterministic controller: a tanh-output MLP from observation to
/// policy-space action, plus the exploration log-std for stochastic
/// policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub actor: Mlp,
    pub log_std: Option<Vec<f64>>,
}

impl Policy {
    pub fn new(actor: Mlp, log_std: Option<Vec<f64>>) -> Result<Self> {
        let p = Self { actor, log_std };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.actor.validate()?;
        if self.actor.output_size() != ACTION_DIM {
            return Err(Error::Shape(alloc::format!("policy emits {} values, expected {ACTION_DIM}", self.actor.output_size())));
        }
        if self.actor.layers.last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(Error::Config("policy output layer must be tanh".into()));
        }
        if self.log_std.as_ref().is_some_and(|s| s.len() != ACTION_DIM) {
            return Err(Error::Shape("log_std needs one entry per action".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_size()
    }

    /// Mean action, inside `[-1, 1]` by construction.
    pub fn act(&self, obs: &[f64]) -> Result<Action> {
        let y = self.actor.forward(obs)?;
        Action::from_slice(&y)
    }

    /// Mean action plus Gaussian exploration, clamped to `[-1, 1]`.
    pub fn sample(&self, obs: &[f64], rng: &mut Rng) -> Result<Action> {
        let mut a = self.act(obs)?;
        if let Some(ls) = &self.log_std {
            for (v, s) in a.0.iter_mut().zip(ls) {
                *v = (*v + math::exp(*s) * rng::normal(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }
}

/// One point of a learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    /// Normalized episode score.
    pub reward: f64,
    pub moving_avg: f64,
    pub steps: usize,
    pub wall_ms: u64,
}

/// Observer of training progress; also supplies wall-clock time, which
/// the core crate cannot read itself.
pub trait Monitor {
    fn elapsed_ms(&self) -> u64 {
        0
    }

    fn episode(&mut self, _record: &EpisodeRecord) {}
}

impl Monitor for () {}

/// Moving average over the trailing `window` scores.
pub(crate) fn trailing_mean(scores: &[f64], window: usize) -> f64 {
    let tail = &scores[scores.len().saturating_sub(window)..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Tracks episode scores and the stop criterion.
#[derive(Clone, Debug)]
pub(crate) struct Curve {
    pub records: Vec<EpisodeRecord>,
    scores: Vec<f64>,
    window: usize,
    threshold: f64,
    score_scale: f64,
}

impl Curve {
    pub fn new(cfg: &AgentConfig) -> Self {
        Self { records: Vec::new(), scores: Vec::new(), window: cfg.moving_window, threshold: cfg.stop_threshold, score_scale: cfg.score_scale }
    }

    /// Records an episode; returns true once the stop criterion holds.
    pub fn push(&mut self, raw_return: f64, steps: usize, monitor: &mut dyn Monitor) -> bool {
        let score = raw_return / steps.max(1) as f64 * self.score_scale;
        self.scores.push(score);
        let rec = EpisodeRecord {
            episode: self.scores.len(),
            reward: score,
            moving_avg: trailing_mean(&self.scores, self.window),
            steps,
            wall_ms: monitor.elapsed_ms(),
        };
        monitor.episode(&rec);
        self.records.push(rec);
        self.scores.len() >= self.window && rec.moving_avg >= self.threshold
    }
}

/// First 1-based episode whose full trailing window averages at least
/// `threshold`.
pub fn episodes_to_threshold(curve: &[EpisodeRecord], window: usize, threshold: f64) -> Option<usize> {
    curve.iter().find(|r| r.episode >= window && r.moving_avg >= threshold).map(|r| r.episode)
}

/// Mean normalized score of the last `window` episodes.
pub fn final_average(curve: &[EpisodeRecord], window: usize) -> f64 {
    let scores: Vec<f64> = curve.iter().map(|r| r.reward).collect();
    trailing_mean(&scores, window)
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub curve: Vec<EpisodeRecord>,
    /// Episode at which the stop threshold was reached.
    pub stopped_at: Option<usize>,
    pub total_steps: usize,
}

/// Normalized scores of a uniform-random policy on training episodes
/// `first_episode..first_episode + episodes`.
pub fn random_policy_scores(env: &PlantEnv, cfg: &AgentConfig, first_episode: u64, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = env.clone();
    let mut rng = rng::derive(seed, 0x7261_6e64);
    let mut out = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        env.reset(first_episode + e);
        let (mut total, mut steps) = (0.0, 0usize);
        loop {
            let a = Action(core::array::from_fn(|_| rng::uniform(&mut rng, -1.0, 1.0)));
            let t = env.step(&a)?;
            total += t.reward;
            steps += 1;
            if t.done {
                break;
            }
        }
        out.push(total / steps as f64 * cfg.score_scale);
    }
    Ok(out)
}

/// Aggregates of a policy rollout on one reference trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    /// RMSE between measured IMEP and its reference (bar).
    pub rmse: f64,
    /// Fraction of steps outside the polytope, per output channel.
    pub violation_by_channel: [f64; 4],
    /// Fraction of steps outside the polytope on any channel.
    pub violation_fraction: f64,
    pub mean_reward: f64,
    pub trace: Vec<TraceRow>,
}

/// Recomputes the metrics from a trace against `poly`.
pub fn metrics_from_trace(trace: &[TraceRow], poly: &crate::env::SafePolytope) -> Result<EvalMetrics> {
    if trace.is_empty() {
        return Err(Error::UndefinedMetric("empty trace".into()));
    }
    let n = trace.len() as f64;
    let mut se = 0.0;
    let mut by = [0usize; 4];
    let mut any = 0usize;
    let mut rew = 0.0;
    for row in trace {
        se += (row.imep - row.reference) * (row.imep - row.reference);
        let y = crate::engine::EngineOutputs { imep: row.imep, nox: row.nox, soot: row.soot, mprr: row.mprr };
        let v = poly.violations(&y);
        for c in 0..4 {
            by[c] += v[c] as usize;
        }
        any += v.iter().any(|&x| x) as usize;
        rew += row.reward;
    }
    Ok(EvalMetrics {
        rmse: math::sqrt(se / n),
        violation_by_channel: by.map(|k| k as f64 / n),
        violation_fraction: any as f64 / n,
        mean_reward: rew / n,
        trace: trace.to_vec(),
    })
}

/// Runs `policy` along `reference` (exploration off when `deterministic`).
pub fn evaluate_policy(policy: &Policy, env: &PlantEnv, reference: &[f64], deterministic: bool, seed: u64) -> Result<EvalMetrics> {
    if policy.obs_dim() != env.obs_dim() {
        return Err(Error::Shape(alloc::format!("policy expects {} observations, env emits {}", policy.obs_dim(), env.obs_dim())));
    }
    let mut env = env.clone();
    let mut obs = env.reset_with_reference(reference.to_vec(), u64::MAX)?;
    let mut rng = rng::derive(seed, 0x6576_616c);
    let mut trace = Vec::with_capacity(reference.len());
    loop {
        let a = if deterministic { policy.act(obs.as_slice())? } else { policy.sample(obs.as_slice(), &mut rng)? };
        let t = env.step(&a)?;
        trace.push(TraceRow::from(&t.info));
        obs = t.observation;
        if t.done {
            break;
        }
    }
    metrics_from_trace(&trace, &env.config().polytope)
}

/// Which observation variant an ablation arm trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    With,
    Without,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::With => "with_hidden",
            Arm::Without => "without_hidden",
        }
    }
}

/// One trained arm of the ablation.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub algorithm: Algorithm,
    pub arm: Arm,
    pub seed: u64,
    pub episodes_to_threshold: Option<usize>,
    pub final_avg_reward: f64,
    pub curve: Vec<EpisodeRecord>,
    pub policy: Policy,
}

/// Flat ablation table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub algorithm: String,
    pub arm: String,
    pub seed: u64,
    /// Empty when the threshold was never reached.
    pub episodes_to_threshold: Option<usize>,
    pub final_avg_reward: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn rows(&self) -> Vec<AblationRow> {
        self.runs
            .iter()
            .map(|r| AblationRow {
                algorithm: r.algorithm.as_str().into(),
                arm: r.arm.as_str().into(),
                seed: r.seed,
                episodes_to_threshold: r.episodes_to_threshold,
                final_avg_reward: r.final_avg_reward,
            })
            .collect()
    }

    /// One row per algorithm and arm: median episodes-to-threshold over
    /// seeds that reached it, mean final score over all seeds.
    pub fn summary(&self) -> Vec<AblationRow> {
        let mut out = Vec::new();
        for alg in [Algorithm::Td3, Algorithm::Ppo] {
            for arm in [Arm::With, Arm::Without] {
                let runs: Vec<&AblationRun> = self.runs.iter().filter(|r| r.algorithm == alg && r.arm == arm).collect();
                if runs.is_empty() {
                    continue;
                }
                let mut reached: Vec<usize> = runs.iter().filter_map(|r| r.episodes_to_threshold).collect();
                reached.sort_unstable();
                out.push(AblationRow {
                    algorithm: alg.as_str().into(),
                    arm: arm.as_str().into(),
                    seed: runs.len() as u64,
                    episodes_to_threshold: reached.get(reached.len() / 2).copied(),
                    final_avg_reward: runs.iter().map(|r| r.final_avg_reward).sum::<f64>() / runs.len() as f64,
                });
            }
        }
        out
    }

    /// Per algorithm: number of seeds where the hidden-state arm reached the
    /// threshold in no more episodes than the truncated arm, and the number
    /// of paired seeds. A run that never reached it counts as infinitely
    /// slow; a pair where neither arm reached it is not a win.
    pub fn paired_wins(&self, algorithm: Algorithm) -> (usize, usize) {
        let mut wins = 0;
        let mut pairs = 0;
        for with in self.runs.iter().filter(|r| r.algorithm == algorithm && r.arm == Arm::With) {
            let Some(without) =
                self.runs.iter().find(|r| r.algorithm == algorithm && r.arm == Arm::Without && r.seed == with.seed)
            else {
                continue;
            };
            pairs += 1;
            wins += match (with.episodes_to_threshold, without.episodes_to_threshold) {
                (Some(a), Some(b)) => (a <= b) as usize,
                (Some(_), None) => 1,
                _ => 0,
            };
        }
        (wins, pairs)
    }
}

/// Trains both observation variants of each algorithm for every seed on
/// identical episode references and noise streams.
pub fn ablate_state_augmentation(
    env: &PlantEnv,
    cfg: &AgentConfig,
    algorithms: &[Algorithm],
    seeds: &[u64],
    monitor: &mut dyn FnMut(Algorithm, Arm, u64, &EpisodeRecord),
) -> Result<AblationReport> {
    let mut report = AblationReport::default();
    for &alg in algorithms {
        for &seed in seeds {
            for arm in [Arm::With, Arm::Without] {
                let mut env_cfg = env.config().clone();
                env_cfg.no_augment = arm == Arm::Without;
                let arm_env = PlantEnv::new(env.model().clone(), env_cfg)?;
                let run_cfg = AgentConfig { seed, ..cfg.clone() };
                let mut hook = FnMonitor(|r: &EpisodeRecord| monitor(alg, arm, seed, r));
                let out = match alg {
                    Algorithm::Td3 => td3_train_with(&arm_env, &run_cfg, &mut hook)?,
                    Algorithm::Ppo => ppo_train_with(&arm_env, &run_cfg, &mut hook, &SequentialRunner)?,
                };
                report.runs.push(AblationRun {
                    algorithm: alg,
                    arm,
                    seed,
                    episodes_to_threshold: episodes_to_threshold(&out.curve, cfg.moving_window, cfg.stop_threshold),
                    final_avg_reward: final_average(&out.curve, cfg.moving_window),
                    curve: out.curve,
                    policy: out.policy,
                });
            }
        }
    }
    Ok(report)
}

struct FnMonitor<F>(F);

impl<F: FnMut(&EpisodeRecord)> Monitor for FnMonitor<F> {
    fn episode(&mut self, record: &EpisodeRecord) {
        (self.0)(record)
    }
}
