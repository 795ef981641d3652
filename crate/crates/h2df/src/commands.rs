//! Subcommand implementations. Each takes a resolved [`RunConfig`] and a
//! run folder and never overwrites a file that already exists there.

use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use h2df_core::agents::{
    ablate_state_augmentation, evaluate_policy, ppo_train_with, td3_train_with, AblationReport, Algorithm, EpisodeRecord, EvalMetrics,
    Monitor, Policy, SequentialRunner, TrainOutcome,
};
use h2df_core::engine::{collect_dataset, Dataset, Split};
use h2df_core::env::{generate_reference, EpisodeConfig, PlantEnv, OBS_BASE};
use h2df_core::runtime::{CascadeBin, CascadeConfig, Controller};
use h2df_core::sysid::{evaluate_rmspe, train_plant_with, FeedbackMode, PlantModel};
use serde::{Deserialize, Serialize};

use crate::artifact::{self, PolicyInfo};
use crate::config::{RunConfig, CONFIG_ECHO};
use crate::parallel::ThreadedRunner;
use crate::records::{self, write_csv, LatencySummary};
use crate::serve::{self, ClientOptions, ClientRun, LatencyReport, ServeOptions, ServeStats};

pub const DATASET: &str = "dataset.csv";
pub const PLANT: &str = "plant.rlpa";
pub const PLANT_HISTORY: &str = "plant_history.csv";
pub const PLANT_METRICS: &str = "plant_metrics.csv";
pub const TRACE: &str = "trace.csv";
pub const VALIDATION: &str = "validation.csv";
pub const ABLATION: &str = "ablation.csv";
pub const ABLATION_CURVES: &str = "ablation_curves.csv";
pub const BENCH: &str = "bench.csv";
pub const BENCH_SAMPLES: &str = "bench_samples.csv";
pub const METRICS: &str = "metrics.csv";
pub const SIM_TRACE: &str = "sim_trace.csv";

pub fn policy_file(alg: Algorithm) -> String {
    format!("policy-{}.rlpa", alg.as_str())
}

pub fn curves_file(alg: Algorithm) -> String {
    format!("curves-{}.csv", alg.as_str())
}

/// Folder holding one run's artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(runs_root: &Path, name: &str) -> Result<Self> {
        let root = runs_root.join(name);
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    /// Path for a new output; fails if the file is already there.
    pub fn fresh(&self, file: &str) -> Result<PathBuf> {
        let p = self.path(file);
        if p.exists() {
            bail!("{} already exists; choose another run name", p.display());
        }
        Ok(p)
    }

    /// Writes the resolved configuration as `<command>.config.toml`.
    pub fn echo_config(&self, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let p = self.fresh(&format!("{command}.{CONFIG_ECHO}"))?;
        std::fs::write(&p, cfg.to_toml()?)?;
        Ok(p)
    }
}

/// Monitor that stamps episodes with wall time and reports progress.
pub struct WallClock {
    start: Instant,
    every: usize,
    label: String,
}

impl WallClock {
    pub fn new(label: impl Into<String>, every: usize) -> Self {
        Self { start: Instant::now(), every, label: label.into() }
    }
}

impl Monitor for WallClock {
    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn episode(&mut self, r: &EpisodeRecord) {
        if self.every > 0 && r.episode.is_multiple_of(self.every) {
            eprintln!("{} episode {} score {:.3} avg {:.3} ({} ms)", self.label, r.episode, r.reward, r.moving_avg, r.wall_ms);
        }
    }
}

pub fn gen_data(cfg: &RunConfig, dir: &RunDir) -> Result<Dataset> {
    let out = dir.fresh(DATASET)?;
    dir.echo_config("gen-data", cfg)?;
    let data = collect_dataset(cfg.data.cycles, &cfg.prbs, cfg.data.split, &cfg.data.noise)?;
    records::write_dataset(&out, &data)?;
    Ok(data)
}

/// Teacher-forced and free-running RMSPE on one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmspeRow {
    pub split: Split,
    pub mode: FeedbackMode,
    pub imep: f64,
    pub nox: f64,
    pub soot: f64,
    pub mprr: f64,
}

pub struct PlantRun {
    pub model: PlantModel,
    pub best_epoch: usize,
    pub metrics: Vec<RmspeRow>,
}

pub fn train_plant(cfg: &RunConfig, dataset: &Path, dir: &RunDir) -> Result<PlantRun> {
    let (plant_out, hist_out, metrics_out) = (dir.fresh(PLANT)?, dir.fresh(PLANT_HISTORY)?, dir.fresh(PLANT_METRICS)?);
    dir.echo_config("train-plant", cfg)?;
    let data = records::read_dataset(dataset)?;
    let init = PlantModel::for_dataset(&data, cfg.plant.seed)?;
    let out = train_plant_with(init, &data, &cfg.plant, |e| {
        if e.epoch % 10 == 0 {
            eprintln!("plant epoch {} train {:.5} val {:.5}", e.epoch, e.train_loss, e.val_loss);
        }
    })?;
    write_csv(&hist_out, &out.history)?;
    let mut metrics = Vec::new();
    for (split, samples) in [(Split::Val, data.val()), (Split::Test, data.test())] {
        if samples.is_empty() {
            continue;
        }
        for mode in [FeedbackMode::TeacherForced, FeedbackMode::FreeRunning] {
            let [imep, nox, soot, mprr] = evaluate_rmspe(&out.model, samples, mode)?;
            metrics.push(RmspeRow { split, mode, imep, nox, soot, mprr });
        }
    }
    write_csv(&metrics_out, &metrics)?;
    artifact::save_plant(&plant_out, &out.model, cfg.plant.seed)?;
    Ok(PlantRun { model: out.model, best_epoch: out.best_epoch, metrics })
}

pub fn load_plant(path: &Path) -> Result<Arc<PlantModel>> {
    let (m, _) = artifact::load_plant(path).with_context(|| format!("loading plant {}", path.display()))?;
    Ok(Arc::new(m))
}

pub fn load_policy(path: &Path) -> Result<(Policy, artifact::Metadata)> {
    artifact::load_policy(path).with_context(|| format!("loading policy {}", path.display()))
}

pub fn make_env(cfg: &RunConfig, plant: Arc<PlantModel>) -> Result<PlantEnv> {
    Ok(PlantEnv::new(plant, cfg.env.clone())?)
}

/// Trains one agent, choosing the threaded rollout runner for PPO when
/// more than one worker is configured.
pub fn run_training(alg: Algorithm, env: &PlantEnv, cfg: &RunConfig, monitor: &mut dyn Monitor) -> Result<TrainOutcome> {
    Ok(match alg {
        Algorithm::Td3 => td3_train_with(env, &cfg.agent, monitor)?,
        Algorithm::Ppo if cfg.agent.ppo.workers > 1 => ppo_train_with(env, &cfg.agent, monitor, &ThreadedRunner)?,
        Algorithm::Ppo => ppo_train_with(env, &cfg.agent, monitor, &SequentialRunner)?,
    })
}

pub fn train_agent(cfg: &RunConfig, alg: Algorithm, plant: &Path, dir: &RunDir, monitor: &mut dyn Monitor) -> Result<TrainOutcome> {
    let (policy_out, curves_out) = (dir.fresh(&policy_file(alg))?, dir.fresh(&curves_file(alg))?);
    dir.echo_config(&format!("train-agent-{}", alg.as_str()), cfg)?;
    let env = make_env(cfg, load_plant(plant)?)?;
    let out = run_training(alg, &env, cfg, monitor)?;
    write_csv(&curves_out, &out.curve)?;
    let info = PolicyInfo {
        training_seed: cfg.agent.seed,
        algorithm: Some(alg.as_str().into()),
        observation_ranges: Some(cfg.env.observation.clone()),
    };
    artifact::save_policy(&policy_out, &out.policy, &info)?;
    Ok(out)
}

/// One point of an ablation learning curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCurveRow {
    pub algorithm: Algorithm,
    pub arm: &'static str,
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
    pub moving_avg: f64,
    pub steps: usize,
}

pub fn ablate(cfg: &RunConfig, algorithms: &[Algorithm], seeds: &[u64], plant: &Path, dir: &RunDir) -> Result<AblationReport> {
    if algorithms.is_empty() || seeds.is_empty() {
        bail!("ablation needs at least one algorithm and one seed");
    }
    let (summary_out, curves_out) = (dir.fresh(ABLATION)?, dir.fresh(ABLATION_CURVES)?);
    dir.echo_config("ablate", cfg)?;
    let env = make_env(cfg, load_plant(plant)?)?;
    let report = ablate_state_augmentation(&env, &cfg.agent, algorithms, seeds, &mut |alg, arm, seed, r| {
        if r.episode % 10 == 0 {
            eprintln!("ablate {} {} seed {seed} episode {} avg {:.3}", alg.as_str(), arm.as_str(), r.episode, r.moving_avg);
        }
    })?;
    write_csv(&summary_out, report.rows())?;
    let curves = report.runs.iter().flat_map(|run| {
        run.curve.iter().map(move |r| AblationCurveRow {
            algorithm: run.algorithm,
            arm: run.arm.as_str(),
            seed: run.seed,
            episode: r.episode,
            reward: r.reward,
            moving_avg: r.moving_avg,
            steps: r.steps,
        })
    });
    write_csv(&curves_out, curves)?;
    Ok(report)
}

/// Headline numbers of a validation run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub steps: usize,
    pub rmse_imep: f64,
    pub violation_fraction: f64,
    pub violation_imep: f64,
    pub violation_nox: f64,
    pub violation_soot: f64,
    pub violation_mprr: f64,
    pub mean_reward: f64,
}

impl From<&EvalMetrics> for ValidationRow {
    fn from(m: &EvalMetrics) -> Self {
        let [violation_imep, violation_nox, violation_soot, violation_mprr] = m.violation_by_channel;
        Self {
            steps: m.trace.len(),
            rmse_imep: m.rmse,
            violation_fraction: m.violation_fraction,
            violation_imep,
            violation_nox,
            violation_soot,
            violation_mprr,
            mean_reward: m.mean_reward,
        }
    }
}

/// Environment matching the policy's observation size.
pub fn env_for_policy(cfg: &RunConfig, plant: Arc<PlantModel>, policy: &Policy) -> Result<PlantEnv> {
    let mut env_cfg = cfg.env.clone();
    env_cfg.no_augment = policy.obs_dim() == OBS_BASE;
    let env = PlantEnv::new(plant, env_cfg)?;
    if env.obs_dim() != policy.obs_dim() {
        bail!("policy expects {} observations, the environment provides {}", policy.obs_dim(), env.obs_dim());
    }
    Ok(env)
}

pub fn validate(cfg: &RunConfig, policy: &Path, plant: &Path, dir: &RunDir) -> Result<EvalMetrics> {
    let (trace_out, summary_out) = (dir.fresh(TRACE)?, dir.fresh(VALIDATION)?);
    dir.echo_config("validate", cfg)?;
    let (policy, _) = load_policy(policy)?;
    let env = env_for_policy(cfg, load_plant(plant)?, &policy)?;
    let reference = generate_reference(&cfg.validation)?;
    let m = evaluate_policy(&policy, &env, &reference, true, 0)?;
    write_csv(&trace_out, &m.trace)?;
    write_csv(&summary_out, [ValidationRow::from(&m)])?;
    Ok(m)
}

/// Copies a verified policy to `dest` with its metadata as JSON beside it.
pub fn export(policy: &Path, dest: &Path) -> Result<artifact::Metadata> {
    let bytes = std::fs::read(policy).with_context(|| format!("reading {}", policy.display()))?;
    let (_, meta) = artifact::decode_policy(&bytes)?;
    let sidecar = dest.with_extension("json");
    for p in [dest, sidecar.as_path()] {
        if p.exists() {
            bail!("{} already exists", p.display());
        }
    }
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(dest, &bytes)?;
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

/// Cascade table entry as stored in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeEntry {
    pub lo: f64,
    pub hi: f64,
    pub policy_path: PathBuf,
}

/// Loads a cascade table; entry `i` becomes policy id `i`. Relative paths
/// resolve against the table's folder.
pub fn load_cascade(table: &Path, hysteresis: f64) -> Result<(Vec<(u8, Policy)>, CascadeConfig)> {
    let text = std::fs::read_to_string(table).with_context(|| format!("reading {}", table.display()))?;
    let entries: Vec<CascadeEntry> = serde_json::from_str(&text).with_context(|| format!("parsing {}", table.display()))?;
    if entries.len() > usize::from(u8::MAX) + 1 {
        bail!("cascade table has more than 256 entries");
    }
    let base = table.parent().unwrap_or(Path::new("."));
    let mut policies = Vec::new();
    let mut bins = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let id = i as u8;
        let path = if e.policy_path.is_absolute() { e.policy_path.clone() } else { base.join(&e.policy_path) };
        policies.push((id, load_policy(&path)?.0));
        bins.push(CascadeBin { lo: e.lo, hi: e.hi, policy_id: id });
    }
    let cascade = CascadeConfig { bins, hysteresis };
    cascade.validate()?;
    Ok((policies, cascade))
}

/// Policies and cascade for the server: either a table or a single policy
/// covering the whole IMEP range.
pub fn serving_set(cfg: &RunConfig, policy: Option<&Path>, table: Option<&Path>) -> Result<(Vec<(u8, Policy)>, CascadeConfig)> {
    match (policy, table) {
        (Some(p), None) => {
            let r = &cfg.env.observation.imep;
            Ok((vec![(0, load_policy(p)?.0)], CascadeConfig::single(0, r[0], r[1])))
        }
        (None, Some(t)) => load_cascade(t, cfg.cascade.hysteresis),
        _ => bail!("give exactly one of --policy and --cascade"),
    }
}

pub fn controller(cfg: &RunConfig, policies: Vec<(u8, Policy)>, cascade: CascadeConfig, plant: Arc<PlantModel>) -> Result<Controller> {
    Ok(Controller::new(policies, cascade, plant, cfg.env.observation.clone())?)
}

pub fn serve(
    cfg: &RunConfig,
    controller: &mut Controller,
    socket: &UdpSocket,
    dir: &RunDir,
    max_replies: Option<u64>,
    stop: &AtomicBool,
) -> Result<ServeStats> {
    let metrics_out = dir.fresh(METRICS)?;
    dir.echo_config("serve", cfg)?;
    let mut sink = serve::metrics_file(&metrics_out)?;
    let opts = ServeOptions {
        deadline: Duration::from_millis(cfg.serve.deadline_ms),
        max_replies,
        metrics_every: cfg.serve.metrics_every,
    };
    serve::serve(socket, controller, &opts, stop, Some(&mut sink))
}

pub fn client_options(cfg: &RunConfig) -> ClientOptions {
    ClientOptions {
        timeout: Duration::from_millis(cfg.serve.client_timeout_ms),
        retries: cfg.serve.client_retries,
        engine_seed: cfg.serve.engine_seed,
        noise: cfg.data.noise,
        reward: cfg.env.reward.clone(),
        polytope: cfg.env.polytope.clone(),
    }
}

/// The validation reference cut or extended to `steps` cycles.
pub fn client_reference(cfg: &RunConfig, steps: usize) -> Result<Vec<f64>> {
    Ok(generate_reference(&EpisodeConfig { length: steps, ..cfg.validation.clone() })?)
}

pub fn sim_client(cfg: &RunConfig, server: SocketAddr, steps: usize, dir: &RunDir) -> Result<ClientRun> {
    let trace_out = dir.fresh(SIM_TRACE)?;
    dir.echo_config("sim-client", cfg)?;
    let reference = client_reference(cfg, steps)?;
    let bind: SocketAddr = if server.is_ipv4() { "0.0.0.0:0".parse()? } else { "[::]:0".parse()? };
    let socket = UdpSocket::bind(bind).context("binding client socket")?;
    let run = serve::sim_engine_client(&socket, server, &reference, &client_options(cfg))?;
    write_csv(&trace_out, &run.trace)?;
    if !run.complete {
        bail!("server stopped answering after {} of {steps} steps; partial trace in {}", run.trace.len(), trace_out.display());
    }
    Ok(run)
}

pub fn bench(cfg: &RunConfig, controller: &mut Controller, dir: &RunDir) -> Result<LatencyReport> {
    let (summary_out, samples_out) = (dir.fresh(BENCH)?, dir.fresh(BENCH_SAMPLES)?);
    dir.echo_config("bench", cfg)?;
    let reference = generate_reference(&cfg.validation)?;
    let report = serve::benchmark_latency(controller, &reference, cfg.bench.iterations, cfg.serve.engine_seed)?;
    write_csv(&summary_out, [report.summary])?;
    #[derive(Serialize)]
    struct Sample {
        iteration: usize,
        latency_us: f64,
    }
    write_csv(&samples_out, report.samples_us.iter().enumerate().map(|(i, &latency_us)| Sample { iteration: i + 1, latency_us }))?;
    Ok(report)
}

/// Summary line printed after `bench`.
pub fn describe_latency(s: &LatencySummary) -> String {
    format!("n={} median_us={:.1} p99_us={:.1} max_us={:.1}", s.n, s.median_us, s.p99_us, s.max_us)
}
