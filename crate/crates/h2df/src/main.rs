use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use h2df::commands::{self, RunDir, WallClock};
use h2df::config::{runs_root, RunConfig};
use h2df_core::agents::{final_average, Algorithm};

#[derive(Parser, Debug)]
#[command(name = "h2df", version, about = "Data generation, plant identification, RL training and deployment for the H2-diesel engine controller")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding run folders [env: H2DF_RUNS_DIR, default: runs].
    #[arg(long, global = true)]
    runs_dir: Option<PathBuf>,
    /// Run folder name.
    #[arg(long, global = true)]
    name: Option<String>,
    /// Global seed for excitation, plant training and agents [env: H2DF_SEED].
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algo {
    Td3,
    Ppo,
}

impl From<Algo> for Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Td3 => Algorithm::Td3,
            Algo::Ppo => Algorithm::Ppo,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Excite the virtual engine and write dataset.csv.
    GenData {
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Fit the GRU plant model to a dataset and write plant.rlpa.
    TrainPlant {
        /// Defaults to the run's dataset.csv.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train a TD3 or PPO agent on the plant model.
    TrainAgent {
        #[arg(long, value_enum)]
        algo: Algo,
        /// Drop the plant hidden state from the observation.
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        episodes: Option<usize>,
        /// Defaults to the run's plant.rlpa.
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Train with and without the hidden-state observation and compare.
    Ablate {
        #[arg(long, value_enum, value_delimiter = ',', default_value = "td3,ppo")]
        algos: Vec<Algo>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Run a policy on the validation reference and write trace.csv.
    Validate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Copy a verified policy artifact with a JSON metadata file beside it.
    Export {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer engine state packets over UDP.
    Serve {
        #[arg(long, conflicts_with = "cascade")]
        policy: Option<PathBuf>,
        /// JSON list of {lo, hi, policy_path}.
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[arg(long)]
        plant: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        deadline_ms: Option<u64>,
        /// Exit after this many replies.
        #[arg(long)]
        max_replies: Option<u64>,
    },
    /// Close the loop between a server and the virtual engine.
    SimClient {
        #[arg(long)]
        server: SocketAddr,
        #[arg(long, default_value_t = 625)]
        steps: usize,
    },
    /// Measure per-request compute latency.
    Bench {
        #[arg(long, conflicts_with = "cascade")]
        policy: Option<PathBuf>,
        #[arg(long)]
        cascade: Option<PathBuf>,
        #[arg(long)]
        plant: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainPlant { .. } => "train-plant",
            Command::TrainAgent { .. } => "train-agent",
            Command::Ablate { .. } => "ablate",
            Command::Validate { .. } => "validate",
            Command::Export { .. } => "export",
            Command::Serve { .. } => "serve",
            Command::SimClient { .. } => "sim-client",
            Command::Bench { .. } => "bench",
        }
    }
}

fn resolve(global: &Global, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(n) = &global.name {
        cfg.name = n.clone();
    }
    if global.seed.is_some() {
        cfg.seed = global.seed;
    }
    match command {
        Command::GenData { cycles: Some(c) } => cfg.data.cycles = *c,
        Command::TrainPlant { epochs: Some(e), .. } => cfg.plant.max_epochs = *e,
        Command::TrainAgent { no_augment, episodes, .. } => {
            cfg.env.no_augment |= *no_augment;
            if let Some(e) = episodes {
                cfg.agent.max_episodes = *e;
            }
        }
        Command::Ablate { episodes: Some(e), .. } => cfg.agent.max_episodes = *e,
        Command::Serve { bind, deadline_ms, .. } => {
            if let Some(b) = bind {
                cfg.serve.bind = b.clone();
            }
            if let Some(d) = deadline_ms {
                cfg.serve.deadline_ms = *d;
            }
        }
        Command::Bench { iterations: Some(n), .. } => cfg.bench.iterations = *n,
        _ => {}
    }
    cfg.resolve()
}

fn or_run_file(given: &Option<PathBuf>, dir: &RunDir, file: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| dir.path(file))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.global, &cli.command)?;
    let dir = RunDir::create(&runs_root(cli.global.runs_dir.as_deref()), &cfg.name)?;
    match &cli.command {
        Command::GenData { .. } => {
            let d = commands::gen_data(&cfg, &dir)?;
            println!("dataset rows={} train={} val={} test={} path={}", d.len(), d.train().len(), d.val().len(), d.test().len(), dir.path(commands::DATASET).display());
        }
        Command::TrainPlant { data, .. } => {
            let r = commands::train_plant(&cfg, &or_run_file(data, &dir, commands::DATASET), &dir)?;
            println!("plant best_epoch={} path={}", r.best_epoch, dir.path(commands::PLANT).display());
            for m in &r.metrics {
                println!("rmspe split={} mode={:?} imep={:.4} nox={:.4} soot={:.4} mprr={:.4}", m.split.as_str(), m.mode, m.imep, m.nox, m.soot, m.mprr);
            }
        }
        Command::TrainAgent { algo, plant, .. } => {
            let alg = Algorithm::from(*algo);
            let mut clock = WallClock::new(alg.as_str(), 10);
            let out = commands::train_agent(&cfg, alg, &or_run_file(plant, &dir, commands::PLANT), &dir, &mut clock)?;
            println!(
                "trained algo={} episodes={} stopped_at={:?} final_avg={:.4} obs_dim={} path={}",
                alg.as_str(),
                out.curve.len(),
                out.stopped_at,
                final_average(&out.curve, cfg.agent.moving_window),
                out.policy.obs_dim(),
                dir.path(&commands::policy_file(alg)).display()
            );
        }
        Command::Ablate { algos, seeds, plant, .. } => {
            let algs: Vec<Algorithm> = algos.iter().copied().map(Algorithm::from).collect();
            let report = commands::ablate(&cfg, &algs, seeds, &or_run_file(plant, &dir, commands::PLANT), &dir)?;
            for alg in algs {
                let (wins, pairs) = report.paired_wins(alg);
                println!("ablation algo={} hidden_state_wins={wins} pairs={pairs}", alg.as_str());
            }
        }
        Command::Validate { policy, plant } => {
            let m = commands::validate(&cfg, policy, &or_run_file(plant, &dir, commands::PLANT), &dir)?;
            println!("validation steps={} rmse_imep={:.4} violation_fraction={:.4} mean_reward={:.3}", m.trace.len(), m.rmse, m.violation_fraction, m.mean_reward);
        }
        Command::Export { policy, out } => {
            let meta = commands::export(policy, out)?;
            println!("exported path={} obs={} hash={}", out.display(), meta.observation_size, meta.content_hash);
        }
        Command::Serve { policy, cascade, plant, max_replies, .. } => {
            let (policies, table) = commands::serving_set(&cfg, policy.as_deref(), cascade.as_deref())?;
            let model = commands::load_plant(&or_run_file(plant, &dir, commands::PLANT))?;
            let mut ctl = commands::controller(&cfg, policies, table, model)?;
            let socket = UdpSocket::bind(&cfg.serve.bind).with_context(|| format!("binding {}", cfg.serve.bind))?;
            eprintln!("serving on {}", socket.local_addr()?);
            let stats = commands::serve(&cfg, &mut ctl, &socket, &dir, *max_replies, &AtomicBool::new(false))?;
            println!("served replies={} held={} faults={} drops={}", stats.replies, stats.held, stats.faults, stats.drops());
        }
        Command::SimClient { server, steps } => {
            let r = commands::sim_client(&cfg, *server, *steps, &dir)?;
            println!("client steps={} timeouts={} rejected={} path={}", r.trace.len(), r.timeouts, r.rejected, dir.path(commands::SIM_TRACE).display());
        }
        Command::Bench { policy, cascade, plant, .. } => {
            let (policies, table) = commands::serving_set(&cfg, policy.as_deref(), cascade.as_deref())?;
            let model = commands::load_plant(&or_run_file(plant, &dir, commands::PLANT))?;
            let mut ctl = commands::controller(&cfg, policies, table, model)?;
            let r = commands::bench(&cfg, &mut ctl, &dir)?;
            println!("latency {}", commands::describe_latency(&r.summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => e.exit(),
        Err(e) => {
            let message = e.kind().as_str().unwrap_or("invalid arguments");
            let detail = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", serde_json::json!({ "status": "error", "command": "usage", "message": format!("{message}: {detail}") }));
            return ExitCode::from(2);
        }
    };
    let command = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "status": "error", "command": command, "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
