//! Layered run configuration: built-in defaults, then a TOML file, then
//! environment overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use h2df_core::agents::AgentConfig;
use h2df_core::engine::{MeasurementNoise, PrbsConfig, SplitFractions};
use h2df_core::env::{EnvConfig, EpisodeConfig};
use h2df_core::runtime::CascadeConfig;
use h2df_core::sysid::PlantTrainConfig;
use serde::{Deserialize, Serialize};

/// Overrides the directory that holds run folders.
pub const ENV_RUNS_DIR: &str = "H2DF_RUNS_DIR";
/// Overrides the global seed.
pub const ENV_SEED: &str = "H2DF_SEED";
/// File name of the resolved configuration inside a run folder.
pub const CONFIG_ECHO: &str = "config.toml";

/// Identification data collection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub cycles: usize,
    pub split: SplitFractions,
    pub noise: MeasurementNoise,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { cycles: 20_000, split: SplitFractions::default(), noise: MeasurementNoise::one_percent() }
    }
}

/// UDP policy server and simulated-engine client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    /// Longest wait for a state packet before the last action is held.
    pub deadline_ms: u64,
    /// Replies between two metrics lines.
    pub metrics_every: u64,
    /// Client wait for a reply before resending.
    pub client_timeout_ms: u64,
    pub client_retries: u32,
    /// Seed of the simulated engine's measurement noise.
    pub engine_seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:47800".into(),
            deadline_ms: 100,
            metrics_every: 25,
            client_timeout_ms: 500,
            client_retries: 3,
            engine_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { iterations: 10_000 }
    }
}

/// Everything a subcommand needs, fully resolved before it runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Folder name under the runs directory.
    pub name: String,
    /// When set, replaces the excitation, plant-training and agent seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub prbs: PrbsConfig,
    pub plant: PlantTrainConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Reference used by `validate`.
    pub validation: EpisodeConfig,
    pub cascade: CascadeConfig,
    pub serve: ServeConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: None,
            data: DataConfig::default(),
            prbs: PrbsConfig::default(),
            plant: PlantTrainConfig::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            validation: EpisodeConfig::validation(),
            cascade: CascadeConfig::default(),
            serve: ServeConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads the seed override from the process environment.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(s) = get(ENV_SEED) {
            self.seed = Some(s.trim().parse().with_context(|| format!("{ENV_SEED}={s} is not an unsigned integer"))?);
        }
        Ok(())
    }

    /// Pushes the global seed into the component seeds and validates every
    /// section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.prbs.seed = seed;
            self.plant.seed = seed;
            self.agent.seed = seed;
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            anyhow::bail!("run name {:?} must be a plain folder name", self.name);
        }
        self.prbs.validate()?;
        self.plant.validate()?;
        self.env.validate()?;
        self.agent.validate()?;
        self.validation.validate()?;
        self.cascade.validate()?;
        if self.serve.deadline_ms == 0 || self.serve.client_timeout_ms == 0 {
            anyhow::bail!("serve deadline and client timeout must be positive");
        }
        if self.bench.iterations < 1000 {
            anyhow::bail!("bench needs at least 1000 iterations");
        }
        Ok(self)
    }
}

/// Directory holding run folders: the override if given, else `runs`.
pub fn runs_root(flag: Option<&Path>) -> PathBuf {
    runs_root_from(flag, std::env::var_os(ENV_RUNS_DIR).map(PathBuf::from))
}

pub fn runs_root_from(flag: Option<&Path>, env: Option<PathBuf>) -> PathBuf {
    flag.map(Path::to_path_buf).or(env).unwrap_or_else(|| PathBuf::from("runs"))
}
