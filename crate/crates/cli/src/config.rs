use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kae_core::data::{LinearOracleConfig, VortexStreetConfig};
use kae_core::dynamics::Scheme;
use kae_core::model::ModelConfig;
use kae_core::trainer::{GradCheckConfig, IntegratorCheck, TrainConfig};
use kae_core::{KaeError, Result};

/// Synthetic data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    LinearOracle(LinearOracleConfig),
    VortexStreet(VortexStreetConfig),
}

impl GeneratorConfig {
    pub fn set_seed(&mut self, seed: u64) {
        match self {
            GeneratorConfig::LinearOracle(c) => c.seed = seed,
            GeneratorConfig::VortexStreet(c) => c.seed = seed,
        }
    }
}

/// Dataset files. Relative paths resolve against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    /// Trajectories `generate` writes to the test file, after the training
    /// ones; no test file when zero.
    pub test_trajectories: usize,
    /// Frames per test trajectory; the generator's length when absent.
    pub test_steps: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: "train.kaed".into(),
            test: "test.kaed".into(),
            test_trajectories: 0,
            test_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub horizon: usize,
    pub schemes: Vec<Scheme>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            schemes: vec![Scheme::Rk4, Scheme::Exp],
        }
    }
}

/// Everything a command needs, read from one TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Checkpoint read by `eval` and `check-integrators`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint `train` continues from.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    /// Also keep `checkpoints/epoch_NNNN.kaew` every this many epochs.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub integrators: IntegratorCheck,
    #[serde(default)]
    pub gradcheck: GradCheckConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| KaeError::Config(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| KaeError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KaeError::Config(format!("cannot dump config: {e}")))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir().join(p)
        }
    }

    pub fn require_generator(&self) -> Result<&GeneratorConfig> {
        self.generator
            .as_ref()
            .ok_or_else(|| KaeError::Config("config: missing key `generator`".into()))
    }

    pub fn require_checkpoint(&self) -> Result<PathBuf> {
        self.checkpoint
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| KaeError::Config("config: missing key `checkpoint`".into()))
    }
}
