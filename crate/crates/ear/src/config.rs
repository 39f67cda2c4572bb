//! The single TOML run configuration. Unknown keys are rejected at every
//! level; omitted keys take the defaults shipped in `configs/default.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use ear_core::action::{Optimizer, RewardConfig};
use ear_core::datasets::{SplitSpec, SynthParams};
use ear_core::estimation::TrainConfig;
use ear_core::reflection::ReflectionConfig;
use ear_core::simulator::{CorpusConfig, QuestionMode, SimConfig};
use serde::{Deserialize, Serialize};

use crate::formats::InteractionFormat;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {} not found", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{}: {source}", file.display())]
    Parse { file: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ear,
    EarNoReflection,
    MaxEntropy,
    AbsGreedy,
    AbsGreedyNoReflection,
    RuleBased,
    Random,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Ear => "ear",
            AgentKind::EarNoReflection => "ear_no_reflection",
            AgentKind::MaxEntropy => "max_entropy",
            AgentKind::AbsGreedy => "abs_greedy",
            AgentKind::AbsGreedyNoReflection => "abs_greedy_no_reflection",
            AgentKind::RuleBased => "rule_based",
            AgentKind::Random => "random",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, AgentKind::Ear | AgentKind::EarNoReflection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synth,
    Files,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileSources {
    pub interactions: Option<PathBuf>,
    pub format: Option<InteractionFormat>,
    pub item_attributes: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synth: SynthParams,
    pub files: FileSources,
    /// Users with fewer interactions are dropped before splitting.
    pub min_count: usize,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synth,
            synth: SynthParams::default(),
            files: FileSources::default(),
            min_count: 5,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub optimizer: Optimizer,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { hidden: 64, epochs: 30, lr: 0.001, batch: 32, optimizer: Optimizer::Adam }
    }
}

/// Which split supplies the `(user, target)` pairs of RL episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSplit {
    Train,
    #[default]
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Simulated episodes, one REINFORCE update each.
    pub episodes: usize,
    /// Episodes rolled out in parallel against a frozen policy before their
    /// updates are applied in index order.
    pub rollout_batch: usize,
    pub targets: TargetSplit,
    /// Reflect during RL rollouts as at evaluation time.
    pub reflect: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { episodes: 3000, rollout_batch: 16, targets: TargetSplit::Valid, reflect: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sessions: usize,
    pub agents: Vec<AgentKind>,
    pub bootstrap: usize,
    pub buckets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sessions: 1000,
            agents: vec![AgentKind::Ear, AgentKind::EarNoReflection, AgentKind::MaxEntropy, AgentKind::AbsGreedy],
            bootstrap: 10_000,
            buckets: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub fm: TrainConfig,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub policy: PolicyConfig,
    pub rewards: RewardConfig,
    pub sim: SimConfig,
    pub reflection: ReflectionConfig,
    pub eval: EvalConfig,
}

/// SplitMix64 finalizer over `root + stage`.
pub fn derive_seed(root: u64, stage: u64) -> u64 {
    let mut z = root.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub root: u64,
    pub synth: u64,
    pub split: u64,
    pub fm: u64,
    pub auc: u64,
    pub corpus: u64,
    pub pretrain: u64,
    pub policy: u64,
    pub eval: u64,
    pub bootstrap: u64,
}

impl StageSeeds {
    pub fn new(root: u64) -> Self {
        StageSeeds {
            root,
            synth: derive_seed(root, 1),
            split: derive_seed(root, 2),
            fm: derive_seed(root, 3),
            auc: derive_seed(root, 4),
            corpus: derive_seed(root, 5),
            pretrain: derive_seed(root, 6),
            policy: derive_seed(root, 7),
            eval: derive_seed(root, 8),
            bootstrap: derive_seed(root, 9),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, file: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse { file: file.to_path_buf(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ConfigError::Missing(path.to_path_buf()),
            _ => ConfigError::Io { file: path.to_path_buf(), source: e },
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative data paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let f = &mut self.data.files;
        for p in [&mut f.interactions, &mut f.item_attributes, &mut f.taxonomy].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: ear_core::Error| ConfigError::Invalid(e.to_string());
        self.fm.validate().map_err(inv)?;
        self.rewards.validate().map_err(inv)?;
        self.sim.validate().map_err(inv)?;
        self.reflection.validate().map_err(inv)?;
        self.data.split.validate().map_err(inv)?;
        if self.data.source == DataSource::Files
            && (self.data.files.interactions.is_none() || self.data.files.item_attributes.is_none())
        {
            return Err(ConfigError::Invalid("data.source = \"files\" needs data.files.interactions and data.files.item_attributes".into()));
        }
        if self.sim.mode == QuestionMode::Enumerated && self.data.source == DataSource::Files && self.data.files.taxonomy.is_none() {
            return Err(ConfigError::Invalid("enumerated mode needs data.files.taxonomy".into()));
        }
        if self.eval.agents.is_empty() {
            return Err(ConfigError::Invalid("eval.agents is empty".into()));
        }
        let mut seen = self.eval.agents.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.eval.agents.len() {
            return Err(ConfigError::Invalid("eval.agents lists an agent twice".into()));
        }
        if self.pretrain.hidden == 0 || self.pretrain.batch == 0 {
            return Err(ConfigError::Invalid("pretrain.hidden and pretrain.batch must be positive".into()));
        }
        if !(self.pretrain.lr > 0.0) {
            return Err(ConfigError::Invalid("pretrain.lr must be positive".into()));
        }
        if self.policy.rollout_batch == 0 {
            return Err(ConfigError::Invalid("policy.rollout_batch must be positive".into()));
        }
        if self.eval.buckets == 0 {
            return Err(ConfigError::Invalid("eval.buckets must be positive".into()));
        }
        Ok(())
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::new(self.seed)
    }

    pub fn needs_policy(&self) -> bool {
        self.eval.agents.iter().any(|a| a.needs_policy())
    }

    /// Copy with every stage seed overwritten from the root seed.
    pub fn seeded(&self) -> RunConfig {
        let s = self.seeds();
        let mut c = self.clone();
        c.data.synth.seed = s.synth;
        c.data.split.seed = s.split;
        c.fm.seed = s.fm;
        c.corpus.seed = s.corpus;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");
