//! Run configuration: a TOML file with one section per pipeline component,
//! overridable from the command line. Relative paths resolve against the
//! config file's directory; `--seed` overrides every stochastic stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pathrec::embed::TransEConfig;
use pathrec::eval::SplitSpec;
use pathrec::mdp::{MdpConfig, RewardTiming};
use pathrec::policy::{BaselineMode, RewardWeights, TrainConfig};
use pathrec::reasoner::{BeamConfig, ScoreAggregation};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub transe: TranseSection,
    #[serde(default)]
    pub mdp: MdpSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub beam: BeamSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub provider: ProviderSection,
}

fn default_seed() -> u64 {
    7
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub interactions: PathBuf,
    pub metadata: PathBuf,
    pub metadata_types: Vec<String>,
    /// Types kept in the graph but hidden from the prompt and matching.
    #[serde(default)]
    pub excluded_metadata_types: Vec<String>,
    pub domain: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    pub cold_start_cap: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            train_ratio: s.train_ratio,
            valid_ratio: s.valid_ratio,
            test_ratio: s.test_ratio,
            cold_start_cap: s.cold_start_cap,
        }
    }
}

impl SplitSection {
    pub fn to_spec(&self) -> SplitSpec {
        SplitSpec {
            train_ratio: self.train_ratio,
            valid_ratio: self.valid_ratio,
            test_ratio: self.test_ratio,
            cold_start_cap: self.cold_start_cap,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranseSection {
    pub dim: usize,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TranseSection {
    fn default() -> Self {
        let c = TransEConfig::default();
        Self {
            dim: c.dim,
            margin: c.margin,
            negatives_per_positive: c.negatives_per_positive,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

impl TranseSection {
    pub fn to_config(&self, seed: u64) -> TransEConfig {
        TransEConfig {
            dim: self.dim,
            margin: self.margin,
            negatives_per_positive: self.negatives_per_positive,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpSection {
    pub max_path_len: usize,
    pub max_actions: usize,
    pub action_dropout: f64,
}

impl Default for MdpSection {
    fn default() -> Self {
        let c = MdpConfig::default();
        Self {
            max_path_len: c.max_path_len,
            max_actions: c.max_actions,
            action_dropout: c.action_dropout,
        }
    }
}

impl MdpSection {
    pub fn to_config(&self) -> MdpConfig {
        MdpConfig {
            max_path_len: self.max_path_len,
            max_actions: self.max_actions,
            action_dropout: self.action_dropout,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub alpha: f64,
    pub beta: f64,
    pub timing: RewardTiming,
    pub incremental_kg: bool,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            alpha: w.alpha,
            beta: w.beta,
            timing: w.timing,
            incremental_kg: w.incremental_kg,
        }
    }
}

impl RewardSection {
    pub fn to_weights(&self) -> RewardWeights {
        RewardWeights {
            alpha: self.alpha,
            beta: self.beta,
            timing: self.timing,
            incremental_kg: self.incremental_kg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub baseline: BaselineMode,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            gamma: c.gamma,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            baseline: c.baseline,
            hidden1: c.hidden1,
            hidden2: c.hidden2,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            baseline: self.baseline,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamSection {
    pub widths: Vec<usize>,
    pub top_n: usize,
    pub aggregation: ScoreAggregation,
}

impl Default for BeamSection {
    fn default() -> Self {
        let c = BeamConfig::default();
        Self {
            widths: c.widths,
            top_n: c.top_n,
            aggregation: ScoreAggregation::MaxLogProb,
        }
    }
}

impl BeamSection {
    pub fn to_config(&self) -> BeamConfig {
        BeamConfig {
            widths: self.widths.clone(),
            top_n: self.top_n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ks: vec![20, 40] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSection {
    pub temporal_aware: bool,
}

impl Default for PromptSection {
    fn default() -> Self {
        Self {
            temporal_aware: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    /// JSON map user label -> canned response (mock only).
    pub mock_responses: Option<PathBuf>,
    pub max_in_flight: usize,
    pub min_request_interval_ms: u64,
    pub http: HttpSection,
}

impl Default for ProviderSection {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            mock_responses: None,
            max_in_flight: 1,
            min_request_interval_ms: 0,
            http: HttpSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpSection {
    pub endpoint: String,
    pub model: String,
    pub auth_env: Option<String>,
    pub completion_field_path: String,
    pub timeout_secs: u64,
}

impl Default for HttpSection {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: Some("PATHREC_API_TOKEN".into()),
            completion_field_path: "choices.0.message.content".into(),
            timeout_secs: 60,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub provider: Option<ProviderKind>,
    pub temporal_aware: Option<bool>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.dataset.interactions);
        resolve(&mut self.dataset.metadata);
        resolve(&mut self.output.dir);
        if let Some(p) = &mut self.provider.mock_responses {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(alpha) = overrides.alpha {
            self.reward.alpha = alpha;
        }
        if let Some(beta) = overrides.beta {
            self.reward.beta = beta;
        }
        if let Some(kind) = overrides.provider {
            self.provider.kind = kind;
        }
        if let Some(t) = overrides.temporal_aware {
            self.prompt.temporal_aware = t;
        }
        if let Some(threads) = overrides.threads {
            self.threads = threads;
        }
        if let Some(dir) = &overrides.output_dir {
            self.output.dir = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.metadata_types.is_empty() {
            bail!("dataset.metadata_types must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.reward.alpha) {
            bail!("reward.alpha must lie in [0, 1]");
        }
        if self.reward.beta < 0.0 {
            bail!("reward.beta must be non-negative");
        }
        self.split.to_spec().validate()?;
        if self.beam.widths.len() != self.mdp.max_path_len {
            bail!(
                "beam.widths has {} entries but mdp.max_path_len is {}",
                self.beam.widths.len(),
                self.mdp.max_path_len
            );
        }
        if self.eval.ks.is_empty() || self.eval.ks.iter().any(|&k| k == 0) {
            bail!("eval.ks must be positive");
        }
        if self.provider.kind == ProviderKind::Http && self.provider.http.endpoint.is_empty() {
            bail!("provider.http.endpoint is required with the http provider");
        }
        Ok(())
    }

    /// Metadata types shown to the provider and used for matching.
    pub fn prompt_metadata_types(&self) -> Vec<String> {
        self.dataset
            .metadata_types
            .iter()
            .filter(|t| !self.dataset.excluded_metadata_types.contains(t))
            .cloned()
            .collect()
    }

    /// Per-stage seed derived from the global seed, so stages consume
    /// decorrelated streams.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(stage.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
