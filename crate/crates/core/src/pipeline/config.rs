// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{default_domains, DomainSpec, PlantEntry, PlantPlan, MIN_SEQ_LEN, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::memscore::CompressionSide;
use crate::model::{ModelConfig, NormKind, PositionalKind, DEFAULT_NOISE_LAYER, MAX_ALPHA};
use crate::stats::DEFAULT_TOP_FRACTION;
use crate::trainer::{DecayKind, LrSchedule, TrainConfig};

/// Plant entries with this domain name apply to every domain.
pub const ALL_DOMAINS: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub corpus: CorpusSection,
    pub train: TrainSection,
    pub families: Vec<FamilySpec>,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// TOML file with a `[[domains]]` array. The stock domains are used when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains_file: Option<PathBuf>,
    /// Restricts the domain set to these names; empty keeps all.
    #[serde(default)]
    pub domains: Vec<String>,
    pub max_tokens: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    pub plant: Vec<PlantEntry>,
}

fn default_seq_len() -> usize {
    MIN_SEQ_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "default_decay")]
    pub decay: DecayKind,
    #[serde(default)]
    pub min_lr_ratio: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_decay() -> DecayKind {
    DecayKind::Cosine
}

fn default_clip() -> f64 {
    1.0
}

/// One model family: a recipe and a list of `[layers, heads, d_model]`
/// sizes in increasing parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    #[serde(default = "default_positional")]
    pub positional: PositionalKind,
    pub sizes: Vec<[usize; 3]>,
}

fn default_norm() -> NormKind {
    NormKind::RmsNorm
}

fn default_positional() -> PositionalKind {
    PositionalKind::Rotary
}

impl FamilySpec {
    pub fn configs(&self) -> Vec<ModelConfig> {
        self.sizes
            .iter()
            .map(|&[l, h, d]| ModelConfig::new(l, h, d, VOCAB_SIZE).with_recipe(self.norm, self.positional))
            .collect()
    }

    pub fn model_id(&self, index: usize) -> String {
        format!("{}-{index}", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub noise_layer: usize,
    /// Model used for compression, noise and lens probes; defaults to the
    /// largest member of the first family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_model: Option<String>,
    /// Memorized examples per domain for head ablation.
    #[serde(default = "default_small_cap")]
    pub small_model_cap: usize,
    #[serde(default = "default_large_cap")]
    pub large_model_cap: usize,
    /// Models with at least this many parameters use the large cap.
    #[serde(default = "default_large_params")]
    pub large_model_params: usize,
    /// Upper bound on probes per noise/lens run; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_probes: Option<usize>,
    #[serde(default)]
    pub compression_side: CompressionSide,
    /// Also evaluate every context length, to report non-monotone extraction.
    #[serde(default)]
    pub exhaustive_compression: bool,
    #[serde(default = "default_top_fraction")]
    pub top_fraction: f64,
    #[serde(default = "default_trials")]
    pub baseline_trials: usize,
    /// Share of domains a head must exceed to count as shared in the
    /// per-layer distribution.
    #[serde(default = "default_shared")]
    pub shared_threshold: f64,
    #[serde(default = "default_bins")]
    pub frequency_bins: usize,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
}
fn default_small_cap() -> usize {
    10_000
}
fn default_large_cap() -> usize {
    2_500
}
fn default_large_params() -> usize {
    1_000_000
}
fn default_top_fraction() -> f64 {
    DEFAULT_TOP_FRACTION
}
fn default_trials() -> usize {
    1000
}
fn default_shared() -> f64 {
    0.5
}
fn default_bins() -> usize {
    10
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            noise_layer: DEFAULT_NOISE_LAYER,
            probe_model: None,
            small_model_cap: default_small_cap(),
            large_model_cap: default_large_cap(),
            large_model_params: default_large_params(),
            max_probes: None,
            compression_side: CompressionSide::default(),
            exhaustive_compression: false,
            top_fraction: default_top_fraction(),
            baseline_trials: default_trials(),
            shared_threshold: default_shared(),
            frequency_bins: default_bins(),
        }
    }
}

#[derive(Deserialize)]
struct DomainsFile {
    domains: Vec<DomainSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = cfg.corpus.domains_file.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        let a = &self.analysis;
        if a.alphas.is_empty() {
            return bad("alpha grid is empty".into());
        }
        if a.alphas.iter().any(|x| !(0.0..=MAX_ALPHA).contains(x)) {
            return bad(format!("alphas must lie in [0, {MAX_ALPHA}]: {:?}", a.alphas));
        }
        if a.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("alphas must be strictly ascending: {:?}", a.alphas));
        }
        if !(a.top_fraction > 0.0 && a.top_fraction <= 1.0) {
            return bad(format!("top_fraction {} outside (0, 1]", a.top_fraction));
        }
        if !(0.0..1.0).contains(&a.shared_threshold) {
            return bad(format!("shared_threshold {} outside [0, 1)", a.shared_threshold));
        }
        if a.baseline_trials == 0 || a.frequency_bins == 0 || a.small_model_cap == 0 || a.large_model_cap == 0 {
            return bad("baseline_trials, frequency_bins and sample caps must be at least 1".into());
        }
        if self.families.is_empty() {
            return bad("at least one model family is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for f in &self.families {
            if f.sizes.is_empty() {
                return bad(format!("family {} has no sizes", f.name));
            }
            if f.name.is_empty() || !f.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return bad(format!("family name {:?} must be [A-Za-z0-9_]+", f.name));
            }
            let configs = f.configs();
            for c in &configs {
                c.validate()
                    .map_err(|e| Error::Config(format!("family {}: {e}", f.name)))?;
                if a.noise_layer >= c.n_layers {
                    return bad(format!(
                        "noise_layer {} but family {} has a {}-layer model",
                        a.noise_layer, f.name, c.n_layers
                    ));
                }
            }
            let counts: Vec<usize> = configs.iter().map(ModelConfig::param_count).collect();
            if counts.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!(
                    "family {} sizes must grow in parameter count: {counts:?}",
                    f.name
                ));
            }
            for i in 0..f.sizes.len() {
                ids.insert(f.model_id(i));
            }
        }
        if let Some(p) = &a.probe_model {
            if !ids.contains(p) {
                return bad(format!("probe_model {p} is not one of {ids:?}"));
            }
        }
        self.train_config(&self.families[0].configs()[0])?.validate()?;
        if let Some(d) = &self.corpus.domains_file {
            if !d.exists() {
                return bad(format!("domains_file {} does not exist", d.display()));
            }
        }
        let domains = self.domains()?;
        self.plant_plan(&domains)?;
        Ok(())
    }

    pub fn domains(&self) -> Result<Vec<DomainSpec>> {
        let all = match &self.corpus.domains_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<DomainsFile>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
                    .domains
            }
            None => default_domains(),
        };
        if self.corpus.domains.is_empty() {
            return Ok(all);
        }
        self.corpus
            .domains
            .iter()
            .map(|name| {
                all.iter()
                    .find(|d| &d.name == name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown domain {name}")))
            })
            .collect()
    }

    pub fn plant_plan(&self, domains: &[DomainSpec]) -> Result<PlantPlan> {
        let mut entries = Vec::new();
        for e in &self.corpus.plant {
            if e.domain == ALL_DOMAINS {
                entries.extend(domains.iter().map(|d| PlantEntry {
                    domain: d.name.clone(),
                    ..e.clone()
                }));
            } else if domains.iter().any(|d| d.name == e.domain) {
                entries.push(e.clone());
            } else {
                return Err(Error::Config(format!("plant entry names unknown domain {}", e.domain)));
            }
        }
        let plan = PlantPlan {
            entries,
            max_tokens: self.corpus.max_tokens,
            seq_len: self.corpus.seq_len,
        };
        if plan.total_tokens() > plan.max_tokens {
            return Err(Error::Config(format!(
                "plant plan needs {} tokens but max_tokens is {}",
                plan.total_tokens(),
                plan.max_tokens
            )));
        }
        Ok(plan)
    }

    pub fn train_config(&self, model: &ModelConfig) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            model: *model,
            steps: t.steps,
            batch_size: t.batch_size,
            seq_len: self.corpus.seq_len,
            lr: LrSchedule {
                peak: t.lr,
                warmup: t.warmup,
                decay: t.decay,
                min_ratio: t.min_lr_ratio,
            },
            seed: self.seed,
            checkpoint_every: 0,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
        })
    }

    /// Every `(model id, config)` in family order.
    pub fn models(&self) -> Vec<(String, ModelConfig)> {
        self.families
            .iter()
            .flat_map(|f| {
                f.configs()
                    .into_iter()
                    .enumerate()
                    .map(move |(i, c)| (f.model_id(i), c))
            })
            .collect()
    }

    pub fn probe_model(&self) -> String {
        self.analysis.probe_model.clone().unwrap_or_else(|| {
            let f = &self.families[0];
            f.model_id(f.sizes.len() - 1)
        })
    }

    pub fn sample_cap(&self, params: usize) -> usize {
        if params >= self.analysis.large_model_params {
            self.analysis.large_model_cap
        } else {
            self.analysis.small_model_cap
        }
    }
}
