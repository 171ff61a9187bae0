// SPDX-License-Identifier: MIT OR Apache-2.0

//! File-based experiment stages and the run manifest tying them together.

mod config;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{AnalysisSection, CorpusSection, ExperimentConfig, FamilySpec, TrainSection, ALL_DOMAINS};

use crate::error::{Error, Result};
use crate::io::{digest, write_atomic};

pub const MANIFEST_FILE: &str = "run_manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenCorpus,
    Train,
    Score,
    Compress,
    Noise,
    Lens,
    Ablate,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::GenCorpus,
        Stage::Train,
        Stage::Score,
        Stage::Compress,
        Stage::Noise,
        Stage::Lens,
        Stage::Ablate,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Compress => "compress",
            Stage::Noise => "noise",
            Stage::Lens => "lens",
            Stage::Ablate => "ablate",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s}")))
    }
}

/// Interpretation choices in effect for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub compression_side: String,
    pub importance: String,
    pub ablation_site: String,
    pub similarity_region: String,
    pub similarity_site: String,
    pub noise_layer: usize,
    pub noise_site: String,
    pub noise_resampling: String,
    pub frequency_divisor: String,
    pub rng_algorithm: String,
}

impl Flags {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            compression_side: cfg.analysis.compression_side.as_str().into(),
            importance: "divergence = 1 - match fraction (match fraction also stored)".into(),
            ablation_site: "per-head output before the output projection, whole generation".into(),
            similarity_region: "continuation positions only".into(),
            similarity_site: "attention block output after the output projection; MLP output".into(),
            noise_layer: cfg.analysis.noise_layer,
            noise_site: "residual output of noise_layer".into(),
            noise_resampling: "fresh draw per decode step".into(),
            frequency_divisor: "corpus_total".into(),
            rng_algorithm: memlab_tensor::RNG_ALGORITHM.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative path to SHA-256 of every artifact read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path to SHA-256 of every artifact written.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub flags: Flags,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Corrupt {
            what: "run manifest",
            msg: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("run manifest: {e}")))
    }
}

/// Runs stages of one experiment under its output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: ExperimentConfig,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Path {
        &self.cfg.output_dir
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root().join(MANIFEST_FILE)
    }

    pub fn load_manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.manifest_path();
        match std::fs::read_to_string(&path) {
            Ok(text) => RunManifest::from_toml(&text).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        let mut manifest = self.load_manifest()?.unwrap_or_else(|| RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            flags: Flags::new(&self.cfg),
            stages: BTreeMap::new(),
        });
        let mut ctx = StageCtx {
            root: self.root(),
            manifest: &manifest,
            record: StageRecord::default(),
        };
        stages::run(stage, &self.cfg, &mut ctx)?;
        let record = ctx.record;
        manifest.tool_version = env!("CARGO_PKG_VERSION").into();
        manifest.config = self.cfg.clone();
        manifest.flags = Flags::new(&self.cfg);
        manifest.stages.insert(stage.name().into(), record);
        write_atomic(&self.manifest_path(), manifest.to_toml()?.as_bytes())
    }

    pub fn run_all(&self) -> Result<()> {
        Stage::ALL.into_iter().try_for_each(|s| self.run(s))
    }

    /// Digests of every artifact listed in the manifest, by relative path.
    pub fn artifact_digests(&self) -> Result<BTreeMap<String, String>> {
        let manifest = self.load_manifest()?.ok_or_else(|| Error::MissingInput {
            stage: Stage::GenCorpus.name(),
            path: self.manifest_path(),
        })?;
        Ok(manifest
            .stages
            .values()
            .flat_map(|r| r.outputs.iter().map(|(k, v)| (k.clone(), v.clone())))
            .collect())
    }
}

/// Artifact access for one stage run: reads are checked against the digests
/// recorded by the producing stage, writes are atomic and recorded.
pub(crate) struct StageCtx<'a> {
    root: &'a Path,
    manifest: &'a RunManifest,
    record: StageRecord,
}

impl StageCtx<'_> {
    pub(crate) fn read(&mut self, producer: Stage, rel: &str) -> Result<Vec<u8>> {
        let path = self.root.join(rel);
        let missing = || Error::MissingInput {
            stage: producer.name(),
            path: path.clone(),
        };
        let expected = self
            .manifest
            .stages
            .get(producer.name())
            .and_then(|r| r.outputs.get(rel))
            .ok_or_else(missing)?;
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let found = digest(&bytes);
        if &found != expected {
            return Err(Error::DigestMismatch {
                stage: producer.name().into(),
                path,
            });
        }
        self.record.inputs.insert(rel.into(), found);
        Ok(bytes)
    }

    pub(crate) fn read_text(&mut self, producer: Stage, rel: &str) -> Result<String> {
        let bytes = self.read(producer, rel)?;
        String::from_utf8(bytes).map_err(|_| Error::Corrupt {
            what: "text artifact",
            msg: format!("{rel} is not UTF-8"),
        })
    }

    /// Whether `producer` recorded `rel` among its outputs.
    pub(crate) fn has(&self, producer: Stage, rel: &str) -> bool {
        self.manifest
            .stages
            .get(producer.name())
            .is_some_and(|r| r.outputs.contains_key(rel))
    }

    pub(crate) fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.record.outputs.insert(rel.into(), digest(bytes));
        Ok(())
    }
}
