// SPDX-License-Identifier: MIT OR Apache-2.0

//! Memorization scores, rates, distributions and compression ratios.

mod record;

use std::collections::BTreeMap;

use memlab_tensor::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use record::{read_records, write_records, MemRecord};

use crate::corpus::{Category, CorpusManifest, FrequencyIndex};
use crate::error::{Error, Result};
use crate::model::{InterventionSpec, TokenId, Transformer};

/// Context and continuation length of every probe.
pub const PROBE_LEN: usize = 32;

/// A training sequence split into a 32-token context and 32-token gold
/// continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub id: usize,
    pub domain: String,
    pub category: Category,
    pub repetitions: usize,
    pub context: Vec<TokenId>,
    pub gold: Vec<TokenId>,
    pub avg_frequency: Option<f64>,
}

impl Probe {
    pub fn new(id: usize, context: Vec<TokenId>, gold: Vec<TokenId>) -> Result<Self> {
        check_len("context", &context)?;
        check_len("gold", &gold)?;
        Ok(Self {
            id,
            domain: String::new(),
            category: Category::FreeText,
            repetitions: 1,
            context,
            gold,
            avg_frequency: None,
        })
    }

    /// Probes for every manifest sequence, with frequency statistics when
    /// an index is given.
    pub fn from_manifest(manifest: &CorpusManifest, index: Option<&FrequencyIndex>) -> Result<Vec<Self>> {
        manifest
            .sequences
            .iter()
            .map(|s| {
                let tokens = s.tokens()?;
                if tokens.len() < 2 * PROBE_LEN {
                    return Err(Error::InvalidInput(format!(
                        "sequence {} has {} tokens, probes need {}",
                        s.id,
                        tokens.len(),
                        2 * PROBE_LEN
                    )));
                }
                Ok(Self {
                    id: s.id,
                    domain: s.domain.clone(),
                    category: s.category,
                    repetitions: s.repetitions,
                    context: tokens[..PROBE_LEN].to_vec(),
                    gold: tokens[PROBE_LEN..2 * PROBE_LEN].to_vec(),
                    avg_frequency: index.map(|i| i.avg_sequence_frequency(&tokens[..2 * PROBE_LEN])),
                })
            })
            .collect()
    }
}

fn check_len(what: &str, seq: &[TokenId]) -> Result<()> {
    if seq.len() != PROBE_LEN {
        return Err(Error::InvalidInput(format!(
            "{what} has {} tokens, expected {PROBE_LEN}",
            seq.len()
        )));
    }
    Ok(())
}

/// Noise settings for one example: the stream depends only on the run
/// seed, the example id and alpha.
pub fn example_noise(seed: u64, id: usize, alpha: f64, layer: usize) -> InterventionSpec {
    if alpha == 0.0 {
        return InterventionSpec::clean();
    }
    let rng = RngStream::new(seed)
        .named("noise")
        .substream(id as u64)
        .substream(alpha.to_bits());
    InterventionSpec::noise(alpha, layer, rng)
}

/// Greedy-decodes the continuation of `probe` under `spec` and scores it.
pub fn memorization_score(model: &Transformer, probe: &Probe, spec: &InterventionSpec) -> Result<MemRecord> {
    check_len("context", &probe.context)?;
    check_len("gold", &probe.gold)?;
    let generated = model.greedy_decode(&probe.context, PROBE_LEN, spec)?;
    let alpha = spec.noise.as_ref().map_or(0.0, |n| n.alpha);
    Ok(MemRecord::new(probe, generated, alpha))
}

/// Scores every probe at noise level `alpha` (0 for clean runs). Results are
/// in probe order regardless of scheduling.
pub fn score_all(
    model: &Transformer,
    probes: &[Probe],
    alpha: f64,
    noise_layer: usize,
    seed: u64,
) -> Result<Vec<MemRecord>> {
    probes
        .par_iter()
        .map(|p| memorization_score(model, p, &example_noise(seed, p.id, alpha, noise_layer)))
        .collect()
}

/// Fraction of records with score exactly 1.
pub fn memorization_rate(records: &[MemRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("memorization_rate records"));
    }
    Ok(records.iter().filter(|r| r.is_memorized()).count() as f64 / records.len() as f64)
}

/// Which end of the context is kept when shortening it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionSide {
    /// Keep the last `k` tokens, adjacent to the continuation.
    #[default]
    Suffix,
    /// Keep the first `k` tokens.
    Prefix,
}

impl CompressionSide {
    pub fn as_str(self) -> &'static str {
        match self {
            CompressionSide::Suffix => "suffix",
            CompressionSide::Prefix => "prefix",
        }
    }

    fn cut(self, ctx: &[TokenId], k: usize) -> &[TokenId] {
        match self {
            CompressionSide::Suffix => &ctx[ctx.len() - k..],
            CompressionSide::Prefix => &ctx[..k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compression {
    pub id: usize,
    /// Least context length that reproduces the gold continuation.
    pub k: usize,
    pub ratio: f64,
}

fn require_memorized(record: &MemRecord) -> Result<()> {
    if !record.is_memorized() {
        return Err(Error::NotMemorized {
            matched: record.matched,
            total: PROBE_LEN,
        });
    }
    Ok(())
}

fn extracts(
    model: &Transformer,
    record: &MemRecord,
    side: CompressionSide,
    k: usize,
    spec: &InterventionSpec,
) -> Result<bool> {
    Ok(model.greedy_decode(side.cut(&record.context, k), PROBE_LEN, spec)? == record.gold)
}

/// Smallest `k` in `1..=32` whose shortened context still yields the gold
/// continuation, scanning upwards.
pub fn compression_ratio(
    model: &Transformer,
    record: &MemRecord,
    side: CompressionSide,
    spec: &InterventionSpec,
) -> Result<Compression> {
    require_memorized(record)?;
    for k in 1..=PROBE_LEN {
        if extracts(model, record, side, k, spec)? {
            return Ok(Compression {
                id: record.id,
                k,
                ratio: k as f64 / PROBE_LEN as f64,
            });
        }
    }
    Err(Error::InvalidInput(format!(
        "record {} no longer reproduces its continuation with the full context",
        record.id
    )))
}

/// Extraction success for every `k` in `1..=32` (index `k - 1`).
pub fn extraction_pattern(
    model: &Transformer,
    record: &MemRecord,
    side: CompressionSide,
    spec: &InterventionSpec,
) -> Result<Vec<bool>> {
    require_memorized(record)?;
    (1..=PROBE_LEN)
        .map(|k| extracts(model, record, side, k, spec))
        .collect()
}

/// Histogram of scores over the 33 possible values `k / 32`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub counts: Vec<u64>,
}

impl ScoreDistribution {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn density(&self) -> Vec<f64> {
        let t = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

pub fn score_distribution(records: &[MemRecord]) -> Result<ScoreDistribution> {
    if records.is_empty() {
        return Err(Error::Empty("score_distribution records"));
    }
    let mut counts = vec![0u64; PROBE_LEN + 1];
    for r in records {
        counts[r.matched] += 1;
    }
    Ok(ScoreDistribution { counts })
}

/// Share of fully memorized records falling in each category.
pub fn domain_breakdown(records: &[MemRecord]) -> Result<BTreeMap<Category, f64>> {
    if records.is_empty() {
        return Err(Error::Empty("domain_breakdown records"));
    }
    let memorized: Vec<&MemRecord> = records.iter().filter(|r| r.is_memorized()).collect();
    if memorized.is_empty() {
        return Err(Error::Empty("memorized records"));
    }
    Ok(Category::ALL
        .iter()
        .map(|&c| {
            let n = memorized.iter().filter(|r| r.category == c).count();
            (c, n as f64 / memorized.len() as f64)
        })
        .collect())
}

/// Memorization rate within each category present in `records`.
pub fn category_rates(records: &[MemRecord]) -> BTreeMap<Category, f64> {
    let mut acc: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.category).or_default();
        e.0 += r.is_memorized() as usize;
        e.1 += 1;
    }
    acc.into_iter().map(|(c, (m, n))| (c, m as f64 / n as f64)).collect()
}
