// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-duplication corpora, their manifests and an exact token index.

mod domains;
mod index;
mod tokenizer;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use memlab_tensor::RngStream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use domains::{default_domains, Category, DomainSpec, Field, GeneratorParams, ValueKind};
pub use index::{count_occurrences, FrequencyIndex};
pub use tokenizer::{decode, encode, encode_char, PAD, VOCAB_SIZE};

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Probe prefix length that must be unique across planted sequences.
pub const UNIQUE_PREFIX: usize = 32;
/// Shortest allowed sequence.
pub const MIN_SEQ_LEN: usize = 64;

const MAX_ATTEMPTS: u64 = 64;

/// Token sequences, one per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub lines: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn total_tokens(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    /// Header `vocab_size=V total_tokens=N`, then space-separated ids.
    pub fn to_text(&self) -> String {
        let mut out = format!("vocab_size={} total_tokens={}\n", self.vocab_size, self.total_tokens());
        for line in &self.lines {
            for (i, t) in line.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{t}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let corrupt = |msg: String| Error::Corrupt {
            what: "corpus file",
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("missing header".into()))?;
        let mut vocab_size = None;
        let mut total = None;
        for part in header.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| corrupt(format!("bad header field {part:?}")))?;
            let v: usize = v.parse().map_err(|_| corrupt(format!("bad header value {part:?}")))?;
            match k {
                "vocab_size" => vocab_size = Some(v),
                "total_tokens" => total = Some(v),
                _ => return Err(corrupt(format!("unknown header field {k:?}"))),
            }
        }
        let vocab_size = vocab_size.ok_or_else(|| corrupt("header lacks vocab_size".into()))?;
        let total = total.ok_or_else(|| corrupt("header lacks total_tokens".into()))?;
        let mut out = Vec::new();
        for (n, line) in lines.enumerate() {
            let ids = line
                .split(' ')
                .map(|s| match s.parse::<TokenId>() {
                    Ok(id) if (id as usize) < vocab_size => Ok(id),
                    _ => Err(corrupt(format!("line {}: bad token {s:?}", n + 2))),
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(ids);
        }
        let corpus = Self { vocab_size, lines: out };
        if corpus.total_tokens() != total {
            return Err(corrupt(format!(
                "header says {total} tokens, body has {}",
                corpus.total_tokens()
            )));
        }
        Ok(corpus)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantEntry {
    pub domain: String,
    pub sequences: usize,
    pub repetitions: usize,
}

/// How many distinct sequences each domain contributes and how often each is
/// repeated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantPlan {
    pub entries: Vec<PlantEntry>,
    pub max_tokens: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
}

fn default_seq_len() -> usize {
    MIN_SEQ_LEN
}

impl PlantPlan {
    /// `per_rung` sequences per domain at every repetition count
    /// `1, 2, 4, ..., 2^max_exp`.
    pub fn log_ladder(domains: &[DomainSpec], per_rung: usize, max_exp: u32, max_tokens: usize) -> Self {
        let entries = domains
            .iter()
            .flat_map(|d| {
                (0..=max_exp).map(move |k| PlantEntry {
                    domain: d.name.clone(),
                    sequences: per_rung,
                    repetitions: 1 << k,
                })
            })
            .collect();
        Self {
            entries,
            max_tokens,
            seq_len: MIN_SEQ_LEN,
        }
    }

    pub fn total_tokens(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.sequences.saturating_mul(e.repetitions).saturating_mul(self.seq_len))
            .fold(0usize, usize::saturating_add)
    }
}

/// One distinct sequence of the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: usize,
    pub domain: String,
    pub category: Category,
    pub repetitions: usize,
    pub text: String,
    /// Zero-based corpus lines holding a copy.
    pub lines: Vec<usize>,
}

impl SequenceRecord {
    pub fn tokens(&self) -> Result<Vec<TokenId>> {
        encode(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub vocab_size: usize,
    pub total_tokens: usize,
    pub seq_len: usize,
    pub domains: Vec<DomainSpec>,
    pub sequences: Vec<SequenceRecord>,
}

impl CorpusManifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Corrupt {
            what: "corpus manifest",
            msg: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    /// Structural checks that do not need the corpus itself.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |msg: String| Error::Corrupt {
            what: "corpus manifest",
            msg,
        };
        let mut expected = 0usize;
        for s in &self.sequences {
            if s.repetitions == 0 || s.lines.len() != s.repetitions {
                return Err(corrupt(format!(
                    "sequence {} lists {} lines for {} repetitions",
                    s.id,
                    s.lines.len(),
                    s.repetitions
                )));
            }
            let tokens = s.tokens().map_err(|e| corrupt(format!("sequence {}: {e}", s.id)))?;
            expected = tokens
                .len()
                .checked_mul(s.repetitions)
                .and_then(|n| expected.checked_add(n))
                .ok_or_else(|| corrupt("token count overflow".into()))?;
        }
        if expected != self.total_tokens {
            return Err(corrupt(format!(
                "total_tokens {} but sequences add up to {expected}",
                self.total_tokens
            )));
        }
        Ok(())
    }

    /// Checks every listed line of `corpus` against the manifest.
    pub fn check_against(&self, corpus: &Corpus) -> Result<()> {
        let corrupt = |msg: String| Error::Corrupt {
            what: "corpus manifest",
            msg,
        };
        if corpus.total_tokens() != self.total_tokens || corpus.vocab_size != self.vocab_size {
            return Err(corrupt("manifest and corpus disagree on size".into()));
        }
        for s in &self.sequences {
            let tokens = s.tokens()?;
            for &l in &s.lines {
                if corpus.lines.get(l) != Some(&tokens) {
                    return Err(corrupt(format!("sequence {} is not at line {l}", s.id)));
                }
            }
        }
        Ok(())
    }
}

/// Generates every planned sequence, emits each `repetitions` times and
/// shuffles the lines.
pub fn generate_corpus(specs: &[DomainSpec], plan: &PlantPlan, seed: u64) -> Result<(Corpus, CorpusManifest)> {
    if specs.is_empty() {
        return Err(Error::Config("at least one domain is required".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let mut names = HashSet::new();
    if let Some(dup) = specs.iter().find(|s| !names.insert(s.name.as_str())) {
        return Err(Error::Config(format!("duplicate domain {}", dup.name)));
    }
    if plan.seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "seq_len {} is below the minimum {MIN_SEQ_LEN}",
            plan.seq_len
        )));
    }
    if plan.entries.is_empty() {
        return Err(Error::Config("plant plan has no entries".into()));
    }
    for e in &plan.entries {
        if !names.contains(e.domain.as_str()) {
            return Err(Error::Config(format!("plant plan names unknown domain {}", e.domain)));
        }
        if e.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
    }
    let needed = plan.total_tokens();
    if needed > plan.max_tokens {
        return Err(Error::Budget {
            needed,
            budget: plan.max_tokens,
        });
    }

    let root = RngStream::new(seed).named("corpus");
    let mut next_index: BTreeMap<&str, u64> = BTreeMap::new();
    let mut prefixes = HashSet::new();
    let mut sequences = Vec::new();
    let mut emitted: Vec<usize> = Vec::new();
    for e in &plan.entries {
        let spec = specs.iter().find(|s| s.name == e.domain).expect("checked above");
        let domain_rng = root.named(&format!("domain:{}", spec.name));
        for _ in 0..e.sequences {
            let index = next_index.entry(spec.name.as_str()).or_default();
            let mut found = None;
            for attempt in 0..MAX_ATTEMPTS {
                let stream = domain_rng.substream(*index).substream(attempt);
                let text = spec.generate(&stream, plan.seq_len);
                if prefixes.insert(text[..UNIQUE_PREFIX].to_string()) {
                    found = Some(text);
                    break;
                }
            }
            *index += 1;
            let text = found.ok_or_else(|| {
                Error::Config(format!(
                    "domain {} cannot produce another sequence with an unseen {UNIQUE_PREFIX}-token prefix",
                    spec.name
                ))
            })?;
            let id = sequences.len();
            emitted.extend(std::iter::repeat_n(id, e.repetitions));
            sequences.push(SequenceRecord {
                id,
                domain: spec.name.clone(),
                category: spec.category,
                repetitions: e.repetitions,
                text,
                lines: Vec::with_capacity(e.repetitions),
            });
        }
    }
    emitted.shuffle(&mut root.named("shuffle").rng());

    let encoded: Vec<Vec<TokenId>> = sequences.iter().map(SequenceRecord::tokens).collect::<Result<_>>()?;
    let mut lines = Vec::with_capacity(emitted.len());
    for (line, &id) in emitted.iter().enumerate() {
        sequences[id].lines.push(line);
        lines.push(encoded[id].clone());
    }
    let corpus = Corpus {
        vocab_size: VOCAB_SIZE,
        lines,
    };
    let manifest = CorpusManifest {
        seed,
        vocab_size: VOCAB_SIZE,
        total_tokens: corpus.total_tokens(),
        seq_len: plan.seq_len,
        domains: specs.to_vec(),
        sequences,
    };
    Ok((corpus, manifest))
}
