// SPDX-License-Identifier: MIT OR Apache-2.0

//! Internal probes: clean-vs-noised similarity, logit lens, head ablation.

mod importance;
mod lens;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use importance::{domain_importance, head_importance, DomainImportance, ImportanceMatrix};
pub use lens::{lens_curve, logit_lens, LensCurve};

use crate::error::{Error, Result};
use crate::memscore::{example_noise, MemRecord, PROBE_LEN};
use crate::model::{InterventionSpec, TokenId, Transformer};
use crate::stats::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    /// Score 1.
    Memorized,
    /// Score 0.
    Unmemorized,
}

impl Cohort {
    pub fn of(record: &MemRecord) -> Option<Self> {
        if record.is_memorized() {
            Some(Cohort::Memorized)
        } else if record.is_unmemorized() {
            Some(Cohort::Unmemorized)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Memorized => "memorized",
            Cohort::Unmemorized => "unmemorized",
        }
    }

    /// Records of `records` belonging to this cohort.
    pub fn select(self, records: &[MemRecord]) -> Vec<&MemRecord> {
        records.iter().filter(|r| Cohort::of(r) == Some(self)).collect()
    }
}

/// Per-layer mean and variance of clean-vs-noised cosine similarity, over
/// the continuation positions only, of the post-projection attention output
/// and of the MLP output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub cohort: Cohort,
    pub alpha: f64,
    pub noise_layer: usize,
    pub samples: usize,
    pub attn_mean: Vec<f64>,
    pub attn_var: Vec<f64>,
    pub mlp_mean: Vec<f64>,
    pub mlp_var: Vec<f64>,
}

impl SimilarityProfile {
    /// First layer whose input carries the injected noise.
    pub fn first_affected_layer(&self) -> usize {
        self.noise_layer + 1
    }
}

/// Context followed by gold continuation.
pub(crate) fn full_sequence(record: &MemRecord) -> Vec<TokenId> {
    let mut seq = record.context.clone();
    seq.extend_from_slice(&record.gold);
    seq
}

fn continuation_rows(t: &memlab_tensor::Tensor, start: usize) -> Vec<f64> {
    let d = t.shape()[1];
    t.data()[start * d..].iter().map(|&x| x as f64).collect()
}

fn mean_var(samples: &[Vec<f64>], layers: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..layers)
        .map(|l| samples.iter().map(|s| s[l]).sum::<f64>() / n)
        .collect();
    let var = (0..layers)
        .map(|l| samples.iter().map(|s| (s[l] - mean[l]).powi(2)).sum::<f64>() / n)
        .collect();
    (mean, var)
}

/// Similarity profile of one cohort. Noise for each example comes from
/// [`example_noise`] with `seed`, so reruns are reproducible.
pub fn similarity_profile(
    model: &Transformer,
    records: &[&MemRecord],
    cohort: Cohort,
    alpha: f64,
    noise_layer: usize,
    seed: u64,
) -> Result<SimilarityProfile> {
    if records.is_empty() {
        return Err(Error::Empty("similarity_profile cohort"));
    }
    if let Some(r) = records.iter().find(|r| Cohort::of(r) != Some(cohort)) {
        return Err(Error::InvalidInput(format!(
            "record {} (score {}) is not in the {} cohort",
            r.id,
            r.score(),
            cohort.as_str()
        )));
    }
    let layers = model.config().n_layers;
    let per_example: Vec<(Vec<f64>, Vec<f64>)> = records
        .par_iter()
        .map(|r| {
            let seq = full_sequence(r);
            let clean = model
                .forward(&seq, &InterventionSpec::clean(), true)?
                .trace
                .expect("captured");
            let spec = example_noise(seed, r.id, alpha, noise_layer);
            let noised = model.forward(&seq, &spec, true)?.trace.expect("captured");
            let sim = |a: &[memlab_tensor::Tensor], b: &[memlab_tensor::Tensor]| {
                (0..layers)
                    .map(|l| {
                        cosine(
                            &continuation_rows(&a[l], PROBE_LEN),
                            &continuation_rows(&b[l], PROBE_LEN),
                        )
                    })
                    .collect::<Vec<_>>()
            };
            Ok((
                sim(&clean.attn_out, &noised.attn_out),
                sim(&clean.mlp_out, &noised.mlp_out),
            ))
        })
        .collect::<Result<_>>()?;
    let (attn, mlp): (Vec<_>, Vec<_>) = per_example.into_iter().unzip();
    let (attn_mean, attn_var) = mean_var(&attn, layers);
    let (mlp_mean, mlp_var) = mean_var(&mlp, layers);
    Ok(SimilarityProfile {
        cohort,
        alpha,
        noise_layer,
        samples: records.len(),
        attn_mean,
        attn_var,
        mlp_mean,
        mlp_var,
    })
}
