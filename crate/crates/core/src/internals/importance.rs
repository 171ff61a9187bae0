// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention-head importance by ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memscore::{MemRecord, PROBE_LEN};
use crate::model::{AblationMode, InterventionSpec, Transformer};

/// Per-head scores of one example or a domain aggregate, row-major over
/// `(layer, head)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Divergence fraction `1 - matches`.
    pub scores: Vec<f64>,
    /// Fraction of positions where the ablated generation still matches.
    pub matches: Vec<f64>,
    pub source: String,
    pub samples: usize,
}

impl ImportanceMatrix {
    pub fn from_scores(n_layers: usize, n_heads: usize, scores: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if scores.len() != n_layers * n_heads {
            return Err(Error::ShapeMismatch {
                name: "importance scores".into(),
                found: vec![scores.len()],
                expected: vec![n_layers, n_heads],
            });
        }
        Ok(Self {
            n_layers,
            n_heads,
            matches: scores.iter().map(|s| 1.0 - s).collect(),
            scores,
            source: source.into(),
            samples: 1,
        })
    }

    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.scores[layer * self.n_heads + head]
    }

    /// Elementwise mean; `samples` adds up.
    pub fn mean(matrices: &[ImportanceMatrix], source: impl Into<String>) -> Result<Self> {
        let first = matrices.first().ok_or(Error::Empty("importance matrices"))?;
        if let Some(bad) = matrices
            .iter()
            .find(|m| (m.n_layers, m.n_heads) != (first.n_layers, first.n_heads))
        {
            return Err(Error::ShapeMismatch {
                name: format!("importance matrix {}", bad.source),
                found: vec![bad.n_layers, bad.n_heads],
                expected: vec![first.n_layers, first.n_heads],
            });
        }
        let n = matrices.len() as f64;
        let avg = |f: fn(&ImportanceMatrix) -> &Vec<f64>| -> Vec<f64> {
            (0..first.scores.len())
                .map(|i| matrices.iter().map(|m| f(m)[i]).sum::<f64>() / n)
                .collect()
        };
        Ok(Self {
            n_layers: first.n_layers,
            n_heads: first.n_heads,
            scores: avg(|m| &m.scores),
            matches: avg(|m| &m.matches),
            source: source.into(),
            samples: matrices.iter().map(|m| m.samples).sum(),
        })
    }

    /// `layer,head,importance,match_fraction` rows.
    pub fn csv(&self) -> String {
        let mut out = String::from("layer,head,importance,match_fraction\n");
        for l in 0..self.n_layers {
            for h in 0..self.n_heads {
                let i = l * self.n_heads + h;
                out.push_str(&format!("{l},{h},{:.6},{:.6}\n", self.scores[i], self.matches[i]));
            }
        }
        out
    }
}

/// Regenerates the continuation of a memorized record with each head
/// ablated in turn, for the whole generation.
pub fn head_importance(model: &Transformer, record: &MemRecord, mode: AblationMode) -> Result<ImportanceMatrix> {
    let cfg = model.config();
    if cfg.n_heads < 2 {
        return Err(Error::Intervention(
            "head ablation needs at least 2 heads per layer".into(),
        ));
    }
    if !record.is_memorized() {
        return Err(Error::NotMemorized {
            matched: record.matched,
            total: PROBE_LEN,
        });
    }
    let (l, h) = (cfg.n_layers, cfg.n_heads);
    let matches: Vec<f64> = (0..l * h)
        .into_par_iter()
        .map(|i| {
            let spec = InterventionSpec::ablate(i / h, i % h, mode);
            let regen = model.greedy_decode(&record.context, PROBE_LEN, &spec)?;
            let same = regen.iter().zip(&record.generated).filter(|(a, b)| a == b).count();
            Ok(same as f64 / PROBE_LEN as f64)
        })
        .collect::<Result<_>>()?;
    Ok(ImportanceMatrix {
        n_layers: l,
        n_heads: h,
        scores: matches.iter().map(|m| 1.0 - m).collect(),
        matches,
        source: format!("example:{}", record.id),
        samples: 1,
    })
}

/// Per-domain aggregate plus the per-example matrices it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainImportance {
    pub domain: String,
    pub mean: ImportanceMatrix,
    pub examples: Vec<ImportanceMatrix>,
}

/// Importance for up to `cap` memorized records of `domain`, taken in id
/// order.
pub fn domain_importance(
    model: &Transformer,
    domain: &str,
    records: &[&MemRecord],
    cap: usize,
) -> Result<DomainImportance> {
    let mut chosen: Vec<&MemRecord> = records.iter().copied().filter(|r| r.is_memorized()).collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput(format!("domain {domain} has no memorized records")));
    }
    chosen.sort_by_key(|r| r.id);
    chosen.truncate(cap.max(1));
    let examples = chosen
        .iter()
        .map(|r| head_importance(model, r, AblationMode::MeanOfOthers))
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainImportance {
        domain: domain.to_string(),
        mean: ImportanceMatrix::mean(&examples, format!("domain:{domain}"))?,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_zero_and_one() {
        let z = ImportanceMatrix::from_scores(2, 2, vec![0.0; 4], "z").unwrap();
        let o = ImportanceMatrix::from_scores(2, 2, vec![1.0; 4], "o").unwrap();
        let m = ImportanceMatrix::mean(&[z.clone(), o], "d").unwrap();
        assert_eq!(m.scores, vec![0.5; 4]);
        assert_eq!(m.samples, 2);
        assert_eq!(
            ImportanceMatrix::mean(&[z.clone(), z.clone()], "d").unwrap().scores,
            z.scores
        );
        assert!(ImportanceMatrix::mean(&[], "d").is_err());
    }
}
