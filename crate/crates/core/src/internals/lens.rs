// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logit lens: decoding intermediate residual states through the final norm
//! and unembedding.

use memlab_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::memscore::{MemRecord, PROBE_LEN};
use crate::model::{InterventionSpec, TraceBundle, Transformer};

/// Row-wise vocabulary distribution read from the residual output of
/// `layer` (1-based; `L` is the last layer).
pub fn logit_lens(model: &Transformer, trace: &TraceBundle, layer: usize) -> Result<Tensor> {
    let n = trace.n_layers();
    if layer == 0 || layer > n {
        return Err(Error::InvalidInput(format!("lens layer {layer} outside 1..={n}")));
    }
    Ok(model.unembed(&trace.residual[layer - 1])?.softmax(1)?)
}

/// Mean lens probability of the gold next token per layer, over every
/// continuation position of every record in the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensCurve {
    pub cohort: Cohort,
    pub samples: usize,
    /// Index `l - 1` holds layer `l`.
    pub per_layer: Vec<f64>,
    /// Mean model-output probability of the gold token.
    pub output: f64,
}

pub fn lens_curve(model: &Transformer, records: &[&MemRecord], cohort: Cohort) -> Result<LensCurve> {
    if records.is_empty() {
        return Err(Error::Empty("lens_curve cohort"));
    }
    let layers = model.config().n_layers;
    let sums: Vec<(Vec<f64>, f64)> = records
        .par_iter()
        .map(|r| {
            // Position 31 + i predicts gold[i].
            let mut input = r.context.clone();
            input.extend_from_slice(&r.gold[..PROBE_LEN - 1]);
            let out = model.forward(&input, &InterventionSpec::clean(), true)?;
            let trace = out.trace.expect("captured");
            let gold_prob = |probs: &Tensor| -> f64 {
                r.gold
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| probs.row(PROBE_LEN - 1 + i)[g as usize] as f64)
                    .sum()
            };
            let per_layer = (1..=layers)
                .map(|l| Ok(gold_prob(&logit_lens(model, &trace, l)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((per_layer, gold_prob(&out.logits.softmax(1)?)))
        })
        .collect::<Result<_>>()?;
    let denom = (records.len() * PROBE_LEN) as f64;
    let per_layer = (0..layers)
        .map(|l| sums.iter().map(|s| s.0[l]).sum::<f64>() / denom)
        .collect();
    let output = sums.iter().map(|s| s.1).sum::<f64>() / denom;
    Ok(LensCurve {
        cohort,
        samples: records.len(),
        per_layer,
        output,
    })
}
