// SPDX-License-Identifier: MIT OR Apache-2.0

//! The decoder forward pass, recorded on a [`Graph`].

use memlab_tensor::{gaussian, AttnShape, Graph, Scalar, Var};

use super::config::{ModelConfig, NormKind, PositionalKind};
use super::intervention::{AblationMode, InterventionSpec};
use super::weights::{NormWeights, Weights};
use crate::error::Result;

/// Graph handles of every captured activation.
pub(crate) struct Recorded {
    pub embed: Var,
    pub residual: Vec<Var>,
    pub heads: Vec<Var>,
    pub attn_out: Vec<Var>,
    pub mlp_out: Vec<Var>,
    pub final_hidden: Var,
    pub logits: Var,
}

fn norm<S: Scalar>(g: &mut Graph<S>, kind: NormKind, x: Var, w: &NormWeights<Var>) -> Result<Var> {
    Ok(match kind {
        NormKind::LayerNorm => g.layer_norm(x, w.gain, w.bias)?,
        NormKind::RmsNorm => g.rms_norm(x, w.gain)?,
    })
}

/// Final norm and unembedding applied to any residual-stream value.
pub(crate) fn unembed<S: Scalar>(g: &mut Graph<S>, cfg: &ModelConfig, w: &Weights<Var>, h: Var) -> Result<(Var, Var)> {
    let normed = norm(g, cfg.norm, h, &w.final_norm)?;
    let logits = g.matmul(normed, w.unembed)?;
    Ok((normed, logits))
}

/// Records the forward pass over `batch` sequences of `seq` tokens each
/// (`ids` is batch-major) and returns the captured activations.
pub(crate) fn record<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &ModelConfig,
    w: &Weights<Var>,
    ids: &[usize],
    batch: usize,
    seq: usize,
    spec: &InterventionSpec,
) -> Result<Recorded> {
    let shape = AttnShape {
        batch,
        seq,
        heads: cfg.n_heads,
        head_dim: cfg.head_dim(),
    };
    let mut x = g.gather_rows(w.tok_emb, ids)?;
    if let (PositionalKind::Learned, Some(pos)) = (cfg.positional, w.pos_emb) {
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let p = g.gather_rows(pos, &positions)?;
        x = g.add(x, p)?;
    }
    let embed = x;
    let mut rec = Recorded {
        embed,
        residual: Vec::with_capacity(cfg.n_layers),
        heads: Vec::with_capacity(cfg.n_layers),
        attn_out: Vec::with_capacity(cfg.n_layers),
        mlp_out: Vec::with_capacity(cfg.n_layers),
        final_hidden: embed,
        logits: embed,
    };

    for (li, lw) in w.layers.iter().enumerate() {
        let n1 = norm(g, cfg.norm, x, &lw.attn_norm)?;
        let mut q = g.matmul(n1, lw.wq)?;
        let mut k = g.matmul(n1, lw.wk)?;
        let v = g.matmul(n1, lw.wv)?;
        if cfg.positional == PositionalKind::Rotary {
            q = g.rope(q, shape)?;
            k = g.rope(k, shape)?;
        }
        let mut heads = g.causal_attention(q, k, v, shape)?;
        if let Some(ab) = spec.ablation.filter(|a| a.layer == li) {
            if ab.mode == AblationMode::MeanOfOthers {
                heads = g.mean_of_other_heads(heads, cfg.n_heads, ab.head)?;
            }
        }
        let attn_out = g.matmul(heads, lw.wo)?;
        x = g.add(x, attn_out)?;

        let n2 = norm(g, cfg.norm, x, &lw.mlp_norm)?;
        let hidden = g.matmul(n2, lw.w_in)?;
        let hidden = g.gelu(hidden)?;
        let mlp_out = g.matmul(hidden, lw.w_out)?;
        x = g.add(x, mlp_out)?;

        if let Some(noise) = spec.noise.filter(|n| n.layer == li) {
            let sigma = noise.alpha * g.value(x).rms()?;
            if sigma > 0.0 {
                let eps = gaussian(g.value(x).shape().to_vec(), sigma, &noise.rng)?;
                x = g.add_constant(x, eps.cast())?;
            }
        }

        rec.residual.push(x);
        rec.heads.push(heads);
        rec.attn_out.push(attn_out);
        rec.mlp_out.push(mlp_out);
    }

    let (final_hidden, logits) = unembed(g, cfg, w, x)?;
    rec.final_hidden = final_hidden;
    rec.logits = logits;
    Ok(rec)
}
