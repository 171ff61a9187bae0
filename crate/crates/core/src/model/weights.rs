// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named parameter layout shared by the forward pass, the trainer and the
//! checkpoint format.

use memlab_tensor::{gaussian, RngStream, Tensor};

use super::config::{ModelConfig, NormKind, PositionalKind};
use crate::error::{Error, Result};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NormWeights<T> {
    pub gain: T,
    pub bias: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub attn_norm: NormWeights<T>,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub mlp_norm: NormWeights<T>,
    pub w_in: T,
    pub w_out: T,
}

/// All learned tensors of a model, generic over the handle type so the same
/// structure carries stored tensors and graph variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub tok_emb: T,
    pub pos_emb: Option<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_norm: NormWeights<T>,
    pub unembed: T,
}

impl<T> NormWeights<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> NormWeights<U> {
        NormWeights {
            gain: f(&format!("{prefix}.gain"), &self.gain),
            bias: self.bias.as_ref().map(|b| f(&format!("{prefix}.bias"), b)),
        }
    }
}

impl<T> Weights<T> {
    /// Applies `f` to every tensor in canonical order, passing its name.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> Weights<U> {
        let tok_emb = f("tok_emb", &self.tok_emb);
        let pos_emb = self.pos_emb.as_ref().map(|p| f("pos_emb", p));
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let p = format!("layers.{i}");
                LayerWeights {
                    attn_norm: l.attn_norm.map(&format!("{p}.attn_norm"), &mut f),
                    wq: f(&format!("{p}.attn.wq"), &l.wq),
                    wk: f(&format!("{p}.attn.wk"), &l.wk),
                    wv: f(&format!("{p}.attn.wv"), &l.wv),
                    wo: f(&format!("{p}.attn.wo"), &l.wo),
                    mlp_norm: l.mlp_norm.map(&format!("{p}.mlp_norm"), &mut f),
                    w_in: f(&format!("{p}.mlp.w_in"), &l.w_in),
                    w_out: f(&format!("{p}.mlp.w_out"), &l.w_out),
                }
            })
            .collect();
        let final_norm = self.final_norm.map("final_norm", &mut f);
        let unembed = f("unembed", &self.unembed);
        Weights {
            tok_emb,
            pos_emb,
            layers,
            final_norm,
            unembed,
        }
    }

    /// `(name, tensor)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        self.map(|name, t| (name.to_string(), t)).into_values()
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(|name, _| out.push(name.to_string()));
        out
    }

    /// Rebuilds a structure with the layout of `self` from values in
    /// canonical order.
    pub fn with_values<U>(&self, values: Vec<U>) -> Result<Weights<U>> {
        let expected = self.names().len();
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} tensors, got {}",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        Ok(self.map(|_, _| it.next().expect("length checked")))
    }

    /// Tensors in canonical order.
    pub fn into_values(self) -> Vec<T> {
        fn push_norm<T>(out: &mut Vec<T>, n: NormWeights<T>) {
            out.push(n.gain);
            out.extend(n.bias);
        }
        let mut out = vec![self.tok_emb];
        out.extend(self.pos_emb);
        for l in self.layers {
            push_norm(&mut out, l.attn_norm);
            out.extend([l.wq, l.wk, l.wv, l.wo]);
            push_norm(&mut out, l.mlp_norm);
            out.extend([l.w_in, l.w_out]);
        }
        push_norm(&mut out, self.final_norm);
        out.push(self.unembed);
        out
    }
}

/// Expected shape of every tensor for `cfg`, in canonical order.
pub fn layout(cfg: &ModelConfig) -> Weights<Vec<usize>> {
    let d = cfg.d_model;
    let norm = || NormWeights {
        gain: vec![d],
        bias: (cfg.norm == NormKind::LayerNorm).then(|| vec![d]),
    };
    Weights {
        tok_emb: vec![cfg.vocab_size, d],
        pos_emb: (cfg.positional == PositionalKind::Learned).then(|| vec![cfg.max_seq, d]),
        layers: (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm: norm(),
                wq: vec![d, d],
                wk: vec![d, d],
                wv: vec![d, d],
                wo: vec![d, d],
                mlp_norm: norm(),
                w_in: vec![d, cfg.d_ff],
                w_out: vec![cfg.d_ff, d],
            })
            .collect(),
        final_norm: norm(),
        unembed: vec![d, cfg.vocab_size],
    }
}

/// Random initialization: N(0, 0.02) matrices, residual projections scaled
/// by `1/sqrt(2 L)`, unit gains and zero biases.
pub fn init(cfg: &ModelConfig, rng: &RngStream) -> Result<Weights<Tensor<f32>>> {
    let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
    let mut out = Vec::new();
    for (index, (name, shape)) in layout(cfg).named().into_iter().enumerate() {
        let stream = rng.substream(index as u64);
        let t = if name.ends_with(".gain") {
            Tensor::full(shape.clone(), 1.0)
        } else if name.ends_with(".bias") {
            Tensor::zeros(shape.clone())
        } else if name.ends_with(".wo") || name.ends_with(".w_out") {
            gaussian(shape.clone(), resid_std, &stream)?
        } else {
            gaussian(shape.clone(), INIT_STD, &stream)?
        };
        out.push(t);
    }
    layout(cfg).with_values(out)
}

/// Checks every tensor against the layout for `cfg`.
pub fn check_shapes(cfg: &ModelConfig, weights: &Weights<Tensor<f32>>) -> Result<()> {
    let expected = layout(cfg);
    let exp = expected.named();
    let got = weights.named();
    if got.len() != exp.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} tensors, got {}",
            exp.len(),
            got.len()
        )));
    }
    for ((name, e), (_, g)) in exp.into_iter().zip(got) {
        if g.shape() != e.as_slice() {
            return Err(Error::ShapeMismatch {
                name,
                found: g.shape().to_vec(),
                expected: e.clone(),
            });
        }
    }
    Ok(())
}
