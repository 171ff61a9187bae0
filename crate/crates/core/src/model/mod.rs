// SPDX-License-Identifier: MIT OR Apache-2.0

//! Instrumented decoder-only transformer.
//!
//! [`Transformer::forward`] runs one sequence with optional trace capture and
//! the two supported interventions (residual noise, head ablation);
//! [`Transformer::greedy_decode`] extends a context by repeated argmax.

mod config;
pub(crate) mod forward;
mod intervention;
mod trace;
mod weights;

use memlab_tensor::gradcheck::{check_gradients, GradCheckReport};
use memlab_tensor::{Graph, RngStream, Tensor, TensorError, Var};

pub use config::{ModelConfig, NormKind, PositionalKind, MIN_MAX_SEQ};
pub use intervention::{Ablation, AblationMode, InterventionSpec, NoiseSpec, DEFAULT_NOISE_LAYER, MAX_ALPHA};
pub use trace::TraceBundle;
pub use weights::{layout, LayerWeights, NormWeights, Weights};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    config: ModelConfig,
    weights: Weights<Tensor>,
}

/// Logits of a forward pass, `T x V`, plus the trace when requested.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub trace: Option<TraceBundle>,
}

impl Transformer {
    pub fn init(config: ModelConfig, rng: &RngStream) -> Result<Self> {
        config.validate()?;
        let weights = weights::init(&config, rng)?;
        Ok(Self { config, weights })
    }

    pub fn from_weights(config: ModelConfig, weights: Weights<Tensor>) -> Result<Self> {
        config.validate()?;
        weights::check_shapes(&config, &weights)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<Tensor> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Weights<Tensor> {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Places every weight on `g` as a leaf.
    pub(crate) fn bind<S: memlab_tensor::Scalar>(&self, g: &mut Graph<S>, requires_grad: bool) -> Weights<Var> {
        self.weights.map(|_, t| g.leaf(t.cast(), requires_grad))
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::Empty("forward"));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        tokens
            .iter()
            .map(|&t| {
                if (t as usize) < self.config.vocab_size {
                    Ok(t as usize)
                } else {
                    Err(Error::InvalidToken {
                        id: t,
                        vocab: self.config.vocab_size,
                    })
                }
            })
            .collect()
    }

    /// Runs one sequence through the model.
    pub fn forward(&self, tokens: &[TokenId], spec: &InterventionSpec, capture: bool) -> Result<ForwardOutput> {
        spec.validate(&self.config)?;
        let ids = self.check_tokens(tokens)?;
        let mut g = Graph::<f32>::inference();
        let w = self.bind(&mut g, false);
        let rec = forward::record(&mut g, &self.config, &w, &ids, 1, ids.len(), spec)?;
        let trace = capture.then(|| {
            let take = |vs: &[Var]| vs.iter().map(|v| g.value(*v).clone()).collect::<Vec<_>>();
            TraceBundle {
                embed: g.value(rec.embed).clone(),
                residual: take(&rec.residual),
                attn_heads: take(&rec.heads),
                attn_out: take(&rec.attn_out),
                mlp_out: take(&rec.mlp_out),
                final_hidden: g.value(rec.final_hidden).clone(),
                logits: g.value(rec.logits).clone(),
                n_heads: self.config.n_heads,
            }
        });
        Ok(ForwardOutput {
            logits: g.value(rec.logits).clone(),
            trace,
        })
    }

    /// Final normalization and unembedding of a `T x d` hidden state.
    pub fn unembed(&self, hidden: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::inference();
        let w = self.bind(&mut g, false);
        let h = g.constant(hidden.clone());
        let (_, logits) = forward::unembed(&mut g, &self.config, &w, h)?;
        Ok(g.value(logits).clone())
    }

    /// Appends `n` greedily decoded tokens to `ctx` and returns them. The
    /// intervention is applied at every step; noise is redrawn per step.
    pub fn greedy_decode(&self, ctx: &[TokenId], n: usize, spec: &InterventionSpec) -> Result<Vec<TokenId>> {
        if ctx.is_empty() {
            return Err(Error::Empty("greedy_decode context"));
        }
        if ctx.len() + n > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: ctx.len() + n,
                max: self.config.max_seq,
            });
        }
        spec.validate(&self.config)?;
        let mut seq = ctx.to_vec();
        for step in 0..n {
            let out = self.forward(&seq, &spec.for_step(step), false)?;
            let last = out.logits.dims2()?.0 - 1;
            seq.push(out.logits.argmax_row(last) as TokenId);
        }
        Ok(seq.split_off(ctx.len()))
    }

    /// Mean over `examples` of `rms(H_l)` for every layer.
    pub fn residual_norm_profile(&self, examples: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::Empty("residual_norm_profile"));
        }
        let mut sums = vec![0.0; self.config.n_layers];
        for ex in examples {
            let trace = self
                .forward(ex, &InterventionSpec::clean(), true)?
                .trace
                .expect("capture requested");
            for (s, h) in sums.iter_mut().zip(&trace.residual) {
                *s += h.rms()?;
            }
        }
        Ok(sums.into_iter().map(|s| s / examples.len() as f64).collect())
    }

    /// Compares the analytic gradient of the next-token loss on `tokens`
    /// with central differences of step `h`, in 64-bit precision.
    pub fn gradient_check(&self, tokens: &[TokenId], h: f64, floor: f64) -> Result<GradCheckReport> {
        let ids = self.check_tokens(tokens)?;
        if ids.len() < 2 {
            return Err(Error::Empty("gradient_check targets"));
        }
        let seq = ids.len() - 1;
        let (inputs, targets) = (&ids[..seq], &ids[1..]);
        let params: Vec<Tensor<f64>> = self.weights.named().into_iter().map(|(_, t)| t.cast()).collect();
        let report = check_gradients(&params, h, floor, |g, vars| {
            let w = self.weights.with_values(vars.to_vec()).expect("one var per weight");
            let rec = forward::record(g, &self.config, &w, inputs, 1, seq, &InterventionSpec::clean()).map_err(
                |e| match e {
                    Error::Tensor(t) => t,
                    other => TensorError::InvalidArgument {
                        op: "gradient_check",
                        msg: other.to_string(),
                    },
                },
            )?;
            g.cross_entropy(rec.logits, targets)
        })?;
        Ok(report)
    }
}
