// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest `max_seq` a probe model may have: a 32-token context plus a
/// 32-token continuation.
pub const MIN_MAX_SEQ: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalKind {
    Learned,
    Rotary,
}

/// Architecture of a pre-norm decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    #[serde(default = "default_positional")]
    pub positional: PositionalKind,
}

fn default_norm() -> NormKind {
    NormKind::RmsNorm
}

fn default_positional() -> PositionalKind {
    PositionalKind::Rotary
}

impl ModelConfig {
    /// Rotary/RMS-norm model with `d_ff = 4 * d_model`.
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_ff: 4 * d_model,
            vocab_size,
            max_seq: MIN_MAX_SEQ,
            norm: default_norm(),
            positional: default_positional(),
        }
    }

    pub fn with_recipe(mut self, norm: NormKind, positional: PositionalKind) -> Self {
        self.norm = norm;
        self.positional = positional;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ModelConfig(format!("{name} must be at least 1")));
        }
        let limits = [
            ("n_layers", self.n_layers, 256),
            ("n_heads", self.n_heads, 256),
            ("d_model", self.d_model, 8192),
            ("d_ff", self.d_ff, 32768),
            ("vocab_size", self.vocab_size, 65536),
            ("max_seq", self.max_seq, 8192),
        ];
        if let Some((name, v, max)) = limits.iter().find(|(_, v, max)| v > max) {
            return Err(Error::ModelConfig(format!("{name} {v} exceeds the limit {max}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::ModelConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.positional == PositionalKind::Rotary && !self.head_dim().is_multiple_of(2) {
            return Err(Error::ModelConfig(format!(
                "rotary positions need an even head dimension, got {}",
                self.head_dim()
            )));
        }
        if self.max_seq < MIN_MAX_SEQ {
            return Err(Error::ModelConfig(format!(
                "max_seq {} is below {MIN_MAX_SEQ}",
                self.max_seq
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let norm = if self.norm == NormKind::LayerNorm { 2 * d } else { d };
        let per_layer = 4 * d * d + 2 * d * self.d_ff + 2 * norm;
        let pos = if self.positional == PositionalKind::Learned {
            self.max_seq * d
        } else {
            0
        };
        self.vocab_size * d * 2 + pos + self.n_layers * per_layer + norm
    }

    /// Short label for the norm/positional recipe, e.g. `rms_norm+rotary`.
    pub fn arch_tag(&self) -> String {
        let norm = match self.norm {
            NormKind::LayerNorm => "layer_norm",
            NormKind::RmsNorm => "rms_norm",
        };
        let pos = match self.positional {
            PositionalKind::Learned => "learned",
            PositionalKind::Rotary => "rotary",
        };
        format!("{norm}+{pos}")
    }

    /// Four sizes from roughly 0.1M to 10M parameters.
    pub fn default_ladder(vocab_size: usize) -> Vec<ModelConfig> {
        [(2, 4, 64), (4, 4, 128), (6, 8, 256), (8, 8, 320)]
            .into_iter()
            .map(|(l, h, d)| ModelConfig::new(l, h, d, vocab_size))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_configs() {
        let ok = ModelConfig::new(2, 4, 32, 96);
        assert!(ok.validate().is_ok());
        assert!(ModelConfig { d_model: 30, ..ok }.validate().is_err());
        assert!(ModelConfig { max_seq: 63, ..ok }.validate().is_err());
        assert!(ModelConfig { n_layers: 0, ..ok }.validate().is_err());
        assert!(ModelConfig::new(1, 2, 6, 96).validate().is_err()); // odd rotary head dim
    }

    #[test]
    fn default_ladder_spans_sizes() {
        let counts: Vec<usize> = ModelConfig::default_ladder(96)
            .iter()
            .map(|c| c.param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
        assert!(counts[0] >= 80_000 && counts[0] <= 200_000, "{counts:?}");
        assert!(
            *counts.last().unwrap() >= 8_000_000 && *counts.last().unwrap() <= 12_000_000,
            "{counts:?}"
        );
    }
}
