// SPDX-License-Identifier: MIT OR Apache-2.0

use memlab_tensor::RngStream;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Largest relative noise level accepted by an intervention.
pub const MAX_ALPHA: f64 = 0.5;

/// Noise goes into the first layer's residual output unless configured otherwise.
pub const DEFAULT_NOISE_LAYER: usize = 0;

/// Relative Gaussian noise on one layer's residual-stream output:
/// `H + eps`, `eps ~ N(0, (alpha * rms(H))^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub layer: usize,
    pub rng: RngStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Replace the head's output with the mean of the other heads in its layer.
    MeanOfOthers,
    /// Replace the head's output with itself (identity control).
    SelfControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub layer: usize,
    pub head: usize,
    pub mode: AblationMode,
}

/// Interventions applied during one forward pass (or every step of a decode).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InterventionSpec {
    pub noise: Option<NoiseSpec>,
    pub ablation: Option<Ablation>,
}

impl InterventionSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn noise(alpha: f64, layer: usize, rng: RngStream) -> Self {
        Self {
            noise: Some(NoiseSpec { alpha, layer, rng }),
            ablation: None,
        }
    }

    pub fn ablate(layer: usize, head: usize, mode: AblationMode) -> Self {
        Self {
            noise: None,
            ablation: Some(Ablation { layer, head, mode }),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.noise.is_none() && self.ablation.is_none()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if let Some(n) = &self.noise {
            if !(0.0..=MAX_ALPHA).contains(&n.alpha) {
                return Err(Error::Intervention(format!(
                    "alpha {} outside [0, {MAX_ALPHA}]",
                    n.alpha
                )));
            }
            if n.layer >= cfg.n_layers {
                return Err(Error::Intervention(format!(
                    "noise layer {} out of range for {} layers",
                    n.layer, cfg.n_layers
                )));
            }
        }
        if let Some(a) = &self.ablation {
            if a.layer >= cfg.n_layers || a.head >= cfg.n_heads {
                return Err(Error::Intervention(format!(
                    "head ({}, {}) out of range for {}x{} heads",
                    a.layer, a.head, cfg.n_layers, cfg.n_heads
                )));
            }
            if a.mode == AblationMode::MeanOfOthers && cfg.n_heads < 2 {
                return Err(Error::Intervention(
                    "mean-of-others ablation needs at least two heads".into(),
                ));
            }
        }
        Ok(())
    }

    /// The intervention used at decode step `step`: noise is redrawn from a fresh
    /// substream each step, ablation is unchanged.
    pub fn for_step(&self, step: usize) -> Self {
        Self {
            noise: self.noise.map(|n| NoiseSpec {
                rng: n.rng.substream(step as u64),
                ..n
            }),
            ablation: self.ablation,
        }
    }
}
