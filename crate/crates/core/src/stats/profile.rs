// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer-wise importance profiles and cross-model similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::internals::ImportanceMatrix;

/// Length of the relative-depth grid profiles are resampled onto.
pub const PROFILE_GRID: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// One value per layer.
    Raw,
    /// Interpolated onto [`PROFILE_GRID`] points of relative depth.
    DepthNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub source: String,
    /// Mean head importance per layer.
    pub values: Vec<f64>,
}

impl LayerProfile {
    pub fn values(&self, mode: ProfileMode) -> Result<Vec<f64>> {
        match mode {
            ProfileMode::Raw => Ok(self.values.clone()),
            ProfileMode::DepthNormalized => resample(&self.values, PROFILE_GRID),
        }
    }
}

pub fn layer_profile(m: &ImportanceMatrix) -> LayerProfile {
    let values = (0..m.n_layers)
        .map(|l| m.scores[l * m.n_heads..(l + 1) * m.n_heads].iter().sum::<f64>() / m.n_heads as f64)
        .collect();
    LayerProfile {
        source: m.source.clone(),
        values,
    }
}

/// Linear interpolation of `values` onto `n` evenly spaced points spanning
/// the same range. Grid positions are computed with integer arithmetic so
/// endpoints, and every point when `n == values.len()`, are copied exactly.
pub fn resample(values: &[f64], n: usize) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a profile needs at least 2 layers, got {}",
            values.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("grid of {n} points")));
    }
    let span = values.len() - 1;
    let den = n - 1;
    Ok((0..n)
        .map(|i| {
            let num = i * span;
            let (idx, rem) = (num / den, num % den);
            if rem == 0 {
                values[idx]
            } else {
                let t = rem as f64 / den as f64;
                values[idx] + t * (values[idx + 1] - values[idx])
            }
        })
        .collect())
}

/// Cosine similarity; 1 for bitwise-equal inputs, 0 when exactly one side is
/// the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a == b {
        return 1.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Pairwise cosine similarity of depth-normalized profiles.
pub fn profile_similarity(profiles: &[LayerProfile]) -> Result<Vec<Vec<f64>>> {
    if profiles.len() < 2 {
        return Err(Error::InvalidInput(
            "profile_similarity needs at least 2 profiles".into(),
        ));
    }
    let grids = profiles
        .iter()
        .map(|p| p.values(ProfileMode::DepthNormalized))
        .collect::<Result<Vec<_>>>()?;
    Ok(grids
        .iter()
        .enumerate()
        .map(|(i, a)| {
            grids
                .iter()
                .enumerate()
                .map(|(j, b)| if i == j { 1.0 } else { cosine(a, b) })
                .collect()
        })
        .collect())
}
