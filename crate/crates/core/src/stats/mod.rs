// SPDX-License-Identifier: MIT OR Apache-2.0

//! Distribution and set statistics over metric dumps.

mod heads;
mod profile;

pub use heads::{
    jaccard, overlap_table, random_baseline, random_baseline_closed_form, shared_head_layer_distribution, top_fraction,
    HeadSet, OverlapRow, DEFAULT_TOP_FRACTION, OVERLAP_COLUMNS,
};
pub use profile::{cosine, layer_profile, profile_similarity, resample, LayerProfile, ProfileMode, PROFILE_GRID};

use crate::error::{Error, Result};

/// Exact Wasserstein-1 distance between two empirical distributions on
/// `[0, 1]`: the integral of `|F_a - F_b|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1 samples"));
    }
    if let Some(v) = a.iter().chain(b).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("sample {v} outside [0, 1]")));
    }
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut points: Vec<f64> = xs.iter().chain(&ys).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for w in points.windows(2) {
        while i < xs.len() && xs[i] <= w[0] {
            i += 1;
        }
        while j < ys.len() && ys[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}
