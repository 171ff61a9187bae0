// SPDX-License-Identifier: MIT OR Apache-2.0

//! Important-head sets and Table-3-style overlap statistics.

use std::collections::BTreeSet;

use memlab_tensor::RngStream;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::internals::ImportanceMatrix;

pub const DEFAULT_TOP_FRACTION: f64 = 0.2;

/// A set of `(layer, head)` pairs of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadSet {
    pub n_layers: usize,
    pub n_heads: usize,
    pub heads: BTreeSet<(usize, usize)>,
    pub source: String,
}

impl HeadSet {
    pub fn new(
        n_layers: usize,
        n_heads: usize,
        heads: impl IntoIterator<Item = (usize, usize)>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let heads: BTreeSet<_> = heads.into_iter().collect();
        if let Some(bad) = heads.iter().find(|(l, h)| *l >= n_layers || *h >= n_heads) {
            return Err(Error::InvalidInput(format!(
                "head {bad:?} outside a {n_layers}x{n_heads} model"
            )));
        }
        Ok(Self {
            n_layers,
            n_heads,
            heads,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical.
pub fn jaccard(a: &HeadSet, b: &HeadSet) -> Result<f64> {
    if (a.n_layers, a.n_heads) != (b.n_layers, b.n_heads) {
        return Err(Error::ShapeMismatch {
            name: "head set".into(),
            found: vec![b.n_layers, b.n_heads],
            expected: vec![a.n_layers, a.n_heads],
        });
    }
    let union = a.heads.union(&b.heads).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(a.heads.intersection(&b.heads).count() as f64 / union as f64)
}

fn top_count(fraction: f64, total: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction {fraction} outside (0, 1]")));
    }
    // The small slack keeps products like 0.2 * 20 from rounding up to 5.
    Ok(((fraction * total as f64) - 1e-9).ceil().max(1.0) as usize)
}

/// The `ceil(fraction * L * H)` highest-scoring heads. Equal scores are
/// resolved in favour of the lexicographically smaller `(layer, head)`.
pub fn top_fraction(m: &ImportanceMatrix, fraction: f64) -> Result<HeadSet> {
    let total = m.n_layers * m.n_heads;
    let k = top_count(fraction, total)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&i, &j| m.scores[j].total_cmp(&m.scores[i]).then(i.cmp(&j)));
    HeadSet::new(
        m.n_layers,
        m.n_heads,
        order[..k].iter().map(|&i| (i / m.n_heads, i % m.n_heads)),
        m.source.clone(),
    )
}

/// Monte-Carlo mean Jaccard of two independent uniformly random subsets of
/// size `ceil(fraction * total)`.
pub fn random_baseline(total: usize, fraction: f64, trials: usize, rng: &RngStream) -> Result<f64> {
    if total == 0 || trials == 0 {
        return Err(Error::Empty("random_baseline"));
    }
    let k = top_count(fraction, total)?;
    let mut r = rng.rng();
    let mut sum = 0.0;
    for _ in 0..trials {
        let a: BTreeSet<usize> = sample(&mut r, total, k).into_iter().collect();
        let b: BTreeSet<usize> = sample(&mut r, total, k).into_iter().collect();
        let inter = a.intersection(&b).count();
        sum += inter as f64 / (2 * k - inter) as f64;
    }
    Ok(sum / trials as f64)
}

/// Large-population limit `p^2 / (2p - p^2)` of [`random_baseline`].
pub fn random_baseline_closed_form(p: f64) -> f64 {
    p * p / (2.0 * p - p * p)
}

pub const OVERLAP_COLUMNS: [&str; 9] = [
    "mean_jaccard",
    "max_jaccard",
    "random",
    "within_domain_mean",
    "gt30",
    "gt50",
    "gt70",
    "gt90",
    "all",
];

/// One row of the cross-domain overlap table. Share columns are fractions
/// of all heads that appear in the top sets of more than the given share of
/// domains (`all`: every domain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub mean_jaccard: f64,
    /// Maximum over domain pairs.
    pub max_jaccard: f64,
    pub random: f64,
    /// Mean over domains of the mean example-pair Jaccard; absent when no
    /// domain has two examples.
    pub within_domain_mean: Option<f64>,
    pub gt30: f64,
    pub gt50: f64,
    pub gt70: f64,
    pub gt90: f64,
    pub all: f64,
}

impl OverlapRow {
    pub fn csv(&self) -> String {
        let within = self.within_domain_mean.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{}\n{:.6},{:.6},{:.6},{within},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            OVERLAP_COLUMNS.join(","),
            self.mean_jaccard,
            self.max_jaccard,
            self.random,
            self.gt30,
            self.gt50,
            self.gt70,
            self.gt90,
            self.all
        )
    }

    pub fn thresholds(&self) -> [f64; 5] {
        [self.gt30, self.gt50, self.gt70, self.gt90, self.all]
    }
}

fn domain_counts(domains: &[HeadSet]) -> Vec<usize> {
    let (l, h) = (domains[0].n_layers, domains[0].n_heads);
    let mut counts = vec![0usize; l * h];
    for d in domains {
        for &(layer, head) in &d.heads {
            counts[layer * h + head] += 1;
        }
    }
    counts
}

fn check_same_model(sets: &[HeadSet]) -> Result<()> {
    let first = &sets[0];
    if let Some(bad) = sets
        .iter()
        .find(|s| (s.n_layers, s.n_heads) != (first.n_layers, first.n_heads))
    {
        return Err(Error::ShapeMismatch {
            name: format!("head set {}", bad.source),
            found: vec![bad.n_layers, bad.n_heads],
            expected: vec![first.n_layers, first.n_heads],
        });
    }
    Ok(())
}

fn mean_pairwise(sets: &[HeadSet]) -> Result<Option<(f64, f64)>> {
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut n = 0usize;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let v = jaccard(&sets[i], &sets[j])?;
            sum += v;
            max = max.max(v);
            n += 1;
        }
    }
    Ok((n > 0).then(|| (sum / n as f64, max)))
}

/// Builds one overlap row from per-domain top sets and, for each domain,
/// the top sets of its individual examples.
pub fn overlap_table(
    domains: &[HeadSet],
    examples: &[Vec<HeadSet>],
    fraction: f64,
    baseline_trials: usize,
    rng: &RngStream,
) -> Result<OverlapRow> {
    if domains.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "overlap_table needs at least 2 domains, got {}",
            domains.len()
        )));
    }
    check_same_model(domains)?;
    let (mean_jaccard, max_jaccard) = mean_pairwise(domains)?.expect("at least one pair");
    let total = domains[0].total_heads();
    let random = random_baseline(total, fraction, baseline_trials, rng)?;
    let mut within = Vec::new();
    for ex in examples.iter().filter(|e| !e.is_empty()) {
        check_same_model(ex)?;
        if let Some((m, _)) = mean_pairwise(ex)? {
            within.push(m);
        }
    }
    let within_domain_mean = (!within.is_empty()).then(|| within.iter().sum::<f64>() / within.len() as f64);
    let counts = domain_counts(domains);
    let d = domains.len();
    // "More than x of the domains", compared in integers: count * 100 > x * d.
    let share = |pct: usize| counts.iter().filter(|&&c| c * 100 > pct * d).count() as f64 / total as f64;
    Ok(OverlapRow {
        mean_jaccard,
        max_jaccard,
        random,
        within_domain_mean,
        gt30: share(30),
        gt50: share(50),
        gt70: share(70),
        gt90: share(90),
        all: counts.iter().filter(|&&c| c == d).count() as f64 / total as f64,
    })
}

/// For heads shared by more than `threshold` of the domains, the fraction
/// located in each layer. All zeros when no head qualifies.
pub fn shared_head_layer_distribution(domains: &[HeadSet], threshold: f64) -> Result<Vec<f64>> {
    if domains.is_empty() {
        return Err(Error::Empty("shared_head_layer_distribution domains"));
    }
    check_same_model(domains)?;
    let (l, h) = (domains[0].n_layers, domains[0].n_heads);
    let counts = domain_counts(domains);
    let mut per_layer = vec![0.0; l];
    let mut shared = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        if c as f64 > threshold * domains.len() as f64 {
            per_layer[i / h] += 1.0;
            shared += 1;
        }
    }
    if shared > 0 {
        per_layer.iter_mut().for_each(|v| *v /= shared as f64);
    }
    Ok(per_layer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(l: usize, h: usize, heads: &[(usize, usize)]) -> HeadSet {
        HeadSet::new(l, h, heads.iter().copied(), "t").unwrap()
    }

    fn matrix(l: usize, h: usize, scores: Vec<f64>) -> ImportanceMatrix {
        ImportanceMatrix::from_scores(l, h, scores, "m").unwrap()
    }

    #[test]
    fn jaccard_basics() {
        let a = set(2, 2, &[(0, 0), (1, 1)]);
        let b = set(2, 2, &[(0, 1), (1, 0)]);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &set(2, 2, &[(0, 0)])).unwrap(), 0.5);
        assert!(jaccard(&a, &set(3, 2, &[])).is_err());
    }

    #[test]
    fn top_fraction_orders_and_ties() {
        let m = matrix(2, 2, vec![0.1, 0.4, 0.3, 0.2]);
        assert_eq!(
            top_fraction(&m, 0.5).unwrap().heads,
            [(0, 1), (1, 0)].into_iter().collect()
        );
        assert_eq!(top_fraction(&m, 1.0).unwrap().len(), 4);
        let flat = matrix(5, 4, vec![0.5; 20]);
        let t = top_fraction(&flat, 0.2).unwrap();
        assert_eq!(t.heads, [(0, 0), (0, 1), (0, 2), (0, 3)].into_iter().collect());
        assert!(top_fraction(&m, 0.0).is_err());
        assert!(top_fraction(&m, 1.5).is_err());
    }

    #[test]
    fn overlap_identical_domains() {
        let s = set(5, 2, &[(0, 0), (3, 1)]);
        let row = overlap_table(&[s.clone(), s.clone(), s], &[], 0.2, 100, &RngStream::new(1)).unwrap();
        assert_eq!(row.mean_jaccard, 1.0);
        assert_eq!(row.all, 0.2);
        assert_eq!(row.gt90, 0.2);
        assert_eq!(row.within_domain_mean, None);
    }

    #[test]
    fn overlap_disjoint_domains() {
        // Four domains, so a head owned by one domain sits at 25%, below every threshold.
        let sets: Vec<HeadSet> = (0..4).map(|l| set(5, 2, &[(l, 0), (l, 1)])).collect();
        let row = overlap_table(&sets, &[], 0.2, 10, &RngStream::new(1)).unwrap();
        assert_eq!(row.mean_jaccard, 0.0);
        assert_eq!(row.thresholds(), [0.0; 5]);
    }

    #[test]
    fn overlap_one_common_head() {
        let a = set(5, 2, &[(0, 0), (1, 0)]);
        let b = set(5, 2, &[(0, 0), (2, 0)]);
        let c = set(5, 2, &[(0, 0), (3, 0)]);
        let row = overlap_table(&[a, b, c], &[], 0.2, 10, &RngStream::new(1)).unwrap();
        assert_eq!(row.gt90, 0.1);
        assert_eq!(row.all, 0.1);
        assert_eq!(row.gt30, 0.4);
        assert!(overlap_table(&[set(5, 2, &[])], &[], 0.2, 10, &RngStream::new(1)).is_err());
    }

    #[test]
    fn random_baseline_near_closed_form() {
        let mc = random_baseline(1024, 0.2, 1000, &RngStream::new(3)).unwrap();
        assert!((mc - random_baseline_closed_form(0.2)).abs() < 0.01, "{mc}");
    }

    #[test]
    fn shared_layers() {
        let a = set(2, 2, &[(0, 0), (1, 1)]);
        let b = set(2, 2, &[(0, 0), (1, 0)]);
        assert_eq!(
            shared_head_layer_distribution(&[a.clone(), b.clone()], 0.5).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            shared_head_layer_distribution(&[a, b], 0.3).unwrap(),
            vec![1.0 / 3.0, 2.0 / 3.0]
        );
    }
}
