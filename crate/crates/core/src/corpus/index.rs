// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact token-frequency index.

use super::Corpus;
use crate::model::TokenId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyIndex {
    token_counts: Vec<u64>,
    corpus_total: u64,
}

impl FrequencyIndex {
    pub fn build(corpus: &Corpus) -> Self {
        let mut token_counts = vec![0u64; corpus.vocab_size];
        for &t in corpus.lines.iter().flatten() {
            let t = t as usize;
            if t >= token_counts.len() {
                token_counts.resize(t + 1, 0);
            }
            token_counts[t] += 1;
        }
        let corpus_total = token_counts.iter().sum();
        Self {
            token_counts,
            corpus_total,
        }
    }

    pub fn token_counts(&self) -> &[u64] {
        &self.token_counts
    }

    pub fn corpus_total(&self) -> u64 {
        self.corpus_total
    }

    /// Occurrences of `t`; ids never seen count 0.
    pub fn token_frequency(&self, t: TokenId) -> u64 {
        self.token_counts.get(t as usize).copied().unwrap_or(0)
    }

    /// Mean token frequency over `seq`; 0 for an empty sequence.
    pub fn avg_sequence_frequency(&self, seq: &[TokenId]) -> f64 {
        if seq.is_empty() {
            return 0.0;
        }
        seq.iter().map(|&t| self.token_frequency(t) as f64).sum::<f64>() / seq.len() as f64
    }

    /// `avg_sequence_frequency / corpus_total`, in `[0, 1]`.
    pub fn normalized_frequency(&self, seq: &[TokenId]) -> f64 {
        if self.corpus_total == 0 {
            return 0.0;
        }
        self.avg_sequence_frequency(seq) / self.corpus_total as f64
    }
}

/// Brute-force count of (possibly overlapping) occurrences of `needle`
/// within corpus lines.
pub fn count_occurrences(corpus: &Corpus, needle: &[TokenId]) -> usize {
    if needle.is_empty() {
        return 0;
    }
    corpus
        .lines
        .iter()
        .map(|l| l.windows(needle.len()).filter(|w| *w == needle).count())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aab() -> Corpus {
        Corpus {
            vocab_size: 4,
            lines: vec![vec![1, 1, 2]],
        }
    }

    #[test]
    fn hand_counts() {
        let idx = FrequencyIndex::build(&aab());
        assert_eq!(idx.token_frequency(1), 2);
        assert_eq!(idx.token_frequency(2), 1);
        assert_eq!(idx.token_frequency(3), 0);
        assert_eq!(idx.token_frequency(1000), 0);
        assert_eq!(idx.avg_sequence_frequency(&[1, 2]), 1.5);
        assert_eq!(idx.normalized_frequency(&[1, 2]), 0.5);
        assert_eq!(idx.token_counts().iter().sum::<u64>(), idx.corpus_total());
    }

    #[test]
    fn brute_scan() {
        let c = aab();
        assert_eq!(count_occurrences(&c, &[1]), 2);
        assert_eq!(count_occurrences(&c, &[1, 1]), 1);
        assert_eq!(count_occurrences(&c, &[2, 1]), 0);
    }
}
