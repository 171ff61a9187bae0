// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{Probe, PROBE_LEN};
use crate::corpus::Category;
use crate::error::{Error, Result};
use crate::model::TokenId;

/// Outcome of one greedy extraction. Serialized field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemRecord {
    pub id: usize,
    pub domain: String,
    pub category: Category,
    pub repetitions: usize,
    pub alpha: f64,
    /// Number of positions where `generated` equals `gold`.
    pub matched: usize,
    pub avg_frequency: Option<f64>,
    pub context: Vec<TokenId>,
    pub gold: Vec<TokenId>,
    pub generated: Vec<TokenId>,
}

impl MemRecord {
    pub fn new(probe: &Probe, generated: Vec<TokenId>, alpha: f64) -> Self {
        let matched = generated.iter().zip(&probe.gold).filter(|(a, b)| a == b).count();
        Self {
            id: probe.id,
            domain: probe.domain.clone(),
            category: probe.category,
            repetitions: probe.repetitions,
            alpha,
            matched,
            avg_frequency: probe.avg_frequency,
            context: probe.context.clone(),
            gold: probe.gold.clone(),
            generated,
        }
    }

    pub fn score(&self) -> f64 {
        self.matched as f64 / PROBE_LEN as f64
    }

    pub fn is_memorized(&self) -> bool {
        self.matched == PROBE_LEN
    }

    pub fn is_unmemorized(&self) -> bool {
        self.matched == 0
    }

    pub fn is_half_memorized(&self) -> bool {
        2 * self.matched == PROBE_LEN
    }

    pub fn probe(&self) -> Probe {
        Probe {
            id: self.id,
            domain: self.domain.clone(),
            category: self.category,
            repetitions: self.repetitions,
            context: self.context.clone(),
            gold: self.gold.clone(),
            avg_frequency: self.avg_frequency,
        }
    }

    fn validate(&self) -> Result<()> {
        for (what, seq) in [
            ("context", &self.context),
            ("gold", &self.gold),
            ("generated", &self.generated),
        ] {
            if seq.len() != PROBE_LEN {
                return Err(Error::InvalidInput(format!("{what} has {} tokens", seq.len())));
            }
        }
        let matched = self.generated.iter().zip(&self.gold).filter(|(a, b)| a == b).count();
        if matched != self.matched {
            return Err(Error::InvalidInput(format!(
                "matched is {} but generated agrees with gold at {matched} positions",
                self.matched
            )));
        }
        if !(0.0..=crate::model::MAX_ALPHA).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!("alpha {} out of range", self.alpha)));
        }
        Ok(())
    }
}

/// One JSON object per line.
pub fn write_records(records: &[MemRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<MemRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let r: MemRecord = serde_json::from_str(line).map_err(|e| Error::Corrupt {
                what: "record dump",
                msg: format!("line {}: {e}", n + 1),
            })?;
            r.validate().map_err(|e| Error::Corrupt {
                what: "record dump",
                msg: format!("line {}: {e}", n + 1),
            })?;
            Ok(r)
        })
        .collect()
}
