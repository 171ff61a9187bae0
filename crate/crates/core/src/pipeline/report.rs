// SPDX-License-Identifier: MIT OR Apache-2.0

//! Assembles the figure and table data emitted by earlier stages into one
//! report directory.

use std::fmt::Write as _;

use super::config::ExperimentConfig;
use super::stages::{self, matched_counts, read_corpus, read_index, read_scores};
use super::{Stage, StageCtx};
use crate::corpus::Category;
use crate::error::Result;
use crate::memscore::{category_rates, memorization_rate, read_records, MemRecord, PROBE_LEN};

pub(crate) const REPORT: &str = "report/report.md";
pub(crate) const RATE_VS_SIZE: &str = "report/rate_vs_size.csv";
pub(crate) const SCORE_HIST: &str = "report/score_hist.csv";
pub(crate) const COMPRESSION_HIST: &str = "report/compression_hist.csv";
pub(crate) const CATEGORIES: &str = "report/categories.csv";
pub(crate) const FREQUENCY: &str = "report/frequency.csv";

/// Upstream artifacts copied into the report when present.
const OPTIONAL: [(Stage, &str, &str); 10] = [
    (Stage::Noise, stages::W1, "W1 distance and rate per noise level"),
    (
        Stage::Noise,
        stages::SIMILARITY,
        "Layer-wise cosine similarity, clean vs noised",
    ),
    (Stage::Noise, stages::RESIDUAL_NORM, "Residual stream RMS per layer"),
    (Stage::Lens, stages::LENS, "Gold-token probability under the logit lens"),
    (
        Stage::Stats,
        stages::SHARED_LAYERS,
        "Layer distribution of shared heads",
    ),
    (Stage::Stats, stages::PROFILES, "Mean head importance per layer"),
    (
        Stage::Stats,
        stages::PROFILES_GRID,
        "Depth-normalized importance profile",
    ),
    (Stage::Stats, stages::HEATMAP, "Layer-profile cosine similarity"),
    (Stage::Stats, stages::BASELINE, "Random top-k Jaccard baseline"),
    (Stage::Compress, stages::COMPRESS, "Per-sequence compression"),
];

pub(super) fn report(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let index = read_index(ctx)?;
    let (_, manifest) = read_corpus(ctx)?;
    let total = manifest.total_tokens as f64;
    let mut all = Vec::new();
    for entry in &index.models {
        all.push(read_scores(ctx, &entry.id)?);
    }

    let mut rate = String::from("model,family,params,arch,final_loss,rate,mean_score\n");
    let mut hist = String::from("model,matched,score,count,density\n");
    let mut cats = String::from("model,alpha,category,rate\n");
    let mut freq = String::from("model,cohort,bin,lo,hi,count,density\n");
    for (entry, records) in index.models.iter().zip(&all) {
        let mean = records.iter().map(MemRecord::score).sum::<f64>() / records.len().max(1) as f64;
        writeln!(
            rate,
            "{},{},{},{},{:.6},{:.6},{mean:.6}",
            entry.id,
            entry.family,
            entry.param_count,
            entry.arch_tag,
            entry.final_loss,
            memorization_rate(records)?
        )
        .expect("string write");
        let counts = matched_counts(records);
        for (m, c) in counts.iter().enumerate() {
            let density = *c as f64 / records.len().max(1) as f64;
            writeln!(
                hist,
                "{},{m},{:.6},{c},{density:.6}",
                entry.id,
                m as f64 / PROBE_LEN as f64
            )
            .expect("string write");
        }
        category_rows(&mut cats, &entry.id, 0.0, records);
        frequency_rows(&mut freq, &entry.id, records, total, cfg.analysis.frequency_bins);
    }

    let probe = cfg.probe_model();
    for &alpha in cfg.analysis.alphas.iter().filter(|a| **a > 0.0) {
        let rel = stages::noised(alpha);
        if ctx.has(Stage::Noise, &rel) {
            let records = read_records(&ctx.read_text(Stage::Noise, &rel)?)?;
            category_rows(&mut cats, &probe, alpha, &records);
        }
    }

    let mut comp = String::from("k,ratio,count\n");
    let mut comp_rows = 0;
    if ctx.has(Stage::Compress, stages::COMPRESS) {
        let text = ctx.read_text(Stage::Compress, stages::COMPRESS)?;
        let mut counts = vec![0u64; PROBE_LEN + 1];
        for line in text.lines().skip(1) {
            if let Some(k) = line.split(',').nth(6).and_then(|k| k.parse::<usize>().ok()) {
                if k <= PROBE_LEN {
                    counts[k] += 1;
                    comp_rows += 1;
                }
            }
        }
        for (k, c) in counts.iter().enumerate().skip(1) {
            writeln!(comp, "{k},{:.6},{c}", k as f64 / PROBE_LEN as f64).expect("string write");
        }
    }

    ctx.write(RATE_VS_SIZE, rate.as_bytes())?;
    ctx.write(SCORE_HIST, hist.as_bytes())?;
    ctx.write(CATEGORIES, cats.as_bytes())?;
    ctx.write(FREQUENCY, freq.as_bytes())?;
    ctx.write(COMPRESSION_HIST, comp.as_bytes())?;

    let mut md = String::from("# Memorization report\n\n");
    let flags = &ctx.manifest.flags;
    writeln!(
        md,
        "Seed `{}`, probe model `{probe}`, {} planted sequences, {} corpus tokens.\n",
        cfg.seed,
        manifest.sequences.len(),
        manifest.total_tokens
    )
    .expect("string write");
    md.push_str("## Settings\n\n");
    for (k, v) in [
        ("compression side", flags.compression_side.as_str()),
        ("head importance", flags.importance.as_str()),
        ("ablation site", flags.ablation_site.as_str()),
        ("similarity region", flags.similarity_region.as_str()),
        ("similarity site", flags.similarity_site.as_str()),
        ("noise site", flags.noise_site.as_str()),
        ("noise resampling", flags.noise_resampling.as_str()),
        ("frequency divisor", flags.frequency_divisor.as_str()),
        ("rng", flags.rng_algorithm.as_str()),
    ] {
        writeln!(md, "- {k}: {v}").expect("string write");
    }
    writeln!(md, "- noise layer: {}", flags.noise_layer).expect("string write");
    section(&mut md, "Memorization rate by model size", RATE_VS_SIZE, &rate);
    section(&mut md, "Memorization by domain category", CATEGORIES, &cats);
    if comp_rows > 0 {
        section(&mut md, "Compression ratio distribution", COMPRESSION_HIST, &comp);
    }
    writeln!(
        md,
        "\nScore histogram: `{SCORE_HIST}`. Frequency curves: `{FREQUENCY}`."
    )
    .expect("string write");
    for (stage, rel, title) in OPTIONAL {
        if ctx.has(stage, rel) {
            let text = ctx.read_text(stage, rel)?;
            section(&mut md, title, rel, &text);
        }
    }
    for entry in &index.models {
        let rel = stages::overlap(&entry.id);
        if ctx.has(Stage::Stats, &rel) {
            let text = ctx.read_text(Stage::Stats, &rel)?;
            section(&mut md, &format!("Top-head overlap, {}", entry.id), &rel, &text);
        }
    }
    ctx.write(REPORT, md.as_bytes())
}

fn section(md: &mut String, title: &str, rel: &str, csv: &str) {
    writeln!(md, "\n## {title}\n\nSource: `{rel}`\n\n```csv\n{}```", csv).expect("string write");
}

fn category_rows(out: &mut String, model: &str, alpha: f64, records: &[MemRecord]) {
    let rates = category_rates(records);
    for c in Category::ALL {
        if let Some(r) = rates.get(&c) {
            writeln!(out, "{model},{alpha:.2},{c},{r:.6}").expect("string write");
        }
    }
}

/// Histogram of normalized average token frequency for the memorized,
/// half-memorized and unmemorized cohorts, on shared equal-width bins.
fn frequency_rows(out: &mut String, model: &str, records: &[MemRecord], total: f64, bins: usize) {
    let pairs: Vec<(&MemRecord, f64)> = records
        .iter()
        .filter_map(|r| r.avg_frequency.map(|f| (r, f / total.max(1.0))))
        .collect();
    let norm: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (lo, hi) = norm
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if norm.is_empty() || bins == 0 {
        return;
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let cohorts: [(&str, fn(&MemRecord) -> bool); 3] = [
        ("memorized", MemRecord::is_memorized),
        ("half", MemRecord::is_half_memorized),
        ("unmemorized", MemRecord::is_unmemorized),
    ];
    for (name, pick) in cohorts {
        let mut counts = vec![0u64; bins];
        for (r, v) in &pairs {
            if pick(r) {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        let n: u64 = counts.iter().sum();
        for (b, c) in counts.iter().enumerate() {
            let density = if n == 0 { 0.0 } else { *c as f64 / n as f64 };
            let a = lo + b as f64 * width;
            writeln!(out, "{model},{name},{b},{a:.9},{:.9},{c},{density:.6}", a + width).expect("string write");
        }
    }
}
