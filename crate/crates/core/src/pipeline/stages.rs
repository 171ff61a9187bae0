// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;

use memlab_tensor::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{report, Stage, StageCtx};
use crate::corpus::{generate_corpus, Corpus, CorpusManifest, FrequencyIndex};
use crate::error::{Error, Result};
use crate::internals::{domain_importance, lens_curve, similarity_profile, Cohort, DomainImportance, ImportanceMatrix};
use crate::memscore::{
    compression_ratio, extraction_pattern, read_records, score_all, write_records, MemRecord, Probe, PROBE_LEN,
};
use crate::model::{InterventionSpec, ModelConfig, TokenId};
use crate::stats::{
    layer_profile, overlap_table, profile_similarity, random_baseline, random_baseline_closed_form, resample,
    shared_head_layer_distribution, top_fraction, wasserstein1, HeadSet, LayerProfile, PROFILE_GRID,
};
use crate::trainer::{train, Checkpoint};

pub(crate) const CORPUS: &str = "corpus/corpus.txt";
pub(crate) const CORPUS_MANIFEST: &str = "corpus/manifest.toml";
pub(crate) const MODELS_INDEX: &str = "models/index.toml";

pub(crate) fn ckpt(id: &str) -> String {
    format!("models/{id}.ckpt")
}
pub(crate) fn scores(id: &str) -> String {
    format!("scores/{id}.jsonl")
}
pub(crate) fn noised(alpha: f64) -> String {
    format!("noise/alpha-{alpha:.2}.jsonl")
}
pub(crate) fn ablation(id: &str) -> String {
    format!("ablate/{id}.json")
}
pub(crate) fn overlap(id: &str) -> String {
    format!("stats/overlap-{id}.csv")
}
pub(crate) const COMPRESS: &str = "compress/compression.csv";
pub(crate) const W1: &str = "noise/w1.csv";
pub(crate) const SIMILARITY: &str = "noise/similarity.csv";
pub(crate) const RESIDUAL_NORM: &str = "noise/residual_norm.csv";
pub(crate) const LENS: &str = "lens/curves.csv";
pub(crate) const SHARED_LAYERS: &str = "stats/shared_layers.csv";
pub(crate) const PROFILES: &str = "stats/layer_profiles.csv";
pub(crate) const PROFILES_GRID: &str = "stats/layer_profiles_grid.csv";
pub(crate) const HEATMAP: &str = "stats/heatmap.csv";
pub(crate) const BASELINE: &str = "stats/random_baseline.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ModelEntry {
    pub id: String,
    pub family: String,
    pub config: ModelConfig,
    pub param_count: usize,
    pub arch_tag: String,
    pub steps: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ModelsIndex {
    pub models: Vec<ModelEntry>,
}

pub(super) fn run(stage: Stage, cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    match stage {
        Stage::GenCorpus => gen_corpus(cfg, ctx),
        Stage::Train => train_models(cfg, ctx),
        Stage::Score => score(cfg, ctx),
        Stage::Compress => compress(cfg, ctx),
        Stage::Noise => noise(cfg, ctx),
        Stage::Lens => lens(cfg, ctx),
        Stage::Ablate => ablate(cfg, ctx),
        Stage::Stats => stats(cfg, ctx),
        Stage::Report => report::report(cfg, ctx),
    }
}

fn gen_corpus(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let domains = cfg.domains()?;
    let plan = cfg.plant_plan(&domains)?;
    let (corpus, manifest) = generate_corpus(&domains, &plan, cfg.seed)?;
    ctx.write(CORPUS, corpus.to_text().as_bytes())?;
    ctx.write(CORPUS_MANIFEST, manifest.to_toml()?.as_bytes())
}

pub(crate) fn read_corpus(ctx: &mut StageCtx) -> Result<(Corpus, CorpusManifest)> {
    let corpus = Corpus::parse(&ctx.read_text(Stage::GenCorpus, CORPUS)?)?;
    let manifest = CorpusManifest::from_toml(&ctx.read_text(Stage::GenCorpus, CORPUS_MANIFEST)?)?;
    manifest.check_against(&corpus)?;
    Ok((corpus, manifest))
}

fn train_models(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (corpus, _) = read_corpus(ctx)?;
    let mut index = ModelsIndex { models: Vec::new() };
    let mut family_of = BTreeMap::new();
    for f in &cfg.families {
        for i in 0..f.sizes.len() {
            family_of.insert(f.model_id(i), f.name.clone());
        }
    }
    let jobs = cfg.models();
    let outcomes = jobs
        .par_iter()
        .map(|(_, model)| train(&cfg.train_config(model)?, &corpus))
        .collect::<Result<Vec<_>>>()?;
    for ((id, model), out) in jobs.iter().zip(outcomes) {
        ctx.write(&ckpt(id), &out.checkpoint.to_bytes())?;
        ctx.write(&format!("models/{id}.loss.csv"), out.loss_csv().as_bytes())?;
        index.models.push(ModelEntry {
            id: id.clone(),
            family: family_of[id].clone(),
            config: *model,
            param_count: model.param_count(),
            arch_tag: model.arch_tag(),
            steps: out.losses.len(),
            final_loss: out.final_loss(20),
        });
    }
    let text = toml::to_string(&index).map_err(|e| Error::InvalidInput(e.to_string()))?;
    ctx.write(MODELS_INDEX, text.as_bytes())
}

pub(crate) fn read_index(ctx: &mut StageCtx) -> Result<ModelsIndex> {
    toml::from_str(&ctx.read_text(Stage::Train, MODELS_INDEX)?).map_err(|e| Error::Corrupt {
        what: "models index",
        msg: e.to_string(),
    })
}

fn load_model(ctx: &mut StageCtx, id: &str) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&ctx.read(Stage::Train, &ckpt(id))?)
}

pub(crate) fn read_scores(ctx: &mut StageCtx, id: &str) -> Result<Vec<MemRecord>> {
    read_records(&ctx.read_text(Stage::Score, &scores(id))?)
}

fn score(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (corpus, manifest) = read_corpus(ctx)?;
    let index = FrequencyIndex::build(&corpus);
    let probes = Probe::from_manifest(&manifest, Some(&index))?;
    for entry in read_index(ctx)?.models {
        let model = load_model(ctx, &entry.id)?.model;
        let records = score_all(&model, &probes, 0.0, cfg.analysis.noise_layer, cfg.seed)?;
        ctx.write(&scores(&entry.id), write_records(&records).as_bytes())?;
    }
    Ok(())
}

/// Clean records of the probe model, capped in id order.
fn probe_records(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<(String, Vec<MemRecord>)> {
    let id = cfg.probe_model();
    let mut records = read_scores(ctx, &id)?;
    records.sort_by_key(|r| r.id);
    if let Some(cap) = cfg.analysis.max_probes {
        records.truncate(cap);
    }
    Ok((id, records))
}

fn compress(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (id, records) = probe_records(cfg, ctx)?;
    let model = load_model(ctx, &id)?.model;
    let side = cfg.analysis.compression_side;
    let exhaustive = cfg.analysis.exhaustive_compression;
    let memorized: Vec<&MemRecord> = records.iter().filter(|r| r.is_memorized()).collect();
    let rows = memorized
        .par_iter()
        .map(|r| {
            let c = compression_ratio(&model, r, side, &InterventionSpec::clean())?;
            let non_monotone = if exhaustive {
                let pattern = extraction_pattern(&model, r, side, &InterventionSpec::clean())?;
                Some(pattern[c.k..].iter().any(|ok| !ok))
            } else {
                None
            };
            Ok((r, c, non_monotone))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("model,id,domain,category,repetitions,side,k,ratio,non_monotone\n");
    for (r, c, nm) in rows {
        let nm = nm.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{id},{},{},{},{},{},{},{:.6},{nm}",
            r.id,
            r.domain,
            r.category,
            r.repetitions,
            side.as_str(),
            c.k,
            c.ratio
        )
        .expect("string write");
    }
    ctx.write(COMPRESS, out.as_bytes())
}

fn full_sequences(records: &[MemRecord]) -> Vec<Vec<TokenId>> {
    records
        .iter()
        .map(|r| {
            let mut s = r.context.clone();
            s.extend_from_slice(&r.gold);
            s
        })
        .collect()
}

fn noise(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (id, clean) = probe_records(cfg, ctx)?;
    if clean.is_empty() {
        return Err(Error::Empty("noise probes"));
    }
    let model = load_model(ctx, &id)?.model;
    let layer = cfg.analysis.noise_layer;
    let probes: Vec<Probe> = clean.iter().map(MemRecord::probe).collect();
    let base: Vec<f64> = clean.iter().map(MemRecord::score).collect();
    let mut w1 = String::from("model,alpha,w1,rate,mean_score,structural,semi_structural,free_text\n");
    let mut sim = String::from("model,alpha,cohort,layer,attn_mean,attn_var,mlp_mean,mlp_var,samples\n");
    for &alpha in &cfg.analysis.alphas {
        let records = if alpha == 0.0 {
            clean.clone()
        } else {
            score_all(&model, &probes, alpha, layer, cfg.seed)?
        };
        if alpha > 0.0 {
            ctx.write(&noised(alpha), write_records(&records).as_bytes())?;
        }
        let scores: Vec<f64> = records.iter().map(MemRecord::score).collect();
        let rates = crate::memscore::category_rates(&records);
        let rate_of = |c| rates.get(&c).map(|v: &f64| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            w1,
            "{id},{alpha:.2},{:.6},{:.6},{:.6},{},{},{}",
            wasserstein1(&base, &scores)?,
            crate::memscore::memorization_rate(&records)?,
            scores.iter().sum::<f64>() / scores.len() as f64,
            rate_of(crate::corpus::Category::Structural),
            rate_of(crate::corpus::Category::SemiStructural),
            rate_of(crate::corpus::Category::FreeText),
        )
        .expect("string write");
        for cohort in [Cohort::Memorized, Cohort::Unmemorized] {
            let members = cohort.select(&clean);
            if members.is_empty() {
                continue;
            }
            let p = similarity_profile(&model, &members, cohort, alpha, layer, cfg.seed)?;
            for l in 0..p.attn_mean.len() {
                writeln!(
                    sim,
                    "{id},{alpha:.2},{},{l},{:.6},{:.6},{:.6},{:.6},{}",
                    cohort.as_str(),
                    p.attn_mean[l],
                    p.attn_var[l],
                    p.mlp_mean[l],
                    p.mlp_var[l],
                    p.samples
                )
                .expect("string write");
            }
        }
    }
    ctx.write(W1, w1.as_bytes())?;
    ctx.write(SIMILARITY, sim.as_bytes())?;
    let norms = model.residual_norm_profile(&full_sequences(&clean))?;
    let mut rn = String::from("model,layer,rms,noise_layer\n");
    for (l, v) in norms.iter().enumerate() {
        writeln!(rn, "{id},{l},{v:.6},{}", l == layer).expect("string write");
    }
    ctx.write(RESIDUAL_NORM, rn.as_bytes())
}

fn lens(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let (id, clean) = probe_records(cfg, ctx)?;
    let model = load_model(ctx, &id)?.model;
    let mut out = String::from("model,cohort,layer,gold_prob,samples\n");
    for cohort in [Cohort::Memorized, Cohort::Unmemorized] {
        let members = cohort.select(&clean);
        if members.is_empty() {
            continue;
        }
        let curve = lens_curve(&model, &members, cohort)?;
        for (l, p) in curve.per_layer.iter().enumerate() {
            writeln!(out, "{id},{},{},{p:.6},{}", cohort.as_str(), l + 1, curve.samples).expect("string write");
        }
        writeln!(
            out,
            "{id},{},output,{:.6},{}",
            cohort.as_str(),
            curve.output,
            curve.samples
        )
        .expect("string write");
    }
    ctx.write(LENS, out.as_bytes())
}

fn ablate(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    for entry in read_index(ctx)?.models {
        let records = read_scores(ctx, &entry.id)?;
        let model = load_model(ctx, &entry.id)?.model;
        let mut by_domain: BTreeMap<&str, Vec<&MemRecord>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.is_memorized()) {
            by_domain.entry(&r.domain).or_default().push(r);
        }
        let results: Vec<DomainImportance> = if entry.config.n_heads < 2 {
            Vec::new()
        } else {
            by_domain
                .iter()
                .map(|(d, rs)| domain_importance(&model, d, rs, cfg.sample_cap(entry.param_count)))
                .collect::<Result<_>>()?
        };
        let json = serde_json::to_string(&results).map_err(|e| Error::InvalidInput(e.to_string()))?;
        ctx.write(&ablation(&entry.id), json.as_bytes())?;
        let mut csv = String::from("domain,layer,head,importance,match_fraction,samples\n");
        for d in &results {
            for line in d.mean.csv().lines().skip(1) {
                writeln!(csv, "{},{line},{}", d.domain, d.mean.samples).expect("string write");
            }
        }
        ctx.write(&format!("ablate/{}.csv", entry.id), csv.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_ablation(ctx: &mut StageCtx, id: &str) -> Result<Vec<DomainImportance>> {
    serde_json::from_str(&ctx.read_text(Stage::Ablate, &ablation(id))?).map_err(|e| Error::Corrupt {
        what: "ablation dump",
        msg: e.to_string(),
    })
}

fn stats(cfg: &ExperimentConfig, ctx: &mut StageCtx) -> Result<()> {
    let a = &cfg.analysis;
    let baseline_rng = RngStream::new(cfg.seed).named("baseline");
    let mut shared = String::from("model,layer,fraction\n");
    let mut raw = String::from("model,layer,importance\n");
    let mut grid = String::from("model,point,importance\n");
    let mut baseline = String::from("model,total_heads,top_fraction,monte_carlo,closed_form\n");
    let mut profiles: Vec<LayerProfile> = Vec::new();
    for entry in read_index(ctx)?.models {
        let domains = read_ablation(ctx, &entry.id)?;
        if domains.is_empty() {
            continue;
        }
        let sets = domains
            .iter()
            .map(|d| top_fraction(&d.mean, a.top_fraction))
            .collect::<Result<Vec<HeadSet>>>()?;
        let examples = domains
            .iter()
            .map(|d| d.examples.iter().map(|m| top_fraction(m, a.top_fraction)).collect())
            .collect::<Result<Vec<Vec<HeadSet>>>>()?;
        if sets.len() >= 2 {
            let row = overlap_table(&sets, &examples, a.top_fraction, a.baseline_trials, &baseline_rng)?;
            ctx.write(&overlap(&entry.id), row.csv().as_bytes())?;
            for (l, v) in shared_head_layer_distribution(&sets, a.shared_threshold)?
                .iter()
                .enumerate()
            {
                writeln!(shared, "{},{l},{v:.6}", entry.id).expect("string write");
            }
        }
        let total = entry.config.n_layers * entry.config.n_heads;
        writeln!(
            baseline,
            "{},{total},{},{:.6},{:.6}",
            entry.id,
            a.top_fraction,
            random_baseline(total, a.top_fraction, a.baseline_trials, &baseline_rng)?,
            random_baseline_closed_form(a.top_fraction)
        )
        .expect("string write");
        let means: Vec<ImportanceMatrix> = domains.iter().map(|d| d.mean.clone()).collect();
        let mut profile = layer_profile(&ImportanceMatrix::mean(&means, entry.id.clone())?);
        profile.source = entry.id.clone();
        for (l, v) in profile.values.iter().enumerate() {
            writeln!(raw, "{},{l},{v:.6}", entry.id).expect("string write");
        }
        if profile.values.len() >= 2 {
            for (i, v) in resample(&profile.values, PROFILE_GRID)?.iter().enumerate() {
                writeln!(grid, "{},{i},{v:.6}", entry.id).expect("string write");
            }
            profiles.push(profile);
        }
    }
    ctx.write(SHARED_LAYERS, shared.as_bytes())?;
    ctx.write(PROFILES, raw.as_bytes())?;
    ctx.write(PROFILES_GRID, grid.as_bytes())?;
    ctx.write(BASELINE, baseline.as_bytes())?;
    let mut heat = String::from("model");
    for p in &profiles {
        heat.push(',');
        heat.push_str(&p.source);
    }
    heat.push('\n');
    if profiles.len() >= 2 {
        for (p, row) in profiles.iter().zip(profile_similarity(&profiles)?) {
            heat.push_str(&p.source);
            for v in row {
                write!(heat, ",{v:.6}").expect("string write");
            }
            heat.push('\n');
        }
    }
    ctx.write(HEATMAP, heat.as_bytes())
}

/// Scores at `k / 32` resolution, for report binning.
pub(crate) fn matched_counts(records: &[MemRecord]) -> Vec<u64> {
    let mut counts = vec![0u64; PROBE_LEN + 1];
    for r in records {
        counts[r.matched] += 1;
    }
    counts
}
