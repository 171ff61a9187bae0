// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! Pass criterion numbers (`4 7`) as arguments to run a subset. Setting
//! `MEMLAB_ACCEPTANCE_CACHE` to a directory reuses trained checkpoints across
//! runs.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use memlab::corpus::{default_domains, generate_corpus, Corpus, CorpusManifest, PlantEntry, PlantPlan, VOCAB_SIZE};
use memlab::internals::{domain_importance, head_importance, lens_curve, logit_lens, similarity_profile, Cohort};
use memlab::io::digest;
use memlab::memscore::{compression_ratio, score_all, CompressionSide, MemRecord, Probe, PROBE_LEN};
use memlab::model::{AblationMode, InterventionSpec, ModelConfig, NormKind, PositionalKind, TokenId, Transformer};
use memlab::pipeline::{ExperimentConfig, Pipeline};
use memlab::stats::{
    cosine, layer_profile, overlap_table, random_baseline, random_baseline_closed_form, resample, top_fraction,
    wasserstein1, HeadSet, PROFILE_GRID,
};
use memlab::trainer::{train, Checkpoint, TrainConfig};
use memlab_tensor::RngStream;

const SEED: u64 = 1;
const TOP: f64 = 0.2;
/// Training epochs over the probe corpus.
const EPOCHS: f64 = 5.0;
/// Memorized examples per domain for head ablation.
const CAP: usize = 4;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------------------
// Shared fixtures

struct Planted {
    corpus: Corpus,
    manifest: CorpusManifest,
}

fn plant(entries: Vec<PlantEntry>) -> Planted {
    let plan = PlantPlan {
        entries,
        max_tokens: 100_000_000,
        seq_len: 64,
    };
    let (corpus, manifest) = generate_corpus(&default_domains(), &plan, SEED).expect("corpus");
    Planted { corpus, manifest }
}

fn every_domain(sequences: usize, repetitions: usize) -> Vec<PlantEntry> {
    default_domains()
        .iter()
        .map(|d| PlantEntry {
            domain: d.name.clone(),
            sequences,
            repetitions,
        })
        .collect()
}

fn train_config(model: ModelConfig, corpus: &Corpus, epochs: f64) -> TrainConfig {
    let steps = (epochs * corpus.lines.len() as f64 / 16.0).round() as usize;
    let mut cfg = TrainConfig::new(model, steps, 16, 7);
    cfg.lr.peak = 3e-3;
    cfg
}

/// Trains, or loads a cached checkpoint keyed by config and corpus. Models
/// trained earlier in the same run are reused.
fn trained(name: &str, cfg: &TrainConfig, corpus: &Corpus) -> (Transformer, f64) {
    static MEMO: OnceLock<Mutex<HashMap<String, (Transformer, f64)>>> = OnceLock::new();
    let key = digest(format!("{cfg:?}{}", corpus.to_text()).as_bytes())[..16].to_string();
    let memo = MEMO.get_or_init(Default::default);
    if let Some(hit) = memo.lock().expect("memo").get(&key) {
        return hit.clone();
    }
    let out = train_or_load(name, &key, cfg, corpus);
    memo.lock().expect("memo").insert(key, out.clone());
    out
}

fn train_or_load(name: &str, key: &str, cfg: &TrainConfig, corpus: &Corpus) -> (Transformer, f64) {
    let cache = std::env::var_os("MEMLAB_ACCEPTANCE_CACHE").map(PathBuf::from);
    let path = cache.as_ref().map(|d| d.join(format!("{name}-{key}.ckpt")));
    let loss_path = path.as_ref().map(|p| p.with_extension("loss"));
    if let (Some(p), Some(lp)) = (&path, &loss_path) {
        if let (Ok(c), Ok(l)) = (Checkpoint::load(p), std::fs::read_to_string(lp)) {
            return (c.model, l.trim().parse().expect("cached loss"));
        }
    }
    let t = Instant::now();
    let out = train(cfg, corpus).expect("training");
    let loss = final_loss(&out.losses);
    eprintln!(
        "  trained {name} ({} params, {} steps) in {:.0?}, final loss {loss:.4}",
        cfg.model.param_count(),
        cfg.steps,
        t.elapsed()
    );
    if let (Some(p), Some(lp)) = (&path, &loss_path) {
        out.checkpoint.save(p).expect("cache checkpoint");
        std::fs::write(lp, format!("{loss}\n")).expect("cache loss");
    }
    (out.checkpoint.model, loss)
}

/// Mean training loss over the last 5% of steps.
fn final_loss(losses: &[(usize, f64)]) -> f64 {
    let n = (losses.len() / 20).max(1);
    losses[losses.len() - n..].iter().map(|(_, l)| l).sum::<f64>() / n as f64
}

/// Two-layer reference model: one sequence per domain repeated 128 times,
/// two singletons per domain.
struct Reference {
    planted: Planted,
    model: Transformer,
    loss: f64,
}

fn reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut entries = every_domain(1, 128);
        entries.extend(every_domain(2, 1));
        let planted = plant(entries);
        let cfg = train_config(ModelConfig::new(2, 4, 64, VOCAB_SIZE), &planted.corpus, 6.0);
        let (model, loss) = trained("reference", &cfg, &planted.corpus);
        Reference { planted, model, loss }
    })
}

/// Size ladder trained on one corpus with one data order.
struct Ladder {
    planted: Planted,
    models: Vec<(ModelConfig, Transformer)>,
}

const LADDER: [(usize, usize, usize); 3] = [(2, 4, 32), (2, 4, 48), (2, 4, 64)];

fn ladder() -> &'static Ladder {
    static CELL: OnceLock<Ladder> = OnceLock::new();
    CELL.get_or_init(|| {
        let planted = plant(every_domain(10, 16));
        let models = LADDER
            .iter()
            .map(|&(l, h, d)| {
                let m = ModelConfig::new(l, h, d, VOCAB_SIZE);
                let mut cfg = train_config(m, &planted.corpus, 0.0);
                cfg.steps = 700;
                (m, trained(&format!("ladder-{}", m.arch_tag()), &cfg, &planted.corpus).0)
            })
            .collect();
        Ladder { planted, models }
    })
}

/// Deeper model for the noise, lens and ablation probes, with a large
/// singleton population for the unmemorized cohort.
struct ProbeModel {
    model: Transformer,
    clean: Vec<MemRecord>,
}

fn probe_corpus() -> &'static Planted {
    static CELL: OnceLock<Planted> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut entries = every_domain(12, 32);
        for d in default_domains() {
            entries.push(PlantEntry {
                sequences: if d.name == "blobs" { 280 } else { 10 },
                domain: d.name,
                repetitions: 1,
            });
        }
        plant(entries)
    })
}

fn probe_model() -> &'static ProbeModel {
    static CELL: OnceLock<ProbeModel> = OnceLock::new();
    CELL.get_or_init(|| {
        let planted = probe_corpus();
        let cfg = train_config(ModelConfig::new(6, 8, 64, VOCAB_SIZE), &planted.corpus, EPOCHS);
        let (model, _) = trained("probe", &cfg, &planted.corpus);
        let probes = Probe::from_manifest(&planted.manifest, None).expect("probes");
        let clean = score_all(&model, &probes, 0.0, 0, SEED).expect("scores");
        ProbeModel { model, clean }
    })
}

/// `(domain, top set, per-example top sets)` for every domain with a
/// memorized example.
fn domain_sets(model: &Transformer, records: &[MemRecord], cap: usize) -> (Vec<HeadSet>, Vec<Vec<HeadSet>>, Vec<f64>) {
    let mut by_domain: BTreeMap<&str, Vec<&MemRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_memorized()) {
        by_domain.entry(&r.domain).or_default().push(r);
    }
    let mut sets = Vec::new();
    let mut examples = Vec::new();
    let mut means = Vec::new();
    for (d, rs) in by_domain {
        let di = domain_importance(model, d, &rs, cap).expect("importance");
        sets.push(top_fraction(&di.mean, TOP).expect("top set"));
        examples.push(
            di.examples
                .iter()
                .map(|m| top_fraction(m, TOP).expect("top set"))
                .collect(),
        );
        means.push(di.mean);
    }
    let overall = memlab::internals::ImportanceMatrix::mean(&means, "all").expect("mean");
    (sets, examples, layer_profile(&overall).values)
}

// ---------------------------------------------------------------------------
// Criteria

fn c1_gradients() -> Check {
    // Central-difference step, and the gradient magnitude below which errors
    // are measured absolutely.
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-4;
    let nets = [
        (ModelConfig::new(1, 2, 8, 12), 6),
        (
            ModelConfig::new(2, 2, 8, 12).with_recipe(NormKind::LayerNorm, PositionalKind::Learned),
            7,
        ),
        (
            ModelConfig::new(2, 4, 16, 12).with_recipe(NormKind::RmsNorm, PositionalKind::Learned),
            5,
        ),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, (cfg, len)) in nets.iter().enumerate() {
        let model = Transformer::init(*cfg, &RngStream::new(100 + i as u64)).map_err(|e| e.to_string())?;
        // Scale weights up from the training init so gradients are not tiny.
        let w = model.weights().map(|_, t| {
            let mut t = t.clone();
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
            t
        });
        let model = Transformer::from_weights(*cfg, w).map_err(|e| e.to_string())?;
        let tokens: Vec<TokenId> = (0..*len as u32).map(|t| (t * 5 + i as u32) % 11 + 1).collect();
        let report = model.gradient_check(&tokens, STEP, FLOOR).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }
    ensure(
        worst < 1e-4,
        format!("3 networks, {checked} parameters, h {STEP:e}, max relative error {worst:.2e} (limit 1e-4)"),
    )
}

/// 1,000 corpus windows: 32 tokens of context and the 32 that follow.
fn windows(planted: &Planted, n: usize) -> Vec<Probe> {
    let mut rng = RngStream::new(SEED).named("windows").rng();
    use rand::Rng;
    (0..n)
        .map(|i| {
            let line = &planted.corpus.lines[rng.random_range(0..planted.corpus.lines.len())];
            Probe::new(i, line[..PROBE_LEN].to_vec(), line[PROBE_LEN..2 * PROBE_LEN].to_vec()).expect("probe")
        })
        .collect()
}

fn c2_identity() -> Check {
    let r = reference();
    let model = &r.model;
    let cfg = *model.config();
    let probes = windows(&r.planted, 1000);
    let mut clean_scores = Vec::new();
    let mut noise_scores = Vec::new();
    let mut max_importance = 0.0f64;
    let mut mismatches = 0;
    for p in &probes {
        let clean = model
            .greedy_decode(&p.context, PROBE_LEN, &InterventionSpec::clean())
            .map_err(|e| e.to_string())?;
        let zero = InterventionSpec::noise(
            0.0,
            p.id % cfg.n_layers,
            RngStream::new(SEED).named("noise").substream(p.id as u64),
        );
        let noised = model
            .greedy_decode(&p.context, PROBE_LEN, &zero)
            .map_err(|e| e.to_string())?;
        let slot = p.id % (cfg.n_layers * cfg.n_heads);
        let ctl = InterventionSpec::ablate(slot / cfg.n_heads, slot % cfg.n_heads, AblationMode::SelfControl);
        let ablated = model
            .greedy_decode(&p.context, PROBE_LEN, &ctl)
            .map_err(|e| e.to_string())?;
        if noised != clean || ablated != clean {
            mismatches += 1;
        }
        let diverged = ablated.iter().zip(&clean).filter(|(a, b)| a != b).count();
        max_importance = max_importance.max(diverged as f64 / PROBE_LEN as f64);
        clean_scores.push(MemRecord::new(p, clean, 0.0).score());
        noise_scores.push(MemRecord::new(p, noised, 0.0).score());
    }
    // Full importance matrices under self-control on self-generated records.
    for p in probes.iter().take(10) {
        let gen = model
            .greedy_decode(&p.context, PROBE_LEN, &InterventionSpec::clean())
            .map_err(|e| e.to_string())?;
        let own = Probe::new(p.id, p.context.clone(), gen.clone()).map_err(|e| e.to_string())?;
        let im = head_importance(model, &MemRecord::new(&own, gen, 0.0), AblationMode::SelfControl)
            .map_err(|e| e.to_string())?;
        max_importance = im.scores.iter().fold(max_importance, |a, b| a.max(*b));
    }
    let w1 = wasserstein1(&clean_scores, &noise_scores).map_err(|e| e.to_string())?;
    ensure(
        mismatches == 0 && w1 == 0.0 && max_importance == 0.0,
        format!("1000 examples, {mismatches} output mismatches, W1 {w1}, max importance {max_importance}"),
    )
}

fn c3_lens() -> Check {
    let r = reference();
    let model = &r.model;
    let layers = model.config().n_layers;
    let probes = windows(&r.planted, 100);
    let mut worst = 0.0f32;
    for p in &probes {
        let mut seq = p.context.clone();
        seq.extend_from_slice(&p.gold);
        let out = model
            .forward(&seq, &InterventionSpec::clean(), true)
            .map_err(|e| e.to_string())?;
        let trace = out.trace.expect("captured");
        let lens = logit_lens(model, &trace, layers).map_err(|e| e.to_string())?;
        let probs = out.logits.softmax(1).map_err(|e| e.to_string())?;
        let diff = lens
            .data()
            .iter()
            .zip(probs.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        worst = worst.max(diff);
    }
    ensure(
        worst < 1e-5,
        format!("100 traces, max abs diff {worst:.2e} (limit 1e-5)"),
    )
}

fn c4_memorization() -> Check {
    let r = reference();
    let probes = Probe::from_manifest(&r.planted.manifest, None).map_err(|e| e.to_string())?;
    let records = score_all(&r.model, &probes, 0.0, 0, SEED).map_err(|e| e.to_string())?;
    let frequent: Vec<&MemRecord> = records.iter().filter(|r| r.repetitions >= 100).collect();
    let single: Vec<&MemRecord> = records.iter().filter(|r| r.repetitions == 1).collect();
    let all_full = frequent.iter().all(|r| r.score() == 1.0);
    let full = frequent.iter().filter(|r| r.score() == 1.0).count();
    let single_mean = single.iter().map(|r| r.score()).sum::<f64>() / single.len().max(1) as f64;
    ensure(
        r.loss < 0.05 && all_full && !frequent.is_empty() && !single.is_empty() && single_mean < 0.3,
        format!(
            "final loss {:.4} (limit 0.05), r>=100 at score 1: {full}/{}, r=1 mean score {single_mean:.3} over {} (limit 0.3)",
            r.loss,
            frequent.len(),
            single.len()
        ),
    )
}

fn c5_scaling() -> Check {
    let l = ladder();
    let probes = Probe::from_manifest(&l.planted.manifest, None).map_err(|e| e.to_string())?;
    let mut rates = Vec::new();
    let mut params = Vec::new();
    for (cfg, model) in &l.models {
        let records = score_all(model, &probes, 0.0, 0, SEED).map_err(|e| e.to_string())?;
        rates.push(records.iter().filter(|r| r.is_memorized()).count() as f64 / records.len() as f64);
        params.push(cfg.param_count());
    }
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    let (small, large) = (rates[0], rates[rates.len() - 1]);
    ensure(
        monotone && small > 0.0 && large >= 2.0 * small,
        format!("params {params:?}, rates {}", fmt(&rates)),
    )
}

fn c6_compression() -> Check {
    let l = ladder();
    let model = &l.models.last().expect("ladder").1;
    let probes = Probe::from_manifest(&l.planted.manifest, None).map_err(|e| e.to_string())?;
    let records = score_all(model, &probes, 0.0, 0, SEED).map_err(|e| e.to_string())?;
    let memorized: Vec<&MemRecord> = records.iter().filter(|r| r.is_memorized()).take(100).collect();
    let clean = InterventionSpec::clean();
    let mut disagreements = 0;
    let mut best_periodic = f64::INFINITY;
    for r in &memorized {
        let scan = compression_ratio(model, r, CompressionSide::Suffix, &clean).map_err(|e| e.to_string())?;
        // Exhaustive oracle: evaluate every context length.
        let mut oracle = None;
        for k in 1..=PROBE_LEN {
            let gen = model
                .greedy_decode(&r.context[PROBE_LEN - k..], PROBE_LEN, &clean)
                .map_err(|e| e.to_string())?;
            if gen == r.gold && oracle.is_none() {
                oracle = Some(k);
            }
        }
        if oracle != Some(scan.k) {
            disagreements += 1;
        }
        if r.domain == "cycle" {
            best_periodic = best_periodic.min(scan.ratio);
        }
    }
    ensure(
        memorized.len() == 100 && disagreements == 0 && best_periodic <= 0.25,
        format!(
            "{} memorized sequences, {disagreements} scan/oracle disagreements, best periodic ratio {best_periodic:.4} (limit 0.25)",
            memorized.len()
        ),
    )
}

fn c7_noise() -> Check {
    let p = probe_model();
    let model = &p.model;
    let probes: Vec<Probe> = p.clean.iter().map(MemRecord::probe).collect();
    let base: Vec<f64> = p.clean.iter().map(MemRecord::score).collect();
    let alphas = [0.1, 0.2, 0.3, 0.4, 0.5];
    let mut w1 = Vec::new();
    for &a in &alphas {
        let noised = score_all(model, &probes, a, 0, SEED).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = noised.iter().map(MemRecord::score).collect();
        w1.push(wasserstein1(&base, &scores).map_err(|e| e.to_string())?);
    }
    let w1_ok = w1.windows(2).all(|w| w[1] >= w[0]);
    let memorized = Cohort::Memorized.select(&p.clean);
    let unmemorized = Cohort::Unmemorized.select(&p.clean);
    if memorized.is_empty() || unmemorized.is_empty() {
        return Err(format!(
            "cohorts: {} memorized, {} unmemorized",
            memorized.len(),
            unmemorized.len()
        ));
    }
    let mut shape_ok = true;
    let mut notes = Vec::new();
    for &a in &alphas {
        let m = similarity_profile(model, &memorized, Cohort::Memorized, a, 0, SEED).map_err(|e| e.to_string())?;
        let u = similarity_profile(model, &unmemorized, Cohort::Unmemorized, a, 0, SEED).map_err(|e| e.to_string())?;
        let first = u.first_affected_layer();
        let last = u.attn_mean.len() - 1;
        let dip = u.attn_mean[first] < 1.0;
        let recovery = u.attn_mean[last] > u.attn_mean[first];
        let ordered = m.attn_mean[last] <= u.attn_mean[last];
        shape_ok &= dip && recovery && ordered;
        notes.push(format!("a={a}: unmem {} mem {}", fmt(&u.attn_mean), fmt(&m.attn_mean)));
    }
    ensure(
        w1_ok && shape_ok && p.clean.len() >= 500,
        format!(
            "{} examples ({} memorized, {} unmemorized), W1 {}; attention similarity {}",
            p.clean.len(),
            memorized.len(),
            unmemorized.len(),
            fmt(&w1),
            notes.join("; ")
        ),
    )
}

fn c8_baseline() -> Check {
    let total = 32 * 32;
    let mc = random_baseline(total, TOP, 1000, &RngStream::new(SEED).named("baseline")).map_err(|e| e.to_string())?;
    let closed = random_baseline_closed_form(TOP);
    ensure(
        (mc - closed).abs() <= 0.01,
        format!("Monte-Carlo {mc:.4} over 1000 trials of {total} heads, closed form {closed:.4}"),
    )
}

fn c9_overlap() -> Check {
    let p = probe_model();
    let (sets, examples, _) = domain_sets(&p.model, &p.clean, CAP);
    let row = overlap_table(&sets, &examples, TOP, 1000, &RngStream::new(SEED).named("baseline"))
        .map_err(|e| e.to_string())?;
    let t = row.thresholds();
    let non_increasing = t.windows(2).all(|w| w[1] <= w[0]);
    let within = row.within_domain_mean.unwrap_or(f64::NAN);
    ensure(
        non_increasing && within > row.mean_jaccard,
        format!(
            "{} domains; within-domain example mean {within:.4} vs cross-domain mean {:.4} (max {:.4}, random {:.4}); shares {}",
            sets.len(),
            row.mean_jaccard,
            row.max_jaccard,
            row.random,
            fmt(&t)
        ),
    )
}

fn c10_families() -> Check {
    let planted = probe_corpus();
    let probes = Probe::from_manifest(&planted.manifest, None).map_err(|e| e.to_string())?;
    let families = [
        ("rot", NormKind::RmsNorm, PositionalKind::Rotary),
        ("abs", NormKind::LayerNorm, PositionalKind::Learned),
    ];
    let sizes = [(6, 8, 64), (6, 8, 96)];
    let mut profiles = Vec::new();
    for (name, norm, pos) in families {
        for &(l, h, d) in &sizes {
            let m = ModelConfig::new(l, h, d, VOCAB_SIZE).with_recipe(norm, pos);
            let cfg = train_config(m, &planted.corpus, EPOCHS);
            let (model, _) = trained(&format!("family-{name}-{}", m.arch_tag()), &cfg, &planted.corpus);
            let clean = score_all(&model, &probes, 0.0, 0, SEED).map_err(|e| e.to_string())?;
            let (_, _, profile) = domain_sets(&model, &clean, CAP);
            profiles.push((name, resample(&profile, PROFILE_GRID).map_err(|e| e.to_string())?));
        }
    }
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for i in 0..profiles.len() {
        for j in i + 1..profiles.len() {
            let c = cosine(&profiles[i].1, &profiles[j].1);
            if profiles[i].0 == profiles[j].0 {
                within.push(c);
            } else {
                cross.push(c);
            }
        }
    }
    let min_within = within.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_cross = cross.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure(
        mean(&within) > mean(&cross),
        format!(
            "within-family cosine {} (mean {:.4}, min {min_within:.4}), cross-family {} (mean {:.4}, max {max_cross:.4})",
            fmt(&within),
            mean(&within),
            fmt(&cross),
            mean(&cross)
        ),
    )
}

fn c11_determinism() -> Check {
    let text = |out: &std::path::Path| {
        format!(
            r#"
seed = 11
output_dir = "{}"

[corpus]
domains = ["cycle", "arith", "registry", "prose"]
max_tokens = 60000

[[corpus.plant]]
domain = "*"
sequences = 3
repetitions = 24

[[corpus.plant]]
domain = "*"
sequences = 3
repetitions = 1

[train]
steps = 120
batch_size = 8
lr = 1e-2
warmup = 6

[[families]]
name = "rot"
sizes = [[1, 2, 16], [2, 2, 16]]

[[families]]
name = "abs"
norm = "layer_norm"
positional = "learned"
sizes = [[1, 2, 16], [2, 2, 16]]

[analysis]
small_model_cap = 2
baseline_trials = 100
exhaustive_compression = true
"#,
            out.display()
        )
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for dir in [&a, &b] {
        let cfg = ExperimentConfig::from_toml(&text(dir.path())).map_err(|e| e.to_string())?;
        let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
        p.run_all().map_err(|e| e.to_string())?;
        digests.push(p.artifact_digests().map_err(|e| e.to_string())?);
    }
    let differing = digests[0].iter().filter(|(k, v)| digests[1].get(*k) != Some(v)).count();
    ensure(
        digests[0] == digests[1] && !digests[0].is_empty(),
        format!(
            "{} artifacts, {differing} digests differ between two runs",
            digests[0].len()
        ),
    )
}

fn c12_lens_cohorts() -> Check {
    let p = probe_model();
    let memorized = Cohort::Memorized.select(&p.clean);
    let unmemorized = Cohort::Unmemorized.select(&p.clean);
    if memorized.is_empty() || unmemorized.is_empty() {
        return Err(format!(
            "cohorts: {} memorized, {} unmemorized",
            memorized.len(),
            unmemorized.len()
        ));
    }
    let m = lens_curve(&p.model, &memorized, Cohort::Memorized).map_err(|e| e.to_string())?;
    let u = lens_curve(&p.model, &unmemorized, Cohort::Unmemorized).map_err(|e| e.to_string())?;
    let layers = m.per_layer.len();
    let quarter = layers.div_ceil(4);
    let ok = (layers - quarter..layers).all(|l| m.per_layer[l] > u.per_layer[l]);
    ensure(
        ok,
        format!(
            "last {quarter} of {layers} layers; memorized {} vs unmemorized {}",
            fmt(&m.per_layer),
            fmt(&u.per_layer)
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 12] = [
        (1, "gradient oracle", c1_gradients),
        (2, "identity interventions", c2_identity),
        (3, "lens equivalence", c3_lens),
        (4, "sandbox memorization", c4_memorization),
        (5, "scaling trend", c5_scaling),
        (6, "compression oracle", c6_compression),
        (7, "noise ladder", c7_noise),
        (8, "random-baseline Jaccard", c8_baseline),
        (9, "overlap-table shape", c9_overlap),
        (10, "family fingerprint", c10_families),
        (11, "end-to-end determinism", c11_determinism),
        (12, "lens cohort separation", c12_lens_cohorts),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.0}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.0}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
