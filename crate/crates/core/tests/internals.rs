// SPDX-License-Identifier: MIT OR Apache-2.0

use memlab::internals::{head_importance, lens_curve, logit_lens, similarity_profile, Cohort};
use memlab::memscore::{MemRecord, Probe, PROBE_LEN};
use memlab::model::{AblationMode, InterventionSpec, ModelConfig, TokenId, Transformer};
use memlab_tensor::RngStream;

fn tokens(n: usize, seed: u64) -> Vec<TokenId> {
    (0..n as u64)
        .map(|i| ((i * 5 + seed * 11 + i * i * 3) % 29) as TokenId + 1)
        .collect()
}

/// A record whose gold continuation is the model's own greedy output.
fn self_record(model: &Transformer, id: usize, seed: u64) -> MemRecord {
    let ctx = tokens(PROBE_LEN, seed);
    let gold = model
        .greedy_decode(&ctx, PROBE_LEN, &InterventionSpec::clean())
        .unwrap();
    let probe = Probe::new(id, ctx, gold.clone()).unwrap();
    MemRecord::new(&probe, gold, 0.0)
}

/// One layer, four heads; only head 0 reaches the output projection, with
/// a boosted gain so it dominates the residual stream.
fn planted_head_model() -> Transformer {
    let cfg = ModelConfig::new(1, 4, 32, 32);
    let base = Transformer::init(cfg, &RngStream::new(5)).unwrap();
    let mut w = base.weights().clone();
    let hd = cfg.head_dim();
    let d = cfg.d_model;
    let wo = w.layers[0].wo.data_mut();
    for row in 0..d {
        let scale = if row < hd { 40.0 } else { 0.0 };
        for col in 0..d {
            wo[row * d + col] *= scale;
        }
    }
    Transformer::from_weights(cfg, w).unwrap()
}

#[test]
fn planted_head_is_the_most_important() {
    let model = planted_head_model();
    let heads = model.config().n_heads;
    for seed in 0..3 {
        let record = self_record(&model, seed as usize, seed);
        let im = head_importance(&model, &record, AblationMode::MeanOfOthers).unwrap();
        // Brute-force regeneration oracle for every head.
        for h in 0..heads {
            let spec = InterventionSpec::ablate(0, h, AblationMode::MeanOfOthers);
            let regen = model.greedy_decode(&record.context, PROBE_LEN, &spec).unwrap();
            let diverged = regen.iter().zip(&record.generated).filter(|(a, b)| a != b).count();
            assert_eq!(im.get(0, h), diverged as f64 / PROBE_LEN as f64);
            assert_eq!(im.matches[h], 1.0 - im.get(0, h));
        }
        assert!(im.get(0, 0) > 0.0, "seed {seed}: planted head never changed the output");
        for h in 1..heads {
            assert_eq!(im.get(0, h), 0.0);
        }
    }
}

#[test]
fn self_control_importance_is_zero() {
    let model = Transformer::init(ModelConfig::new(2, 4, 16, 32), &RngStream::new(8)).unwrap();
    let record = self_record(&model, 0, 4);
    let im = head_importance(&model, &record, AblationMode::SelfControl).unwrap();
    assert!(im.scores.iter().all(|s| *s == 0.0));
    assert!(im.matches.iter().all(|m| *m == 1.0));
}

#[test]
fn importance_requires_memorized_record() {
    let model = Transformer::init(ModelConfig::new(1, 2, 16, 32), &RngStream::new(8)).unwrap();
    let ctx = tokens(PROBE_LEN, 1);
    let mut gold = model
        .greedy_decode(&ctx, PROBE_LEN, &InterventionSpec::clean())
        .unwrap();
    let generated = gold.clone();
    gold[5] = (gold[5] % 30) + 1;
    let record = MemRecord::new(&Probe::new(0, ctx, gold).unwrap(), generated, 0.0);
    assert!(head_importance(&model, &record, AblationMode::MeanOfOthers).is_err());
    let one_head = Transformer::init(ModelConfig::new(1, 1, 16, 32), &RngStream::new(8)).unwrap();
    let record = self_record(&one_head, 0, 1);
    assert!(head_importance(&one_head, &record, AblationMode::MeanOfOthers).is_err());
}

#[test]
fn last_layer_lens_equals_output_distribution() {
    for seed in 0..5 {
        let model = Transformer::init(ModelConfig::new(3, 2, 16, 32), &RngStream::new(seed)).unwrap();
        let out = model
            .forward(&tokens(40, seed), &InterventionSpec::clean(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        let lens = logit_lens(&model, &trace, 3).unwrap();
        let probs = out.logits.softmax(1).unwrap();
        let diff = lens
            .data()
            .iter()
            .zip(probs.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "{diff}");
        assert!(logit_lens(&model, &trace, 0).is_err());
        assert!(logit_lens(&model, &trace, 4).is_err());
    }
}

#[test]
fn lens_curve_output_matches_last_layer() {
    let model = Transformer::init(ModelConfig::new(2, 2, 16, 32), &RngStream::new(3)).unwrap();
    let records: Vec<MemRecord> = (0..4).map(|i| self_record(&model, i, i as u64)).collect();
    let refs: Vec<&MemRecord> = records.iter().collect();
    let curve = lens_curve(&model, &refs, Cohort::Memorized).unwrap();
    assert_eq!(curve.per_layer.len(), 2);
    assert!((curve.per_layer[1] - curve.output).abs() < 1e-6);
    assert!(curve.per_layer.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(lens_curve(&model, &[], Cohort::Memorized).is_err());
}

#[test]
fn zero_noise_similarity_is_one() {
    let model = Transformer::init(ModelConfig::new(3, 2, 16, 32), &RngStream::new(3)).unwrap();
    let records: Vec<MemRecord> = (0..3).map(|i| self_record(&model, i, i as u64)).collect();
    let refs: Vec<&MemRecord> = records.iter().collect();
    let p = similarity_profile(&model, &refs, Cohort::Memorized, 0.0, 0, 1).unwrap();
    assert!(p.attn_mean.iter().chain(&p.mlp_mean).all(|v| *v == 1.0), "{p:?}");
    assert!(p.attn_var.iter().all(|v| *v == 0.0));

    let noisy = similarity_profile(&model, &refs, Cohort::Memorized, 0.5, 0, 1).unwrap();
    // Noise enters after layer 0, so layer 0 is untouched and later layers move.
    assert_eq!(noisy.attn_mean[0], 1.0);
    assert!(noisy.attn_mean[1] < 1.0);
    assert_eq!(noisy.first_affected_layer(), 1);
}
