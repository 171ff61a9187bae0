// SPDX-License-Identifier: MIT OR Apache-2.0

use memlab::model::{
    AblationMode, InterventionSpec, ModelConfig, NormKind, PositionalKind, TokenId, Transformer, Weights,
};
use memlab::Error;
use memlab_tensor::{RngStream, Tensor};

fn model(l: usize, h: usize, d: usize, seed: u64) -> Transformer {
    Transformer::init(ModelConfig::new(l, h, d, 32), &RngStream::new(seed)).unwrap()
}

fn tokens(n: usize, seed: u64) -> Vec<TokenId> {
    (0..n as u64)
        .map(|i| ((i * 7 + seed * 13 + i * i) % 31) as TokenId + 1)
        .collect()
}

/// Plain triple-loop product in f64.
fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, k) = a.dims2().unwrap();
    let m = b.dims2().unwrap().1;
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k)
                .map(|p| a.data()[i * k + p] as f64 * b.data()[p * m + j] as f64)
                .sum();
        }
    }
    out
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn identity_interventions_are_bit_exact() {
    let m = model(2, 4, 16, 1);
    let ctx = tokens(20, 1);
    let clean = m.forward(&ctx, &InterventionSpec::clean(), false).unwrap().logits;
    let zero_noise = InterventionSpec::noise(0.0, 0, RngStream::new(9));
    assert_eq!(m.forward(&ctx, &zero_noise, false).unwrap().logits, clean);
    for layer in 0..2 {
        for head in 0..4 {
            let ctl = InterventionSpec::ablate(layer, head, AblationMode::SelfControl);
            assert_eq!(m.forward(&ctx, &ctl, false).unwrap().logits, clean);
        }
    }
    let greedy = m.greedy_decode(&ctx, 12, &InterventionSpec::clean()).unwrap();
    assert_eq!(m.greedy_decode(&ctx, 12, &zero_noise).unwrap(), greedy);
}

#[test]
fn two_head_ablation_copies_the_other_head() {
    let m = model(2, 2, 8, 2);
    let ctx = tokens(10, 2);
    let clean = m
        .forward(&ctx, &InterventionSpec::clean(), true)
        .unwrap()
        .trace
        .unwrap();
    let spec = InterventionSpec::ablate(0, 0, AblationMode::MeanOfOthers);
    let ablated = m.forward(&ctx, &spec, true).unwrap().trace.unwrap();
    // With two heads, the mean of the others is head 1 itself.
    assert_eq!(ablated.head(0, 0), clean.head(0, 1));
    assert_eq!(ablated.head(0, 1), clean.head(0, 1));
    let wo = &m.weights().layers[0].wo;
    let expect = naive_matmul(&ablated.attn_heads[0], wo);
    assert!(max_abs_diff(ablated.attn_out[0].data(), &expect) < 1e-5);
    assert_ne!(ablated.logits, clean.logits);
}

#[test]
fn trace_reconstructs_residual_stream() {
    for (norm, pos) in [
        (NormKind::RmsNorm, PositionalKind::Rotary),
        (NormKind::LayerNorm, PositionalKind::Learned),
    ] {
        let cfg = ModelConfig::new(3, 4, 16, 32).with_recipe(norm, pos);
        let m = Transformer::init(cfg, &RngStream::new(3)).unwrap();
        let tr = m
            .forward(&tokens(24, 3), &InterventionSpec::clean(), true)
            .unwrap()
            .trace
            .unwrap();
        let mut prev = tr.embed.clone();
        for l in 0..3 {
            let proj = naive_matmul(&tr.attn_heads[l], &m.weights().layers[l].wo);
            assert!(max_abs_diff(tr.attn_out[l].data(), &proj) < 1e-4);
            let rebuilt: Vec<f64> = (0..prev.numel())
                .map(|i| prev.data()[i] as f64 + proj[i] + tr.mlp_out[l].data()[i] as f64)
                .collect();
            assert!(max_abs_diff(tr.residual[l].data(), &rebuilt) < 1e-4, "layer {l}");
            prev = tr.residual[l].clone();
        }
        assert_eq!(m.unembed(&tr.residual[2]).unwrap(), tr.logits);
    }
}

#[test]
fn later_tokens_do_not_change_earlier_logits() {
    let m = model(2, 4, 16, 4);
    let a = tokens(30, 4);
    let mut b = a.clone();
    b[20] = if a[20] == 5 { 6 } else { 5 };
    let la = m.forward(&a, &InterventionSpec::clean(), false).unwrap().logits;
    let lb = m.forward(&b, &InterventionSpec::clean(), false).unwrap().logits;
    let v = 32;
    assert_eq!(la.data()[..20 * v], lb.data()[..20 * v]);
    assert_ne!(la.data()[20 * v..], lb.data()[20 * v..]);
}

#[test]
fn greedy_decode_contract() {
    let m = model(1, 2, 8, 5);
    let ctx = tokens(8, 5);
    assert!(m.greedy_decode(&ctx, 0, &InterventionSpec::clean()).unwrap().is_empty());
    let a = m.greedy_decode(&ctx, 16, &InterventionSpec::clean()).unwrap();
    assert_eq!(a, m.greedy_decode(&ctx, 16, &InterventionSpec::clean()).unwrap());
    assert_eq!(a.len(), 16);
    assert!(matches!(
        m.greedy_decode(&ctx, 60, &InterventionSpec::clean()),
        Err(Error::SequenceTooLong { .. })
    ));
    assert!(matches!(
        m.forward(&[40], &InterventionSpec::clean(), false),
        Err(Error::InvalidToken { .. })
    ));
}

#[test]
fn positive_logit_scaling_keeps_greedy_path() {
    let m = model(2, 2, 8, 6);
    let mut w: Weights<Tensor> = m.weights().clone();
    w.unembed = w.unembed.scale(3.5).unwrap();
    let scaled = Transformer::from_weights(*m.config(), w).unwrap();
    let ctx = tokens(16, 6);
    assert_eq!(
        m.greedy_decode(&ctx, 20, &InterventionSpec::clean()).unwrap(),
        scaled.greedy_decode(&ctx, 20, &InterventionSpec::clean()).unwrap()
    );
}

#[test]
fn noise_scales_with_residual_rms_and_is_seeded() {
    let m = model(2, 2, 16, 7);
    let ctx = tokens(32, 7);
    let clean = m
        .forward(&ctx, &InterventionSpec::clean(), true)
        .unwrap()
        .trace
        .unwrap();
    let spec = InterventionSpec::noise(0.3, 0, RngStream::new(1));
    let a = m.forward(&ctx, &spec, true).unwrap().trace.unwrap();
    let b = m.forward(&ctx, &spec, true).unwrap().trace.unwrap();
    assert_eq!(a.residual[0], b.residual[0]);
    let delta: Vec<f64> = a.residual[0]
        .data()
        .iter()
        .zip(clean.residual[0].data())
        .map(|(x, y)| (*x - *y) as f64)
        .collect();
    let rms_delta = (delta.iter().map(|d| d * d).sum::<f64>() / delta.len() as f64).sqrt();
    let target = 0.3 * clean.residual[0].rms().unwrap();
    assert!((rms_delta / target - 1.0).abs() < 0.15, "{rms_delta} vs {target}");
    // The first layer's own activations precede the injection site.
    assert_eq!(a.attn_out[0], clean.attn_out[0]);
    assert_ne!(a.attn_out[1], clean.attn_out[1]);
}

#[test]
fn residual_norm_profile_zero_and_doubling() {
    let cfg = ModelConfig::new(2, 2, 8, 32).with_recipe(NormKind::LayerNorm, PositionalKind::Learned);
    let m = Transformer::init(cfg, &RngStream::new(8)).unwrap();
    let zero = Transformer::from_weights(cfg, m.weights().map(|_, t| Tensor::zeros(t.shape().to_vec()))).unwrap();
    let examples = vec![tokens(12, 1), tokens(20, 2)];
    assert!(zero.residual_norm_profile(&examples).unwrap().iter().all(|&v| v == 0.0));

    let base = m.residual_norm_profile(&examples).unwrap();
    assert!(base.iter().all(|&v| v > 0.0));
    let mut w = m.weights().clone();
    w.tok_emb = w.tok_emb.scale(2.0).unwrap();
    w.pos_emb = w.pos_emb.map(|p| p.scale(2.0).unwrap());
    for lw in &mut w.layers {
        lw.wo = lw.wo.scale(2.0).unwrap();
        lw.w_out = lw.w_out.scale(2.0).unwrap();
    }
    let doubled = Transformer::from_weights(cfg, w)
        .unwrap()
        .residual_norm_profile(&examples)
        .unwrap();
    for (d, b) in doubled.iter().zip(&base) {
        assert!((d / b - 2.0).abs() < 1e-4, "{d} vs 2 * {b}");
    }
}
