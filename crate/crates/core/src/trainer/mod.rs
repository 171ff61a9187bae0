// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token training with a fixed, seed-determined data order.

mod checkpoint;

use memlab_tensor::{Adam, AdamConfig, Graph, RngStream, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{forward, InterventionSpec, ModelConfig, TokenId, Transformer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Constant,
    Linear,
    Cosine,
}

/// Linear warmup to `peak`, then decay towards `peak * min_ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub decay: DecayKind,
    #[serde(default)]
    pub min_ratio: f64,
}

impl LrSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = total.saturating_sub(self.warmup).max(1) as f64;
        let progress = ((step - self.warmup) as f64 / span).min(1.0);
        let factor = match self.decay {
            DecayKind::Constant => 1.0,
            DecayKind::Linear => 1.0 - progress,
            DecayKind::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        };
        self.peak * (self.min_ratio + (1.0 - self.min_ratio) * factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_seq_len() -> usize {
    64
}

fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn new(model: ModelConfig, steps: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            model,
            steps,
            batch_size,
            seq_len: default_seq_len(),
            lr: LrSchedule {
                peak: 3e-3,
                warmup: (steps / 20).max(1),
                decay: DecayKind::Cosine,
                min_ratio: 0.1,
            },
            seed,
            checkpoint_every: 0,
            weight_decay: 0.0,
            grad_clip: default_clip(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.seq_len < 2 || self.seq_len > self.model.max_seq {
            return Err(Error::Config(format!(
                "seq_len {} must be in 2..={}",
                self.seq_len, self.model.max_seq
            )));
        }
        if !(self.lr.peak.is_finite() && self.lr.peak >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// `(step, loss)` for every step, 1-based.
    pub losses: Vec<(usize, f64)>,
}

impl TrainOutcome {
    /// Mean loss over the final `window` steps.
    pub fn final_loss(&self, window: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(window.max(1))..];
        tail.iter().map(|(_, l)| l).sum::<f64>() / tail.len() as f64
    }

    /// Loss curve as `step,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in &self.losses {
            out.push_str(&format!("{s},{l:.8}\n"));
        }
        out
    }
}

/// Deterministic stream of training windows. Depends only on the corpus,
/// the sequence length and the seed, never on the model.
pub struct DataOrder<'a> {
    corpus: &'a Corpus,
    seq_len: usize,
    rng: RngStream,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> DataOrder<'a> {
    pub fn new(corpus: &'a Corpus, seq_len: usize, seed: u64) -> Result<Self> {
        if corpus.lines.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        if let Some(short) = corpus.lines.iter().find(|l| l.len() < seq_len) {
            return Err(Error::InvalidInput(format!(
                "corpus line of {} tokens is shorter than seq_len {seq_len}",
                short.len()
            )));
        }
        let mut me = Self {
            corpus,
            seq_len,
            rng: RngStream::new(seed).named("data"),
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        me.reshuffle();
        Ok(me)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.corpus.lines.len()).collect();
        self.order.shuffle(&mut self.rng.substream(self.epoch).rng());
        self.cursor = 0;
    }

    /// Next window of `seq_len` tokens.
    pub fn next_window(&mut self) -> &'a [TokenId] {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let line = &self.corpus.lines[self.order[self.cursor]];
        let slack = line.len() - self.seq_len;
        let start = if slack == 0 {
            0
        } else {
            let draw = self
                .rng
                .named("offset")
                .substream(self.epoch)
                .substream(self.cursor as u64);
            draw.rng().random_range(0..=slack)
        };
        self.cursor += 1;
        &line[start..start + self.seq_len]
    }
}

/// Trains a freshly initialized model. `on_checkpoint` is called every
/// `checkpoint_every` steps (when non-zero).
pub fn train_with(
    cfg: &TrainConfig,
    corpus: &Corpus,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.vocab_size > cfg.model.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary {} exceeds model vocabulary {}",
            corpus.vocab_size, cfg.model.vocab_size
        )));
    }
    let root = RngStream::new(cfg.seed);
    let mut model = Transformer::init(cfg.model, &root.named("init"))?;
    let mut data = DataOrder::new(corpus, cfg.seq_len, cfg.seed)?;
    let mut adam = {
        let params: Vec<&Tensor> = model.weights().named().into_iter().map(|(_, t)| t).collect();
        Adam::new(
            AdamConfig {
                weight_decay: cfg.weight_decay,
                ..AdamConfig::default()
            },
            &params,
        )
    };
    let ctx = cfg.seq_len - 1;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut ids = Vec::with_capacity(cfg.batch_size * ctx);
        let mut targets = Vec::with_capacity(cfg.batch_size * ctx);
        for _ in 0..cfg.batch_size {
            let w = data.next_window();
            ids.extend(w[..ctx].iter().map(|&t| t as usize));
            targets.extend(w[1..].iter().map(|&t| t as usize));
        }
        let mut g = Graph::<f32>::new();
        let vars = model.bind(&mut g, true);
        let rec = forward::record(
            &mut g,
            &cfg.model,
            &vars,
            &ids,
            cfg.batch_size,
            ctx,
            &InterventionSpec::clean(),
        )?;
        let loss = g.cross_entropy(rec.logits, &targets)?;
        let loss_value = g.value(loss).data()[0] as f64;
        if !loss_value.is_finite() {
            return Err(Error::Divergence {
                step: step + 1,
                loss: loss_value,
            });
        }
        g.backward(loss).map_err(|e| match e {
            memlab_tensor::TensorError::NonFinite { .. } => Error::Divergence {
                step: step + 1,
                loss: loss_value,
            },
            e => e.into(),
        })?;
        let var_list = vars.into_values();
        let mut grads: Vec<Vec<f32>> = var_list
            .iter()
            .map(|v| g.grad(*v).map(<[f32]>::to_vec).unwrap_or_default())
            .collect();
        drop(g);
        if cfg.grad_clip > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .map(|x| (*x as f64) * (*x as f64))
                .sum::<f64>()
                .sqrt();
            if norm > cfg.grad_clip {
                let s = (cfg.grad_clip / norm) as f32;
                grads.iter_mut().flatten().for_each(|x| *x *= s);
            }
        }
        let lr = cfg.lr.at(step, cfg.steps);
        {
            let mut params: Vec<&mut Tensor> = weights_mut_list(&mut model);
            let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
            adam.step(&mut params, &grad_refs, lr).map_err(|e| match e {
                memlab_tensor::TensorError::NonFinite { .. } => Error::Divergence {
                    step: step + 1,
                    loss: loss_value,
                },
                e => e.into(),
            })?;
        }
        losses.push((step + 1, loss_value));
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
            on_checkpoint(&Checkpoint {
                model: model.clone(),
                step: (step + 1) as u64,
                rng: root,
            })?;
        }
    }
    let checkpoint = Checkpoint {
        model,
        step: cfg.steps as u64,
        rng: root,
    };
    if cfg.checkpoint_every > 0 {
        on_checkpoint(&checkpoint)?;
    }
    Ok(TrainOutcome { checkpoint, losses })
}

pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    train_with(cfg, corpus, |_| Ok(()))
}

fn weights_mut_list(model: &mut Transformer) -> Vec<&mut Tensor> {
    let w = model.weights_mut();
    let mut out: Vec<&mut Tensor> = vec![&mut w.tok_emb];
    out.extend(w.pos_emb.as_mut());
    for l in &mut w.layers {
        out.push(&mut l.attn_norm.gain);
        out.extend(l.attn_norm.bias.as_mut());
        out.extend([&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo]);
        out.push(&mut l.mlp_norm.gain);
        out.extend(l.mlp_norm.bias.as_mut());
        out.extend([&mut l.w_in, &mut l.w_out]);
    }
    out.push(&mut w.final_norm.gain);
    out.extend(w.final_norm.bias.as_mut());
    out.push(&mut w.unembed);
    out
}

/// One entry of a trained size ladder.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub outcome: TrainOutcome,
    pub param_count: usize,
    pub arch_tag: String,
}

/// Trains every config of `ladder` with the schedule, seed and data order of
/// `base`. The ladder must have at least three strictly growing sizes.
pub fn train_family(base: &TrainConfig, ladder: &[ModelConfig], corpus: &Corpus) -> Result<Vec<FamilyMember>> {
    check_ladder(ladder)?;
    ladder
        .iter()
        .map(|m| {
            let cfg = TrainConfig { model: *m, ..*base };
            Ok(FamilyMember {
                outcome: train(&cfg, corpus)?,
                param_count: m.param_count(),
                arch_tag: m.arch_tag(),
            })
        })
        .collect()
}

pub fn check_ladder(ladder: &[ModelConfig]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::Config(format!(
            "a size ladder needs at least 3 models, got {}",
            ladder.len()
        )));
    }
    let counts: Vec<usize> = ladder.iter().map(ModelConfig::param_count).collect();
    if counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "ladder parameter counts must strictly increase: {counts:?}"
        )));
    }
    Ok(())
}
