//! Document-wise training loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{make_batches, Document, DocumentBatch, DEFAULT_MAX_DOCS};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{Model, PrevSentence};
use crate::optim::{clip_global_norm, AdaGradState};
use crate::scalar::Scalar;

pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Generator handed to code paths that never draw (inference).
pub(crate) fn no_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_docs: usize,
    pub seed: u64,
    /// Keep the context-only parameters at their initial values.
    pub freeze_context: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            clip_norm: DEFAULT_CLIP_NORM,
            max_docs: DEFAULT_MAX_DOCS,
            seed: 1,
            freeze_context: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.max_docs == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} and clip norm {} must be positive",
                self.learning_rate, self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Loss and gradients of a batch of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients<F> {
    pub loss_sum: f64,
    pub tokens: usize,
    /// Gradients of the mean token loss, in parameter order.
    pub grads: Vec<Vec<F>>,
    /// `(position, document)` in the order sentences entered the graph.
    pub order: Vec<(usize, usize)>,
}

/// Forward and backward pass over a batch of documents. Sentence position
/// `i` of every document is processed before position `i + 1`; each sentence
/// sees the saved states of its document's previous sentence. The whole batch
/// forms one graph and the loss is the mean over target tokens.
pub fn batch_gradients<F: Scalar, R: Rng + ?Sized>(
    model: &Model<F>,
    docs: &[Document<u32>],
    batch: &DocumentBatch,
    training: bool,
    rng: &mut R,
) -> Result<BatchGradients<F>> {
    let mut g = Graph::new();
    let bm = model.bind(&mut g);
    let mut prev: BTreeMap<usize, PrevSentence<F>> = BTreeMap::new();
    let mut losses = Vec::new();
    let mut tokens = 0;
    let mut order = Vec::new();
    for i in 0..batch.max_len(docs) {
        let pos = batch.position(docs, i).compact();
        let ctx: Vec<Option<&PrevSentence<F>>> = pos.documents.iter().map(|d| prev.get(d)).collect();
        let out = model.sentence_forward(&mut g, &bm, &pos.source, &pos.target, &ctx, training, rng)?;
        order.extend(pos.documents.iter().map(|&d| (i, d)));
        losses.push(out.loss_sum);
        tokens += out.tokens;
        for (r, (enc, dec)) in out.encoder.into_iter().zip(out.decoder).enumerate() {
            prev.insert(
                pos.documents[r],
                PrevSentence {
                    source: pos.source[r].clone(),
                    target: pos.target[r].clone(),
                    encoder: enc,
                    decoder: dec,
                },
            );
        }
    }
    if tokens == 0 {
        return Err(Error::Empty("batch"));
    }
    let total = g.add_n(&losses);
    let loss_sum = g.data(total)[0];
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let mean = g.scale(total, F::one() / F::of(tokens as f64));
    g.backward(mean)?;
    Ok(BatchGradients {
        loss_sum: loss_sum.as_f64(),
        tokens,
        grads: bm.bound().grads(&g),
        order,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub tokens: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// One AdaGrad update on a batch of documents with clipped gradients. With
/// `freeze_context`, the context-only parameters receive no update.
pub fn train_batch<F: Scalar, R: Rng + ?Sized>(
    model: &mut Model<F>,
    opt: &mut AdaGradState<F>,
    docs: &[Document<u32>],
    batch: &DocumentBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BatchStats> {
    let mut bg = batch_gradients(model, docs, batch, true, rng)?;
    if cfg.freeze_context {
        model.zero_context_grads(&mut bg.grads);
    }
    let norm = clip_global_norm(&mut bg.grads, cfg.clip_norm);
    opt.step(&mut model.params, &bg.grads)?;
    Ok(BatchStats {
        loss_sum: bg.loss_sum,
        tokens: bg.tokens,
        grad_norm: norm.as_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub tokens: usize,
    pub batches: usize,
}

/// One pass over the corpus in freshly shuffled batches.
pub fn train_epoch<F: Scalar, R: Rng + ?Sized>(
    model: &mut Model<F>,
    opt: &mut AdaGradState<F>,
    docs: &[Document<u32>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpochStats> {
    if docs.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let batches = make_batches(docs, cfg.max_docs, rng);
    let (mut loss, mut tokens) = (0.0, 0);
    for b in &batches {
        let s = train_batch(model, opt, docs, b, cfg, rng)?;
        loss += s.loss_sum;
        tokens += s.tokens;
    }
    Ok(EpochStats {
        mean_loss: loss / tokens as f64,
        tokens,
        batches: batches.len(),
    })
}

/// Index of the largest score; the earliest wins ties. `None` when empty or
/// when every score is NaN.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult<F> {
    pub best: Model<F>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains for `cfg.epochs` epochs, scoring the model on a development set
/// after each one with `dev`, and keeps the best-scoring parameters.
/// `observe` sees every epoch record as it is produced.
pub fn fit<F: Scalar>(
    mut model: Model<F>,
    docs: &[Document<u32>],
    cfg: &TrainConfig,
    mut dev: impl FnMut(&Model<F>) -> Result<f64>,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<FitResult<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdaGradState::new(&model.params, cfg.learning_rate)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model<F>)> = None;
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(&mut model, &mut opt, docs, cfg, &mut rng)?;
        let score = dev(&model)?;
        let rec = EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            dev_score: score,
        };
        observe(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best) = match best {
        Some(b) => b,
        None => (f64::NAN, cfg.epochs, model),
    };
    Ok(FitResult {
        best,
        best_epoch,
        history,
    })
}
