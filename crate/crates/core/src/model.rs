//! Attentional encoder-decoder with previous-sentence context.
//!
//! The encoder is a stack of bidirectional LSTM layers (`H/2` units per
//! direction, concatenated to `H`), the decoder a stack of unidirectional LSTM
//! layers of width `H` whose initial state is the final encoder state of the
//! same layer. At each decoder step `n` the top decoder state `h` attends over
//! the encoder states of the current sentence (dot scores) to give `c`, and
//! over the context memory of the previous sentence to give `c_ctx`. The
//! attentional state is `tanh(W_h [h; c; c_ctx])` (`[h; c]` for the baseline)
//! and the output distribution is `softmax(W_o · tanh(..))`.
//!
//! What the context memory holds depends on the [`Variant`]:
//!
//! | variant            | memory                                               |
//! |--------------------|------------------------------------------------------|
//! | `Baseline`         | none                                                 |
//! | `SeparatedSource`  | extra LSTM stack over the previous source sentence   |
//! | `SeparatedTarget`  | extra LSTM stack over the previous target sentence   |
//! | `SharedSource`     | saved encoder states of the previous sentence        |
//! | `SharedTarget`     | saved top decoder states of the previous sentence    |
//! | `SharedMix`        | both saved memories; the two attentions are summed   |
//!
//! Saved states are constants for the current sentence: no gradient flows
//! back into the previous sentence. The first sentence of a document has an
//! empty memory and its context vector is zero.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{dropout_var, run_stack, LstmLayer};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::subword::{BOS, EOS};
use crate::tensor::Tensor;

pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    SeparatedSource,
    SeparatedTarget,
    SharedSource,
    SharedTarget,
    SharedMix,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::SeparatedSource,
        Variant::SeparatedTarget,
        Variant::SharedSource,
        Variant::SharedTarget,
        Variant::SharedMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SeparatedSource => "separated-source",
            Variant::SeparatedTarget => "separated-target",
            Variant::SharedSource => "shared-source",
            Variant::SharedTarget => "shared-target",
            Variant::SharedMix => "shared-mix",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s}")))
    }

    pub fn uses_context(self) -> bool {
        self != Variant::Baseline
    }

    pub fn has_context_encoder(self) -> bool {
        matches!(self, Variant::SeparatedSource | Variant::SeparatedTarget)
    }

    pub fn is_shared(self) -> bool {
        matches!(
            self,
            Variant::SharedSource | Variant::SharedTarget | Variant::SharedMix
        )
    }
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub emb: usize,
    pub hidden: usize,
    pub src_vocab: usize,
    pub trg_vocab: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: E = H = 32, two layers, dropout 0.2.
    pub fn desk(variant: Variant, src_vocab: usize, trg_vocab: usize) -> Self {
        ModelConfig {
            variant,
            emb: 32,
            hidden: 32,
            src_vocab,
            trg_vocab,
            layers: 2,
            dropout: 0.2,
        }
    }

    pub fn with_variant(self, variant: Variant) -> Self {
        ModelConfig { variant, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return bad(format!("hidden size must be even and positive, got {}", self.hidden));
        }
        if self.emb == 0 || self.layers == 0 {
            return bad("embedding size and layer count must be positive".to_string());
        }
        if self.src_vocab < 4 || self.trg_vocab < 4 {
            return bad("vocabularies must contain the four reserved tokens".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Same shapes apart from the variant.
    pub fn compatible(&self, other: &ModelConfig) -> bool {
        self.emb == other.emb
            && self.hidden == other.hidden
            && self.src_vocab == other.src_vocab
            && self.trg_vocab == other.trg_vocab
            && self.layers == other.layers
    }

    fn attn_in(&self) -> usize {
        if self.variant.uses_context() {
            3 * self.hidden
        } else {
            2 * self.hidden
        }
    }
}

fn lstm_shapes(prefix: &str, input: usize, hidden: usize) -> [(String, Vec<usize>); 2] {
    [
        (format!("{prefix}.w"), vec![4 * hidden, input + hidden]),
        (format!("{prefix}.b"), vec![4 * hidden]),
    ]
}

/// Ordered parameter names and shapes for a configuration.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, h) = (cfg.emb, cfg.hidden);
    let half = h / 2;
    let mut out = vec![
        ("src_embed".to_string(), vec![cfg.src_vocab, e]),
        ("trg_embed".to_string(), vec![cfg.trg_vocab, e]),
    ];
    for l in 0..cfg.layers {
        let input = if l == 0 { e } else { h };
        for dir in ["fwd", "bwd"] {
            out.extend(lstm_shapes(&format!("enc.l{l}.{dir}"), input, half));
        }
    }
    for l in 0..cfg.layers {
        out.extend(lstm_shapes(&format!("dec.l{l}"), if l == 0 { e } else { h }, h));
    }
    if cfg.variant.has_context_encoder() {
        for l in 0..cfg.layers {
            out.extend(lstm_shapes(&format!("ctx.l{l}"), if l == 0 { e } else { h }, h));
        }
    }
    out.push(("attn_out".to_string(), vec![h, cfg.attn_in()]));
    out.push(("out_proj".to_string(), vec![cfg.trg_vocab, h]));
    out
}

/// Exact number of scalar parameters of a configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_layout(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Scalar count of one context LSTM stack.
pub fn context_stack_count(cfg: &ModelConfig) -> usize {
    (0..cfg.layers)
        .map(|l| {
            let input = if l == 0 { cfg.emb } else { cfg.hidden };
            4 * cfg.hidden * (input + cfg.hidden) + 4 * cfg.hidden
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    src_embed: ParamId,
    trg_embed: ParamId,
    enc_fwd: Vec<(ParamId, ParamId)>,
    enc_bwd: Vec<(ParamId, ParamId)>,
    dec: Vec<(ParamId, ParamId)>,
    ctx: Vec<(ParamId, ParamId)>,
    attn_out: ParamId,
    out_proj: ParamId,
}

impl Layout {
    fn resolve<F: Scalar>(cfg: &ModelConfig, params: &ParamSet<F>) -> Result<Self> {
        let id = |n: &str| {
            params
                .find(n)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter {n}")))
        };
        let pair = |p: String| -> Result<(ParamId, ParamId)> {
            Ok((id(&format!("{p}.w"))?, id(&format!("{p}.b"))?))
        };
        let mut l = Layout {
            src_embed: id("src_embed")?,
            trg_embed: id("trg_embed")?,
            enc_fwd: Vec::new(),
            enc_bwd: Vec::new(),
            dec: Vec::new(),
            ctx: Vec::new(),
            attn_out: id("attn_out")?,
            out_proj: id("out_proj")?,
        };
        for i in 0..cfg.layers {
            l.enc_fwd.push(pair(format!("enc.l{i}.fwd"))?);
            l.enc_bwd.push(pair(format!("enc.l{i}.bwd"))?);
            l.dec.push(pair(format!("dec.l{i}"))?);
            if cfg.variant.has_context_encoder() {
                l.ctx.push(pair(format!("ctx.l{i}"))?);
            }
        }
        Ok(l)
    }
}

/// Per-token states of one sentence, `rows × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix<F> {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> StateMatrix<F> {
    pub fn empty(dim: usize) -> Self {
        StateMatrix {
            rows: 0,
            dim,
            data: Vec::new(),
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

/// Encoder output of one sentence (`M × H`, forward and backward halves
/// concatenated).
pub type EncoderStates<F> = StateMatrix<F>;
/// Top-layer decoder states of one sentence, one row per target token: the
/// state computed with that token as the decoder input.
pub type DecoderStates<F> = StateMatrix<F>;

/// What a document remembers about its previous sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevSentence<F> {
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub encoder: EncoderStates<F>,
    pub decoder: DecoderStates<F>,
}

/// Context memory consumed by the context attention. Both parts empty for the
/// first sentence of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCache<F> {
    pub source: Option<StateMatrix<F>>,
    pub target: Option<StateMatrix<F>>,
}

impl<F> Default for ContextCache<F> {
    fn default() -> Self {
        ContextCache {
            source: None,
            target: None,
        }
    }
}

impl<F: Scalar> ContextCache<F> {
    pub fn is_empty(&self) -> bool {
        self.source.as_ref().is_none_or(StateMatrix::is_empty)
            && self.target.as_ref().is_none_or(StateMatrix::is_empty)
    }
}

/// Decoder carry for a single sentence: `(h, c)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry<F> {
    pub layers: Vec<(Vec<F>, Vec<F>)>,
}

/// Result of one value-level decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<F> {
    pub probs: Vec<F>,
    pub carry: Carry<F>,
    /// Attentional state `tanh(W_h [h; c; c_ctx])`.
    pub attentional: Vec<F>,
    /// Top decoder state `h`.
    pub hidden: Vec<F>,
    /// Attention weights over the source tokens.
    pub alpha: Vec<F>,
    /// Context attention weights, one vector per memory part.
    pub beta: Vec<Vec<F>>,
    /// Context vector `c_ctx`.
    pub context: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    layout: Layout,
}

/// Parameters bound into a graph.
#[derive(Debug, Clone)]
pub(crate) struct BoundModel {
    bound: Bound,
    src_embed: Var,
    trg_embed: Var,
    enc_fwd: Vec<LstmLayer>,
    enc_bwd: Vec<LstmLayer>,
    dec: Vec<LstmLayer>,
    ctx: Vec<LstmLayer>,
    attn_out: Var,
    out_proj: Var,
}

impl BoundModel {
    pub(crate) fn bound(&self) -> &Bound {
        &self.bound
    }
}

/// Encoded current sentences of a batch inside a graph.
#[derive(Debug, Clone)]
pub(crate) struct EncodedBatch<F> {
    pub memory: Var,
    pub mask: Vec<F>,
    pub lengths: Vec<usize>,
    pub finals: Vec<(Var, Var)>,
}

/// One part of the context memory inside a graph.
#[derive(Debug, Clone)]
pub(crate) struct MemoryPart<F> {
    pub memory: Var,
    pub mask: Vec<F>,
}

#[derive(Debug, Clone)]
pub(crate) struct GraphStep {
    pub carry: Vec<(Var, Var)>,
    pub hidden: Var,
    pub alpha: Var,
    pub betas: Vec<Var>,
    pub context: Option<Var>,
    pub attentional: Var,
    pub logits: Var,
}

/// Teacher-forced pass over one sentence position of a batch.
#[derive(Debug, Clone)]
pub struct SentenceForward<F> {
    pub loss_sum: Var,
    pub tokens: usize,
    pub encoder: Vec<EncoderStates<F>>,
    pub decoder: Vec<DecoderStates<F>>,
}

fn lstm_init<F: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<F> {
    let mut t = Tensor::uniform(shape, INIT_SCALE, rng);
    if shape.len() == 1 {
        let hid = shape[0] / 4;
        for (k, v) in t.data.iter_mut().enumerate() {
            *v = if (hid..2 * hid).contains(&k) {
                F::of(FORGET_BIAS)
            } else {
                F::zero()
            };
        }
    }
    t
}

fn mask_vec<F: Scalar>(lengths: &[usize], width: usize) -> Vec<F> {
    let mut m = vec![F::zero(); lengths.len() * width];
    for (r, &n) in lengths.iter().enumerate() {
        for t in 0..n.min(width) {
            m[r * width + t] = F::one();
        }
    }
    m
}

fn step_masks<F: Scalar>(lengths: &[usize], steps: usize) -> Vec<Vec<F>> {
    (0..steps)
        .map(|t| {
            lengths
                .iter()
                .map(|&n| if t < n { F::one() } else { F::zero() })
                .collect()
        })
        .collect()
}

impl<F: Scalar> Model<F> {
    /// Fresh model: uniform(-0.08, 0.08) weights, LSTM biases zero except the
    /// forget gate (1.0).
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in param_layout(&config) {
            let t = if name.ends_with(".b") || name.ends_with(".w") {
                lstm_init(&shape, rng)
            } else {
                Tensor::uniform(&shape, INIT_SCALE, rng)
            };
            params.push(&name, t);
        }
        Self::from_params(config, params)
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in param_layout(&config) {
            params.push(&name, Tensor::zeros(&shape));
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let layout_spec = param_layout(&config);
        if layout_spec.len() != params.len() {
            return Err(Error::Incompatible(format!(
                "{} parameters for a {} layout of {}",
                params.len(),
                config.variant,
                layout_spec.len()
            )));
        }
        for ((name, shape), (pn, t)) in layout_spec.iter().zip(params.iter()) {
            if name != pn || *shape != t.shape {
                return Err(Error::Incompatible(format!(
                    "expected {name} {shape:?}, found {pn} {:?}",
                    t.shape
                )));
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    /// Starts a `variant` model from pretrained weights. Shared weights are
    /// copied; the context block of `W_h` starts at zero, so the new model
    /// initially behaves exactly like `base`; a context encoder is freshly
    /// initialised.
    pub fn from_pretrained<R: Rng + ?Sized>(base: &Model<F>, variant: Variant, rng: &mut R) -> Result<Self> {
        let config = base.config.with_variant(variant);
        let mut fresh = Model::new(config, rng)?;
        let h = config.hidden;
        let names: Vec<String> = fresh.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let dst = fresh.params.by_name_mut(&name)?;
            if name.starts_with("ctx.") && base.params.find(&name).is_none() {
                continue;
            }
            let src = base.params.by_name(&name).map_err(|_| {
                Error::Incompatible(format!("pretrained model lacks {name}"))
            })?;
            if name == "attn_out" {
                let (src_cols, dst_cols) = (src.shape[1], dst.shape[1]);
                let shared = src_cols.min(dst_cols);
                for r in 0..h {
                    for c in 0..dst_cols {
                        dst.data[r * dst_cols + c] = if c < shared {
                            src.data[r * src_cols + c]
                        } else {
                            F::zero()
                        };
                    }
                }
            } else {
                if src.shape != dst.shape {
                    return Err(Error::Incompatible(format!(
                        "{name}: pretrained {:?} vs {:?}",
                        src.shape, dst.shape
                    )));
                }
                dst.data.clone_from(&src.data);
            }
        }
        Ok(fresh)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Zeroes the columns of `W_h` that read the context vector.
    pub fn zero_context_block(&mut self) {
        if !self.config.variant.uses_context() {
            return;
        }
        let h = self.config.hidden;
        let w = self.params.get_mut(self.layout.attn_out);
        for r in 0..h {
            for c in 2 * h..3 * h {
                w.data[r * 3 * h + c] = F::zero();
            }
        }
    }

    /// Zeroes the gradient entries of parameters that only the context path
    /// reads: the context block of `W_h` and any context encoder.
    pub fn zero_context_grads(&self, grads: &mut [Vec<F>]) {
        if !self.config.variant.uses_context() {
            return;
        }
        let h = self.config.hidden;
        let w = &mut grads[self.layout.attn_out.0];
        for r in 0..h {
            for c in 2 * h..3 * h {
                w[r * 3 * h + c] = F::zero();
            }
        }
        for &(wi, bi) in &self.layout.ctx {
            grads[wi.0].iter_mut().for_each(|v| *v = F::zero());
            grads[bi.0].iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph<F>) -> BoundModel {
        let bound = self.params.bind(g);
        let layers = |ids: &[(ParamId, ParamId)], hidden: usize| -> Vec<LstmLayer> {
            ids.iter()
                .map(|&(w, b)| LstmLayer {
                    w: bound.var(w),
                    b: bound.var(b),
                    hidden,
                })
                .collect()
        };
        let h = self.config.hidden;
        BoundModel {
            src_embed: bound.var(self.layout.src_embed),
            trg_embed: bound.var(self.layout.trg_embed),
            enc_fwd: layers(&self.layout.enc_fwd, h / 2),
            enc_bwd: layers(&self.layout.enc_bwd, h / 2),
            dec: layers(&self.layout.dec, h),
            ctx: layers(&self.layout.ctx, h),
            attn_out: bound.var(self.layout.attn_out),
            out_proj: bound.var(self.layout.out_proj),
            bound,
        }
    }

    fn check_tokens(&self, rows: &[Vec<u32>], vocab: usize, side: &str) -> Result<()> {
        for row in rows {
            if let Some(&t) = row.iter().find(|&&t| t as usize >= vocab) {
                return Err(Error::InvalidArgument(format!(
                    "{side} token id {t} outside vocabulary of {vocab}"
                )));
            }
        }
        Ok(())
    }

    fn embed_steps<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        table: Var,
        rows: &[Vec<u32>],
        steps: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<u32> = rows.iter().map(|r| r.get(t).copied().unwrap_or(0)).collect();
            let e = g.embed(table, &ids);
            out.push(dropout_var(g, e, self.config.dropout, training, rng)?);
        }
        Ok(out)
    }

    /// Bidirectional encoder over a batch of (unpadded) token rows.
    pub(crate) fn encode_batch<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bm: &BoundModel,
        rows: &[Vec<u32>],
        training: bool,
        rng: &mut R,
    ) -> Result<EncodedBatch<F>> {
        self.check_tokens(rows, self.config.src_vocab, "source")?;
        let batch = rows.len();
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let masks = step_masks::<F>(&lengths, steps);
        let mut inputs = self.embed_steps(g, bm.src_embed, rows, steps, training, rng)?;
        let mut finals = Vec::with_capacity(self.config.layers);
        let layers = self.config.layers;
        for l in 0..layers {
            let (fwd, fs) = run_stack(g, &bm.enc_fwd[l..=l], &inputs, &masks, None, batch, false, |_, v| Ok(v))?;
            let (bwd, bs) = run_stack(g, &bm.enc_bwd[l..=l], &inputs, &masks, None, batch, true, |_, v| Ok(v))?;
            let h = g.concat(&[fs[0].0, bs[0].0]);
            let c = g.concat(&[fs[0].1, bs[0].1]);
            finals.push((h, c));
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let o = g.concat(&[fwd[t], bwd[t]]);
                outs.push(if l + 1 < layers {
                    dropout_var(g, o, self.config.dropout, training, rng)?
                } else {
                    o
                });
            }
            inputs = outs;
        }
        let memory = g.stack(&inputs, batch, self.config.hidden);
        Ok(EncodedBatch {
            memory,
            mask: mask_vec(&lengths, steps),
            lengths,
            finals,
        })
    }

    /// Runs the context encoder over token rows; returns its memory part.
    fn context_encoder<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bm: &BoundModel,
        rows: &[Vec<u32>],
        table: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<MemoryPart<F>> {
        let batch = rows.len();
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let masks = step_masks::<F>(&lengths, steps);
        let inputs = self.embed_steps(g, table, rows, steps, training, rng)?;
        let p = self.config.dropout;
        let (outs, _) = run_stack(g, &bm.ctx, &inputs, &masks, None, batch, false, |g, v| {
            dropout_var(g, v, p, training, rng)
        })?;
        let memory = g.stack(&outs, batch, self.config.hidden);
        Ok(MemoryPart {
            memory,
            mask: mask_vec(&lengths, steps),
        })
    }

    fn constant_memory(&self, g: &mut Graph<F>, rows: &[Option<&StateMatrix<F>>]) -> MemoryPart<F> {
        let dim = self.config.hidden;
        let lengths: Vec<usize> = rows.iter().map(|r| r.map_or(0, |m| m.rows)).collect();
        let width = lengths.iter().copied().max().unwrap_or(0);
        let mut data = vec![F::zero(); rows.len() * width * dim];
        for (b, r) in rows.iter().enumerate() {
            if let Some(m) = r {
                debug_assert_eq!(m.dim, dim);
                let off = b * width * dim;
                data[off..off + m.rows * dim].copy_from_slice(&m.data);
            }
        }
        let memory = g.constant(Tensor {
            shape: vec![rows.len(), width, dim],
            data,
            requires_grad: false,
            grad: None,
        });
        MemoryPart {
            memory,
            mask: mask_vec(&lengths, width),
        }
    }

    /// Context memory for a batch, built from each row's previous sentence.
    pub(crate) fn context_memory<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bm: &BoundModel,
        prev: &[Option<&PrevSentence<F>>],
        training: bool,
        rng: &mut R,
    ) -> Result<Vec<MemoryPart<F>>> {
        let tokens = |pick: fn(&PrevSentence<F>) -> &Vec<u32>| -> Vec<Vec<u32>> {
            prev.iter()
                .map(|p| p.map(|p| pick(p).clone()).unwrap_or_default())
                .collect()
        };
        Ok(match self.config.variant {
            Variant::Baseline => Vec::new(),
            Variant::SeparatedSource => {
                let rows = tokens(|p| &p.source);
                self.check_tokens(&rows, self.config.src_vocab, "context source")?;
                vec![self.context_encoder(g, bm, &rows, bm.src_embed, training, rng)?]
            }
            Variant::SeparatedTarget => {
                let rows = tokens(|p| &p.target);
                self.check_tokens(&rows, self.config.trg_vocab, "context target")?;
                vec![self.context_encoder(g, bm, &rows, bm.trg_embed, training, rng)?]
            }
            Variant::SharedSource => {
                let rows: Vec<_> = prev.iter().map(|p| p.map(|p| &p.encoder)).collect();
                vec![self.constant_memory(g, &rows)]
            }
            Variant::SharedTarget => {
                let rows: Vec<_> = prev.iter().map(|p| p.map(|p| &p.decoder)).collect();
                vec![self.constant_memory(g, &rows)]
            }
            Variant::SharedMix => {
                let src: Vec<_> = prev.iter().map(|p| p.map(|p| &p.encoder)).collect();
                let trg: Vec<_> = prev.iter().map(|p| p.map(|p| &p.decoder)).collect();
                vec![self.constant_memory(g, &src), self.constant_memory(g, &trg)]
            }
        })
    }

    /// Context memory from value-level caches (one per row).
    pub(crate) fn cache_memory(&self, g: &mut Graph<F>, caches: &[&ContextCache<F>]) -> Vec<MemoryPart<F>> {
        let src: Vec<_> = caches.iter().map(|c| c.source.as_ref()).collect();
        let trg: Vec<_> = caches.iter().map(|c| c.target.as_ref()).collect();
        match self.config.variant {
            Variant::Baseline => Vec::new(),
            Variant::SeparatedSource | Variant::SharedSource => vec![self.constant_memory(g, &src)],
            Variant::SeparatedTarget | Variant::SharedTarget => vec![self.constant_memory(g, &trg)],
            Variant::SharedMix => vec![self.constant_memory(g, &src), self.constant_memory(g, &trg)],
        }
    }

    /// One decoder step for every row of a batch.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decoder_step<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bm: &BoundModel,
        inputs: &[u32],
        carry: &[(Var, Var)],
        live: Option<&[F]>,
        enc: &EncodedBatch<F>,
        ctx: &[MemoryPart<F>],
        training: bool,
        rng: &mut R,
    ) -> Result<GraphStep> {
        let e = g.embed(bm.trg_embed, inputs);
        let mut x = dropout_var(g, e, self.config.dropout, training, rng)?;
        let mut new_carry = Vec::with_capacity(carry.len());
        let layers = bm.dec.len();
        for (l, layer) in bm.dec.iter().enumerate() {
            let (h, c) = carry[l];
            let (h2, c2) = g.lstm_cell(x, h, c, layer.w, layer.b)?;
            let (h2, c2) = match live {
                Some(m) if m.iter().any(|&v| v != F::one()) => (g.blend(h2, h, m), g.blend(c2, c, m)),
                _ => (h2, c2),
            };
            new_carry.push((h2, c2));
            x = if l + 1 < layers {
                dropout_var(g, h2, self.config.dropout, training, rng)?
            } else {
                h2
            };
        }
        let hidden = x;
        let alpha = g.attention(hidden, enc.memory, &enc.mask);
        let mut betas = Vec::with_capacity(ctx.len());
        for part in ctx {
            betas.push(g.attention(hidden, part.memory, &part.mask));
        }
        let context = match betas.len() {
            0 => None,
            1 => Some(betas[0]),
            _ => Some(g.add_n(&betas)),
        };
        let cat = match context {
            Some(c) => g.concat(&[hidden, alpha, c]),
            None => g.concat(&[hidden, alpha]),
        };
        let pre = g.linear(cat, bm.attn_out);
        let attentional = g.tanh(pre);
        let logits = g.linear(attentional, bm.out_proj);
        Ok(GraphStep {
            carry: new_carry,
            hidden,
            alpha,
            betas,
            context,
            attentional,
            logits,
        })
    }

    /// Teacher-forced forward pass over one sentence per row. `prev[r]` is the
    /// previous sentence of row `r`'s document (`None` for first sentences).
    /// Rows with an empty source and target are padding and contribute nothing.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn sentence_forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        bm: &BoundModel,
        source: &[Vec<u32>],
        target: &[Vec<u32>],
        prev: &[Option<&PrevSentence<F>>],
        training: bool,
        rng: &mut R,
    ) -> Result<SentenceForward<F>> {
        let batch = source.len();
        if batch == 0 {
            return Err(Error::Empty("batch position"));
        }
        if target.len() != batch || prev.len() != batch {
            return Err(Error::Shape(format!(
                "{batch} sources, {} targets, {} contexts",
                target.len(),
                prev.len()
            )));
        }
        self.check_tokens(target, self.config.trg_vocab, "target")?;
        let enc = self.encode_batch(g, bm, source, training, rng)?;
        let ctx = self.context_memory(g, bm, prev, training, rng)?;
        // a row is real iff it has a source sentence; its decoder runs over
        // BOS y1..yN predicting y1..yN EOS
        let dec_len: Vec<usize> = (0..batch)
            .map(|r| if source[r].is_empty() && target[r].is_empty() { 0 } else { target[r].len() + 1 })
            .collect();
        let steps = dec_len.iter().copied().max().unwrap_or(0);
        let masks = step_masks::<F>(&dec_len, steps);
        let mut carry = enc.finals.clone();
        let mut losses = Vec::with_capacity(steps);
        let mut hidden_steps = Vec::with_capacity(steps);
        for t in 0..steps {
            let inputs: Vec<u32> = target
                .iter()
                .map(|y| if t == 0 { BOS } else { y.get(t - 1).copied().unwrap_or(0) })
                .collect();
            let gold: Vec<u32> = target
                .iter()
                .map(|y| if t < y.len() { y[t] } else { EOS })
                .collect();
            let step = self.decoder_step(g, bm, &inputs, &carry, Some(&masks[t]), &enc, &ctx, training, rng)?;
            losses.push(g.cross_entropy(step.logits, &gold, &masks[t]));
            hidden_steps.push(step.hidden);
            carry = step.carry;
        }
        let loss_sum = if losses.is_empty() {
            let z = g.constant(Tensor::scalar(F::zero()));
            g.sum(z)
        } else {
            g.add_n(&losses)
        };
        let h = self.config.hidden;
        let enc_val = g.value(enc.memory);
        let width = enc_val.shape[1];
        let encoder = (0..batch)
            .map(|r| {
                let n = enc.lengths[r];
                StateMatrix {
                    rows: n,
                    dim: h,
                    data: enc_val.data[r * width * h..(r * width + n) * h].to_vec(),
                }
            })
            .collect();
        let decoder = (0..batch)
            .map(|r| {
                let n = dec_len[r].saturating_sub(1);
                let mut data = Vec::with_capacity(n * h);
                for &s in &hidden_steps[1..=n] {
                    data.extend_from_slice(&g.data(s)[r * h..(r + 1) * h]);
                }
                StateMatrix { rows: n, dim: h, data }
            })
            .collect();
        Ok(SentenceForward {
            loss_sum,
            tokens: dec_len.iter().sum(),
            encoder,
            decoder,
        })
    }

    /// Mean negative log-likelihood per target token (EOS included) of one
    /// sentence position, with the graph-free convenience of returning values.
    pub fn forward_loss<R: Rng + ?Sized>(
        &self,
        source: &[Vec<u32>],
        target: &[Vec<u32>],
        prev: &[Option<&PrevSentence<F>>],
        training: bool,
        rng: &mut R,
    ) -> Result<(F, Vec<PrevSentence<F>>)> {
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let out = self.sentence_forward(&mut g, &bm, source, target, prev, training, rng)?;
        if out.tokens == 0 {
            return Err(Error::Empty("batch position"));
        }
        let loss = g.data(out.loss_sum)[0] / F::of(out.tokens as f64);
        let states = out
            .encoder
            .into_iter()
            .zip(out.decoder)
            .enumerate()
            .map(|(r, (e, d))| PrevSentence {
                source: source[r].clone(),
                target: target[r].clone(),
                encoder: e,
                decoder: d,
            })
            .collect();
        Ok((loss, states))
    }

    /// Loss and parameter gradients (in parameter order) of a teacher-forced
    /// pass over one sentence position.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        source: &[Vec<u32>],
        target: &[Vec<u32>],
        prev: &[Option<&PrevSentence<F>>],
        training: bool,
        rng: &mut R,
    ) -> Result<(F, Vec<Vec<F>>)> {
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let out = self.sentence_forward(&mut g, &bm, source, target, prev, training, rng)?;
        if out.tokens == 0 {
            return Err(Error::Empty("batch position"));
        }
        let loss = g.scale(out.loss_sum, F::one() / F::of(out.tokens as f64));
        g.backward(loss)?;
        Ok((g.data(loss)[0], bm.bound().grads(&g)))
    }

    /// Encoder states of one sentence.
    pub fn encode(&self, source: &[u32]) -> Result<EncoderStates<F>> {
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let mut rng = crate::train::no_rng();
        let enc = self.encode_batch(&mut g, &bm, &[source.to_vec()], false, &mut rng)?;
        Ok(StateMatrix {
            rows: source.len(),
            dim: self.config.hidden,
            data: g.data(enc.memory).to_vec(),
        })
    }

    /// Context memory for sentence `index` of a document given its previous
    /// sentence. Shared variants reuse the saved states as they are; separated
    /// variants run their context encoder.
    pub fn context_states(&self, index: usize, prev: Option<&PrevSentence<F>>) -> Result<ContextCache<F>> {
        if index == 0 {
            return Ok(ContextCache::default());
        }
        let prev = prev.ok_or(Error::MissingContext("previous sentence for a non-initial position"))?;
        let h = self.config.hidden;
        Ok(match self.config.variant {
            Variant::Baseline => ContextCache::default(),
            Variant::SharedSource => ContextCache {
                source: Some(prev.encoder.clone()),
                target: None,
            },
            Variant::SharedTarget => ContextCache {
                source: None,
                target: Some(prev.decoder.clone()),
            },
            Variant::SharedMix => ContextCache {
                source: Some(prev.encoder.clone()),
                target: Some(prev.decoder.clone()),
            },
            Variant::SeparatedSource | Variant::SeparatedTarget => {
                let mut g = Graph::new();
                let bm = self.bind(&mut g);
                let mut rng = crate::train::no_rng();
                let parts = self.context_memory(&mut g, &bm, &[Some(prev)], false, &mut rng)?;
                let m = g.value(parts[0].memory);
                let states = StateMatrix {
                    rows: m.shape[1],
                    dim: h,
                    data: m.data.clone(),
                };
                if self.config.variant == Variant::SeparatedSource {
                    ContextCache {
                        source: Some(states),
                        target: None,
                    }
                } else {
                    ContextCache {
                        source: None,
                        target: Some(states),
                    }
                }
            }
        })
    }

    /// Context attention of a decoder state over a cache: the weighted sum of
    /// cached states (weights softmax of dot scores), summed over memory
    /// parts; zero for an empty cache.
    pub fn context_attention(&self, query: &[F], cache: &ContextCache<F>) -> Result<Vec<F>> {
        let h = self.config.hidden;
        if query.len() != h {
            return Err(Error::Shape(format!("query of length {} for hidden size {h}", query.len())));
        }
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_slice(&[1, h], query)?);
        let parts = self.cache_memory(&mut g, &[cache]);
        let mut out = vec![F::zero(); h];
        for p in parts {
            let c = g.attention(q, p.memory, &p.mask);
            for (o, &v) in out.iter_mut().zip(g.data(c)) {
                *o = *o + v;
            }
        }
        Ok(out)
    }

    /// Decoder carry derived from a sentence's encoder (final states per layer).
    pub fn initial_carry(&self, source: &[u32]) -> Result<Carry<F>> {
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let mut rng = crate::train::no_rng();
        let enc = self.encode_batch(&mut g, &bm, &[source.to_vec()], false, &mut rng)?;
        Ok(Carry {
            layers: enc
                .finals
                .iter()
                .map(|&(h, c)| (g.data(h).to_vec(), g.data(c).to_vec()))
                .collect(),
        })
    }

    /// One inference step for a single sentence: distribution over the target
    /// vocabulary given the previous token, the carry, the current encoder
    /// states and the context cache.
    pub fn decode_step(
        &self,
        prev_token: u32,
        carry: &Carry<F>,
        encoder: &EncoderStates<F>,
        cache: &ContextCache<F>,
    ) -> Result<StepOutput<F>> {
        let h = self.config.hidden;
        if (prev_token as usize) >= self.config.trg_vocab {
            return Err(Error::InvalidArgument(format!("target token {prev_token} outside vocabulary")));
        }
        if carry.layers.len() != self.config.layers || encoder.dim != h {
            return Err(Error::Shape("carry or encoder states do not match the model".to_string()));
        }
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let mut vars = Vec::with_capacity(carry.layers.len());
        for (hv, cv) in &carry.layers {
            let hv = g.constant(Tensor::from_slice(&[1, h], hv)?);
            let cv = g.constant(Tensor::from_slice(&[1, h], cv)?);
            vars.push((hv, cv));
        }
        let enc = EncodedBatch {
            memory: g.constant(Tensor {
                shape: vec![1, encoder.rows, h],
                data: encoder.data.clone(),
                requires_grad: false,
                grad: None,
            }),
            mask: vec![F::one(); encoder.rows],
            lengths: vec![encoder.rows],
            finals: Vec::new(),
        };
        let ctx = self.cache_memory(&mut g, &[cache]);
        let mut rng = crate::train::no_rng();
        let step = self.decoder_step(&mut g, &bm, &[prev_token], &vars, None, &enc, &ctx, false, &mut rng)?;
        let mut probs = vec![F::zero(); self.config.trg_vocab];
        crate::tensor::softmax_into(g.data(step.logits), &mut probs);
        Ok(StepOutput {
            probs,
            carry: Carry {
                layers: step
                    .carry
                    .iter()
                    .map(|&(hv, cv)| (g.data(hv).to_vec(), g.data(cv).to_vec()))
                    .collect(),
            },
            attentional: g.data(step.attentional).to_vec(),
            hidden: g.data(step.hidden).to_vec(),
            alpha: g.attention_weights(step.alpha).unwrap().to_vec(),
            beta: step
                .betas
                .iter()
                .map(|&b| g.attention_weights(b).unwrap().to_vec())
                .collect(),
            context: step.context.map_or_else(|| vec![F::zero(); h], |c| g.data(c).to_vec()),
        })
    }
}
