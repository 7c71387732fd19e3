//! Greedy and beam-search translation of whole documents.
//!
//! Sentences of a document are translated in order. The context for sentence
//! `i` comes from the model's own output for sentence `i - 1` (hypothesis
//! tokens and the decoder states that produced them), never from references,
//! unless the caller asks for a number of leading sentences to be forced to
//! their references.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{EncodedBatch, MemoryPart, Model, PrevSentence, StateMatrix};
use crate::scalar::Scalar;
use crate::subword::{BOS, EOS, PAD};
use crate::train::no_rng;

pub const DEFAULT_MAX_RATIO: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    /// 1 selects greedy decoding.
    pub beam_size: usize,
    /// Hypotheses stop after `max_ratio × source length` tokens.
    pub max_ratio: usize,
    /// Leading sentences of each document that are forced to their
    /// references instead of being decoded.
    pub forced_prefix: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 1,
            max_ratio: DEFAULT_MAX_RATIO,
            forced_prefix: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocumentTranslation {
    pub hypotheses: Vec<Vec<u32>>,
    /// Sentences whose context memory reused saved states.
    pub cache_hits: usize,
    /// Sentences for which a context encoder was run.
    pub context_encoder_runs: usize,
}

struct Decoded<F> {
    tokens: Vec<u32>,
    encoder: StateMatrix<F>,
    decoder: StateMatrix<F>,
}

fn argmax<F: Scalar>(row: &[F]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

fn log_softmax<F: Scalar>(row: &[F]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let total: f64 = row.iter().map(|v| num_traits::Float::exp(v.as_f64() - max)).sum();
    let lse = max + num_traits::Float::ln(total);
    row.iter().map(|v| v.as_f64() - lse).collect()
}

fn encoder_rows<F: Scalar>(g: &Graph<F>, enc: &EncodedBatch<F>, dim: usize) -> Vec<StateMatrix<F>> {
    let m = g.value(enc.memory);
    let width = m.shape[1];
    enc.lengths
        .iter()
        .enumerate()
        .map(|(r, &n)| StateMatrix {
            rows: n,
            dim,
            data: m.data[r * width * dim..(r * width + n) * dim].to_vec(),
        })
        .collect()
}

impl<F: Scalar> Model<F> {
    /// Greedy decoding of one sentence per row, all rows in lockstep.
    fn greedy_batch(
        &self,
        sources: &[Vec<u32>],
        prev: &[Option<&PrevSentence<F>>],
        max_ratio: usize,
    ) -> Result<Vec<Decoded<F>>> {
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let mut rng = no_rng();
        let enc = self.encode_batch(&mut g, &bm, sources, false, &mut rng)?;
        let ctx = self.context_memory(&mut g, &bm, prev, false, &mut rng)?;
        let h = self.config.hidden;
        let batch = sources.len();
        let limits: Vec<usize> = sources.iter().map(|s| s.len() * max_ratio).collect();
        let mut done: Vec<bool> = limits.iter().map(|&l| l == 0).collect();
        let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); batch];
        let mut states: Vec<Vec<F>> = vec![Vec::new(); batch];
        let mut inputs = vec![BOS; batch];
        let mut carry = enc.finals.clone();
        while done.iter().any(|d| !d) {
            let live: Vec<F> = done.iter().map(|&d| if d { F::zero() } else { F::one() }).collect();
            let step = self.decoder_step(&mut g, &bm, &inputs, &carry, Some(&live), &enc, &ctx, false, &mut rng)?;
            let v = self.config.trg_vocab;
            for r in 0..batch {
                if done[r] {
                    inputs[r] = PAD;
                    continue;
                }
                if inputs[r] != BOS {
                    states[r].extend_from_slice(&g.data(step.hidden)[r * h..(r + 1) * h]);
                }
                if tokens[r].len() >= limits[r] {
                    done[r] = true;
                    inputs[r] = PAD;
                    continue;
                }
                let y = argmax(&g.data(step.logits)[r * v..(r + 1) * v]);
                if y == EOS {
                    done[r] = true;
                } else {
                    tokens[r].push(y);
                }
                inputs[r] = y;
            }
            carry = step.carry;
        }
        let encoders = encoder_rows(&g, &enc, h);
        Ok(tokens
            .into_iter()
            .zip(states)
            .zip(encoders)
            .map(|((tokens, st), encoder)| Decoded {
                tokens,
                decoder: StateMatrix {
                    rows: st.len() / h,
                    dim: h,
                    data: st,
                },
                encoder,
            })
            .collect())
    }

    /// Beam search for one sentence. Scores are summed log-probabilities;
    /// finished hypotheses are ranked by score per token (EOS included).
    fn beam_sentence(
        &self,
        source: &[u32],
        prev: Option<&PrevSentence<F>>,
        beam: usize,
        max_ratio: usize,
    ) -> Result<Decoded<F>> {
        struct Hyp<F> {
            tokens: Vec<u32>,
            states: Vec<F>,
            score: f64,
        }
        let mut g = Graph::new();
        let bm = self.bind(&mut g);
        let mut rng = no_rng();
        let enc1 = self.encode_batch(&mut g, &bm, &[source.to_vec()], false, &mut rng)?;
        let ctx1 = self.context_memory(&mut g, &bm, &[prev], false, &mut rng)?;
        let h = self.config.hidden;
        let encoder = encoder_rows(&g, &enc1, h).pop().unwrap();
        let limit = source.len() * max_ratio;
        if limit == 0 {
            return Ok(Decoded {
                tokens: Vec::new(),
                encoder,
                decoder: StateMatrix::empty(h),
            });
        }
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            states: Vec::new(),
            score: 0.0,
        }];
        let mut carry = enc1.finals.clone();
        let mut finished: Vec<(f64, Hyp<F>)> = Vec::new();
        let v = self.config.trg_vocab;
        for t in 0..=limit {
            let n = live.len();
            let zeros = vec![0usize; n];
            let enc = EncodedBatch {
                memory: g.gather_rows(enc1.memory, &zeros),
                mask: enc1.mask.repeat(n),
                lengths: vec![source.len(); n],
                finals: Vec::new(),
            };
            let ctx: Vec<MemoryPart<F>> = ctx1
                .iter()
                .map(|p| MemoryPart {
                    memory: g.gather_rows(p.memory, &zeros),
                    mask: p.mask.repeat(n),
                })
                .collect();
            let inputs: Vec<u32> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
            let step = self.decoder_step(&mut g, &bm, &inputs, &carry, None, &enc, &ctx, false, &mut rng)?;
            if t == limit {
                // length limit reached: keep the state of the last token and stop
                for (i, mut hyp) in live.drain(..).enumerate() {
                    hyp.states.extend_from_slice(&g.data(step.hidden)[i * h..(i + 1) * h]);
                    let norm = hyp.score / hyp.tokens.len().max(1) as f64;
                    finished.push((norm, hyp));
                }
                break;
            }
            let mut cands: Vec<(f64, usize, u32)> = Vec::with_capacity(n * v);
            for (i, hyp) in live.iter().enumerate() {
                let lp = log_softmax(&g.data(step.logits)[i * v..(i + 1) * v]);
                for (y, l) in lp.into_iter().enumerate() {
                    cands.push((hyp.score + l, i, y as u32));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            let mut rows = Vec::new();
            for &(score, i, y) in cands.iter().take(beam) {
                let mut states = live[i].states.clone();
                if t > 0 {
                    states.extend_from_slice(&g.data(step.hidden)[i * h..(i + 1) * h]);
                }
                let mut tokens = live[i].tokens.clone();
                if y == EOS {
                    let norm = score / (tokens.len() + 1) as f64;
                    finished.push((norm, Hyp { tokens, states, score }));
                } else {
                    tokens.push(y);
                    next.push(Hyp { tokens, states, score });
                    rows.push(i);
                }
            }
            if next.is_empty() || finished.len() >= beam {
                break;
            }
            carry = step
                .carry
                .iter()
                .map(|&(hv, cv)| (g.gather_rows(hv, &rows), g.gather_rows(cv, &rows)))
                .collect::<Vec<(Var, Var)>>();
            live = next;
        }
        let mut best = 0;
        for (i, (s, _)) in finished.iter().enumerate() {
            if *s > finished[best].0 {
                best = i;
            }
        }
        let hyp = finished.swap_remove(best).1;
        Ok(Decoded {
            decoder: StateMatrix {
                rows: hyp.states.len() / h,
                dim: h,
                data: hyp.states,
            },
            tokens: hyp.tokens,
            encoder,
        })
    }

    /// Translates documents (lists of source sentences). With
    /// `cfg.forced_prefix = k`, the first `k` sentences of each document are
    /// taken from `references` and only provide context.
    pub fn translate_documents(
        &self,
        sources: &[Vec<Vec<u32>>],
        references: Option<&[Vec<Vec<u32>>]>,
        cfg: &DecodeConfig,
    ) -> Result<Vec<DocumentTranslation>> {
        if cfg.beam_size == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        if cfg.forced_prefix > 0 {
            let refs = references.ok_or(Error::MissingContext("references for forced sentences"))?;
            if refs.len() != sources.len() || refs.iter().zip(sources).any(|(r, s)| r.len() != s.len()) {
                return Err(Error::Shape(format!(
                    "references do not align with {} source documents",
                    sources.len()
                )));
            }
        }
        let mut out: Vec<DocumentTranslation> = vec![DocumentTranslation::default(); sources.len()];
        let mut prev: BTreeMap<usize, PrevSentence<F>> = BTreeMap::new();
        let positions = sources.iter().map(Vec::len).max().unwrap_or(0);
        let variant = self.config.variant;
        for i in 0..positions {
            let docs: Vec<usize> = (0..sources.len()).filter(|&d| i < sources[d].len()).collect();
            let src: Vec<Vec<u32>> = docs.iter().map(|&d| sources[d][i].clone()).collect();
            let ctx: Vec<Option<&PrevSentence<F>>> = docs.iter().map(|d| prev.get(d)).collect();
            if i > 0 {
                for &d in &docs {
                    if variant.is_shared() {
                        out[d].cache_hits += 1;
                    } else if variant.has_context_encoder() {
                        out[d].context_encoder_runs += 1;
                    }
                }
            }
            let decoded: Vec<Decoded<F>> = if i < cfg.forced_prefix {
                let refs = references.unwrap();
                let trg: Vec<Vec<u32>> = docs.iter().map(|&d| refs[d][i].clone()).collect();
                let (_, states) = self.forward_loss(&src, &trg, &ctx, false, &mut no_rng())?;
                states
                    .into_iter()
                    .map(|p| Decoded {
                        tokens: p.target,
                        encoder: p.encoder,
                        decoder: p.decoder,
                    })
                    .collect()
            } else if cfg.beam_size == 1 {
                self.greedy_batch(&src, &ctx, cfg.max_ratio)?
            } else {
                let mut v = Vec::with_capacity(docs.len());
                for (k, s) in src.iter().enumerate() {
                    v.push(self.beam_sentence(s, ctx[k], cfg.beam_size, cfg.max_ratio)?);
                }
                v
            };
            for ((&d, s), dec) in docs.iter().zip(src).zip(decoded) {
                out[d].hypotheses.push(dec.tokens.clone());
                prev.insert(
                    d,
                    PrevSentence {
                        source: s,
                        target: dec.tokens,
                        encoder: dec.encoder,
                        decoder: dec.decoder,
                    },
                );
            }
        }
        Ok(out)
    }

    /// Translates a single document.
    pub fn translate_document(&self, sources: &[Vec<u32>], cfg: &DecodeConfig) -> Result<DocumentTranslation> {
        if cfg.forced_prefix > 0 {
            return Err(Error::MissingContext("references for forced sentences"));
        }
        Ok(self
            .translate_documents(&[sources.to_vec()], None, cfg)?
            .pop()
            .unwrap_or_default())
    }
}
