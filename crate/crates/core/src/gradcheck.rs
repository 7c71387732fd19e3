//! Central finite-difference oracle for the autodiff engine.
//!
//! [`MiniGraph`] builds small random computations over the graph operations;
//! [`FullCase`] wraps a complete `forward_loss` of a tiny model. Both compare
//! analytic gradients, computed at 32 or 64 bits, with 64-bit central
//! differences.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::model::{Model, ModelConfig, PrevSentence, StateMatrix, Variant};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::no_rng;

/// Finite-difference step.
pub const EPS: f64 = 1e-4;
/// Denominator floor of [`rel_err`].
pub const REL_FLOOR: f64 = 1e-3;

/// |a - n| / max(|a|, |n|, floor).
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// A random computation over a few leaf tensors, ending in a scalar.
pub struct MiniGraph {
    pub kind: usize,
    leaves: Vec<Tensor<f64>>,
    targets: Vec<u32>,
    weights: Vec<f64>,
    mask: Vec<f64>,
    keep: Vec<f64>,
    ids: Vec<u32>,
}

pub const KINDS: usize = 7;

impl MiniGraph {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = seed as usize % KINDS;
        let b = rng.gen_range(1..4);
        let d = rng.gen_range(2..5);
        let o = rng.gen_range(2..5);
        let t = rng.gen_range(1..4);
        let mut r = |shape: &[usize]| Tensor::uniform(shape, 1.0, &mut rng).with_grad();
        let leaves = match kind {
            // linear -> tanh -> cross entropy
            0 => vec![r(&[b, d]), r(&[o, d])],
            // lstm cell
            1 => vec![
                r(&[b, d]),
                r(&[b, o]),
                r(&[b, o]),
                r(&[4 * o, d + o]),
                r(&[4 * o]),
            ],
            // attention
            2 => vec![r(&[b, d]), r(&[b, t, d])],
            // concat / slice / mul / sigmoid
            3 => vec![r(&[b, d]), r(&[b, o]), r(&[b, d + o])],
            // softmax, sub, dot
            4 => vec![r(&[b, d]), r(&[b, d])],
            // embed + blend
            5 => vec![r(&[6, d]), r(&[b, d])],
            // stack + gather + attention
            _ => vec![r(&[b, d]), r(&[b, d]), r(&[b, d])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        MiniGraph {
            leaves,
            kind,
            targets: (0..b).map(|_| rng.gen_range(0..o as u32)).collect(),
            weights: (0..b)
                .map(|i| {
                    if i == 0 {
                        1.0
                    } else {
                        rng.gen_range(0..2) as f64
                    }
                })
                .collect(),
            mask: (0..b * t)
                .map(|i| {
                    if i % t == 0 {
                        1.0
                    } else {
                        rng.gen_range(0..2) as f64
                    }
                })
                .collect(),
            keep: (0..b).map(|_| rng.gen_range(0..2) as f64).collect(),
            ids: (0..b).map(|_| rng.gen_range(0..6)).collect(),
        }
    }

    fn build<F: Scalar>(&self, g: &mut Graph<F>, leaves: &[Tensor<F>]) -> Result<(Vec<Var>, Var)> {
        let v: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
        let cast = |xs: &[f64]| xs.iter().map(|&x| F::of(x)).collect::<Vec<F>>();
        let loss = match self.kind {
            0 => {
                let z = g.linear(v[0], v[1]);
                let z = g.tanh(z);
                let z = g.scale(z, F::of(3.0));
                g.cross_entropy(z, &self.targets, &cast(&self.weights))
            }
            1 => {
                let (h, c) = g.lstm_cell(v[0], v[1], v[2], v[3], v[4])?;
                let hc = g.mul(h, c);
                let s = g.add(hc, h);
                g.sum(s)
            }
            2 => {
                let c = g.attention(v[0], v[1], &cast(&self.mask));
                let c2 = g.tanh(c);
                g.dot(c2, v[0])
            }
            3 => {
                let cat = g.concat(&[v[0], v[1]]);
                let m = g.mul(cat, v[2]);
                let s = g.sigmoid(m);
                let part = g.slice_cols(s, 1, 2);
                let part = g.tanh(part);
                g.sum(part)
            }
            4 => {
                let d = g.sub(v[0], v[1]);
                let p = g.softmax(d);
                let q = g.mul_const(
                    p,
                    (0..leaves[0].len())
                        .map(|i| F::of(i as f64 + 1.0))
                        .collect(),
                );
                let s = g.dot(q, v[1]);
                let t = g.sum(q);
                g.add_n(&[s, t])
            }
            5 => {
                let e = g.embed(v[0], &self.ids);
                let e = g.tanh(e);
                let b = g.blend(e, v[1], &cast(&self.keep));
                let b2 = g.mul(b, b);
                g.sum(b2)
            }
            _ => {
                let (b, d) = (leaves[0].shape[0], leaves[0].shape[1]);
                let mem = g.stack(&[v[1], v[2]], b, d);
                let idx: Vec<usize> = (0..b).rev().collect();
                let q = g.gather_rows(v[0], &idx);
                let mask = vec![F::one(); b * 2];
                let c = g.attention(q, mem, &mask);
                let c = g.tanh(c);
                let c2 = g.mul(c, q);
                g.sum(c2)
            }
        };
        Ok((v, loss))
    }

    fn loss_at(&self, leaves: &[Tensor<f64>]) -> Result<f64> {
        let mut g = Graph::new();
        let (_, l) = self.build(&mut g, leaves)?;
        Ok(g.data(l)[0])
    }

    pub fn numeric(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for k in 0..self.leaves.len() {
            let mut gk = Vec::new();
            for i in 0..self.leaves[k].len() {
                let mut p = self.leaves.clone();
                p[k].data[i] += EPS;
                let up = self.loss_at(&p)?;
                p[k].data[i] -= 2.0 * EPS;
                let down = self.loss_at(&p)?;
                gk.push((up - down) / (2.0 * EPS));
            }
            out.push(gk);
        }
        Ok(out)
    }

    pub fn check(&self) -> Result<GradCheck> {
        Ok(summarize(
            &self.numeric()?,
            &self.analytic::<f64>()?,
            &self.analytic::<f32>()?,
        ))
    }

    pub fn analytic<F: Scalar>(&self) -> Result<Vec<Vec<f64>>> {
        let leaves: Vec<Tensor<F>> = self.leaves.iter().map(|t| t.cast()).collect();
        let mut g = Graph::new();
        let (vars, loss) = self.build(&mut g, &leaves)?;
        g.backward(loss)?;
        Ok(vars
            .iter()
            .map(|&v| g.grad(v).iter().map(|x| x.as_f64()).collect())
            .collect())
    }
}

/// Largest relative errors of the 64- and 32-bit analytic gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_f64: f64,
    pub max_rel_f32: f64,
    /// Leaves or parameters whose 64-bit gradient is exactly zero.
    pub zero_gradients: Vec<usize>,
}

fn summarize(num: &[Vec<f64>], a64: &[Vec<f64>], a32: &[Vec<f64>]) -> GradCheck {
    GradCheck {
        max_rel_f64: max_rel(a64, num, REL_FLOOR),
        max_rel_f32: max_rel(a32, num, REL_FLOOR),
        zero_gradients: a64
            .iter()
            .enumerate()
            .filter(|(_, g)| g.iter().all(|&v| v == 0.0))
            .map(|(i, _)| i)
            .collect(),
    }
}

pub fn max_rel(a: &[Vec<f64>], n: &[Vec<f64>], floor: f64) -> f64 {
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(&a, &n)| rel_err(a, n, floor))
        .fold(0.0, f64::max)
}

/// One `forward_loss` of a V = 12, E = H = 4 model over a three-sentence
/// batch whose last row has no previous sentence. Dropout is off.
pub struct FullCase {
    pub model: Model<f64>,
    source: Vec<Vec<u32>>,
    target: Vec<Vec<u32>>,
    prev: Vec<Option<PrevSentence<f64>>>,
}

impl FullCase {
    pub fn new(variant: Variant, seed: u64) -> Result<FullCase> {
        let cfg = ModelConfig {
            variant,
            emb: 4,
            hidden: 4,
            src_vocab: 12,
            trg_vocab: 12,
            layers: 2,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::<f64>::new(cfg, &mut rng)?;
        // uniform(-0.5, 0.5) weights in place of the default init
        for t in model.params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let mut toks = |n: usize| (0..n).map(|_| rng.gen_range(3..12u32)).collect::<Vec<_>>();
        let prev_src = vec![toks(3), toks(2)];
        let prev_trg = vec![toks(2), toks(4)];
        let (_, prev) =
            model.forward_loss(&prev_src, &prev_trg, &[None, None], false, &mut no_rng())?;
        let source = vec![toks(2), toks(4), toks(3)];
        let target = vec![toks(3), toks(1), toks(2)];
        let mut prev: Vec<Option<PrevSentence<f64>>> = prev.into_iter().map(Some).collect();
        prev.push(None);
        Ok(FullCase {
            model,
            source,
            target,
            prev,
        })
    }

    fn loss(&self, m: &Model<f64>) -> Result<f64> {
        let prev: Vec<Option<&PrevSentence<f64>>> = self.prev.iter().map(Option::as_ref).collect();
        let mut rng = no_rng();
        Ok(
            m.forward_loss(&self.source, &self.target, &prev, false, &mut rng)?
                .0,
        )
    }

    pub fn numeric(&self) -> Result<Vec<Vec<f64>>> {
        let mut m = self.model.clone();
        let mut out = Vec::new();
        for k in 0..m.params.len() {
            let mut gk = Vec::new();
            for i in 0..m.params.tensors()[k].len() {
                let orig = m.params.tensors()[k].data[i];
                m.params.tensors_mut()[k].data[i] = orig + EPS;
                let up = self.loss(&m)?;
                m.params.tensors_mut()[k].data[i] = orig - EPS;
                let down = self.loss(&m)?;
                m.params.tensors_mut()[k].data[i] = orig;
                gk.push((up - down) / (2.0 * EPS));
            }
            out.push(gk);
        }
        Ok(out)
    }

    pub fn check(&self) -> Result<GradCheck> {
        Ok(summarize(
            &self.numeric()?,
            &self.analytic::<f64>()?,
            &self.analytic::<f32>()?,
        ))
    }

    pub fn analytic<F: Scalar>(&self) -> Result<Vec<Vec<f64>>> {
        let m: Model<F> = self.model.cast();
        let prev: Vec<Option<PrevSentence<F>>> = self
            .prev
            .iter()
            .map(|p| {
                p.as_ref().map(|p| PrevSentence {
                    source: p.source.clone(),
                    target: p.target.clone(),
                    encoder: cast_states(&p.encoder),
                    decoder: cast_states(&p.decoder),
                })
            })
            .collect();
        let prev: Vec<Option<&PrevSentence<F>>> = prev.iter().map(Option::as_ref).collect();
        let mut rng = no_rng();
        let (_, grads) = m.loss_and_grads(&self.source, &self.target, &prev, false, &mut rng)?;
        Ok(grads
            .iter()
            .map(|g| g.iter().map(|x| x.as_f64()).collect())
            .collect())
    }
}

fn cast_states<F: Scalar>(s: &StateMatrix<f64>) -> StateMatrix<F> {
    StateMatrix {
        rows: s.rows,
        dim: s.dim,
        data: s.data.iter().map(|&v| F::of(v)).collect(),
    }
}
