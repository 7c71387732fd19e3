//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the [`Graph`] tape; the node index is the
//! handle ([`Var`]). Execution order is the topological order, so
//! [`Graph::backward`] walks the tape in reverse. Shape errors in the
//! elementwise and matrix ops are programming errors and panic; the checked
//! entry points ([`Graph::lstm_cell`], [`Graph::backward`]) return `Result`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{softmax_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MulConst(Var, Vec<F>),
    Tanh(Var),
    Sigmoid(Var),
    Linear {
        x: Var,
        w: Var,
    },
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Stack(Vec<Var>),
    Embed {
        table: Var,
        ids: Vec<u32>,
    },
    Lstm {
        x: Var,
        h: Var,
        c: Var,
        w: Var,
        b: Var,
        gates: Vec<F>,
        tanh_c: Vec<F>,
    },
    Blend {
        new: Var,
        old: Var,
        keep: Vec<F>,
    },
    Attention {
        query: Var,
        memory: Var,
        weights: Vec<F>,
    },
    Softmax(Var),
    SumAll(Var),
    AddN(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        weights: Vec<F>,
        probs: Vec<F>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation. One graph belongs to one worker; build a new graph
/// per forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = k * 4;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut tail = F::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<F: Scalar>(y: &mut [F], alpha: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        value.requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Its `requires_grad` flag decides whether a
    /// gradient is computed for it.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value: Tensor {
                grad: None,
                ..t
            },
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a constant (no gradient).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(Tensor {
            requires_grad: false,
            ..t
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Attention weights recorded by an [`attention`](Self::attention) node,
    /// row-major `[batch, memory_len]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[F]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to
    /// `v`. Nodes the loss does not depend on get zeros.
    pub fn grad(&self, v: Var) -> Vec<F> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![F::zero(); self.nodes[v.0].value.len()],
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa == sb, "{what}: shape {sa:?} vs {sb:?}");
    }

    fn map(&mut self, a: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(out, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Var {
        self.same_shape(a, b, "elementwise op");
        let (ta, tb) = (self.value(a), self.value(b));
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<F>) -> Var {
        assert_eq!(c.len(), self.value(a).len(), "mul_const length");
        let t = self.value(a);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&c).map(|(&x, &m)| x * m).collect(),
            requires_grad: false,
            grad: None,
        };
        self.push(out, Op::MulConst(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// `x · wᵀ` for `x: [rows, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        assert_eq!(tw.rank(), 2, "linear weight must be a matrix");
        let (n_in, n_out) = (tw.shape[1], tw.shape[0]);
        assert_eq!(tx.cols(), n_in, "linear: input width vs weight {:?}", tw.shape);
        let rows = tx.rows();
        let mut data = vec![F::zero(); rows * n_out];
        for r in 0..rows {
            let xr = &tx.data[r * n_in..(r + 1) * n_in];
            let out = &mut data[r * n_out..(r + 1) * n_out];
            for (o, y) in out.iter_mut().enumerate() {
                *y = dot(xr, &tw.data[o * n_in..(o + 1) * n_in]);
            }
        }
        let mut shape = tx.shape.clone();
        *shape.last_mut().unwrap() = n_out;
        if shape.len() == 1 {
            shape = vec![n_out];
        }
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Linear { x, w },
            &[x, w],
        )
    }

    /// Concatenation along the last axis. All inputs must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            assert_eq!(self.value(p).rows(), rows, "concat row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.value(parts[0]).shape.clone();
        *shape.last_mut().unwrap() = total;
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Concat(parts.to_vec()),
            parts,
        )
    }

    /// Columns `start..start + len` of every row.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x);
        let c = t.cols();
        assert!(start + len <= c, "slice_cols out of range");
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * c + start..r * c + start + len]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = len;
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::SliceCols { x, start },
            &[x],
        )
    }

    /// Stacks `T` matrices of shape `[B, H]` into `[B, T, H]`.
    pub fn stack(&mut self, steps: &[Var], batch: usize, dim: usize) -> Var {
        let t = steps.len();
        let mut data = vec![F::zero(); batch * t * dim];
        for (k, &s) in steps.iter().enumerate() {
            let v = self.value(s);
            assert_eq!(v.shape, [batch, dim], "stack element shape");
            for b in 0..batch {
                let dst = (b * t + k) * dim;
                data[dst..dst + dim].copy_from_slice(&v.data[b * dim..(b + 1) * dim]);
            }
        }
        self.push(
            Tensor {
                shape: vec![batch, t, dim],
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Stack(steps.to_vec()),
            steps,
        )
    }

    /// Row lookup into an embedding table `[vocab, dim]`.
    pub fn embed(&mut self, table: Var, ids: &[u32]) -> Var {
        let t = self.value(table);
        assert_eq!(t.rank(), 2, "embedding table must be a matrix");
        let dim = t.shape[1];
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            let id = id as usize;
            assert!(id < t.shape[0], "token id {id} outside vocabulary");
            data.extend_from_slice(&t.data[id * dim..(id + 1) * dim]);
        }
        self.push(
            Tensor {
                shape: vec![ids.len(), dim],
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// One LSTM step for a batch of rows.
    ///
    /// `x: [B, in]`, `h, c: [B, H]`, `w: [4H, in + H]`, `b: [4H]`; gate blocks
    /// are ordered input, forget, candidate, output. Returns `(h', c')`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<(Var, Var)> {
        let (tx, th, tc, tw, tb) = (
            self.value(x),
            self.value(h),
            self.value(c),
            self.value(w),
            self.value(b),
        );
        if th.rank() != 2 || tx.rank() != 2 {
            return Err(Error::Shape(format!(
                "lstm expects matrices, got x {:?}, h {:?}",
                tx.shape, th.shape
            )));
        }
        let (batch, hid) = (th.shape[0], th.shape[1]);
        let n_in = tx.shape[1];
        if tc.shape != th.shape {
            return Err(Error::Shape(format!("lstm c {:?} vs h {:?}", tc.shape, th.shape)));
        }
        if tx.shape[0] != batch {
            return Err(Error::Shape(format!("lstm x {:?} vs h {:?}", tx.shape, th.shape)));
        }
        if tw.shape != [4 * hid, n_in + hid] || tb.shape != [4 * hid] {
            return Err(Error::Shape(format!(
                "lstm weights {:?}/{:?} do not fit input {n_in} hidden {hid}",
                tw.shape, tb.shape
            )));
        }
        let z_width = n_in + hid;
        let mut gates = vec![F::zero(); batch * 4 * hid];
        let mut tanh_c = vec![F::zero(); batch * hid];
        let mut out = vec![F::zero(); batch * 2 * hid];
        let mut z = vec![F::zero(); z_width];
        for r in 0..batch {
            z[..n_in].copy_from_slice(&tx.data[r * n_in..(r + 1) * n_in]);
            z[n_in..].copy_from_slice(&th.data[r * hid..(r + 1) * hid]);
            let g = &mut gates[r * 4 * hid..(r + 1) * 4 * hid];
            for (k, gk) in g.iter_mut().enumerate() {
                let pre = dot(&z, &tw.data[k * z_width..(k + 1) * z_width]) + tb.data[k];
                *gk = if (2 * hid..3 * hid).contains(&k) {
                    pre.tanh()
                } else {
                    sigmoid(pre)
                };
            }
            for j in 0..hid {
                let (i_g, f_g, c_g, o_g) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                let c_new = f_g * tc.data[r * hid + j] + i_g * c_g;
                let tc_new = c_new.tanh();
                tanh_c[r * hid + j] = tc_new;
                out[r * 2 * hid + j] = o_g * tc_new;
                out[r * 2 * hid + hid + j] = c_new;
            }
        }
        let node = self.push(
            Tensor {
                shape: vec![batch, 2 * hid],
                data: out,
                requires_grad: false,
                grad: None,
            },
            Op::Lstm {
                x,
                h,
                c,
                w,
                b,
                gates,
                tanh_c,
            },
            &[x, h, c, w, b],
        );
        let h_new = self.slice_cols(node, 0, hid);
        let c_new = self.slice_cols(node, hid, hid);
        Ok((h_new, c_new))
    }

    /// Row-wise select: rows with `keep[r] == 1` take `new`, the others `old`.
    pub fn blend(&mut self, new: Var, old: Var, keep: &[F]) -> Var {
        self.same_shape(new, old, "blend");
        let (tn, to) = (self.value(new), self.value(old));
        let c = tn.cols();
        assert_eq!(keep.len(), tn.rows(), "blend mask length");
        let mut data = Vec::with_capacity(tn.len());
        for (r, &k) in keep.iter().enumerate() {
            for j in 0..c {
                let i = r * c + j;
                data.push(k * tn.data[i] + (F::one() - k) * to.data[i]);
            }
        }
        let shape = tn.shape.clone();
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Blend {
                new,
                old,
                keep: keep.to_vec(),
            },
            &[new, old],
        )
    }

    /// Dot-product attention of `query: [B, H]` over `memory: [B, T, H]`.
    ///
    /// Weights are a softmax of `memory[b, t] · query[b]` over the positions
    /// with `mask[b * T + t] == 1`; a row with no unmasked position (including
    /// `T == 0`) gets all-zero weights and a zero context vector.
    pub fn attention(&mut self, query: Var, memory: Var, mask: &[F]) -> Var {
        let (tq, tm) = (self.value(query), self.value(memory));
        assert_eq!(tq.rank(), 2, "attention query must be [B, H]");
        let (batch, dim) = (tq.shape[0], tq.shape[1]);
        assert!(
            tm.rank() == 3 && tm.shape[0] == batch && tm.shape[2] == dim,
            "attention memory {:?} vs query {:?}",
            tm.shape,
            tq.shape
        );
        let t_len = tm.shape[1];
        assert_eq!(mask.len(), batch * t_len, "attention mask length");
        let mut weights = vec![F::zero(); batch * t_len];
        let mut out = vec![F::zero(); batch * dim];
        let mut scores = Vec::with_capacity(t_len);
        for b in 0..batch {
            let q = &tq.data[b * dim..(b + 1) * dim];
            scores.clear();
            let mut live = 0;
            for t in 0..t_len {
                if mask[b * t_len + t] > F::zero() {
                    let m = &tm.data[(b * t_len + t) * dim..(b * t_len + t + 1) * dim];
                    scores.push(dot(m, q));
                    live += 1;
                } else {
                    scores.push(F::neg_infinity());
                }
            }
            if live == 0 {
                continue;
            }
            let w = &mut weights[b * t_len..(b + 1) * t_len];
            softmax_into(&scores, w);
            let o = &mut out[b * dim..(b + 1) * dim];
            for (t, &a) in w.iter().enumerate() {
                if a != F::zero() {
                    axpy(o, a, &tm.data[(b * t_len + t) * dim..(b * t_len + t + 1) * dim]);
                }
            }
        }
        self.push(
            Tensor {
                shape: vec![batch, dim],
                data: out,
                requires_grad: false,
                grad: None,
            },
            Op::Attention {
                query,
                memory,
                weights,
            },
            &[query, memory],
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = vec![F::zero(); t.len()];
        for r in 0..t.rows() {
            softmax_into(t.row(r), &mut data[r * c..(r + 1) * c]);
        }
        let shape = t.shape.clone();
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::Softmax(a),
            &[a],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// Sum of same-shaped tensors, accumulated in argument order.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        let mut acc = self.value(parts[0]).clone();
        acc.grad = None;
        for &p in &parts[1..] {
            let t = self.value(p);
            assert_eq!(t.shape, acc.shape, "add_n shape mismatch");
            for (a, &v) in acc.data.iter_mut().zip(&t.data) {
                *a = *a + v;
            }
        }
        self.push(acc, Op::AddN(parts.to_vec()), parts)
    }

    /// Weighted negative log-likelihood summed over rows:
    /// `Σ_r weights[r] · −log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[F]) -> Var {
        let t = self.value(logits);
        assert_eq!(t.rank(), 2, "cross_entropy expects [B, V] logits");
        let (rows, v) = (t.shape[0], t.shape[1]);
        assert!(targets.len() == rows && weights.len() == rows, "cross_entropy lengths");
        let mut probs = vec![F::zero(); rows * v];
        let mut total = F::zero();
        for r in 0..rows {
            let row = t.row(r);
            let p = &mut probs[r * v..(r + 1) * v];
            softmax_into(row, p);
            if weights[r] != F::zero() {
                let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
                let lse = row.iter().fold(F::zero(), |s, &x| s + (x - max).exp()).ln() + max;
                total = total + weights[r] * (lse - row[targets[r] as usize]);
            }
        }
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Selects rows of a `[B, ...]` tensor by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let row_len = if t.shape.is_empty() { 1 } else { t.len() / t.shape[0].max(1) };
        let mut data = Vec::with_capacity(idx.len() * row_len);
        for &i in idx {
            assert!(i < t.shape[0], "gather_rows index {i} out of range");
            data.extend_from_slice(&t.data[i * row_len..(i + 1) * row_len]);
        }
        let mut shape = t.shape.clone();
        shape[0] = idx.len();
        self.push(
            Tensor {
                shape,
                data,
                requires_grad: false,
                grad: None,
            },
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// Reverse pass from a scalar `loss`. Afterwards [`grad`](Self::grad)
    /// answers for every node, and leaf tensors requiring gradients carry them
    /// in their `grad` field.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape.clone()));
        }
        if !lt.all_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<F>>> = vec![None; n];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| vec![F::zero(); node.value.len()]);
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("gradient"));
                }
                node.value.grad = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        // lazily allocated accumulator for input `v`
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
            }};
        }
        let needs = |v: Var| self.nodes[v.0].value.requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if needs(v) {
                        axpy(acc!(v), F::one(), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    axpy(acc!(*a), F::one(), g);
                }
                if needs(*b) {
                    axpy(acc!(*b), -F::one(), g);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = &self.nodes[b.0].value.data;
                    for ((d, &gi), &o) in acc!(*a).iter_mut().zip(g).zip(other) {
                        *d = *d + gi * o;
                    }
                }
                if needs(*b) {
                    let other = &self.nodes[a.0].value.data;
                    for ((d, &gi), &o) in acc!(*b).iter_mut().zip(g).zip(other) {
                        *d = *d + gi * o;
                    }
                }
            }
            Op::Scale(a, s) => axpy(acc!(*a), *s, g),
            Op::MulConst(a, c) => {
                for ((d, &gi), &m) in acc!(*a).iter_mut().zip(g).zip(c) {
                    *d = *d + gi * m;
                }
            }
            Op::Tanh(a) => {
                for ((d, &gi), &y) in acc!(*a).iter_mut().zip(g).zip(&out.data) {
                    *d = *d + gi * (F::one() - y * y);
                }
            }
            Op::Sigmoid(a) => {
                for ((d, &gi), &y) in acc!(*a).iter_mut().zip(g).zip(&out.data) {
                    *d = *d + gi * y * (F::one() - y);
                }
            }
            Op::Linear { x, w } => {
                let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let (n_out, n_in) = (tw.shape[0], tw.shape[1]);
                let rows = tx.rows();
                if needs(*x) {
                    let dx = acc!(*x);
                    for r in 0..rows {
                        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                        for o in 0..n_out {
                            let gy = g[r * n_out + o];
                            if gy != F::zero() {
                                axpy(dxr, gy, &tw.data[o * n_in..(o + 1) * n_in]);
                            }
                        }
                    }
                }
                if needs(*w) {
                    let dw = acc!(*w);
                    for r in 0..rows {
                        let xr = &tx.data[r * n_in..(r + 1) * n_in];
                        for o in 0..n_out {
                            let gy = g[r * n_out + o];
                            if gy != F::zero() {
                                axpy(&mut dw[o * n_in..(o + 1) * n_in], gy, xr);
                            }
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if needs(p) {
                        let d = acc!(p);
                        for r in 0..rows {
                            axpy(
                                &mut d[r * w..(r + 1) * w],
                                F::one(),
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[x.0].value.cols();
                let len = out.cols();
                let d = acc!(*x);
                for r in 0..out.rows() {
                    axpy(
                        &mut d[r * c + start..r * c + start + len],
                        F::one(),
                        &g[r * len..(r + 1) * len],
                    );
                }
            }
            Op::Stack(steps) => {
                let (batch, t, dim) = (out.shape[0], out.shape[1], out.shape[2]);
                for (k, &s) in steps.iter().enumerate() {
                    if needs(s) {
                        let d = acc!(s);
                        for b in 0..batch {
                            let src = (b * t + k) * dim;
                            axpy(&mut d[b * dim..(b + 1) * dim], F::one(), &g[src..src + dim]);
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                let dim = out.cols();
                let d = acc!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    let id = id as usize;
                    axpy(&mut d[id * dim..(id + 1) * dim], F::one(), &g[r * dim..(r + 1) * dim]);
                }
            }
            Op::Lstm {
                x,
                h,
                c,
                w,
                b,
                gates,
                tanh_c,
            } => self.lstm_backward(out, g, grads, [*x, *h, *c, *w, *b], gates, tanh_c),
            Op::Blend { new, old, keep } => {
                let c = out.cols();
                if needs(*new) {
                    let d = acc!(*new);
                    for (r, &k) in keep.iter().enumerate() {
                        axpy(&mut d[r * c..(r + 1) * c], k, &g[r * c..(r + 1) * c]);
                    }
                }
                if needs(*old) {
                    let d = acc!(*old);
                    for (r, &k) in keep.iter().enumerate() {
                        axpy(&mut d[r * c..(r + 1) * c], F::one() - k, &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Attention {
                query,
                memory,
                weights,
            } => {
                let (tq, tm) = (&self.nodes[query.0].value, &self.nodes[memory.0].value);
                let (batch, t_len, dim) = (tm.shape[0], tm.shape[1], tm.shape[2]);
                let mut dscore = vec![F::zero(); t_len];
                let mut dq = vec![F::zero(); batch * dim];
                let mut dm = vec![F::zero(); batch * t_len * dim];
                for bi in 0..batch {
                    let gb = &g[bi * dim..(bi + 1) * dim];
                    let w = &weights[bi * t_len..(bi + 1) * t_len];
                    let mut mean = F::zero();
                    for t in 0..t_len {
                        let m = &tm.data[(bi * t_len + t) * dim..(bi * t_len + t + 1) * dim];
                        let da = dot(gb, m);
                        dscore[t] = da;
                        mean = mean + w[t] * da;
                    }
                    let q = &tq.data[bi * dim..(bi + 1) * dim];
                    for t in 0..t_len {
                        if w[t] == F::zero() {
                            continue;
                        }
                        let ds = w[t] * (dscore[t] - mean);
                        let off = (bi * t_len + t) * dim;
                        let m = &tm.data[off..off + dim];
                        axpy(&mut dq[bi * dim..(bi + 1) * dim], ds, m);
                        let dmt = &mut dm[off..off + dim];
                        axpy(dmt, w[t], gb);
                        axpy(dmt, ds, q);
                    }
                }
                if needs(*query) {
                    axpy(acc!(*query), F::one(), &dq);
                }
                if needs(*memory) {
                    axpy(acc!(*memory), F::one(), &dm);
                }
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let d = acc!(*a);
                for r in 0..out.rows() {
                    let y = &out.data[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let s = dot(y, gr);
                    for j in 0..c {
                        d[r * c + j] = d[r * c + j] + y[j] * (gr[j] - s);
                    }
                }
            }
            Op::SumAll(a) => {
                let g0 = g[0];
                for d in acc!(*a).iter_mut() {
                    *d = *d + g0;
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if needs(p) {
                        axpy(acc!(p), F::one(), g);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let v = self.nodes[logits.0].value.cols();
                let g0 = g[0];
                let d = acc!(*logits);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == F::zero() {
                        continue;
                    }
                    let s = g0 * w;
                    let dr = &mut d[r * v..(r + 1) * v];
                    axpy(dr, s, &probs[r * v..(r + 1) * v]);
                    dr[t as usize] = dr[t as usize] - s;
                }
            }
            Op::GatherRows { x, idx } => {
                let row_len = if idx.is_empty() { 0 } else { out.len() / idx.len() };
                let d = acc!(*x);
                for (r, &i) in idx.iter().enumerate() {
                    axpy(
                        &mut d[i * row_len..(i + 1) * row_len],
                        F::one(),
                        &g[r * row_len..(r + 1) * row_len],
                    );
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_backward(
        &self,
        out: &Tensor<F>,
        g: &[F],
        grads: &mut [Option<Vec<F>>],
        [x, h, c, w, b]: [Var; 5],
        gates: &[F],
        tanh_c: &[F],
    ) {
        let tx = &self.nodes[x.0].value;
        let th = &self.nodes[h.0].value;
        let tc = &self.nodes[c.0].value;
        let tw = &self.nodes[w.0].value;
        let (batch, hid) = (th.shape[0], th.shape[1]);
        let n_in = tx.shape[1];
        let z_width = n_in + hid;
        let _ = out;
        let mut dpre = vec![F::zero(); batch * 4 * hid];
        let mut dc_prev = vec![F::zero(); batch * hid];
        for r in 0..batch {
            let gt = &gates[r * 4 * hid..(r + 1) * 4 * hid];
            let dp = &mut dpre[r * 4 * hid..(r + 1) * 4 * hid];
            for j in 0..hid {
                let dh = g[r * 2 * hid + j];
                let dc_out = g[r * 2 * hid + hid + j];
                let (i_g, f_g, c_g, o_g) = (gt[j], gt[hid + j], gt[2 * hid + j], gt[3 * hid + j]);
                let tcn = tanh_c[r * hid + j];
                let dc = dc_out + dh * o_g * (F::one() - tcn * tcn);
                let d_o = dh * tcn;
                let d_i = dc * c_g;
                let d_g = dc * i_g;
                let d_f = dc * tc.data[r * hid + j];
                dc_prev[r * hid + j] = dc * f_g;
                dp[j] = d_i * i_g * (F::one() - i_g);
                dp[hid + j] = d_f * f_g * (F::one() - f_g);
                dp[2 * hid + j] = d_g * (F::one() - c_g * c_g);
                dp[3 * hid + j] = d_o * o_g * (F::one() - o_g);
            }
        }
        let needs = |v: Var| self.nodes[v.0].value.requires_grad;
        if needs(x) || needs(h) {
            let mut dz = vec![F::zero(); z_width];
            for r in 0..batch {
                dz.iter_mut().for_each(|v| *v = F::zero());
                let dp = &dpre[r * 4 * hid..(r + 1) * 4 * hid];
                for (k, &d) in dp.iter().enumerate() {
                    if d != F::zero() {
                        axpy(&mut dz, d, &tw.data[k * z_width..(k + 1) * z_width]);
                    }
                }
                if needs(x) {
                    let len = tx.len();
                    let dx = grads[x.0].get_or_insert_with(|| vec![F::zero(); len]);
                    axpy(&mut dx[r * n_in..(r + 1) * n_in], F::one(), &dz[..n_in]);
                }
                if needs(h) {
                    let len = th.len();
                    let dh = grads[h.0].get_or_insert_with(|| vec![F::zero(); len]);
                    axpy(&mut dh[r * hid..(r + 1) * hid], F::one(), &dz[n_in..]);
                }
            }
        }
        if needs(c) {
            let len = tc.len();
            let d = grads[c.0].get_or_insert_with(|| vec![F::zero(); len]);
            axpy(d, F::one(), &dc_prev);
        }
        if needs(w) {
            let len = tw.len();
            let dw = grads[w.0].get_or_insert_with(|| vec![F::zero(); len]);
            let mut z = vec![F::zero(); z_width];
            for r in 0..batch {
                z[..n_in].copy_from_slice(&tx.data[r * n_in..(r + 1) * n_in]);
                z[n_in..].copy_from_slice(&th.data[r * hid..(r + 1) * hid]);
                let dp = &dpre[r * 4 * hid..(r + 1) * 4 * hid];
                for (k, &d) in dp.iter().enumerate() {
                    if d != F::zero() {
                        axpy(&mut dw[k * z_width..(k + 1) * z_width], d, &z);
                    }
                }
            }
        }
        if needs(b) {
            let len = 4 * hid;
            let db = grads[b.0].get_or_insert_with(|| vec![F::zero(); len]);
            for r in 0..batch {
                axpy(db, F::one(), &dpre[r * 4 * hid..(r + 1) * 4 * hid]);
            }
        }
    }
}
