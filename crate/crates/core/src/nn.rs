//! Dropout and LSTM stacks built on the graph.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout on a tensor: in training mode each element is zeroed with
/// probability `p` and survivors are scaled by `1 / (1 - p)`; otherwise identity.
pub fn dropout<F: Scalar, R: Rng + ?Sized>(
    x: &Tensor<F>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor<F>> {
    check_p(p)?;
    let mut out = x.clone();
    out.grad = None;
    if training && p > 0.0 {
        let keep = F::of(1.0 / (1.0 - p));
        for v in out.data.iter_mut() {
            *v = if rng.gen::<f64>() < p { F::zero() } else { *v * keep };
        }
    }
    Ok(out)
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Graph version of [`dropout`]; the mask is a constant of the tape.
pub fn dropout_var<F: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<F>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    check_p(p)?;
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = F::of(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
        .collect();
    Ok(g.mul_const(x, mask))
}

/// Weight and bias handles of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

/// Runs a stacked LSTM over `inputs` (one `[B, in]` matrix per time step).
///
/// `step_mask[t][r]` is 1 where row `r` has a real token at step `t`; masked
/// steps carry the previous state through unchanged. With `reverse`, steps run
/// from last to first, so right-padded rows start from the initial state at
/// their final real token. `between` is applied to the output of every layer
/// except the last (dropout). Returns the top-layer outputs per step, in input
/// order, and the final `(h, c)` of each layer.
#[allow(clippy::type_complexity)]
pub fn run_stack<F: Scalar>(
    g: &mut Graph<F>,
    layers: &[LstmLayer],
    inputs: &[Var],
    step_mask: &[Vec<F>],
    init: Option<&[(Var, Var)]>,
    batch: usize,
    reverse: bool,
    mut between: impl FnMut(&mut Graph<F>, Var) -> Result<Var>,
) -> Result<(Vec<Var>, Vec<(Var, Var)>)> {
    let mut state: Vec<(Var, Var)> = match init {
        Some(s) => s.to_vec(),
        None => layers
            .iter()
            .map(|l| {
                let h = g.constant(Tensor::zeros(&[batch, l.hidden]));
                let c = g.constant(Tensor::zeros(&[batch, l.hidden]));
                (h, c)
            })
            .collect(),
    };
    let steps = inputs.len();
    let mut outputs: Vec<Option<Var>> = (0..steps).map(|_| None).collect();
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let mask = &step_mask[t];
        let all_live = mask.iter().all(|&m| m == F::one());
        let mut x = inputs[t];
        for (li, layer) in layers.iter().enumerate() {
            let (h, c) = state[li];
            let (h_new, c_new) = g.lstm_cell(x, h, c, layer.w, layer.b)?;
            let (h_new, c_new) = if all_live {
                (h_new, c_new)
            } else {
                (g.blend(h_new, h, mask), g.blend(c_new, c, mask))
            };
            state[li] = (h_new, c_new);
            x = if li + 1 < layers.len() {
                between(g, h_new)?
            } else {
                h_new
            };
        }
        outputs[t] = Some(x);
    }
    Ok((outputs.into_iter().map(|o| o.unwrap()).collect(), state))
}
