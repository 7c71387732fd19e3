//! Document-level context-aware neural machine translation.
//!
//! An attentional LSTM encoder-decoder that can additionally attend over the
//! previous sentence of a document. Six variants share one interface:
//! a context-free baseline, separated source/target context encoders,
//! shared source/target caches (the saved encoder or decoder states of the
//! previous sentence), and a shared mix that sums both context attentions.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, checkpoints and the
//! command line live in the `ctxnmt` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bleu;
pub mod bootstrap;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod subword;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use model::{Model, ModelConfig, Variant};

pub use scalar::Scalar;
pub use tensor::Tensor;
