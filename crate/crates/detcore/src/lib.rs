//! Bit-deterministic toy inference.
//!
//! Inference here is a pure function of an [`ExecutionTuple`]: the same tuple
//! yields the same [`InferenceOutput::canonical_bytes`] on every run, batch
//! composition and platform. Architecture profiles ([`ArchProfile`]) change
//! the reduction order and FMA behaviour to emulate cross-hardware drift.

pub mod arith;
pub mod decode;
pub mod error;
pub mod model;
pub mod prng;
pub mod softmax;

pub use arith::{canonical_reduce, det_dot, det_matmul, det_matvec, ArchProfile, FmaEmulation, Matrix, ReductionOrder};
pub use decode::{decode_step, select_cumulative, DecodeKind, DecodePolicy};
pub use error::{DetError, Result};
pub use model::{infer, infer_batch, ExecutionTuple, InferenceOutput, ToyModel, HIDDEN_SIZE, VOCAB_SIZE};
pub use prng::PrngState;
pub use softmax::{det_exp, det_softmax};
