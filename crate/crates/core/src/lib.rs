//! Deep clustering of multichannel sensor segments.
//!
//! A bi-directional GRU encoder is pretrained with two self-supervised
//! decoders (time-reversed reconstruction and future prediction), then
//! refined jointly with a Student-t cluster-assignment-hardening objective.
//! Classical baselines and clustering metrics live alongside for evaluation.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numerics;
pub mod datasets;
pub mod model;
pub mod baselines;
pub mod metrics;
pub mod cah;
pub mod checkpoint;
pub mod evaluation;
