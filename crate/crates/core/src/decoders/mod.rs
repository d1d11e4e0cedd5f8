//! Prediction heads: a linear-chain CRF over merged token features and a
//! word-pair layer that refines a three-channel label distribution against a
//! text-only one.

pub mod crf;
pub mod wordpair;

pub use crf::{crf_decode, crf_log_partition, crf_nll, crf_nll_emission_grad, CrfModel};
pub use wordpair::{
    channel_merge, pair_features, refine_distribution, wordpair_forward, wordpair_loss, Channel,
    Mlp, PairTensor, WordPairHead,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("label {label} at position {position} is out of range for {label_count} labels")]
    InvalidLabel {
        position: usize,
        label: usize,
        label_count: usize,
    },
    #[error("gold sequence length {got} does not match {expected} positions")]
    LengthMismatch { expected: usize, got: usize },
    #[error("input to {what} sums to {sum}, not a distribution")]
    NotADistribution { what: &'static str, sum: f64 },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("lambda must be finite and non-negative, got {lambda}")]
    BadLambda { lambda: f64 },
}
