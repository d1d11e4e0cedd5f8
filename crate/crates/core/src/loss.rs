//! Shapley-contrastive alignment losses over context/text/image batches.
//!
//! Each direction treats one modality's vectors as anchors and another's as
//! players of a coalition game per anchor: for anchor j the player scores are
//! the cosine similarities of the anchor against every player, the matched
//! player j is the positive, and the loss rewards the positive's estimated
//! Shapley value while pushing the other players' values down:
//!
//! ```text
//! L_dir = -(1/k) * sum_j [ value_j - sum_{i != j} value_i ]
//! ```
//!
//! The sum over negatives is intentionally unnormalized, so directional
//! losses grow with batch size. Values come from the cyclic estimator with a
//! per-anchor seed mixed from (master seed, anchor index, direction tag), so
//! anchors can be valued in parallel without sharing streams. The semantic
//! loss averages the context-as-players/text-anchor direction with its
//! transpose; the modality loss does the same for context/image.
//!
//! [`loss_gradients`] differentiates alpha * semantic + beta * modality with
//! the permutation schedules held fixed: seeds depend only on batch size and
//! indices, never on values, so the same schedule is replayed under any
//! perturbation of the embeddings.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameConfig, GameError};
use crate::rng::derive_seed;
use crate::tensor::{cosine_sim, Matrix, TensorError, Vector, NORM_EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("batch must contain at least one pair")]
    EmptyBatch,
    #[error("batch lists must share one length: contexts {contexts}, texts {texts}, images {images}")]
    LengthMismatch {
        contexts: usize,
        texts: usize,
        images: usize,
    },
    #[error("all embeddings must share one dimension: found {left} and {right}")]
    MixedDims { left: usize, right: usize },
    #[error("{kind}[{index}] has norm {norm:e}, below {NORM_EPS:e}")]
    DegenerateEmbedding {
        kind: &'static str,
        index: usize,
        norm: f64,
    },
    #[error("{name} must be finite and non-negative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
}

/// k aligned (context, text, image) triples sharing one embedding dimension.
/// Construction guarantees equal lengths, one dimension and usable norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    contexts: Vec<Vector>,
    texts: Vec<Vector>,
    images: Vec<Vector>,
}

impl EmbeddingBatch {
    pub fn new(
        contexts: Vec<Vector>,
        texts: Vec<Vector>,
        images: Vec<Vector>,
    ) -> Result<Self, LossError> {
        if contexts.is_empty() {
            return Err(LossError::EmptyBatch);
        }
        if contexts.len() != texts.len() || contexts.len() != images.len() {
            return Err(LossError::LengthMismatch {
                contexts: contexts.len(),
                texts: texts.len(),
                images: images.len(),
            });
        }
        let dim = contexts[0].dim();
        for (kind, list) in [
            ("contexts", &contexts),
            ("texts", &texts),
            ("images", &images),
        ] {
            for (index, v) in list.iter().enumerate() {
                if v.dim() != dim {
                    return Err(LossError::MixedDims {
                        left: dim,
                        right: v.dim(),
                    });
                }
                let norm = v.norm();
                if norm <= NORM_EPS {
                    return Err(LossError::DegenerateEmbedding { kind, index, norm });
                }
            }
        }
        Ok(Self {
            contexts,
            texts,
            images,
        })
    }

    pub fn k(&self) -> usize {
        self.contexts.len()
    }

    pub fn dim(&self) -> usize {
        self.contexts[0].dim()
    }

    pub fn contexts(&self) -> &[Vector] {
        &self.contexts
    }

    pub fn texts(&self) -> &[Vector] {
        &self.texts
    }

    pub fn images(&self) -> &[Vector] {
        &self.images
    }

    /// Trainable views for the harness. Callers must keep entries finite and
    /// away from zero norm; violations surface as typed errors at the next
    /// loss evaluation.
    pub(crate) fn texts_mut(&mut self) -> &mut [Vector] {
        &mut self.texts
    }

    pub(crate) fn images_mut(&mut self) -> &mut [Vector] {
        &mut self.images
    }
}

/// Anchor/player roles of the four directional losses. The tag feeds
/// per-anchor seed derivation and is stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ContextToText,
    TextToContext,
    ContextToImage,
    ImageToContext,
}

impl Direction {
    pub fn tag(self) -> u64 {
        match self {
            Direction::ContextToText => 0,
            Direction::TextToContext => 1,
            Direction::ContextToImage => 2,
            Direction::ImageToContext => 3,
        }
    }
}

/// Cosine similarity matrix with entry (j, i) = cos(b[j], a[i]): rows are
/// anchors drawn from `b`, columns are players drawn from `a`.
pub fn sim_matrix(a: &[Vector], b: &[Vector]) -> Result<Matrix, LossError> {
    if a.is_empty() || b.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut m = Matrix::zeros(b.len(), a.len());
    for (j, anchor) in b.iter().enumerate() {
        for (i, player) in a.iter().enumerate() {
            m.set(j, i, cosine_sim(anchor, player)?);
        }
    }
    Ok(m)
}

/// Seed for one anchor's valuation: mixes the master seed with the anchor
/// index and the direction tag.
pub fn anchor_seed(master: u64, anchor: usize, direction: Direction) -> u64 {
    derive_seed(master, &[anchor as u64, direction.tag()])
}

fn directional_loss(
    players: &[Vector],
    anchors: &[Vector],
    tau: f64,
    stride: usize,
    seed: u64,
    direction: Direction,
) -> Result<f64, LossError> {
    let k = players.len();
    let sims = sim_matrix(players, anchors)?;
    let terms = (0..k)
        .into_par_iter()
        .map(|j| -> Result<f64, LossError> {
            let cfg = GameConfig::new(sims.row(j).to_vec(), tau)?;
            let report = cfg.shapley_cyclic(stride, anchor_seed(seed, j, direction))?;
            let positive = report.values[j];
            let negatives: f64 = report
                .values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| (i != j).then_some(v))
                .sum();
            Ok(positive - negatives)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(-terms.iter().sum::<f64>() / k as f64)
}

/// Contexts as players, texts as anchors.
pub fn loss_c2t(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    directional_loss(
        batch.contexts(),
        batch.texts(),
        tau,
        stride,
        seed,
        Direction::ContextToText,
    )
}

/// Texts as players, contexts as anchors.
pub fn loss_t2c(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    directional_loss(
        batch.texts(),
        batch.contexts(),
        tau,
        stride,
        seed,
        Direction::TextToContext,
    )
}

/// Contexts as players, images as anchors.
pub fn loss_c2v(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    directional_loss(
        batch.contexts(),
        batch.images(),
        tau,
        stride,
        seed,
        Direction::ContextToImage,
    )
}

/// Images as players, contexts as anchors.
pub fn loss_v2c(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    directional_loss(
        batch.images(),
        batch.contexts(),
        tau,
        stride,
        seed,
        Direction::ImageToContext,
    )
}

pub fn semantic_loss(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    Ok((loss_c2t(batch, tau, stride, seed)? + loss_t2c(batch, tau, stride, seed)?) / 2.0)
}

pub fn modality_loss(batch: &EmbeddingBatch, tau: f64, stride: usize, seed: u64) -> Result<f64, LossError> {
    Ok((loss_c2v(batch, tau, stride, seed)? + loss_v2c(batch, tau, stride, seed)?) / 2.0)
}

fn check_weight(name: &'static str, value: f64) -> Result<(), LossError> {
    if !value.is_finite() || value < 0.0 {
        return Err(LossError::NegativeWeight { name, value });
    }
    Ok(())
}

/// alpha * semantic + beta * modality + main. Weights must be finite and
/// non-negative.
pub fn total_loss(
    semantic: f64,
    modality: f64,
    main: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64, LossError> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    Ok(alpha * semantic + beta * modality + main)
}

/// Every component of the alignment objective for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub c2t: f64,
    pub t2c: f64,
    pub c2v: f64,
    pub v2c: f64,
    pub semantic: f64,
    pub modality: f64,
    pub main: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
}

pub fn loss_breakdown(
    batch: &EmbeddingBatch,
    tau: f64,
    stride: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
    main: f64,
) -> Result<LossBreakdown, LossError> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    let c2t = loss_c2t(batch, tau, stride, seed)?;
    let t2c = loss_t2c(batch, tau, stride, seed)?;
    let c2v = loss_c2v(batch, tau, stride, seed)?;
    let v2c = loss_v2c(batch, tau, stride, seed)?;
    let semantic = (c2t + t2c) / 2.0;
    let modality = (c2v + v2c) / 2.0;
    let total = total_loss(semantic, modality, main, alpha, beta)?;
    Ok(LossBreakdown {
        c2t,
        t2c,
        c2v,
        v2c,
        semantic,
        modality,
        main,
        alpha,
        beta,
        total,
    })
}

/// Gradients of alpha * semantic + beta * modality with respect to every
/// embedding in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients {
    pub contexts: Vec<Vector>,
    pub texts: Vec<Vector>,
    pub images: Vec<Vector>,
}

/// d cosine(b, a) with respect to a and b.
pub(crate) fn cosine_grad(a: &Vector, b: &Vector, cos_ab: f64) -> (Vector, Vector) {
    let na = a.norm();
    let nb = b.norm();
    let mut da = Vector::zeros(a.dim());
    let mut db = Vector::zeros(b.dim());
    for i in 0..a.dim() {
        da[i] = b[i] / (na * nb) - cos_ab * a[i] / (na * na);
        db[i] = a[i] / (na * nb) - cos_ab * b[i] / (nb * nb);
    }
    (da, db)
}

/// Accumulates scale * dL_dir/d(players, anchors) into the given gradient
/// buffers. The valuation Jacobians are taken under the frozen per-anchor
/// schedules, then chained through the cosine similarities.
fn directional_grads(
    players: &[Vector],
    anchors: &[Vector],
    tau: f64,
    stride: usize,
    seed: u64,
    direction: Direction,
    scale: f64,
    grad_players: &mut [Vector],
    grad_anchors: &mut [Vector],
) -> Result<(), LossError> {
    let k = players.len();
    let sims = sim_matrix(players, anchors)?;
    // weights[j][a] = scale * dL_dir / d sims[j][a]
    let weights = (0..k)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>, LossError> {
            let cfg = GameConfig::new(sims.row(j).to_vec(), tau)?;
            let (_, jac) =
                cfg.shapley_cyclic_with_jacobian(stride, anchor_seed(seed, j, direction))?;
            let mut w = vec![0.0f64; k];
            for (a, w_a) in w.iter_mut().enumerate() {
                let mut column_sum = 0.0;
                for i in 0..k {
                    column_sum += jac.get(i, a);
                }
                // d term_j / d s_a with term_j = value_j - sum_{i != j} value_i
                let d_term = 2.0 * jac.get(j, a) - column_sum;
                *w_a = -scale * d_term / k as f64;
            }
            Ok(w)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (j, row) in weights.iter().enumerate() {
        for (a, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (d_player, d_anchor) = cosine_grad(&players[a], &anchors[j], sims.get(j, a));
            grad_players[a].add_scaled(w, &d_player)?;
            grad_anchors[j].add_scaled(w, &d_anchor)?;
        }
    }
    Ok(())
}

/// Analytic gradient of alpha * semantic + beta * modality w.r.t. every
/// context, text and image vector. Permutation schedules are frozen: they
/// depend only on (seed, anchor index, direction, k), so central finite
/// differences over embeddings replay the exact same schedules.
pub fn loss_gradients(
    batch: &EmbeddingBatch,
    tau: f64,
    stride: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
) -> Result<BatchGradients, LossError> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    let dim = batch.dim();
    let mut grads = BatchGradients {
        contexts: vec![Vector::zeros(dim); batch.k()],
        texts: vec![Vector::zeros(dim); batch.k()],
        images: vec![Vector::zeros(dim); batch.k()],
    };
    let (c, t, v) = (batch.contexts(), batch.texts(), batch.images());
    directional_grads(
        c,
        t,
        tau,
        stride,
        seed,
        Direction::ContextToText,
        alpha / 2.0,
        &mut grads.contexts,
        &mut grads.texts,
    )?;
    directional_grads(
        t,
        c,
        tau,
        stride,
        seed,
        Direction::TextToContext,
        alpha / 2.0,
        &mut grads.texts,
        &mut grads.contexts,
    )?;
    directional_grads(
        c,
        v,
        tau,
        stride,
        seed,
        Direction::ContextToImage,
        beta / 2.0,
        &mut grads.contexts,
        &mut grads.images,
    )?;
    directional_grads(
        v,
        c,
        tau,
        stride,
        seed,
        Direction::ImageToContext,
        beta / 2.0,
        &mut grads.images,
        &mut grads.contexts,
    )?;
    Ok(grads)
}
