//! InfoNCE comparator: the standard softmax cross-entropy contrastive loss
//! over the same four direction pairs as the valuation-based loss, used as
//! the ablation baseline in the toy trainer.
//!
//! Directional form for anchors y and players x at temperature tau:
//! L = -(1/k) sum_j log softmax(sims[j] / tau)[j], positive pair (j, j).

use crate::loss::{cosine_grad, sim_matrix, BatchGradients, EmbeddingBatch, LossError};
use crate::tensor::{softmax_temp_into, Vector};

fn directional_infonce(players: &[Vector], anchors: &[Vector], tau: f64) -> Result<f64, LossError> {
    let k = players.len();
    let sims = sim_matrix(players, anchors)?;
    let mut probs = vec![0.0f64; k];
    let mut total = 0.0;
    for j in 0..k {
        softmax_temp_into(sims.row(j), tau, &mut probs)?;
        total -= probs[j].ln();
    }
    Ok(total / k as f64)
}

/// Accumulates scale * dL/d(players, anchors) for one direction:
/// dL/dsims[j][i] = (probs[i] - delta_ij) / (k * tau).
fn directional_infonce_grads(
    players: &[Vector],
    anchors: &[Vector],
    tau: f64,
    scale: f64,
    grad_players: &mut [Vector],
    grad_anchors: &mut [Vector],
) -> Result<(), LossError> {
    let k = players.len();
    let sims = sim_matrix(players, anchors)?;
    let mut probs = vec![0.0f64; k];
    for j in 0..k {
        softmax_temp_into(sims.row(j), tau, &mut probs)?;
        for i in 0..k {
            let hot = if i == j { 1.0 } else { 0.0 };
            let w = scale * (probs[i] - hot) / (k as f64 * tau);
            if w == 0.0 {
                continue;
            }
            let (d_player, d_anchor) = cosine_grad(&players[i], &anchors[j], sims.get(j, i));
            grad_players[i].add_scaled(w, &d_player)?;
            grad_anchors[j].add_scaled(w, &d_anchor)?;
        }
    }
    Ok(())
}

/// Mean of the context-to-text and text-to-context InfoNCE terms.
pub fn infonce_semantic_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64, LossError> {
    let c2t = directional_infonce(batch.contexts(), batch.texts(), tau)?;
    let t2c = directional_infonce(batch.texts(), batch.contexts(), tau)?;
    Ok((c2t + t2c) / 2.0)
}

/// Mean of the context-to-image and image-to-context InfoNCE terms.
pub fn infonce_modality_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64, LossError> {
    let c2v = directional_infonce(batch.contexts(), batch.images(), tau)?;
    let v2c = directional_infonce(batch.images(), batch.contexts(), tau)?;
    Ok((c2v + v2c) / 2.0)
}

/// Analytic gradient of alpha * semantic + beta * modality under InfoNCE,
/// shaped like the valuation-based `loss_gradients`.
pub fn infonce_gradients(
    batch: &EmbeddingBatch,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> Result<BatchGradients, LossError> {
    let dim = batch.dim();
    let mut grads = BatchGradients {
        contexts: vec![Vector::zeros(dim); batch.k()],
        texts: vec![Vector::zeros(dim); batch.k()],
        images: vec![Vector::zeros(dim); batch.k()],
    };
    let (c, t, v) = (batch.contexts(), batch.texts(), batch.images());
    directional_infonce_grads(c, t, tau, alpha / 2.0, &mut grads.contexts, &mut grads.texts)?;
    directional_infonce_grads(t, c, tau, alpha / 2.0, &mut grads.texts, &mut grads.contexts)?;
    directional_infonce_grads(c, v, tau, beta / 2.0, &mut grads.contexts, &mut grads.images)?;
    directional_infonce_grads(v, c, tau, beta / 2.0, &mut grads.images, &mut grads.contexts)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;

    fn gaussian_batch(k: usize, d: usize, seed: u64) -> EmbeddingBatch {
        let mut rng = SplitMix64::new(seed);
        let mut stream = |k: usize| -> Vec<Vector> {
            (0..k)
                .map(|_| Vector::new((0..d).map(|_| rng.next_gaussian()).collect()).unwrap())
                .collect()
        };
        EmbeddingBatch::new(stream(k), stream(k), stream(k)).unwrap()
    }

    #[test]
    fn indistinguishable_candidates_cost_log_k() {
        // every similarity is 1, so each softmax row is uniform
        let v = Vector::new(vec![0.6, 0.8]).unwrap();
        let all = vec![v.clone(), v.clone(), v.clone()];
        let batch = EmbeddingBatch::new(all.clone(), all.clone(), all).unwrap();
        let expected = 3.0f64.ln();
        assert_relative_eq!(
            infonce_semantic_loss(&batch, 1.0).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            infonce_modality_loss(&batch, 0.3).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthogonal_identity_alignment_matches_closed_form() {
        let e = |i: usize| {
            let mut xs = vec![0.0; 3];
            xs[i] = 1.0;
            Vector::new(xs).unwrap()
        };
        let basis: Vec<Vector> = (0..3).map(e).collect();
        let batch = EmbeddingBatch::new(basis.clone(), basis.clone(), basis).unwrap();
        let tau: f64 = 0.05;
        // each row: positive logit 1/tau, two zero logits
        let expected = (1.0 + 2.0 * (-1.0 / tau).exp()).ln();
        assert_relative_eq!(
            infonce_semantic_loss(&batch, tau).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert!(infonce_semantic_loss(&batch, tau).unwrap() < 1e-8);
    }

    #[test]
    fn gradients_match_central_differences() {
        let (k, d, tau, alpha, beta) = (4usize, 5usize, 0.7, 0.2, 0.4);
        for seed in [3u64, 17, 256] {
            let batch = gaussian_batch(k, d, seed);
            let grads = infonce_gradients(&batch, tau, alpha, beta).unwrap();
            let objective = |b: &EmbeddingBatch| -> f64 {
                alpha * infonce_semantic_loss(b, tau).unwrap()
                    + beta * infonce_modality_loss(b, tau).unwrap()
            };
            let h = 1e-5;
            for (stream, grad_stream) in [
                (0usize, &grads.contexts),
                (1, &grads.texts),
                (2, &grads.images),
            ] {
                for i in 0..k {
                    for c in 0..d {
                        let perturb = |delta: f64| -> f64 {
                            let mut contexts = batch.contexts().to_vec();
                            let mut texts = batch.texts().to_vec();
                            let mut images = batch.images().to_vec();
                            let target = match stream {
                                0 => &mut contexts[i],
                                1 => &mut texts[i],
                                _ => &mut images[i],
                            };
                            target[c] += delta;
                            objective(
                                &EmbeddingBatch::new(contexts, texts, images).unwrap(),
                            )
                        };
                        let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                        let an = grad_stream[i][c];
                        let rel = (fd - an).abs() / (fd.abs().max(an.abs()) + 1e-4);
                        assert!(
                            rel < 1e-4,
                            "seed {seed} stream {stream} ({i},{c}): fd {fd} vs {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_weights_zero_the_matching_streams() {
        let batch = gaussian_batch(3, 4, 9);
        let grads = infonce_gradients(&batch, 1.0, 0.5, 0.0).unwrap();
        assert!(grads.images.iter().all(|g| g.as_slice().iter().all(|&x| x == 0.0)));
        assert!(grads.texts.iter().any(|g| g.as_slice().iter().any(|&x| x != 0.0)));
        let grads = infonce_gradients(&batch, 1.0, 0.0, 0.5).unwrap();
        assert!(grads.texts.iter().all(|g| g.as_slice().iter().all(|&x| x == 0.0)));
        assert!(grads.images.iter().any(|g| g.as_slice().iter().any(|&x| x != 0.0)));
    }
}
