//! Central finite-difference verification for every analytic gradient in the
//! crate: the alignment losses, the fusion parameters and the CRF emissions.
//!
//! All checks share one error metric, |analytic - numeric| divided by
//! (max(|analytic|, |numeric|) + 1e-4). The additive floor keeps the ratio
//! meaningful where the true derivative is near zero.

use serde::{Deserialize, Serialize};

use crate::decoders::{crf_nll, crf_nll_emission_grad, CrfModel, DecoderError};
use crate::fusion::{fusion_forward, fusion_param_gradients, FusionInput, FusionParams};
use crate::loss::{
    loss_gradients, modality_loss, semantic_loss, EmbeddingBatch, LossError,
};
use crate::rng::SplitMix64;
use crate::tensor::{dot, Matrix, Vector};

/// Perturbation used by every central difference.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Threshold the acceptance checks hold the worst coordinate to.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-4)
}

/// Worst and average agreement over all checked coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub coords: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares analytic coordinates against central differences of `objective`
/// around `xs`.
fn compare(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    xs: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheckReport {
    assert_eq!(xs.len(), analytic.len());
    let mut buf = xs.to_vec();
    let mut report = GradCheckReport {
        coords: xs.len(),
        max_rel_err: 0.0,
        mean_rel_err: 0.0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (i, &an) in analytic.iter().enumerate() {
        buf[i] = xs[i] + h;
        let plus = objective(&buf);
        buf[i] = xs[i] - h;
        let minus = objective(&buf);
        buf[i] = xs[i];
        let fd = (plus - minus) / (2.0 * h);
        let rel = relative_error(an, fd);
        report.mean_rel_err += rel;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_analytic = an;
            report.worst_numeric = fd;
        }
    }
    report.mean_rel_err /= xs.len().max(1) as f64;
    report
}

fn gaussian_vectors(rng: &mut SplitMix64, k: usize, d: usize) -> Vec<Vector> {
    (0..k)
        .map(|_| {
            Vector::new((0..d).map(|_| rng.next_gaussian()).collect())
                .expect("gaussian draws are finite")
        })
        .collect()
}

/// Checks `loss_gradients` for one random batch. The batch, drawn from
/// `seed`, has k gaussian triples of width d; the schedules inside the loss
/// reuse `seed` so the analytic and perturbed evaluations see identical
/// permutations.
#[allow(clippy::too_many_arguments)]
pub fn check_loss_gradients(
    k: usize,
    d: usize,
    tau: f64,
    stride: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport, LossError> {
    let mut rng = SplitMix64::new(seed);
    let contexts = gaussian_vectors(&mut rng, k, d);
    let texts = gaussian_vectors(&mut rng, k, d);
    let images = gaussian_vectors(&mut rng, k, d);
    let batch = EmbeddingBatch::new(contexts, texts, images)?;
    let grads = loss_gradients(&batch, tau, stride, seed, alpha, beta)?;

    let flatten = |vs: &[Vector]| -> Vec<f64> {
        vs.iter().flat_map(|v| v.as_slice().to_vec()).collect()
    };
    let mut xs = flatten(batch.contexts());
    xs.extend(flatten(batch.texts()));
    xs.extend(flatten(batch.images()));
    let mut analytic = flatten(&grads.contexts);
    analytic.extend(flatten(&grads.texts));
    analytic.extend(flatten(&grads.images));

    let rebuild = |xs: &[f64]| -> EmbeddingBatch {
        let stream = |at: usize| -> Vec<Vector> {
            (0..k)
                .map(|i| {
                    let lo = at + i * d;
                    Vector::new(xs[lo..lo + d].to_vec()).expect("finite perturbation")
                })
                .collect()
        };
        EmbeddingBatch::new(stream(0), stream(k * d), stream(2 * k * d))
            .expect("perturbation keeps the batch valid")
    };
    let mut objective = |xs: &[f64]| -> f64 {
        let b = rebuild(xs);
        alpha * semantic_loss(&b, tau, stride, seed).expect("valid batch")
            + beta * modality_loss(&b, tau, stride, seed).expect("valid batch")
    };
    Ok(compare(&mut objective, &xs, &analytic, h))
}

fn flatten_fusion(p: &FusionParams) -> Vec<f64> {
    let mut xs = Vec::new();
    for w in [&p.w_q, &p.w_k, &p.w_v, &p.w_c, &p.w_g1, &p.w_g2] {
        xs.extend_from_slice(w.as_slice());
    }
    for b in [&p.b_q, &p.b_k, &p.b_v, &p.b_c, &p.b_g1, &p.b_g2] {
        xs.extend_from_slice(b.as_slice());
    }
    xs
}

fn unflatten_fusion(template: &FusionParams, xs: &[f64]) -> FusionParams {
    let mut p = template.clone();
    let mut at = 0;
    for w in [
        &mut p.w_q, &mut p.w_k, &mut p.w_v, &mut p.w_c, &mut p.w_g1, &mut p.w_g2,
    ] {
        let n = w.as_slice().len();
        w.as_mut_slice().copy_from_slice(&xs[at..at + n]);
        at += n;
    }
    for b in [
        &mut p.b_q, &mut p.b_k, &mut p.b_v, &mut p.b_c, &mut p.b_g1, &mut p.b_g2,
    ] {
        let n = b.as_slice().len();
        b.as_mut_slice().copy_from_slice(&xs[at..at + n]);
        at += n;
    }
    debug_assert_eq!(at, xs.len());
    p
}

/// Checks `fusion_param_gradients` on one random instance: gaussian inputs,
/// scaled-uniform parameters and a symmetric-uniform upstream cotangent, all
/// derived from `seed`. The scalar objective is sum(upstream * output).
#[allow(clippy::too_many_arguments)]
pub fn check_fusion_gradients(
    n_t: usize,
    n_c: usize,
    n_v: usize,
    d: usize,
    d_img: usize,
    width: usize,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport, crate::fusion::FusionError> {
    let input = FusionInput::random(n_t, n_c, n_v, d, d_img, seed);
    let params = FusionParams::random(d, d_img, width, seed.wrapping_add(1));
    let mut rng = SplitMix64::new(seed.wrapping_add(2));
    let upstream = Matrix::new(
        n_v,
        width,
        (0..n_v * width).map(|_| rng.next_symmetric()).collect(),
    )
    .expect("draws are finite");
    let grads = fusion_param_gradients(&input, &params, &upstream)?;
    let analytic = flatten_fusion(&FusionParams {
        w_q: grads.w_q,
        b_q: grads.b_q,
        w_k: grads.w_k,
        b_k: grads.b_k,
        w_v: grads.w_v,
        b_v: grads.b_v,
        w_c: grads.w_c,
        b_c: grads.b_c,
        w_g1: grads.w_g1,
        b_g1: grads.b_g1,
        w_g2: grads.w_g2,
        b_g2: grads.b_g2,
    });
    let xs = flatten_fusion(&params);
    let mut objective = |xs: &[f64]| -> f64 {
        let p = unflatten_fusion(&params, xs);
        let out = fusion_forward(&input, &p).expect("valid shapes");
        dot(out.as_slice(), upstream.as_slice())
    };
    Ok(compare(&mut objective, &xs, &analytic, h))
}

/// Checks `crf_nll_emission_grad` on one random chain of length n over
/// `labels` labels, potentials and gold drawn from `seed`.
pub fn check_crf_gradients(
    n: usize,
    labels: usize,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport, DecoderError> {
    let mut rng = SplitMix64::new(seed);
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count).map(|_| rng.next_gaussian()).collect()
    };
    let model = CrfModel::new(
        Matrix::new(n, labels, draw(n * labels))?,
        Matrix::new(labels, labels, draw(labels * labels))?,
        Vector::new(draw(labels))?,
        Vector::new(draw(labels))?,
    )?;
    let gold: Vec<usize> = (0..n).map(|_| rng.next_below(labels)).collect();
    let grad = crf_nll_emission_grad(&model, &gold)?;
    let xs = model.emissions().as_slice().to_vec();
    let analytic = grad.as_slice().to_vec();
    let mut objective = |xs: &[f64]| -> f64 {
        let mut m = model.clone();
        m.emissions_mut().as_mut_slice().copy_from_slice(xs);
        crf_nll(&m, &gold).expect("valid gold")
    };
    Ok(compare(&mut objective, &xs, &analytic, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_the_additive_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        let r = relative_error(1e-9, 0.0);
        assert!(r < 1e-4, "tiny absolute error stays below tolerance: {r}");
        assert!(relative_error(1.0, 2.0) > 0.3);
    }

    #[test]
    fn compare_flags_a_wrong_gradient() {
        let mut objective = |xs: &[f64]| xs[0] * xs[0] + 3.0 * xs[1];
        let xs = [1.5, -0.4];
        let good = [3.0, 3.0];
        let bad = [3.0, 2.5];
        let ok = compare(&mut objective, &xs, &good, DEFAULT_STEP);
        assert!(ok.passes(DEFAULT_TOLERANCE), "max {}", ok.max_rel_err);
        let flagged = compare(&mut objective, &xs, &bad, DEFAULT_STEP);
        assert!(!flagged.passes(DEFAULT_TOLERANCE));
        assert_eq!(flagged.worst_analytic, 2.5);
    }

    #[test]
    fn loss_check_passes_on_random_instances() {
        for seed in 0..3 {
            let report =
                check_loss_gradients(4, 6, 1.0, 2, 0.2, 0.4, seed, DEFAULT_STEP).unwrap();
            assert!(
                report.passes(DEFAULT_TOLERANCE),
                "seed {seed}: {report:?}"
            );
            assert_eq!(report.coords, 3 * 4 * 6);
        }
    }

    #[test]
    fn fusion_check_passes_on_random_instances() {
        for seed in 0..3 {
            let report = check_fusion_gradients(3, 2, 2, 3, 4, 3, seed, DEFAULT_STEP).unwrap();
            assert!(
                report.passes(DEFAULT_TOLERANCE),
                "seed {seed}: {report:?}"
            );
        }
    }

    #[test]
    fn crf_check_passes_on_random_instances() {
        for seed in 0..3 {
            let report = check_crf_gradients(5, 3, seed, DEFAULT_STEP).unwrap();
            assert!(
                report.passes(DEFAULT_TOLERANCE),
                "seed {seed}: {report:?}"
            );
            assert_eq!(report.coords, 15);
        }
    }
}
