//! Experiment harness: synthetic aligned batches, estimator convergence
//! benchmarks, toy alignment training on raw embeddings, weight sweeps, and
//! the file formats the CLI reads and writes.
//!
//! Everything here is seed-deterministic. Wall-clock fields exist in the
//! reports but are zeroed unless the caller opts in, so that repeated runs
//! with one seed emit byte-identical files regardless of thread count.

pub mod bench;
pub mod infonce;
pub mod io;
pub mod train;

pub use bench::{bench_convergence, BenchConfig};
pub use infonce::{infonce_gradients, infonce_modality_loss, infonce_semantic_loss};
pub use io::{
    cells_csv_bytes, estimator_csv_bytes, load_batch, load_report, save_batch, save_cells_csv,
    save_estimator_csv, save_report, save_steps_csv, steps_csv_bytes,
};
pub use train::{smoothed, sweep_alpha_beta, train_toy_alignment, LossKind, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::GameError;
use crate::loss::{EmbeddingBatch, LossError};
use crate::rng::SplitMix64;
use crate::tensor::{cosine_sim, TensorError, Vector};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what} must satisfy {requirement}, got {got}")]
    BadConfig {
        what: &'static str,
        requirement: &'static str,
        got: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
}

fn bad_config(
    what: &'static str,
    requirement: &'static str,
    got: impl ToString,
) -> HarnessError {
    HarnessError::BadConfig {
        what,
        requirement,
        got: got.to_string(),
    }
}

/// Shape and noise level of a synthetic batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub k: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(k: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<Self, HarnessError> {
        if k < 2 {
            return Err(bad_config("k", "k >= 2", k));
        }
        if d < 2 {
            return Err(bad_config("d", "d >= 2", d));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(bad_config("noise_sigma", "finite and >= 0", noise_sigma));
        }
        Ok(Self {
            k,
            d,
            noise_sigma,
            seed,
        })
    }
}

/// Synthetic aligned triples: k unit latent vectors serve as the contexts,
/// and each text and image is the matching latent plus isotropic gaussian
/// noise of scale noise_sigma, re-normalized.
///
/// Draw order from SplitMix64(seed): k*d gaussians for the latents, then k*d
/// for the text noise, then k*d for the image noise, row-major.
pub fn synth_batch(cfg: &SynthConfig) -> EmbeddingBatch {
    let mut rng = SplitMix64::new(cfg.seed);
    let mut draw = |scale: f64, around: Option<&Vector>| -> Vector {
        let data: Vec<f64> = (0..cfg.d)
            .map(|i| {
                let noise = scale * rng.next_gaussian();
                around.map_or(noise, |v| v[i] + noise)
            })
            .collect();
        Vector::new(data)
            .expect("gaussian draws are finite")
            .normalized()
            .expect("a gaussian vector has positive norm")
    };
    let contexts: Vec<Vector> = (0..cfg.k).map(|_| draw(1.0, None)).collect();
    let texts: Vec<Vector> = contexts
        .iter()
        .map(|c| draw(cfg.noise_sigma, Some(c)))
        .collect();
    let images: Vec<Vector> = contexts
        .iter()
        .map(|c| draw(cfg.noise_sigma, Some(c)))
        .collect();
    EmbeddingBatch::new(contexts, texts, images).expect("construction is valid by design")
}

/// Fraction of contexts whose nearest candidate by cosine similarity is
/// their own partner. Ties resolve toward the lowest candidate index.
pub fn retrieval_accuracy(contexts: &[Vector], candidates: &[Vector]) -> Result<f64, LossError> {
    let k = contexts.len();
    let mut hits = 0usize;
    for (j, c) in contexts.iter().enumerate() {
        let mut best = 0usize;
        let mut top = cosine_sim(c, &candidates[0])?;
        for (i, cand) in candidates.iter().enumerate().skip(1) {
            let s = cosine_sim(c, cand)?;
            if s > top {
                top = s;
                best = i;
            }
        }
        if best == j {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}

/// One logged training step: metrics are measured before the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// One estimator benchmark row; budget counts utility evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub k: usize,
    pub method: String,
    pub budget: u64,
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    pub seconds: f64,
}

/// Final metrics of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub alpha: f64,
    pub beta: f64,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub seconds: f64,
}

/// Everything one harness invocation produced. Unused sections stay empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub estimator: Vec<EstimatorRow>,
    pub cells: Vec<CellRecord>,
    pub phases: Vec<PhaseRecord>,
}

impl RunReport {
    /// Step indices strictly increasing, accuracies in [0, 1], error columns
    /// non-negative.
    pub fn validate(&self) -> Result<(), HarnessError> {
        for pair in self.steps.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(bad_config(
                    "report steps",
                    "strictly increasing step indices",
                    pair[1].step,
                ));
            }
        }
        for s in &self.steps {
            if !(0.0..=1.0).contains(&s.accuracy) {
                return Err(bad_config("accuracy", "within [0, 1]", s.accuracy));
            }
        }
        for row in &self.estimator {
            if row.mean_abs_err < 0.0 || row.max_abs_err < 0.0 {
                return Err(bad_config(
                    "estimator errors",
                    "non-negative",
                    row.mean_abs_err.min(row.max_abs_err),
                ));
            }
        }
        for c in &self.cells {
            if !(0.0..=1.0).contains(&c.final_accuracy) {
                return Err(bad_config("cell accuracy", "within [0, 1]", c.final_accuracy));
            }
        }
        Ok(())
    }

    /// Clears every wall-clock field so serialized output is reproducible.
    pub fn zero_timings(&mut self) {
        for row in &mut self.estimator {
            row.seconds = 0.0;
        }
        for p in &mut self.phases {
            p.seconds = 0.0;
        }
    }
}
