//! Toy alignment training: plain gradient descent directly on the text and
//! image embeddings of one synthetic batch, contexts frozen, under either
//! the valuation-based loss or the InfoNCE comparator.
//!
//! The valuation loss keeps one schedule seed for the whole run, so with
//! lr = 0 the logged loss is exactly constant and every run is reproducible
//! from its config alone.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infonce::{infonce_gradients, infonce_modality_loss, infonce_semantic_loss};
use super::{
    bad_config, retrieval_accuracy, synth_batch, CellRecord, HarnessError, PhaseRecord,
    RunReport, StepRecord, SynthConfig,
};
use crate::loss::{
    loss_gradients, modality_loss, semantic_loss, BatchGradients, EmbeddingBatch, LossError,
};

/// Training objective: the valuation-based alignment loss or InfoNCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Shapley,
    Infonce,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Shapley => write!(f, "shapley"),
            LossKind::Infonce => write!(f, "infonce"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub synth: SynthConfig,
    pub steps: usize,
    pub lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub stride: usize,
    pub kind: LossKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.steps == 0 {
            return Err(bad_config("steps", "steps >= 1", self.steps));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(bad_config("lr", "finite and >= 0", self.lr));
        }
        Ok(())
    }
}

fn eval_loss(batch: &EmbeddingBatch, cfg: &TrainConfig) -> Result<f64, LossError> {
    let seed = cfg.synth.seed;
    Ok(match cfg.kind {
        LossKind::Shapley => {
            cfg.alpha * semantic_loss(batch, cfg.tau, cfg.stride, seed)?
                + cfg.beta * modality_loss(batch, cfg.tau, cfg.stride, seed)?
        }
        LossKind::Infonce => {
            cfg.alpha * infonce_semantic_loss(batch, cfg.tau)?
                + cfg.beta * infonce_modality_loss(batch, cfg.tau)?
        }
    })
}

fn eval_grads(batch: &EmbeddingBatch, cfg: &TrainConfig) -> Result<BatchGradients, LossError> {
    match cfg.kind {
        LossKind::Shapley => loss_gradients(
            batch,
            cfg.tau,
            cfg.stride,
            cfg.synth.seed,
            cfg.alpha,
            cfg.beta,
        ),
        LossKind::Infonce => infonce_gradients(batch, cfg.tau, cfg.alpha, cfg.beta),
    }
}

/// Runs the descent loop on an existing batch. Records are pre-update per
/// step plus one final post-training record, steps + 1 in total.
fn train_on_batch(
    batch: &mut EmbeddingBatch,
    cfg: &TrainConfig,
) -> Result<Vec<StepRecord>, HarnessError> {
    let mut records = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        // after the first update the batch only changes through descent, so
        // an evaluation failure there means the iterates left the usable
        // domain and is reported as divergence
        let evaluated = eval_loss(batch, cfg).and_then(|loss| {
            Ok((loss, retrieval_accuracy(batch.contexts(), batch.texts())?))
        });
        let (loss, accuracy) = match evaluated {
            Ok(x) => x,
            Err(_) if step > 0 => return Err(HarnessError::Diverged { step }),
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() {
            return Err(HarnessError::Diverged { step });
        }
        records.push(StepRecord {
            step,
            loss,
            accuracy,
        });
        if step == cfg.steps {
            break;
        }
        let grads = match eval_grads(batch, cfg) {
            Ok(g) => g,
            Err(_) if step > 0 => return Err(HarnessError::Diverged { step }),
            Err(e) => return Err(e.into()),
        };
        for (t, g) in batch.texts_mut().iter_mut().zip(&grads.texts) {
            t.add_scaled(-cfg.lr, g)?;
        }
        for (v, g) in batch.images_mut().iter_mut().zip(&grads.images) {
            v.add_scaled(-cfg.lr, g)?;
        }
        let finite = batch
            .texts()
            .iter()
            .chain(batch.images())
            .all(|v| v.as_slice().iter().all(|x| x.is_finite()));
        if !finite {
            return Err(HarnessError::Diverged { step: step + 1 });
        }
    }
    Ok(records)
}

/// Synthesizes a batch from the config and gradient-descends its text and
/// image embeddings, logging loss and context-to-text top-1 retrieval
/// accuracy before every update.
pub fn train_toy_alignment(cfg: &TrainConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mut batch = synth_batch(&cfg.synth);
    let synth_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let steps = train_on_batch(&mut batch, cfg)?;
    let train_seconds = t1.elapsed().as_secs_f64();
    let report = RunReport {
        steps,
        estimator: vec![],
        cells: vec![],
        phases: vec![
            PhaseRecord {
                phase: "synth".into(),
                seconds: synth_seconds,
            },
            PhaseRecord {
                phase: "train".into(),
                seconds: train_seconds,
            },
        ],
    };
    report.validate()?;
    Ok(report)
}

/// Trains one cell per (alpha, beta) pair, alpha-major order. Cells share
/// the base seed so a singleton grid reproduces a plain training run; they
/// run in parallel and are collected in grid order.
pub fn sweep_alpha_beta(
    alphas: &[f64],
    betas: &[f64],
    base: &TrainConfig,
) -> Result<RunReport, HarnessError> {
    base.validate()?;
    if alphas.is_empty() || betas.is_empty() {
        return Err(bad_config("sweep grid", "non-empty alpha and beta lists", 0));
    }
    let grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    let t0 = Instant::now();
    let cells: Vec<CellRecord> = grid
        .par_iter()
        .map(|&(alpha, beta)| -> Result<CellRecord, HarnessError> {
            let cfg = TrainConfig {
                alpha,
                beta,
                ..*base
            };
            let report = train_toy_alignment(&cfg)?;
            let last = report.steps.last().expect("steps >= 1 yields records");
            Ok(CellRecord {
                alpha,
                beta,
                final_accuracy: last.accuracy,
                final_loss: last.loss,
            })
        })
        .collect::<Result<_, _>>()?;
    let report = RunReport {
        steps: vec![],
        estimator: vec![],
        cells,
        phases: vec![PhaseRecord {
            phase: "sweep".into(),
            seconds: t0.elapsed().as_secs_f64(),
        }],
    };
    report.validate()?;
    Ok(report)
}

/// Moving averages over contiguous windows, used to judge the loss trend
/// without estimator-level jitter.
pub fn smoothed(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return vec![];
    }
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Vector;

    fn base_cfg(kind: LossKind) -> TrainConfig {
        TrainConfig {
            synth: SynthConfig::new(4, 8, 0.6, 11).unwrap(),
            steps: 5,
            lr: 0.3,
            alpha: 0.2,
            beta: 0.4,
            tau: 1.0,
            stride: 2,
            kind,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_the_loss_constant() {
        for kind in [LossKind::Shapley, LossKind::Infonce] {
            let cfg = TrainConfig {
                lr: 0.0,
                ..base_cfg(kind)
            };
            let report = train_toy_alignment(&cfg).unwrap();
            assert_eq!(report.steps.len(), 6);
            let first = report.steps[0];
            for s in &report.steps {
                assert_eq!(s.loss, first.loss, "{kind}: loss drifted without updates");
                assert_eq!(s.accuracy, first.accuracy);
            }
        }
    }

    #[test]
    fn noiseless_start_retrieves_perfectly_at_step_zero() {
        let cfg = TrainConfig {
            synth: SynthConfig::new(5, 6, 0.0, 3).unwrap(),
            ..base_cfg(LossKind::Shapley)
        };
        let report = train_toy_alignment(&cfg).unwrap();
        assert_eq!(report.steps[0].accuracy, 1.0);
    }

    #[test]
    fn records_cover_every_step_and_validate() {
        let report = train_toy_alignment(&base_cfg(LossKind::Shapley)).unwrap();
        let steps: Vec<usize> = report.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3, 4, 5]);
        assert!(report.validate().is_ok());
        assert_eq!(report.phases.len(), 2);
    }

    #[test]
    fn both_objectives_reduce_the_loss_on_a_small_run() {
        for kind in [LossKind::Shapley, LossKind::Infonce] {
            let cfg = TrainConfig {
                synth: SynthConfig::new(8, 16, 0.8, 42).unwrap(),
                steps: 40,
                lr: 0.5,
                ..base_cfg(kind)
            };
            let report = train_toy_alignment(&cfg).unwrap();
            let first = report.steps.first().unwrap();
            let last = report.steps.last().unwrap();
            assert!(
                last.loss < first.loss,
                "{kind}: loss did not improve ({} -> {})",
                first.loss,
                last.loss
            );
            assert!(last.accuracy >= first.accuracy, "{kind}: accuracy regressed");
        }
    }

    #[test]
    fn identical_configs_reproduce_identical_reports() {
        let cfg = base_cfg(LossKind::Shapley);
        let mut a = train_toy_alignment(&cfg).unwrap();
        let mut b = train_toy_alignment(&cfg).unwrap();
        a.zero_timings();
        b.zero_timings();
        assert_eq!(a, b);
    }

    #[test]
    fn divergent_updates_are_reported_with_their_step() {
        // a near-degenerate text vector makes the cosine gradient enormous,
        // and the huge rate pushes the update past the finite range
        let contexts = vec![
            Vector::new(vec![1.0, 0.0]).unwrap(),
            Vector::new(vec![0.0, 1.0]).unwrap(),
        ];
        let texts = vec![
            Vector::new(vec![1e-9, 0.0]).unwrap(),
            Vector::new(vec![0.0, 1.0]).unwrap(),
        ];
        let images = contexts.clone();
        let mut batch = EmbeddingBatch::new(contexts, texts, images).unwrap();
        let cfg = TrainConfig {
            synth: SynthConfig::new(2, 2, 0.0, 0).unwrap(),
            steps: 3,
            lr: 1e305,
            alpha: 1.0,
            beta: 0.0,
            tau: 1.0,
            stride: 1,
            kind: LossKind::Infonce,
        };
        let err = train_on_batch(&mut batch, &cfg).unwrap_err();
        assert!(
            matches!(err, HarnessError::Diverged { step: 1 }),
            "got {err:?}"
        );
    }

    #[test]
    fn config_validation_rejects_bad_runs() {
        let mut cfg = base_cfg(LossKind::Shapley);
        cfg.steps = 0;
        assert!(train_toy_alignment(&cfg).is_err());
        cfg.steps = 1;
        cfg.lr = f64::NAN;
        assert!(train_toy_alignment(&cfg).is_err());
        cfg.lr = -0.1;
        assert!(train_toy_alignment(&cfg).is_err());
    }

    #[test]
    fn singleton_sweep_equals_one_training_run() {
        let cfg = base_cfg(LossKind::Shapley);
        let sweep = sweep_alpha_beta(&[cfg.alpha], &[cfg.beta], &cfg).unwrap();
        assert_eq!(sweep.cells.len(), 1);
        let run = train_toy_alignment(&cfg).unwrap();
        let last = run.steps.last().unwrap();
        assert_eq!(sweep.cells[0].final_accuracy, last.accuracy);
        assert_eq!(sweep.cells[0].final_loss, last.loss);
    }

    #[test]
    fn zero_weight_cell_reports_the_untrained_baseline() {
        let cfg = base_cfg(LossKind::Shapley);
        let sweep = sweep_alpha_beta(&[0.0], &[0.0], &cfg).unwrap();
        let batch = synth_batch(&cfg.synth);
        let baseline = retrieval_accuracy(batch.contexts(), batch.texts()).unwrap();
        assert_eq!(sweep.cells[0].final_accuracy, baseline);
    }

    #[test]
    fn sweep_orders_cells_alpha_major() {
        let cfg = TrainConfig {
            steps: 1,
            ..base_cfg(LossKind::Infonce)
        };
        let sweep = sweep_alpha_beta(&[0.0, 0.2], &[0.1, 0.3], &cfg).unwrap();
        let grid: Vec<(f64, f64)> = sweep.cells.iter().map(|c| (c.alpha, c.beta)).collect();
        assert_eq!(grid, vec![(0.0, 0.1), (0.0, 0.3), (0.2, 0.1), (0.2, 0.3)]);
    }

    #[test]
    fn standard_fixture_run_converges_with_decreasing_trend() {
        // the reference run: noisy 16x32 batch, 300 descent steps
        let cfg = TrainConfig {
            synth: SynthConfig::new(16, 32, 0.8, 2024).unwrap(),
            steps: 300,
            lr: 0.5,
            alpha: 0.2,
            beta: 0.4,
            tau: 1.0,
            stride: 8,
            kind: LossKind::Shapley,
        };
        let report = train_toy_alignment(&cfg).unwrap();
        let first = report.steps.first().unwrap();
        let last = report.steps.last().unwrap();
        assert!(first.accuracy < 0.5, "start too easy: {}", first.accuracy);
        assert!(last.accuracy >= 0.9, "final accuracy {}", last.accuracy);
        let losses: Vec<f64> = report.steps.iter().map(|s| s.loss).collect();
        let trend = smoothed(&losses, 20);
        assert!(
            trend.windows(2).all(|w| w[1] < w[0]),
            "smoothed loss not strictly decreasing"
        );
    }

    #[test]
    fn smoothing_averages_contiguous_windows() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(smoothed(&xs, 2), vec![1.5, 2.5, 3.5]);
        assert_eq!(smoothed(&xs, 4), vec![2.5]);
        assert!(smoothed(&xs, 5).is_empty());
        assert!(smoothed(&xs, 0).is_empty());
        let cfg = TrainConfig {
            synth: SynthConfig::new(6, 12, 0.8, 21).unwrap(),
            steps: 30,
            lr: 0.5,
            ..base_cfg(LossKind::Shapley)
        };
        let report = train_toy_alignment(&cfg).unwrap();
        let losses: Vec<f64> = report.steps.iter().map(|s| s.loss).collect();
        let trend = smoothed(&losses, 10);
        assert!(trend.last().unwrap() < trend.first().unwrap());
    }
}
