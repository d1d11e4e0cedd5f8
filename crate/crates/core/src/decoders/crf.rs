//! Linear-chain CRF with emission, transition, start and end potentials.
//!
//! A sequence y_0..y_{n-1} scores start[y_0] + sum_t emissions[t][y_t] +
//! sum_t transitions[y_t][y_{t+1}] + end[y_{n-1}]; probabilities normalize
//! this by the log-partition computed with the forward algorithm. Labels are
//! 0-based indices into the label inventory.

use super::DecoderError;
use crate::tensor::{log_sum_exp, Matrix, Vector};

/// Potentials for one sequence: emissions are n x L, transitions L x L
/// (row = previous label), start and end are length L.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    emissions: Matrix,
    transitions: Matrix,
    start: Vector,
    end: Vector,
}

impl CrfModel {
    pub fn new(
        emissions: Matrix,
        transitions: Matrix,
        start: Vector,
        end: Vector,
    ) -> Result<Self, DecoderError> {
        let labels = emissions.cols();
        let check = |what: &'static str, got: usize| {
            if got != labels {
                Err(DecoderError::ShapeMismatch {
                    what,
                    expected: labels,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("transition rows", transitions.rows())?;
        check("transition cols", transitions.cols())?;
        check("start potentials", start.dim())?;
        check("end potentials", end.dim())?;
        Ok(Self {
            emissions,
            transitions,
            start,
            end,
        })
    }

    /// Sequence length n.
    pub fn len(&self) -> usize {
        self.emissions.rows()
    }

    pub fn is_empty(&self) -> bool {
        false // Matrix construction rejects zero rows
    }

    /// Label count L.
    pub fn label_count(&self) -> usize {
        self.emissions.cols()
    }

    pub fn emissions(&self) -> &Matrix {
        &self.emissions
    }

    pub fn emissions_mut(&mut self) -> &mut Matrix {
        &mut self.emissions
    }

    /// Unnormalized score of one full label sequence.
    pub fn sequence_score(&self, gold: &[usize]) -> Result<f64, DecoderError> {
        self.validate_gold(gold)?;
        let mut s = self.start[gold[0]] + self.end[gold[gold.len() - 1]];
        for (t, &y) in gold.iter().enumerate() {
            s += self.emissions.get(t, y);
        }
        for w in gold.windows(2) {
            s += self.transitions.get(w[0], w[1]);
        }
        Ok(s)
    }

    fn validate_gold(&self, gold: &[usize]) -> Result<(), DecoderError> {
        if gold.len() != self.len() {
            return Err(DecoderError::LengthMismatch {
                expected: self.len(),
                got: gold.len(),
            });
        }
        let labels = self.label_count();
        for (position, &label) in gold.iter().enumerate() {
            if label >= labels {
                return Err(DecoderError::InvalidLabel {
                    position,
                    label,
                    label_count: labels,
                });
            }
        }
        Ok(())
    }

    /// Forward pass in log space; alpha[t][y] sums all prefixes ending in y.
    fn forward(&self) -> Matrix {
        let (n, labels) = (self.len(), self.label_count());
        let mut alpha = Matrix::zeros(n, labels);
        for y in 0..labels {
            alpha.set(0, y, self.start[y] + self.emissions.get(0, y));
        }
        let mut terms = vec![0.0f64; labels];
        for t in 1..n {
            for y in 0..labels {
                for (p, term) in terms.iter_mut().enumerate() {
                    *term = alpha.get(t - 1, p) + self.transitions.get(p, y);
                }
                alpha.set(t, y, self.emissions.get(t, y) + log_sum_exp(&terms));
            }
        }
        alpha
    }
}

/// Log of the partition function: log sum over all L^n sequences of
/// exp(score).
pub fn crf_log_partition(model: &CrfModel) -> f64 {
    let alpha = model.forward();
    let n = model.len();
    let terms: Vec<f64> = (0..model.label_count())
        .map(|y| alpha.get(n - 1, y) + model.end[y])
        .collect();
    log_sum_exp(&terms)
}

/// Negative log-likelihood of the gold sequence.
pub fn crf_nll(model: &CrfModel, gold: &[usize]) -> Result<f64, DecoderError> {
    Ok(crf_log_partition(model) - model.sequence_score(gold)?)
}

/// Highest-scoring sequence via Viterbi. Ties break toward the lowest label
/// index, both along the lattice and at the final position.
pub fn crf_decode(model: &CrfModel) -> Vec<usize> {
    let (n, labels) = (model.len(), model.label_count());
    let mut best = Matrix::zeros(n, labels);
    let mut back = vec![vec![0usize; labels]; n];
    for y in 0..labels {
        best.set(0, y, model.start[y] + model.emissions.get(0, y));
    }
    for t in 1..n {
        for y in 0..labels {
            let mut arg = 0usize;
            let mut top = best.get(t - 1, 0) + model.transitions.get(0, y);
            for p in 1..labels {
                let s = best.get(t - 1, p) + model.transitions.get(p, y);
                // strict comparison keeps the lowest previous index on ties
                if s > top {
                    top = s;
                    arg = p;
                }
            }
            best.set(t, y, top + model.emissions.get(t, y));
            back[t][y] = arg;
        }
    }
    let mut last = 0usize;
    let mut top = best.get(n - 1, 0) + model.end[0];
    for y in 1..labels {
        let s = best.get(n - 1, y) + model.end[y];
        if s > top {
            top = s;
            last = y;
        }
    }
    let mut path = vec![0usize; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    path
}

/// d crf_nll / d emissions: per-position marginals minus the one-hot gold,
/// computed with forward-backward. Each row sums to zero.
pub fn crf_nll_emission_grad(model: &CrfModel, gold: &[usize]) -> Result<Matrix, DecoderError> {
    model.validate_gold(gold)?;
    let (n, labels) = (model.len(), model.label_count());
    let alpha = model.forward();
    let mut beta = Matrix::zeros(n, labels);
    for y in 0..labels {
        beta.set(n - 1, y, model.end[y]);
    }
    let mut terms = vec![0.0f64; labels];
    for t in (0..n - 1).rev() {
        for y in 0..labels {
            for (q, term) in terms.iter_mut().enumerate() {
                *term =
                    model.transitions.get(y, q) + model.emissions.get(t + 1, q) + beta.get(t + 1, q);
            }
            beta.set(t, y, log_sum_exp(&terms));
        }
    }
    let log_z = crf_log_partition(model);
    let mut grad = Matrix::zeros(n, labels);
    for t in 0..n {
        for y in 0..labels {
            let marginal = (alpha.get(t, y) + beta.get(t, y) - log_z).exp();
            let hot = if gold[t] == y { 1.0 } else { 0.0 };
            grad.set(t, y, marginal - hot);
        }
    }
    Ok(grad)
}
