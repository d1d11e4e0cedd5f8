//! Word-pair classification: per-channel pair features through small MLPs,
//! a text-only and a three-channel label distribution, and a refinement that
//! contrasts the two.
//!
//! The refinement softmaxes probabilities plus a scaled log-ratio. Because
//! probabilities rather than logits enter the softmax, the scale 0 case
//! returns softmax(P) and not P itself; argmaxes still agree since softmax
//! is monotone.

use rayon::prelude::*;

use super::DecoderError;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{softmax_temp_into, Matrix, TensorError, Vector};

const CLAMP: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-6;

fn softmax_slice(xs: &[f64]) -> Result<Vec<f64>, TensorError> {
    let mut out = vec![0.0; xs.len()];
    softmax_temp_into(xs, 1.0, &mut out)?;
    Ok(out)
}

/// Two affine maps around one tanh layer: w2 tanh(w1 x + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    w1: Matrix,
    b1: Vector,
    w2: Matrix,
    b2: Vector,
}

impl Mlp {
    pub fn new(w1: Matrix, b1: Vector, w2: Matrix, b2: Vector) -> Result<Self, DecoderError> {
        if b1.dim() != w1.rows() {
            return Err(DecoderError::ShapeMismatch {
                what: "hidden bias length",
                expected: w1.rows(),
                got: b1.dim(),
            });
        }
        if w2.cols() != w1.rows() {
            return Err(DecoderError::ShapeMismatch {
                what: "output layer input width",
                expected: w1.rows(),
                got: w2.cols(),
            });
        }
        if b2.dim() != w2.rows() {
            return Err(DecoderError::ShapeMismatch {
                what: "output bias length",
                expected: w2.rows(),
                got: b2.dim(),
            });
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    /// Uniform draws in [-0.5, 0.5) scaled by 1/sqrt(fan_in), in order w1
    /// (row-major), b1, w2 (row-major), b2.
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw_pair = |rows: usize, cols: usize| -> (Matrix, Vector) {
            let scale = 0.5 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.next_symmetric() * scale)
                .collect();
            let w = Matrix::new(rows, cols, data).expect("draws are finite");
            let b = Vector::new((0..rows).map(|_| rng.next_symmetric() * scale).collect())
                .expect("draws are finite");
            (w, b)
        };
        let (w1, b1) = draw_pair(hidden, input);
        let (w2, b2) = draw_pair(output, hidden);
        Self::new(w1, b1, w2, b2).expect("constructed shapes are consistent")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, DecoderError> {
        if x.len() != self.input_dim() {
            return Err(DecoderError::ShapeMismatch {
                what: "mlp input length",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let hidden: Vec<f64> = self
            .w1
            .matvec(x)?
            .iter()
            .zip(self.b1.as_slice())
            .map(|(v, b)| (v + b).tanh())
            .collect();
        Ok(self
            .w2
            .matvec(&hidden)?
            .iter()
            .zip(self.b2.as_slice())
            .map(|(v, b)| v + b)
            .collect())
    }
}

/// Feature channel: token text features, part-of-speech embeddings, or
/// positional embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Text,
    PartOfSpeech,
    Position,
}

/// Rank-3 array of per-pair vectors: n x n entries of fixed width.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTensor {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl PairTensor {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            data: vec![0.0; n * n * dim],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.n + j) * self.dim;
        &self.data[at..at + self.dim]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let at = (i * self.n + j) * self.dim;
        &mut self.data[at..at + self.dim]
    }
}

/// Per-channel MLPs over pair features, the two distribution heads, and the
/// refinement scale.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPairHead {
    pub mlp_text: Mlp,
    pub mlp_pos: Mlp,
    pub mlp_position: Mlp,
    pub mlp_initial: Mlp,
    pub mlp_enhanced: Mlp,
    pub lambda: f64,
}

impl WordPairHead {
    pub fn new(
        mlp_text: Mlp,
        mlp_pos: Mlp,
        mlp_position: Mlp,
        mlp_initial: Mlp,
        mlp_enhanced: Mlp,
        lambda: f64,
    ) -> Result<Self, DecoderError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(DecoderError::BadLambda { lambda });
        }
        let d2 = mlp_text.output_dim();
        let check = |what: &'static str, expected: usize, got: usize| {
            if expected != got {
                Err(DecoderError::ShapeMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("pos channel output width", d2, mlp_pos.output_dim())?;
        check("position channel output width", d2, mlp_position.output_dim())?;
        check("initial head input width", d2, mlp_initial.input_dim())?;
        check("enhanced head input width", 3 * d2, mlp_enhanced.input_dim())?;
        check(
            "enhanced head label count",
            mlp_initial.output_dim(),
            mlp_enhanced.output_dim(),
        )?;
        Ok(Self {
            mlp_text,
            mlp_pos,
            mlp_position,
            mlp_initial,
            mlp_enhanced,
            lambda,
        })
    }

    pub fn label_count(&self) -> usize {
        self.mlp_initial.output_dim()
    }

    pub fn pair_width(&self) -> usize {
        self.mlp_text.output_dim()
    }

    fn channel_mlp(&self, channel: Channel) -> &Mlp {
        match channel {
            Channel::Text => &self.mlp_text,
            Channel::PartOfSpeech => &self.mlp_pos,
            Channel::Position => &self.mlp_position,
        }
    }

    /// Channel MLPs seeded by mixing the master seed with a per-part tag, in
    /// order text=0, pos=1, position=2, initial=3, enhanced=4.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        d_text: usize,
        d_pos: usize,
        d_position: usize,
        d2: usize,
        hidden: usize,
        labels: usize,
        lambda: f64,
        seed: u64,
    ) -> Result<Self, DecoderError> {
        let part = |tag: u64| derive_seed(seed, &[tag]);
        Self::new(
            Mlp::random(3 * d_text, hidden, d2, part(0)),
            Mlp::random(3 * d_pos, hidden, d2, part(1)),
            Mlp::random(3 * d_position, hidden, d2, part(2)),
            Mlp::random(d2, hidden, labels, part(3)),
            Mlp::random(3 * d2, hidden, labels, part(4)),
            lambda,
        )
    }
}

/// Pair features for one channel: entry (i, j) is the channel MLP applied to
/// concat(row_i, row_j, row_i - row_j).
pub fn pair_features(
    rows: &Matrix,
    head: &WordPairHead,
    channel: Channel,
) -> Result<PairTensor, DecoderError> {
    let mlp = head.channel_mlp(channel);
    if mlp.input_dim() != 3 * rows.cols() {
        return Err(DecoderError::ShapeMismatch {
            what: "channel rows vs channel mlp",
            expected: mlp.input_dim(),
            got: 3 * rows.cols(),
        });
    }
    let n = rows.rows();
    let d = rows.cols();
    let outputs: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|at| {
            let (i, j) = (at / n, at % n);
            let (a, b) = (rows.row(i), rows.row(j));
            let mut x = Vec::with_capacity(3 * d);
            x.extend_from_slice(a);
            x.extend_from_slice(b);
            x.extend(a.iter().zip(b).map(|(ai, bi)| ai - bi));
            mlp.forward(&x)
        })
        .collect::<Result<_, _>>()?;
    let mut out = PairTensor::zeros(n, head.pair_width());
    for (at, y) in outputs.into_iter().enumerate() {
        out.get_mut(at / n, at % n).copy_from_slice(&y);
    }
    Ok(out)
}

fn check_simplex(p: &[f64], what: &'static str) -> Result<(), DecoderError> {
    let sum: f64 = p.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(DecoderError::NotADistribution { what, sum });
    }
    Ok(())
}

/// Contrast the enhanced distribution against the text-only one:
/// softmax(p_tsp + lambda * log(p_tsp / p_t)), entries clamped to 1e-12
/// inside the log ratio.
pub fn refine_distribution(
    p_t: &[f64],
    p_tsp: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, DecoderError> {
    if p_t.len() != p_tsp.len() {
        return Err(DecoderError::ShapeMismatch {
            what: "distribution lengths",
            expected: p_t.len(),
            got: p_tsp.len(),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(DecoderError::BadLambda { lambda });
    }
    check_simplex(p_t, "refine_distribution p_t")?;
    check_simplex(p_tsp, "refine_distribution p_tsp")?;
    let scores: Vec<f64> = p_t
        .iter()
        .zip(p_tsp)
        .map(|(&t, &e)| e + lambda * (e.max(CLAMP) / t.max(CLAMP)).ln())
        .collect();
    Ok(softmax_slice(&scores)?)
}

/// Full head: channel pair features, both distribution heads, refinement.
/// Entry (i, j) of the result is the final label distribution for that pair.
pub fn wordpair_forward(
    head: &WordPairHead,
    m_text: &Matrix,
    m_pos: &Matrix,
    m_position: &Matrix,
) -> Result<PairTensor, DecoderError> {
    let n = m_text.rows();
    if m_pos.rows() != n || m_position.rows() != n {
        return Err(DecoderError::ShapeMismatch {
            what: "channel row counts",
            expected: n,
            got: if m_pos.rows() != n {
                m_pos.rows()
            } else {
                m_position.rows()
            },
        });
    }
    let x_t = pair_features(m_text, head, Channel::Text)?;
    let x_s = pair_features(m_pos, head, Channel::PartOfSpeech)?;
    let x_p = pair_features(m_position, head, Channel::Position)?;
    let d2 = head.pair_width();
    let finals: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|at| {
            let (i, j) = (at / n, at % n);
            let p_t = softmax_slice(&head.mlp_initial.forward(x_t.get(i, j))?)?;
            let mut concat = Vec::with_capacity(3 * d2);
            concat.extend_from_slice(x_t.get(i, j));
            concat.extend_from_slice(x_s.get(i, j));
            concat.extend_from_slice(x_p.get(i, j));
            let p_tsp = softmax_slice(&head.mlp_enhanced.forward(&concat)?)?;
            refine_distribution(&p_t, &p_tsp, head.lambda)
        })
        .collect::<Result<_, _>>()?;
    let mut out = PairTensor::zeros(n, head.label_count());
    for (at, p) in finals.into_iter().enumerate() {
        out.get_mut(at / n, at % n).copy_from_slice(&p);
    }
    Ok(out)
}

/// Cross-entropy against one-hot pair labels: -sum_{i,j} log final[i][j][gold].
/// Gold is row-major n*n.
pub fn wordpair_loss(finals: &PairTensor, gold: &[usize]) -> Result<f64, DecoderError> {
    let n = finals.n();
    if gold.len() != n * n {
        return Err(DecoderError::LengthMismatch {
            expected: n * n,
            got: gold.len(),
        });
    }
    let labels = finals.dim();
    let mut loss = 0.0;
    for (at, &label) in gold.iter().enumerate() {
        if label >= labels {
            return Err(DecoderError::InvalidLabel {
                position: at,
                label,
                label_count: labels,
            });
        }
        let p = finals.get(at / n, at % n);
        check_simplex(p, "wordpair_loss final")?;
        loss -= p[label].max(CLAMP).ln();
    }
    Ok(loss)
}

/// Merge the three channel matrices row-wise through one MLP over their
/// concatenation, giving the token features a sequence decoder consumes.
pub fn channel_merge(
    m_text: &Matrix,
    m_pos: &Matrix,
    m_position: &Matrix,
    mlp: &Mlp,
) -> Result<Matrix, DecoderError> {
    let n = m_text.rows();
    if m_pos.rows() != n || m_position.rows() != n {
        return Err(DecoderError::ShapeMismatch {
            what: "channel row counts",
            expected: n,
            got: if m_pos.rows() != n {
                m_pos.rows()
            } else {
                m_position.rows()
            },
        });
    }
    let width = m_text.cols() + m_pos.cols() + m_position.cols();
    if mlp.input_dim() != width {
        return Err(DecoderError::ShapeMismatch {
            what: "merge mlp input width",
            expected: mlp.input_dim(),
            got: width,
        });
    }
    let mut out = Matrix::zeros(n, mlp.output_dim());
    let mut x = Vec::with_capacity(width);
    for i in 0..n {
        x.clear();
        x.extend_from_slice(m_text.row(i));
        x.extend_from_slice(m_pos.row(i));
        x.extend_from_slice(m_position.row(i));
        out.row_mut(i).copy_from_slice(&mlp.forward(&x)?);
    }
    Ok(out)
}
