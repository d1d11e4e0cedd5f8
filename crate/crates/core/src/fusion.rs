//! Bridged, gated single-head cross-attention between image queries and text
//! keys/values.
//!
//! Pipeline: project image rows to queries Q (n_v x D), text rows to keys K
//! and values V (n_t x D), context rows to C (n_c x D). A bridging vector
//! B in R^D summarizes the contexts as the column mean of C^T C / sqrt(D).
//! Per-row tanh gates computed from (row, B) blend each query and key with B,
//! then standard scaled dot-product attention mixes the values.
//!
//! The output has one row per query, n_v x D. Do not expect n_t rows here:
//! the queries are the image rows, and attention output always follows the
//! queries.
//!
//! [`fusion_param_gradients`] is a hand-written reverse pass over the whole
//! pipeline returning d<upstream, output>/d(every parameter), checked against
//! central finite differences in the tests and the acceptance suite.

use thiserror::Error;

use crate::rng::SplitMix64;
use crate::tensor::{dot, softmax_temp_into, Matrix, TensorError, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Raw modality features: text rows (n_t x d), context rows (n_c x d) and
/// image rows (n_v x d_img). Text and context share a width, images may not.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub h_t: Matrix,
    pub h_c: Matrix,
    pub h_v: Matrix,
}

impl FusionInput {
    pub fn new(h_t: Matrix, h_c: Matrix, h_v: Matrix) -> Result<Self, FusionError> {
        if h_c.cols() != h_t.cols() {
            return Err(FusionError::ShapeMismatch {
                what: "context feature width",
                expected: h_t.cols(),
                got: h_c.cols(),
            });
        }
        Ok(Self { h_t, h_c, h_v })
    }

    /// Gaussian rows from one seed, drawn row-major in order h_t, h_c, h_v.
    pub fn random(
        n_t: usize,
        n_c: usize,
        n_v: usize,
        d: usize,
        d_img: usize,
        seed: u64,
    ) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |rows: usize, cols: usize| -> Matrix {
            let data = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
            Matrix::new(rows, cols, data).expect("gaussian draws are finite")
        };
        Self {
            h_t: draw(n_t, d),
            h_c: draw(n_c, d),
            h_v: draw(n_v, d_img),
        }
    }
}

/// Projection and gate parameters. Projections map input widths to the
/// shared attention width D; the two gate maps take concat(row, B) in R^{2D}
/// to R^D.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w_q: Matrix,
    pub b_q: Vector,
    pub w_k: Matrix,
    pub b_k: Vector,
    pub w_v: Matrix,
    pub b_v: Vector,
    pub w_c: Matrix,
    pub b_c: Vector,
    pub w_g1: Matrix,
    pub b_g1: Vector,
    pub w_g2: Matrix,
    pub b_g2: Vector,
}

impl FusionParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_q: Matrix,
        b_q: Vector,
        w_k: Matrix,
        b_k: Vector,
        w_v: Matrix,
        b_v: Vector,
        w_c: Matrix,
        b_c: Vector,
        w_g1: Matrix,
        b_g1: Vector,
        w_g2: Matrix,
        b_g2: Vector,
    ) -> Result<Self, FusionError> {
        let width = w_q.rows();
        let check = |what: &'static str, expected: usize, got: usize| {
            if expected != got {
                Err(FusionError::ShapeMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("w_k output width", width, w_k.rows())?;
        check("w_v output width", width, w_v.rows())?;
        check("w_c output width", width, w_c.rows())?;
        check("w_k input width", w_k.cols(), w_v.cols())?;
        check("w_c input width", w_k.cols(), w_c.cols())?;
        check("b_q length", width, b_q.dim())?;
        check("b_k length", width, b_k.dim())?;
        check("b_v length", width, b_v.dim())?;
        check("b_c length", width, b_c.dim())?;
        check("w_g1 output width", width, w_g1.rows())?;
        check("w_g2 output width", width, w_g2.rows())?;
        check("w_g1 input width", 2 * width, w_g1.cols())?;
        check("w_g2 input width", 2 * width, w_g2.cols())?;
        check("b_g1 length", width, b_g1.dim())?;
        check("b_g2 length", width, b_g2.dim())?;
        Ok(Self {
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
            w_c,
            b_c,
            w_g1,
            b_g1,
            w_g2,
            b_g2,
        })
    }

    /// Attention width D.
    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    /// Uniform draws in [-0.5, 0.5) scaled by 1/sqrt(fan_in), generated in
    /// field order (each matrix row-major, then its bias): w_q, b_q, w_k,
    /// b_k, w_v, b_v, w_c, b_c, w_g1, b_g1, w_g2, b_g2.
    pub fn random(d: usize, d_img: usize, width: usize, seed: u64) -> Self {
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
        let (w_q, b_q) = draw_pair(width, d_img);
        let (w_k, b_k) = draw_pair(width, d);
        let (w_v, b_v) = draw_pair(width, d);
        let (w_c, b_c) = draw_pair(width, d);
        let (w_g1, b_g1) = draw_pair(width, 2 * width);
        let (w_g2, b_g2) = draw_pair(width, 2 * width);
        Self::new(w_q, b_q, w_k, b_k, w_v, b_v, w_c, b_c, w_g1, b_g1, w_g2, b_g2)
            .expect("constructed shapes are consistent")
    }
}

/// Projected streams: queries from images, keys/values from texts, contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub q_v: Matrix,
    pub k_t: Matrix,
    pub v_t: Matrix,
    pub c: Matrix,
}

fn project_rows(h: &Matrix, w: &Matrix, b: &Vector, what: &'static str) -> Result<Matrix, FusionError> {
    if h.cols() != w.cols() {
        return Err(FusionError::ShapeMismatch {
            what,
            expected: w.cols(),
            got: h.cols(),
        });
    }
    let mut out = Matrix::zeros(h.rows(), w.rows());
    for r in 0..h.rows() {
        let y = w.matvec(h.row(r))?;
        let row = out.row_mut(r);
        for (o, (yi, bi)) in row.iter_mut().zip(y.iter().zip(b.as_slice())) {
            *o = yi + bi;
        }
    }
    Ok(out)
}

/// Row-wise affine projections of all three streams.
pub fn project(input: &FusionInput, params: &FusionParams) -> Result<Projection, FusionError> {
    Ok(Projection {
        q_v: project_rows(&input.h_v, &params.w_q, &params.b_q, "image rows vs w_q")?,
        k_t: project_rows(&input.h_t, &params.w_k, &params.b_k, "text rows vs w_k")?,
        v_t: project_rows(&input.h_t, &params.w_v, &params.b_v, "text rows vs w_v")?,
        c: project_rows(&input.h_c, &params.w_c, &params.b_c, "context rows vs w_c")?,
    })
}

/// Bridging vector: mean over the first index of C^T C / sqrt(D), a length-D
/// summary of the projected contexts.
pub fn bridging_term(c: &Matrix) -> Vector {
    let d = c.cols();
    let scale = 1.0 / (d as f64 * (d as f64).sqrt());
    // column mean of C^T C equals C^T of the row sums, up to the scale
    let mut b = Vector::zeros(d);
    for r in 0..c.rows() {
        let row = c.row(r);
        let row_sum: f64 = row.iter().sum();
        for (bj, &crj) in b.as_mut_slice().iter_mut().zip(row) {
            *bj += scale * row_sum * crj;
        }
    }
    b
}

fn gate_rows(
    rows: &Matrix,
    b: &Vector,
    w: &Matrix,
    bias: &Vector,
    what: &'static str,
) -> Result<Matrix, FusionError> {
    let d = b.dim();
    if rows.cols() != d {
        return Err(FusionError::ShapeMismatch {
            what,
            expected: d,
            got: rows.cols(),
        });
    }
    let mut concat = vec![0.0f64; 2 * d];
    concat[d..].copy_from_slice(b.as_slice());
    let mut out = Matrix::zeros(rows.rows(), d);
    for r in 0..rows.rows() {
        concat[..d].copy_from_slice(rows.row(r));
        let z = w.matvec(&concat)?;
        let orow = out.row_mut(r);
        for (o, (zi, bi)) in orow.iter_mut().zip(z.iter().zip(bias.as_slice())) {
            *o = (zi + bi).tanh();
        }
    }
    Ok(out)
}

/// Per-row tanh gates for queries and keys, each computed from the row
/// concatenated with the bridging vector. Entries lie strictly in (-1, 1).
pub fn gates(
    q_v: &Matrix,
    k_t: &Matrix,
    b: &Vector,
    params: &FusionParams,
) -> Result<(Matrix, Matrix), FusionError> {
    let g_q = gate_rows(q_v, b, &params.w_g1, &params.b_g1, "query gate rows")?;
    let g_k = gate_rows(k_t, b, &params.w_g2, &params.b_g2, "key gate rows")?;
    Ok((g_q, g_k))
}

fn mix_rows(rows: &Matrix, g: &Matrix, b: &Vector) -> Matrix {
    let mut out = Matrix::zeros(rows.rows(), rows.cols());
    for r in 0..rows.rows() {
        let (src, gate) = (rows.row(r), g.row(r));
        let orow = out.row_mut(r);
        for d in 0..src.len() {
            orow[d] = gate[d] * src[d] + (1.0 - gate[d]) * b[d];
        }
    }
    out
}

/// Convex per-entry blend of each row with the broadcast bridging vector:
/// gate 1 keeps the row, gate 0 replaces it with B.
pub fn gated_mix(
    q_v: &Matrix,
    k_t: &Matrix,
    b: &Vector,
    g_q: &Matrix,
    g_k: &Matrix,
) -> (Matrix, Matrix) {
    (mix_rows(q_v, g_q, b), mix_rows(k_t, g_k, b))
}

/// Standard single-head scaled dot-product attention: softmax(Q K^T /
/// sqrt(D)) V, one output row per query.
pub fn cross_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix, FusionError> {
    if q.cols() != k.cols() {
        return Err(FusionError::ShapeMismatch {
            what: "key width vs query width",
            expected: q.cols(),
            got: k.cols(),
        });
    }
    if k.rows() != v.rows() {
        return Err(FusionError::ShapeMismatch {
            what: "value rows vs key rows",
            expected: k.rows(),
            got: v.rows(),
        });
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut scores = vec![0.0f64; k.rows()];
    let mut attn = vec![0.0f64; k.rows()];
    for r in 0..q.rows() {
        let qrow = q.row(r);
        for (t, s) in scores.iter_mut().enumerate() {
            *s = dot(qrow, k.row(t)) * scale;
        }
        softmax_temp_into(&scores, 1.0, &mut attn)?;
        let orow = out.row_mut(r);
        for (t, &a) in attn.iter().enumerate() {
            let vrow = v.row(t);
            for (o, &x) in orow.iter_mut().zip(vrow) {
                *o += a * x;
            }
        }
    }
    Ok(out)
}

/// Full pipeline: project, bridge, gate, mix, attend. Output is n_v x D.
pub fn fusion_forward(input: &FusionInput, params: &FusionParams) -> Result<Matrix, FusionError> {
    Ok(forward_trace(input, params)?.output)
}

struct Trace {
    proj: Projection,
    b: Vector,
    g_q: Matrix,
    g_k: Matrix,
    q_mix: Matrix,
    k_mix: Matrix,
    attn: Matrix,
    output: Matrix,
}

fn forward_trace(input: &FusionInput, params: &FusionParams) -> Result<Trace, FusionError> {
    let proj = project(input, params)?;
    let b = bridging_term(&proj.c);
    let (g_q, g_k) = gates(&proj.q_v, &proj.k_t, &b, params)?;
    let (q_mix, k_mix) = gated_mix(&proj.q_v, &proj.k_t, &b, &g_q, &g_k);
    // attention with the softmax rows kept for the backward pass
    let scale = 1.0 / (q_mix.cols() as f64).sqrt();
    let mut attn = Matrix::zeros(q_mix.rows(), k_mix.rows());
    let mut scores = vec![0.0f64; k_mix.rows()];
    for r in 0..q_mix.rows() {
        for (t, s) in scores.iter_mut().enumerate() {
            *s = dot(q_mix.row(r), k_mix.row(t)) * scale;
        }
        softmax_temp_into(&scores, 1.0, attn.row_mut(r))?;
    }
    let output = attn.matmul(&proj.v_t)?;
    Ok(Trace {
        proj,
        b,
        g_q,
        g_k,
        q_mix,
        k_mix,
        attn,
        output,
    })
}

/// Gradients of a scalar objective with respect to every fusion parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParamGrads {
    pub w_q: Matrix,
    pub b_q: Vector,
    pub w_k: Matrix,
    pub b_k: Vector,
    pub w_v: Matrix,
    pub b_v: Vector,
    pub w_c: Matrix,
    pub b_c: Vector,
    pub w_g1: Matrix,
    pub b_g1: Vector,
    pub w_g2: Matrix,
    pub b_g2: Vector,
}

/// Reverse pass for the scalar sum(upstream ⊙ fusion_forward(input, params)):
/// upstream has the output's shape (n_v x D) and holds d objective / d output.
pub fn fusion_param_gradients(
    input: &FusionInput,
    params: &FusionParams,
    upstream: &Matrix,
) -> Result<FusionParamGrads, FusionError> {
    let trace = forward_trace(input, params)?;
    let d = params.width();
    let (n_v, n_t) = (trace.q_mix.rows(), trace.k_mix.rows());
    if upstream.rows() != n_v || upstream.cols() != d {
        return Err(FusionError::ShapeMismatch {
            what: "upstream rows x cols",
            expected: n_v * d,
            got: upstream.rows() * upstream.cols(),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();

    // attention backward
    let g_attn = upstream.matmul(&trace.proj.v_t.transpose())?; // n_v x n_t
    let g_v = trace.attn.transpose().matmul(upstream)?; // n_t x D
    let mut g_scores = Matrix::zeros(n_v, n_t);
    for r in 0..n_v {
        let (ga, a) = (g_attn.row(r), trace.attn.row(r));
        let inner = dot(ga, a);
        let out = g_scores.row_mut(r);
        for t in 0..n_t {
            out[t] = (ga[t] - inner) * a[t];
        }
    }
    let mut g_qmix = g_scores.matmul(&trace.k_mix)?; // n_v x D
    for x in g_qmix.as_mut_slice() {
        *x *= scale;
    }
    let mut g_kmix = g_scores.transpose().matmul(&trace.q_mix)?; // n_t x D
    for x in g_kmix.as_mut_slice() {
        *x *= scale;
    }

    // gated mix backward; B collects from both streams
    let mut g_b = Vector::zeros(d);
    let mut g_q = Matrix::zeros(n_v, d);
    let mut g_gate_q = Matrix::zeros(n_v, d);
    for r in 0..n_v {
        let (gm, q, gate) = (g_qmix.row(r), trace.proj.q_v.row(r), trace.g_q.row(r));
        let gq_row = g_q.row_mut(r);
        for i in 0..d {
            g_gate_q.row_mut(r)[i] = gm[i] * (q[i] - trace.b[i]);
            gq_row[i] = gm[i] * gate[i];
            g_b[i] += gm[i] * (1.0 - gate[i]);
        }
    }
    let mut g_k = Matrix::zeros(n_t, d);
    let mut g_gate_k = Matrix::zeros(n_t, d);
    for r in 0..n_t {
        let (gm, k, gate) = (g_kmix.row(r), trace.proj.k_t.row(r), trace.g_k.row(r));
        let gk_row = g_k.row_mut(r);
        for i in 0..d {
            g_gate_k.row_mut(r)[i] = gm[i] * (k[i] - trace.b[i]);
            gk_row[i] = gm[i] * gate[i];
            g_b[i] += gm[i] * (1.0 - gate[i]);
        }
    }

    // tanh gate backward: accumulate weight grads and feed the concat input
    // gradients back into the rows and B
    let gate_backward = |rows: &Matrix,
                             gate: &Matrix,
                             g_gate: &Matrix,
                             w: &Matrix,
                             g_rows: &mut Matrix,
                             g_b: &mut Vector|
     -> (Matrix, Vector) {
        let mut g_w = Matrix::zeros(d, 2 * d);
        let mut g_bias = Vector::zeros(d);
        let mut concat = vec![0.0f64; 2 * d];
        concat[d..].copy_from_slice(trace.b.as_slice());
        for r in 0..rows.rows() {
            concat[..d].copy_from_slice(rows.row(r));
            for o in 0..d {
                let gz = g_gate.row(r)[o] * (1.0 - gate.row(r)[o] * gate.row(r)[o]);
                if gz == 0.0 {
                    continue;
                }
                g_bias[o] += gz;
                let wrow = w.row(o);
                let gw_row = g_w.row_mut(o);
                for i in 0..2 * d {
                    gw_row[i] += gz * concat[i];
                }
                let grow = g_rows.row_mut(r);
                for i in 0..d {
                    grow[i] += gz * wrow[i];
                    g_b[i] += gz * wrow[d + i];
                }
            }
        }
        (g_w, g_bias)
    };
    let (g_w_g1, g_b_g1) =
        gate_backward(&trace.proj.q_v, &trace.g_q, &g_gate_q, &params.w_g1, &mut g_q, &mut g_b);
    let (g_w_g2, g_b_g2) =
        gate_backward(&trace.proj.k_t, &trace.g_k, &g_gate_k, &params.w_g2, &mut g_k, &mut g_b);

    // bridging backward: B_j = scale_b * sum_r rowsum(C_r) * C[r][j]
    let scale_b = 1.0 / (d as f64 * (d as f64).sqrt());
    let c = &trace.proj.c;
    let mut g_c = Matrix::zeros(c.rows(), d);
    for r in 0..c.rows() {
        let crow = c.row(r);
        let row_sum: f64 = crow.iter().sum();
        let inner = dot(g_b.as_slice(), crow);
        let grow = g_c.row_mut(r);
        for i in 0..d {
            grow[i] = scale_b * (g_b[i] * row_sum + inner);
        }
    }

    // projection backward: rows of h feed every projected row
    let proj_backward = |g_proj: &Matrix, h: &Matrix| -> (Matrix, Vector) {
        let mut g_w = Matrix::zeros(d, h.cols());
        let mut g_bias = Vector::zeros(d);
        for r in 0..h.rows() {
            let (gp, hrow) = (g_proj.row(r), h.row(r));
            for o in 0..d {
                let g = gp[o];
                if g == 0.0 {
                    continue;
                }
                g_bias[o] += g;
                let gw_row = g_w.row_mut(o);
                for (gw, &x) in gw_row.iter_mut().zip(hrow) {
                    *gw += g * x;
                }
            }
        }
        (g_w, g_bias)
    };
    let (g_w_q, g_b_q) = proj_backward(&g_q, &input.h_v);
    let (g_w_k, g_b_k) = proj_backward(&g_k, &input.h_t);
    let (g_w_v, g_b_v) = proj_backward(&g_v, &input.h_t);
    let (g_w_c, g_b_c) = proj_backward(&g_c, &input.h_c);

    Ok(FusionParamGrads {
        w_q: g_w_q,
        b_q: g_b_q,
        w_k: g_w_k,
        b_k: g_b_k,
        w_v: g_w_v,
        b_v: g_b_v,
        w_c: g_w_c,
        b_c: g_b_c,
        w_g1: g_w_g1,
        b_g1: g_b_g1,
        w_g2: g_w_g2,
        b_g2: g_b_g2,
    })
}
