//! Python bindings: per-player attribution, alignment losses and gradients,
//! gated cross-attention, sequence decoders, and the toy training harness.
//! Embeddings cross the boundary as plain lists of floats; every error
//! surfaces as ValueError with the library's message.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coalign::decoders as dec;
use coalign::fusion::{fusion_forward as fuse, FusionInput, FusionParams};
use coalign::game::{Coalition, GameConfig, ShapleyReport};
use coalign::harness as hns;
use coalign::harness::{LossKind, RunReport, SynthConfig, TrainConfig};
use coalign::loss as ls;
use coalign::loss::{BatchGradients, EmbeddingBatch};
use coalign::tensor::{Matrix, Vector};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_vectors(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vector>> {
    rows.into_iter()
        .map(|r| Vector::new(r).map_err(value_err))
        .collect()
}

fn to_batch(
    contexts: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
) -> PyResult<EmbeddingBatch> {
    EmbeddingBatch::new(to_vectors(contexts)?, to_vectors(texts)?, to_vectors(images)?)
        .map_err(value_err)
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&to_vectors(rows)?).map_err(value_err)
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn vector_rows(vs: &[Vector]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.as_slice().to_vec()).collect()
}

fn shapley_dict<'py>(py: Python<'py>, r: &ShapleyReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("values", &r.values)?;
    d.set_item("method", r.method.to_string())?;
    d.set_item("passes", r.passes)?;
    d.set_item("seed", r.seed)?;
    d.set_item("stride_trace", &r.stride_trace)?;
    Ok(d)
}

fn grads_dict<'py>(py: Python<'py>, g: &BatchGradients) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("contexts", vector_rows(&g.contexts))?;
    d.set_item("texts", vector_rows(&g.texts))?;
    d.set_item("images", vector_rows(&g.images))?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &RunReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let steps: Vec<Bound<'py, PyDict>> = r
        .steps
        .iter()
        .map(|s| {
            let e = PyDict::new(py);
            e.set_item("step", s.step)?;
            e.set_item("loss", s.loss)?;
            e.set_item("accuracy", s.accuracy)?;
            Ok(e)
        })
        .collect::<PyResult<_>>()?;
    d.set_item("steps", steps)?;
    let cells: Vec<Bound<'py, PyDict>> = r
        .cells
        .iter()
        .map(|c| {
            let e = PyDict::new(py);
            e.set_item("alpha", c.alpha)?;
            e.set_item("beta", c.beta)?;
            e.set_item("final_accuracy", c.final_accuracy)?;
            e.set_item("final_loss", c.final_loss)?;
            Ok(e)
        })
        .collect::<PyResult<_>>()?;
    d.set_item("cells", cells)?;
    Ok(d)
}

fn parse_kind(kind: &str) -> PyResult<LossKind> {
    match kind {
        "shapley" => Ok(LossKind::Shapley),
        "infonce" => Ok(LossKind::Infonce),
        other => Err(PyValueError::new_err(format!(
            "kind must be 'shapley' or 'infonce', got '{other}'"
        ))),
    }
}

/// Exact per-player attribution by subset enumeration.
#[pyfunction]
#[pyo3(signature = (sims, tau=1.0))]
fn shapley_exact(sims: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    let game = GameConfig::new(sims, tau).map_err(value_err)?;
    Ok(game.shapley_exact_subsets().map_err(value_err)?.values)
}

/// Cyclic-scan attribution estimate; returns the full report as a dict.
#[pyfunction]
#[pyo3(signature = (sims, tau=1.0, stride=None, seed=0))]
fn shapley_cyclic<'py>(
    py: Python<'py>,
    sims: Vec<f64>,
    tau: f64,
    stride: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let k = sims.len();
    let game = GameConfig::new(sims, tau).map_err(value_err)?;
    let stride = stride.unwrap_or_else(|| (k / 2).max(1));
    let report = game.shapley_cyclic(stride, seed).map_err(value_err)?;
    shapley_dict(py, &report)
}

/// Softmax-weighted expected similarity of one coalition of players.
#[pyfunction]
#[pyo3(signature = (sims, members, tau=1.0))]
fn utility(sims: Vec<f64>, members: Vec<usize>, tau: f64) -> PyResult<f64> {
    let game = GameConfig::new(sims, tau).map_err(value_err)?;
    let coalition = Coalition::new(members).map_err(value_err)?;
    game.utility(&coalition).map_err(value_err)
}

/// Every component of the alignment objective for one batch.
#[pyfunction]
#[pyo3(signature = (contexts, texts, images, tau=1.0, stride=1, seed=0, alpha=0.2, beta=0.4, main=0.0))]
#[allow(clippy::too_many_arguments)]
fn loss_breakdown<'py>(
    py: Python<'py>,
    contexts: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    tau: f64,
    stride: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
    main: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let batch = to_batch(contexts, texts, images)?;
    let b = ls::loss_breakdown(&batch, tau, stride, seed, alpha, beta, main).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("c2t", b.c2t)?;
    d.set_item("t2c", b.t2c)?;
    d.set_item("c2v", b.c2v)?;
    d.set_item("v2c", b.v2c)?;
    d.set_item("semantic", b.semantic)?;
    d.set_item("modality", b.modality)?;
    d.set_item("main", b.main)?;
    d.set_item("alpha", b.alpha)?;
    d.set_item("beta", b.beta)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

/// Analytic gradients of alpha*semantic + beta*modality for every embedding.
#[pyfunction]
#[pyo3(signature = (contexts, texts, images, tau=1.0, stride=1, seed=0, alpha=0.2, beta=0.4))]
#[allow(clippy::too_many_arguments)]
fn loss_gradients<'py>(
    py: Python<'py>,
    contexts: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    tau: f64,
    stride: usize,
    seed: u64,
    alpha: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let batch = to_batch(contexts, texts, images)?;
    let g = ls::loss_gradients(&batch, tau, stride, seed, alpha, beta).map_err(value_err)?;
    grads_dict(py, &g)
}

/// InfoNCE counterpart of loss_gradients (no sampling, so no seed).
#[pyfunction]
#[pyo3(signature = (contexts, texts, images, tau=1.0, alpha=0.2, beta=0.4))]
fn infonce_gradients<'py>(
    py: Python<'py>,
    contexts: Vec<Vec<f64>>,
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
    tau: f64,
    alpha: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let batch = to_batch(contexts, texts, images)?;
    let g = hns::infonce_gradients(&batch, tau, alpha, beta).map_err(value_err)?;
    grads_dict(py, &g)
}

/// Gated cross-attention forward pass on explicit row matrices; params are
/// drawn from `seed`. Returns the fused rows (one per image row).
#[pyfunction]
#[pyo3(signature = (h_t, h_c, h_v, width=8, seed=0))]
fn fusion_forward(
    h_t: Vec<Vec<f64>>,
    h_c: Vec<Vec<f64>>,
    h_v: Vec<Vec<f64>>,
    width: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let h_t = to_matrix(h_t)?;
    let h_c = to_matrix(h_c)?;
    let h_v = to_matrix(h_v)?;
    let d = h_t.cols();
    let d_img = h_v.cols();
    let input = FusionInput::new(h_t, h_c, h_v).map_err(value_err)?;
    let params = FusionParams::random(d, d_img, width, seed);
    let out = fuse(&input, &params).map_err(value_err)?;
    Ok(matrix_rows(&out))
}

/// Sequence negative log-likelihood under a linear-chain model.
#[pyfunction]
fn crf_nll(
    emissions: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
    gold: Vec<usize>,
) -> PyResult<f64> {
    let model = dec::CrfModel::new(
        to_matrix(emissions)?,
        to_matrix(transitions)?,
        Vector::new(start).map_err(value_err)?,
        Vector::new(end).map_err(value_err)?,
    )
    .map_err(value_err)?;
    dec::crf_nll(&model, &gold).map_err(value_err)
}

/// Highest-scoring label sequence (ties resolve to the lowest label index).
#[pyfunction]
fn crf_decode(
    emissions: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
) -> PyResult<Vec<usize>> {
    let model = dec::CrfModel::new(
        to_matrix(emissions)?,
        to_matrix(transitions)?,
        Vector::new(start).map_err(value_err)?,
        Vector::new(end).map_err(value_err)?,
    )
    .map_err(value_err)?;
    Ok(dec::crf_decode(&model))
}

/// Log-ratio refinement of a three-channel distribution against the
/// text-only one; lambda scales the contrastive term.
#[pyfunction]
#[pyo3(signature = (p_t, p_tsp, lambda=1.0))]
fn refine_distribution(p_t: Vec<f64>, p_tsp: Vec<f64>, lambda: f64) -> PyResult<Vec<f64>> {
    dec::refine_distribution(&p_t, &p_tsp, lambda).map_err(value_err)
}

/// Deterministic synthetic batch: unit-norm latents plus gaussian noise.
#[pyfunction]
#[pyo3(signature = (k, d, sigma=0.8, seed=0))]
fn synth_batch<'py>(
    py: Python<'py>,
    k: usize,
    d: usize,
    sigma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig::new(k, d, sigma, seed).map_err(value_err)?;
    let batch = hns::synth_batch(&cfg);
    let dict = PyDict::new(py);
    dict.set_item("contexts", vector_rows(batch.contexts()))?;
    dict.set_item("texts", vector_rows(batch.texts()))?;
    dict.set_item("images", vector_rows(batch.images()))?;
    Ok(dict)
}

/// Fraction of contexts whose most similar candidate is their own pair.
#[pyfunction]
fn retrieval_accuracy(contexts: Vec<Vec<f64>>, candidates: Vec<Vec<f64>>) -> PyResult<f64> {
    hns::retrieval_accuracy(&to_vectors(contexts)?, &to_vectors(candidates)?).map_err(value_err)
}

/// Gradient-descend text/image embeddings of a synthetic batch; returns the
/// run report (per-step loss and retrieval accuracy) as a dict.
#[pyfunction]
#[pyo3(signature = (k=16, d=32, sigma=0.8, steps=300, lr=0.5, alpha=0.2, beta=0.4, tau=1.0, stride=None, kind="shapley", seed=2024))]
#[allow(clippy::too_many_arguments)]
fn train_toy<'py>(
    py: Python<'py>,
    k: usize,
    d: usize,
    sigma: f64,
    steps: usize,
    lr: f64,
    alpha: f64,
    beta: f64,
    tau: f64,
    stride: Option<usize>,
    kind: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = TrainConfig {
        synth: SynthConfig::new(k, d, sigma, seed).map_err(value_err)?,
        steps,
        lr,
        alpha,
        beta,
        tau,
        stride: stride.unwrap_or_else(|| (k / 2).max(1)),
        kind: parse_kind(kind)?,
    };
    let mut report = hns::train_toy_alignment(&cfg).map_err(value_err)?;
    report.zero_timings();
    report_dict(py, &report)
}

/// One training run per (alpha, beta) pair; returns final metrics per cell.
#[pyfunction]
#[pyo3(signature = (alphas, betas, k=16, d=32, sigma=0.8, steps=300, lr=0.5, tau=1.0, stride=None, kind="shapley", seed=2024))]
#[allow(clippy::too_many_arguments)]
fn sweep_alpha_beta<'py>(
    py: Python<'py>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    k: usize,
    d: usize,
    sigma: f64,
    steps: usize,
    lr: f64,
    tau: f64,
    stride: Option<usize>,
    kind: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let base = TrainConfig {
        synth: SynthConfig::new(k, d, sigma, seed).map_err(value_err)?,
        steps,
        lr,
        alpha: 0.0,
        beta: 0.0,
        tau,
        stride: stride.unwrap_or_else(|| (k / 2).max(1)),
        kind: parse_kind(kind)?,
    };
    let mut report = hns::sweep_alpha_beta(&alphas, &betas, &base).map_err(value_err)?;
    report.zero_timings();
    report_dict(py, &report)
}

#[pymodule]
fn coalign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(shapley_exact, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_cyclic, m)?)?;
    m.add_function(wrap_pyfunction!(utility, m)?)?;
    m.add_function(wrap_pyfunction!(loss_breakdown, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradients, m)?)?;
    m.add_function(wrap_pyfunction!(infonce_gradients, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_forward, m)?)?;
    m.add_function(wrap_pyfunction!(crf_nll, m)?)?;
    m.add_function(wrap_pyfunction!(crf_decode, m)?)?;
    m.add_function(wrap_pyfunction!(refine_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(synth_batch, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_alpha_beta, m)?)?;
    Ok(())
}
