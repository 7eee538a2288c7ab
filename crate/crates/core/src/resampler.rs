//! Shared single-layer cross-attention resampler.
//!
//! `K` learned queries attend over a slice's visual tokens and return exactly
//! `K` tokens whatever the slice resolution:
//!
//! ```text
//! out = softmax((Q Wq)(T Wk)^T * scale) (T Wv)
//! ```
//!
//! Sums over tokens run in a canonical token order (rows sorted by their bit
//! patterns), so the output does not depend on the order tokens arrive in and
//! is bitwise reproducible.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default number of learned queries.
pub const DEFAULT_QUERIES: usize = 64;

fn check_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `count x dim` visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    values: Array2<f64>,
}

impl TokenMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::ShapeMismatch("token dimension must be positive".into()));
        }
        check_finite(&values, "token matrix")?;
        Ok(Self { values })
    }

    /// Uniform(-1, 1) tokens from a seeded generator.
    pub fn seeded(count: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            values: Array2::from_shape_fn((count, dim), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// `K x dim` learned queries.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    values: Array2<f64>,
}

impl QuerySet {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::ShapeMismatch("query set must be non-empty".into()));
        }
        check_finite(&values, "queries")?;
        Ok(Self { values })
    }

    pub fn seeded(count: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            values: Array2::from_shape_fn((count.max(1), dim.max(1)), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Query/key/value projections. No output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub scale: f64,
}

impl AttentionParams {
    pub fn new(w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64>) -> Result<Self> {
        let dim = w_q.nrows();
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if w.dim() != (dim, dim) || dim == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must be {dim}x{dim}, got {:?}",
                    w.dim()
                )));
            }
            check_finite(w, name)?;
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            scale: 1.0 / (dim as f64).sqrt(),
        })
    }

    /// Uniform(-1/sqrt(d), 1/sqrt(d)) weights.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let dim = dim.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw = || Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-bound..bound));
        let (w_q, w_k, w_v) = (draw(), draw(), draw());
        Self::new(w_q, w_k, w_v).expect("square finite weights")
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }
}

/// `a * b` with a fixed left-to-right inner sum.
fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, inner) = a.dim();
    let m = b.ncols();
    debug_assert_eq!(inner, b.nrows());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..inner {
                acc += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn row_order(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Tokens with rows in canonical (bitwise lexicographic) order.
fn canonical_tokens(tokens: &Array2<f64>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = tokens.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| row_order(&rows[a], &rows[b]));
    tokens.select(Axis(0), &idx)
}

/// Intermediate activations kept for the backward pass.
struct Activations {
    tokens: Array2<f64>,
    q_proj: Array2<f64>,
    k_proj: Array2<f64>,
    v_proj: Array2<f64>,
    weights: Array2<f64>,
    output: Array2<f64>,
}

fn validate(queries: &QuerySet, tokens: &TokenMatrix, params: &AttentionParams) -> Result<()> {
    if tokens.count() == 0 {
        return Err(Error::EmptySlice);
    }
    let d = params.dim();
    if queries.dim() != d || tokens.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "queries dim {}, tokens dim {}, params dim {d}",
            queries.dim(),
            tokens.dim()
        )));
    }
    Ok(())
}

fn forward(queries: &Array2<f64>, tokens: &Array2<f64>, params: &AttentionParams) -> Activations {
    let tokens = canonical_tokens(tokens);
    let q_proj = matmul(queries.view(), params.w_q.view());
    let k_proj = matmul(tokens.view(), params.w_k.view());
    let v_proj = matmul(tokens.view(), params.w_v.view());
    let logits = matmul(q_proj.view(), k_proj.t()).mapv(|v| v * params.scale);
    let weights = softmax_rows(&logits);
    let output = matmul(weights.view(), v_proj.view());
    Activations {
        tokens,
        q_proj,
        k_proj,
        v_proj,
        weights,
        output,
    }
}

/// Compresses one slice to `K` tokens.
pub fn cross_attention_forward(
    queries: &QuerySet,
    tokens: &TokenMatrix,
    params: &AttentionParams,
) -> Result<TokenMatrix> {
    validate(queries, tokens, params)?;
    let acts = forward(&queries.values, &tokens.values, params);
    Ok(TokenMatrix { values: acts.output })
}

/// The `K x T` attention matrix, columns in canonical token order.
pub fn attention_weights(
    queries: &QuerySet,
    tokens: &TokenMatrix,
    params: &AttentionParams,
) -> Result<Array2<f64>> {
    validate(queries, tokens, params)?;
    Ok(forward(&queries.values, &tokens.values, params).weights)
}

/// Runs the shared resampler over every slice (overview included).
pub fn compress_slices(
    slices: &[TokenMatrix],
    queries: &QuerySet,
    params: &AttentionParams,
) -> Result<Vec<TokenMatrix>> {
    slices
        .par_iter()
        .map(|s| cross_attention_forward(queries, s, params))
        .collect()
}

/// Gradients of `sum(probe * output)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub queries: Array2<f64>,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
}

fn probe_loss(output: &Array2<f64>, probe: &Array2<f64>) -> f64 {
    output.iter().zip(probe).fold(0.0, |acc, (o, p)| acc + o * p)
}

/// Analytic backward pass for the probe-weighted loss.
pub fn backward(
    queries: &QuerySet,
    tokens: &TokenMatrix,
    params: &AttentionParams,
    probe: &Array2<f64>,
) -> Result<Gradients> {
    validate(queries, tokens, params)?;
    if probe.dim() != (queries.count(), params.dim()) {
        return Err(Error::ShapeMismatch(format!(
            "probe must be {}x{}, got {:?}",
            queries.count(),
            params.dim(),
            probe.dim()
        )));
    }
    let acts = forward(&queries.values, &tokens.values, params);

    let d_weights = matmul(probe.view(), acts.v_proj.t());
    let d_v_proj = matmul(acts.weights.t(), probe.view());

    // softmax: dS = A * (dA - rowsum(dA * A))
    let mut d_logits = Array2::zeros(acts.weights.dim());
    for k in 0..acts.weights.nrows() {
        let mut dot = 0.0;
        for t in 0..acts.weights.ncols() {
            dot += d_weights[[k, t]] * acts.weights[[k, t]];
        }
        for t in 0..acts.weights.ncols() {
            d_logits[[k, t]] = acts.weights[[k, t]] * (d_weights[[k, t]] - dot) * params.scale;
        }
    }

    let d_q_proj = matmul(d_logits.view(), acts.k_proj.view());
    let d_k_proj = matmul(d_logits.t(), acts.q_proj.view());

    let grads = Gradients {
        queries: matmul(d_q_proj.view(), params.w_q.t()),
        w_q: matmul(queries.values.t(), d_q_proj.view()),
        w_k: matmul(acts.tokens.t(), d_k_proj.view()),
        w_v: matmul(acts.tokens.t(), d_v_proj.view()),
    };
    for (name, g) in [
        ("queries gradient", &grads.queries),
        ("w_q gradient", &grads.w_q),
        ("w_k gradient", &grads.w_k),
        ("w_v gradient", &grads.w_v),
    ] {
        check_finite(g, name)?;
    }
    Ok(grads)
}

/// Analytic vs central-difference gradient comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_param_err: BTreeMap<String, f64>,
}

/// `max|a - n| / max(max|a|, max|n|)` over one tensor; 0 when both vanish.
fn tensor_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Copy)]
enum Param {
    Queries,
    Wq,
    Wk,
    Wv,
}

fn numeric_gradient(
    queries: &QuerySet,
    tokens: &TokenMatrix,
    params: &AttentionParams,
    probe: &Array2<f64>,
    eps: f64,
    which: Param,
) -> Array2<f64> {
    let shape = match which {
        Param::Queries => queries.values.dim(),
        _ => params.w_q.dim(),
    };
    let loss_at = |idx: (usize, usize), delta: f64| {
        let mut q = queries.values.clone();
        let mut p = params.clone();
        let target = match which {
            Param::Queries => &mut q,
            Param::Wq => &mut p.w_q,
            Param::Wk => &mut p.w_k,
            Param::Wv => &mut p.w_v,
        };
        target[idx] += delta;
        probe_loss(&forward(&q, &tokens.values, &p).output, probe)
    };
    Array2::from_shape_fn(shape, |idx| (loss_at(idx, eps) - loss_at(idx, -eps)) / (2.0 * eps))
}

/// Checks the analytic gradients w.r.t. queries, `w_q`, `w_k` and `w_v`
/// against central finite differences of `sum(probe * output)`.
pub fn grad_check(
    queries: &QuerySet,
    tokens: &TokenMatrix,
    params: &AttentionParams,
    eps: f64,
    probe: &Array2<f64>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!("eps must be in (0, 1e-3], got {eps}")));
    }
    let analytic = backward(queries, tokens, params, probe)?;
    let mut per_param_err = BTreeMap::new();
    for (name, which, grad) in [
        ("queries", Param::Queries, &analytic.queries),
        ("w_q", Param::Wq, &analytic.w_q),
        ("w_k", Param::Wk, &analytic.w_k),
        ("w_v", Param::Wv, &analytic.w_v),
    ] {
        let numeric = numeric_gradient(queries, tokens, params, probe, eps, which);
        check_finite(&numeric, name)?;
        per_param_err.insert(name.to_string(), tensor_rel_err(grad, &numeric));
    }
    let max_rel_err = per_param_err.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        per_param_err,
    })
}
