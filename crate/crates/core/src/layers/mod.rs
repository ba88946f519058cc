//! Layer variants: standard/gated/spark FFN, standard/spark/top-k attention,
//! rotary embeddings on split dimensions, and the nonlinearities they use.
//!
//! The spark variants split the input into a head segment that drives a
//! low-cost predictor (`K1^T q[:r]`) and a tail segment that is only
//! multiplied against the surviving rows. Everything downstream of the
//! predictor runs through the sparse kernels; each spark layer's output is
//! tested to match the dense composition of the oracle ops in
//! [`crate::tensor`].

mod flops;

pub use flops::{attention_flops, attention_projection_flops, ffn_flops, AttnVariant, FfnVariant};

use crate::error::{Error, Result};
use crate::kernels::{
    masked_matvec, masked_matvec_view, sparse_vecmat, sparse_vecmat_view, KernelStats,
    DEFAULT_TILE_ROWS,
};
use crate::tensor::{
    dense_mat_transpose_vec, dense_matvec, dot, MatrixView, RealMatrix, RealVector,
    SparseActivation,
};
use crate::topk::{stat_topk, stat_topk_neg_inf};
use crate::Real;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// All dimensional hyper-parameters of one layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LayerConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub k_ff: usize,
    pub r_ff: usize,
    pub d_attn: usize,
    pub k_attn: usize,
    pub r_attn: usize,
    pub n_heads: usize,
    /// Local-attention span; `None` means every layer attends globally.
    pub window: Option<usize>,
    pub rope_base: Real,
    /// Apply conventional `1/sqrt(d_attn)` scaling to attention logits.
    /// Off by default: the layer equations are written without it.
    pub scale_logits: bool,
}

impl LayerConfig {
    /// Gemma-2 2B-shaped reference configuration. FLOPs accounting only: the
    /// head layout (8 heads of 256 dims vs d_model 2304) relies on an output
    /// projection this crate does not materialize, so `build_model` rejects
    /// it.
    pub fn gemma2_2b() -> Self {
        LayerConfig {
            d_model: 2304,
            d_ff: 13824,
            k_ff: 1106,
            r_ff: 1024,
            d_attn: 256,
            k_attn: 256,
            r_attn: 128,
            n_heads: 8,
            window: Some(4096),
            rope_base: 10000.0,
            scale_logits: false,
        }
    }

    /// Desk-scale runnable configuration: same ~8% FFN sparsity target, heads
    /// concatenate back to d_model.
    pub fn tiny() -> Self {
        LayerConfig {
            d_model: 128,
            d_ff: 768,
            k_ff: 61,
            r_ff: 64,
            d_attn: 64,
            k_attn: 16,
            r_attn: 32,
            n_heads: 2,
            window: Some(64),
            rope_base: 10000.0,
            scale_logits: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, message: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::parameter("LayerConfig", message.to_string()))
            }
        };
        check(self.d_model > 0, "d_model must be positive")?;
        check(self.d_ff > 0, "d_ff must be positive")?;
        check(
            self.k_ff >= 1 && self.k_ff < self.d_ff,
            "k_ff must satisfy 1 <= k_ff <= d_ff - 1",
        )?;
        check(
            self.r_ff > 0 && self.r_ff < self.d_model,
            "r_ff must satisfy 0 < r_ff < d_model",
        )?;
        check(self.d_attn > 0, "d_attn must be positive")?;
        check(
            self.r_attn > 0 && self.r_attn < self.d_attn,
            "r_attn must satisfy 0 < r_attn < d_attn",
        )?;
        check(self.k_attn >= 1, "k_attn must be at least 1")?;
        check(self.n_heads >= 1, "n_heads must be at least 1")?;
        check(
            self.window.is_none_or(|w| w >= 1),
            "window must be positive when set",
        )?;
        check(self.rope_base > 0.0, "rope_base must be positive")?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

/// Exact (erf-based) GELU of a scalar.
pub fn gelu_scalar(x: Real) -> Real {
    let x64 = x as f64;
    (0.5 * x64 * (1.0 + libm::erf(x64 / std::f64::consts::SQRT_2))) as Real
}

/// Numerically stable softplus `log(1 + e^x)` of a scalar.
pub fn softplus_scalar(x: Real) -> Real {
    let x64 = x as f64;
    let out = if x64 > 0.0 {
        x64 + (-x64).exp().ln_1p()
    } else {
        x64.exp().ln_1p()
    };
    out as Real
}

pub fn relu_scalar(x: Real) -> Real {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn relu2_scalar(x: Real) -> Real {
    let r = relu_scalar(x);
    r * r
}

/// Elementwise exact GELU.
pub fn gelu(x: &RealVector) -> RealVector {
    map_vector(x, gelu_scalar)
}

/// Elementwise stable softplus.
pub fn softplus(x: &RealVector) -> RealVector {
    map_vector(x, softplus_scalar)
}

fn map_vector(x: &RealVector, f: impl Fn(Real) -> Real) -> RealVector {
    RealVector::new(x.iter().map(|&v| f(v)).collect())
        .expect("elementwise map of finite input stays finite")
}

/// Softmax over masked logits: weights over active entries sum to 1,
/// inactive positions get weight exactly 0. Stabilized by subtracting the
/// active maximum.
pub fn masked_softmax(logits: &SparseActivation) -> Result<RealVector> {
    if logits.mode() != crate::tensor::FillMode::NegInf {
        return Err(Error::parameter(
            "masked_softmax",
            "logits must be neg-inf filled",
        ));
    }
    let mut max = Real::NEG_INFINITY;
    for (_, v) in logits.iter_active() {
        if v > max {
            max = v;
        }
    }
    if max == Real::NEG_INFINITY {
        return Err(Error::parameter(
            "masked_softmax",
            "at least one active entry required",
        ));
    }
    let mut weights = vec![0.0 as Real; logits.len()];
    let mut sum = 0.0 as Real;
    for (i, v) in logits.iter_active() {
        let e = (v - max).exp();
        weights[i] = e;
        sum += e;
    }
    for w in &mut weights {
        *w /= sum;
    }
    RealVector::new(weights)
}

// ---------------------------------------------------------------------------
// Rotary embedding on split dimensions
// ---------------------------------------------------------------------------

/// Rotary position embedding applied independently to `x[..split_r]` and
/// `x[split_r..]`, each with its own frequency ladder over its own dimension
/// count. Adjacent entries `(2j, 2j+1)` form the rotated pairs; pair `j` of
/// a segment of length `L` rotates by `position * base^(-2j/L)`.
pub fn rope_apply_split(
    x: &RealVector,
    split_r: usize,
    position: usize,
    base: Real,
) -> Result<RealVector> {
    if split_r > x.len() {
        return Err(Error::parameter(
            "rope_apply_split",
            format!("split {split_r} exceeds length {}", x.len()),
        ));
    }
    if !split_r.is_multiple_of(2) || !(x.len() - split_r).is_multiple_of(2) {
        return Err(Error::parameter(
            "rope_apply_split",
            "both segments must have even length",
        ));
    }
    if !(base > 0.0) {
        return Err(Error::parameter(
            "rope_apply_split",
            "base must be positive",
        ));
    }
    let mut out = x.as_slice().to_vec();
    rotate_segment(&mut out[..split_r], position, base as f64);
    rotate_segment(&mut out[split_r..], position, base as f64);
    RealVector::new(out)
}

fn rotate_segment(seg: &mut [Real], position: usize, base: f64) {
    let pairs = seg.len() / 2;
    for j in 0..pairs {
        let freq = base.powf(-2.0 * j as f64 / seg.len() as f64);
        let angle = position as f64 * freq;
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (seg[2 * j] as f64, seg[2 * j + 1] as f64);
        seg[2 * j] = (a * cos - b * sin) as Real;
        seg[2 * j + 1] = (a * sin + b * cos) as Real;
    }
}

// ---------------------------------------------------------------------------
// FFN variants
// ---------------------------------------------------------------------------

/// Weights of one spark FFN: predictor `k1` is `r x d_ff`, tail weights `k2`
/// are `(d_model - r) x d_ff`, output weights `v` are `d_model x d_ff`.
/// Parameter count is `2 * d_model * d_ff` regardless of the split, matching
/// a gated FFN of width `2/3 * d_ff`.
///
/// `k2` and `v` are also kept transposed (row per neuron) so the sparse
/// kernels can skip whole contiguous rows.
#[derive(Debug, Clone)]
pub struct FfnWeights {
    k1: RealMatrix,
    k2: RealMatrix,
    v: RealMatrix,
    k2_rows: RealMatrix,
    v_rows: RealMatrix,
}

impl FfnWeights {
    pub fn new(k1: RealMatrix, k2: RealMatrix, v: RealMatrix) -> Result<Self> {
        let d_ff = k1.cols();
        let d_model = k1.rows() + k2.rows();
        if k2.cols() != d_ff {
            return Err(Error::ShapeMismatch {
                op: "FfnWeights::new",
                expected: d_ff,
                got: k2.cols(),
            });
        }
        if v.rows() != d_model || v.cols() != d_ff {
            return Err(Error::ShapeMismatch {
                op: "FfnWeights::new",
                expected: d_model * d_ff,
                got: v.rows() * v.cols(),
            });
        }
        let k2_rows = k2.transpose();
        let v_rows = v.transpose();
        Ok(FfnWeights {
            k1,
            k2,
            v,
            k2_rows,
            v_rows,
        })
    }

    pub fn d_model(&self) -> usize {
        self.v.rows()
    }

    pub fn d_ff(&self) -> usize {
        self.k1.cols()
    }

    pub fn split_r(&self) -> usize {
        self.k1.rows()
    }

    pub fn k1(&self) -> &RealMatrix {
        &self.k1
    }

    pub fn k2(&self) -> &RealMatrix {
        &self.k2
    }

    pub fn v(&self) -> &RealMatrix {
        &self.v
    }

    pub fn parameter_count(&self) -> u64 {
        ffn_parameter_count(self.d_model(), self.d_ff())
    }
}

/// Parameters of a spark FFN at the given dimensions: `2 * d_model * d_ff`.
pub fn ffn_parameter_count(d_model: usize, d_ff: usize) -> u64 {
    2 * d_model as u64 * d_ff as u64
}

/// Parameters of a gated FFN at width `d_ff_prime`: `3 * d_model * d_ff'`.
pub fn gated_ffn_parameter_count(d_model: usize, d_ff_prime: usize) -> u64 {
    3 * d_model as u64 * d_ff_prime as u64
}

/// Dense reference FFN: `V * gelu(K^T q)` with `k`, `v` both
/// `d_model x d_ff`.
pub fn standard_ffn(q: &RealVector, k: &RealMatrix, v: &RealMatrix) -> Result<RealVector> {
    ffn_with_activation(q, k, v, gelu_scalar)
}

/// Standard FFN with ReLU, for the activation-ablation table.
pub fn relu_ffn(q: &RealVector, k: &RealMatrix, v: &RealMatrix) -> Result<RealVector> {
    ffn_with_activation(q, k, v, relu_scalar)
}

/// Standard FFN with squared ReLU.
pub fn relu2_ffn(q: &RealVector, k: &RealMatrix, v: &RealMatrix) -> Result<RealVector> {
    ffn_with_activation(q, k, v, relu2_scalar)
}

fn ffn_with_activation(
    q: &RealVector,
    k: &RealMatrix,
    v: &RealMatrix,
    act: impl Fn(Real) -> Real,
) -> Result<RealVector> {
    if k.cols() != v.cols() || v.rows() != k.rows() {
        return Err(Error::ShapeMismatch {
            op: "standard_ffn",
            expected: k.rows() * k.cols(),
            got: v.rows() * v.cols(),
        });
    }
    let pre = dense_mat_transpose_vec(k, q)?;
    let h = map_vector(&pre, act);
    dense_matvec(v, &h)
}

/// Gated FFN `V * (gelu(K1^T q) (x) (K2^T q))`, the gated-activation
/// baseline. All three weights are `d_model x d_ff'`.
pub fn gated_ffn(
    q: &RealVector,
    k1: &RealMatrix,
    k2: &RealMatrix,
    v: &RealMatrix,
) -> Result<RealVector> {
    gated_ffn_inner(q, k1, k2, v, None)
}

/// Gated FFN with statistical top-k inserted before the activation - the
/// sparsity-only ablation, computed with dense kernels.
pub fn topk_gated_ffn(
    q: &RealVector,
    k1: &RealMatrix,
    k2: &RealMatrix,
    v: &RealMatrix,
    k: usize,
) -> Result<RealVector> {
    gated_ffn_inner(q, k1, k2, v, Some(k))
}

fn gated_ffn_inner(
    q: &RealVector,
    k1: &RealMatrix,
    k2: &RealMatrix,
    v: &RealMatrix,
    top_k: Option<usize>,
) -> Result<RealVector> {
    if k1.rows() != k2.rows() || k1.cols() != k2.cols() || v.cols() != k1.cols() {
        return Err(Error::ShapeMismatch {
            op: "gated_ffn",
            expected: k1.rows() * k1.cols(),
            got: k2.rows() * k2.cols(),
        });
    }
    let pre = dense_mat_transpose_vec(k1, q)?;
    let gate_input = match top_k {
        Some(k) => stat_topk(&pre, k)?.values().clone(),
        None => pre,
    };
    let gate = gelu(&gate_input);
    let linear = dense_mat_transpose_vec(k2, q)?;
    let mixed = RealVector::new(
        gate.iter()
            .zip(linear.iter())
            .map(|(&g, &l)| g * l)
            .collect(),
    )?;
    dense_matvec(v, &mixed)
}

/// Spark FFN: the predictor `K1^T q[:r]` runs dense, statistical top-k picks
/// the surviving neurons, and both remaining products run through the sparse
/// kernels. Returns the output, the aggregated kernel accounting (predictor
/// included), and the realized nonzero fraction of the activation.
pub fn spark_ffn(
    q: &RealVector,
    w: &FfnWeights,
    cfg: &LayerConfig,
) -> Result<(RealVector, KernelStats, Real)> {
    if q.len() != w.d_model() {
        return Err(Error::ShapeMismatch {
            op: "spark_ffn",
            expected: w.d_model(),
            got: q.len(),
        });
    }
    if cfg.d_model != w.d_model() || cfg.d_ff != w.d_ff() || cfg.r_ff != w.split_r() {
        return Err(Error::parameter(
            "spark_ffn",
            "config dimensions disagree with the weights",
        ));
    }
    let r = w.split_r();
    let d_ff = w.d_ff();
    let q_head = RealVector::new(q.as_slice()[..r].to_vec())?;
    let q_tail = RealVector::new(q.as_slice()[r..].to_vec())?;

    // dense low-cost predictor: 2 * r * d_ff multiply-adds, always paid
    let pre = dense_mat_transpose_vec(&w.k1, &q_head)?;
    let mut stats = KernelStats {
        mul_adds: 2 * r as u64 * d_ff as u64,
        rows_skipped: 0,
        cols_skipped: 0,
        bytes_loaded_model: (r * d_ff * std::mem::size_of::<Real>()) as u64,
    };

    let sparse = stat_topk(&pre, cfg.k_ff)?;
    let (tail_linear, masked_stats) = masked_matvec(&w.k2_rows, &q_tail, sparse.active())?;
    stats = stats.merge(masked_stats);

    // gelu(0) = 0, so inactive entries stay exactly zero
    let mixed: Vec<Real> = sparse
        .values()
        .iter()
        .zip(tail_linear.iter())
        .zip(sparse.active())
        .map(|((&h, &g), &a)| if a { gelu_scalar(h) * g } else { 0.0 })
        .collect();
    let mixed =
        SparseActivation::zero_fill(RealVector::new(mixed)?, sparse.active().to_vec(), cfg.k_ff)?;

    let (out, vec_stats) = sparse_vecmat(&w.v_rows, &mixed)?;
    stats = stats.merge(vec_stats);

    Ok((out, stats, sparse.density()))
}

// ---------------------------------------------------------------------------
// Attention variants
// ---------------------------------------------------------------------------

/// Key/value cache for one attention head. Keys are stored already
/// position-encoded and split into the predictor segment (`first r` rows of
/// the mathematical key matrix) and the tail segment; storage is token-major
/// so each token's segment is one contiguous, skippable row.
#[derive(Debug, Clone)]
pub struct AttnContext {
    split_r: usize,
    d_attn: usize,
    rope_base: Real,
    k1_rows: Vec<Real>,
    k2_rows: Vec<Real>,
    v_rows: Vec<Real>,
    positions: Vec<usize>,
}

impl AttnContext {
    pub fn new(split_r: usize, d_attn: usize, rope_base: Real) -> Result<Self> {
        if split_r == 0 || split_r >= d_attn {
            return Err(Error::parameter(
                "AttnContext::new",
                format!("split {split_r} must lie strictly inside d_attn {d_attn}"),
            ));
        }
        if !split_r.is_multiple_of(2) || !(d_attn - split_r).is_multiple_of(2) {
            return Err(Error::parameter(
                "AttnContext::new",
                "both key segments must have even length for the rotary ladder",
            ));
        }
        if !(rope_base > 0.0) {
            return Err(Error::parameter(
                "AttnContext::new",
                "rope_base must be positive",
            ));
        }
        Ok(AttnContext {
            split_r,
            d_attn,
            rope_base,
            k1_rows: Vec::new(),
            k2_rows: Vec::new(),
            v_rows: Vec::new(),
            positions: Vec::new(),
        })
    }

    /// Append one token's key/value pair. The key is rotary-encoded here,
    /// per segment, at the given position; positions must be strictly
    /// increasing.
    pub fn append(&mut self, key: &RealVector, value: &RealVector, position: usize) -> Result<()> {
        if key.len() != self.d_attn || value.len() != self.d_attn {
            return Err(Error::ShapeMismatch {
                op: "AttnContext::append",
                expected: self.d_attn,
                got: key.len().max(value.len()),
            });
        }
        if let Some(&last) = self.positions.last() {
            if position <= last {
                return Err(Error::parameter(
                    "AttnContext::append",
                    format!("position {position} does not advance past {last}"),
                ));
            }
        }
        let rotated = rope_apply_split(key, self.split_r, position, self.rope_base)?;
        self.k1_rows
            .extend_from_slice(&rotated.as_slice()[..self.split_r]);
        self.k2_rows
            .extend_from_slice(&rotated.as_slice()[self.split_r..]);
        self.v_rows.extend_from_slice(value.as_slice());
        self.positions.push(position);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// View over the whole context.
    pub fn view(&self) -> AttnContextView<'_> {
        self.view_from(0)
    }

    /// View over the trailing `window` tokens (the whole context if shorter).
    pub fn tail_view(&self, window: usize) -> AttnContextView<'_> {
        let start = self.len().saturating_sub(window);
        self.view_from(start)
    }

    fn view_from(&self, start: usize) -> AttnContextView<'_> {
        let n = self.len() - start;
        let tail = self.d_attn - self.split_r;
        AttnContextView {
            split_r: self.split_r,
            d_attn: self.d_attn,
            n_ctx: n,
            k1: MatrixView::new(&self.k1_rows[start * self.split_r..], n, self.split_r)
                .expect("rows are contiguous to the end of the buffer"),
            k2: MatrixView::new(&self.k2_rows[start * tail..], n, tail)
                .expect("rows are contiguous to the end of the buffer"),
            v: MatrixView::new(&self.v_rows[start * self.d_attn..], n, self.d_attn)
                .expect("rows are contiguous to the end of the buffer"),
        }
    }

    /// Predictor-segment key matrix in math orientation (`r x n_ctx`);
    /// materialized for oracles and diagnostics.
    pub fn keys1_matrix(&self) -> Result<RealMatrix> {
        RealMatrix::new(self.len(), self.split_r, self.k1_rows.clone()).map(|m| m.transpose())
    }

    /// Tail-segment key matrix in math orientation.
    pub fn keys2_matrix(&self) -> Result<RealMatrix> {
        RealMatrix::new(self.len(), self.d_attn - self.split_r, self.k2_rows.clone())
            .map(|m| m.transpose())
    }

    /// Value matrix in math orientation (`d_attn x n_ctx`).
    pub fn values_matrix(&self) -> Result<RealMatrix> {
        RealMatrix::new(self.len(), self.d_attn, self.v_rows.clone()).map(|m| m.transpose())
    }
}

/// Borrowed token-major view of an [`AttnContext`] (possibly a trailing
/// window of it).
#[derive(Debug, Clone, Copy)]
pub struct AttnContextView<'a> {
    split_r: usize,
    d_attn: usize,
    n_ctx: usize,
    k1: MatrixView<'a>,
    k2: MatrixView<'a>,
    v: MatrixView<'a>,
}

impl<'a> AttnContextView<'a> {
    pub fn n_ctx(&self) -> usize {
        self.n_ctx
    }
}

/// Dense reference attention `V * softmax(K^T q)` with `keys` and `values`
/// both `d_attn x n_ctx`.
pub fn standard_attention(
    q: &RealVector,
    keys: &RealMatrix,
    values: &RealMatrix,
) -> Result<RealVector> {
    if values.cols() != keys.cols() || values.rows() != keys.rows() {
        return Err(Error::ShapeMismatch {
            op: "standard_attention",
            expected: keys.rows() * keys.cols(),
            got: values.rows() * values.cols(),
        });
    }
    let logits = dense_mat_transpose_vec(keys, q)?;
    let weights = softmax_dense(logits.as_slice());
    dense_matvec(values, &RealVector::new(weights)?)
}

/// Standard attention with statistical top-k (`-inf` fill) applied to the
/// full score vector before the softmax - the predictor-free ablation. The
/// masking is bypassed when the context is no longer than `k`.
pub fn topk_attention(
    q: &RealVector,
    keys: &RealMatrix,
    values: &RealMatrix,
    k: usize,
) -> Result<RealVector> {
    if values.cols() != keys.cols() || values.rows() != keys.rows() {
        return Err(Error::ShapeMismatch {
            op: "topk_attention",
            expected: keys.rows() * keys.cols(),
            got: values.rows() * values.cols(),
        });
    }
    if k == 0 {
        return Err(Error::parameter("topk_attention", "k must be positive"));
    }
    let n_ctx = keys.cols();
    let logits = dense_mat_transpose_vec(keys, q)?;
    let weights = if n_ctx > k {
        masked_softmax(&stat_topk_neg_inf(&logits, k)?)?
    } else {
        RealVector::new(softmax_dense(logits.as_slice()))?
    };
    dense_matvec(values, &weights)
}

/// Spark attention over a cached context. Scores come from the predictor
/// segment only; when the context exceeds `k_attn` the statistical top-k
/// (`-inf` fill) masks it, otherwise masking is bypassed so short contexts
/// (including a single token, where no score std exists) attend to
/// everything. The softplus gates and the value reduction are computed on
/// surviving columns only, which matches the full-gate composition because
/// masked softmax weights are exactly zero.
///
/// Returns the attended output and the number of attended (active) tokens.
pub fn spark_attention(
    q: &RealVector,
    ctx: AttnContextView<'_>,
    cfg: &LayerConfig,
) -> Result<(RealVector, usize)> {
    if q.len() != ctx.d_attn {
        return Err(Error::ShapeMismatch {
            op: "spark_attention",
            expected: ctx.d_attn,
            got: q.len(),
        });
    }
    if cfg.r_attn != ctx.split_r || cfg.d_attn != ctx.d_attn {
        return Err(Error::parameter(
            "spark_attention",
            "config dimensions disagree with the context",
        ));
    }
    let n_ctx = ctx.n_ctx;
    if n_ctx == 0 {
        return Err(Error::EmptyInput("spark_attention"));
    }
    let (k1, k2, v) = (ctx.k1, ctx.k2, ctx.v);
    let r = ctx.split_r;

    let q_head = &q.as_slice()[..r];
    let q_tail = &q.as_slice()[r..];

    let scale = if cfg.scale_logits {
        1.0 / (ctx.d_attn as Real).sqrt()
    } else {
        1.0
    };
    let scores: Vec<Real> = (0..n_ctx).map(|t| scale * dot(k1.row(t), q_head)).collect();
    let scores = RealVector::new(scores)?;

    let masked = if n_ctx > cfg.k_attn {
        stat_topk_neg_inf(&scores, cfg.k_attn)?
    } else {
        // bypass: attend to the full short context
        SparseActivation::neg_inf_fill(
            RealVector::from_logits(scores.as_slice().to_vec())?,
            vec![true; n_ctx],
            cfg.k_attn,
        )?
    };
    let attended = masked.active_count();
    let weights = masked_softmax(&masked)?;

    let (gate_pre, _) = masked_matvec_view(k2, q_tail, masked.active())?;
    let mixed: Vec<Real> = weights
        .iter()
        .zip(gate_pre.iter())
        .zip(masked.active())
        .map(|((&w, &g), &a)| if a { w * softplus_scalar(g) } else { 0.0 })
        .collect();
    let mixed = SparseActivation::zero_fill(
        RealVector::new(mixed)?,
        masked.active().to_vec(),
        cfg.k_attn,
    )?;
    let (out, _) = sparse_vecmat_view(v, &mixed, DEFAULT_TILE_ROWS)?;
    Ok((RealVector::new(out)?, attended))
}

fn softmax_dense(logits: &[Real]) -> Vec<Real> {
    let max = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut weights: Vec<Real> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: Real = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}
