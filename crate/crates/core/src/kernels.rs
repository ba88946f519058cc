//! Sparse CPU kernels: vector-masked matrix multiplication, tiled sparse
//! vector-matrix multiplication, and union-mask batching.
//!
//! Both kernels assume the skippable unit (one output neuron's weight row)
//! is contiguous, i.e. the operand is stored row-major with one row per
//! neuron/token. Skipping a row skips both its memory traffic and its
//! multiply-adds, which is what [`KernelStats`] accounts for. Correctness is
//! always checked against the dense oracles in [`crate::tensor`].

use crate::error::{Error, Result};
use crate::tensor::{dot, FillMode, MatrixView, RealMatrix, RealVector, SparseActivation};
use crate::Real;

/// Default number of rows per tile in [`sparse_vecmat`]. Tiles bound the
/// size of each partial sum so multi-worker splits need one combine per tile
/// rather than per row; the value is a tuning knob with no semantic effect.
pub const DEFAULT_TILE_ROWS: usize = 64;

/// Work and traffic accounting for one kernel invocation.
///
/// `mul_adds` counts multiplies and adds separately (2 per multiply-add
/// pair). `bytes_loaded_model` counts model-weight bytes touched under the
/// row-skip rule; row granularity, so partially used cache lines are not
/// modeled. `cols_skipped` is reserved for column-masked layouts; the
/// kernels here skip whole rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelStats {
    pub mul_adds: u64,
    pub rows_skipped: u64,
    pub cols_skipped: u64,
    pub bytes_loaded_model: u64,
}

impl KernelStats {
    /// Sum two accountings, e.g. across the kernels of one layer.
    pub fn merge(self, other: KernelStats) -> KernelStats {
        KernelStats {
            mul_adds: self.mul_adds + other.mul_adds,
            rows_skipped: self.rows_skipped + other.rows_skipped,
            cols_skipped: self.cols_skipped + other.cols_skipped,
            bytes_loaded_model: self.bytes_loaded_model + other.bytes_loaded_model,
        }
    }
}

const SCALAR_BYTES: u64 = std::mem::size_of::<Real>() as u64;

// ---------------------------------------------------------------------------
// Vector-masked matrix multiplication
// ---------------------------------------------------------------------------

/// Masked matvec: `out[i] = row_i(w) . q` where `mask[i]`, else exactly 0.
/// Masked rows are neither loaded nor multiplied.
pub fn masked_matvec(
    w: &RealMatrix,
    q: &RealVector,
    mask: &[bool],
) -> Result<(RealVector, KernelStats)> {
    let (out, stats) = masked_matvec_view(w.view(), q.as_slice(), mask)?;
    Ok((RealVector::new(out)?, stats))
}

/// [`masked_matvec`] over borrowed row-major storage (e.g. a KV cache).
pub fn masked_matvec_view(
    w: MatrixView<'_>,
    q: &[Real],
    mask: &[bool],
) -> Result<(Vec<Real>, KernelStats)> {
    if w.cols() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "masked_matvec",
            expected: w.cols(),
            got: q.len(),
        });
    }
    if mask.len() != w.rows() {
        return Err(Error::ShapeMismatch {
            op: "masked_matvec",
            expected: w.rows(),
            got: mask.len(),
        });
    }
    let mut out = vec![0.0 as Real; w.rows()];
    let mut kept = 0u64;
    for (i, keep) in mask.iter().enumerate() {
        if *keep {
            out[i] = dot(w.row(i), q);
            kept += 1;
        }
    }
    let stats = KernelStats {
        mul_adds: 2 * kept * w.cols() as u64,
        rows_skipped: w.rows() as u64 - kept,
        cols_skipped: 0,
        bytes_loaded_model: kept * w.cols() as u64 * SCALAR_BYTES,
    };
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// Sparse vector-matrix multiplication
// ---------------------------------------------------------------------------

/// Sparse vector-matrix multiply with the default tile size:
/// `out = sum over active i of u[i] * row_i(v)`. Inactive rows are neither
/// loaded nor multiplied.
pub fn sparse_vecmat(v: &RealMatrix, u: &SparseActivation) -> Result<(RealVector, KernelStats)> {
    sparse_vecmat_tiled(v, u, DEFAULT_TILE_ROWS)
}

/// [`sparse_vecmat`] with an explicit tile size. Rows are processed in
/// fixed-size tiles with per-tile partial sums accumulated in ascending tile
/// order, so the result is independent of the tile size up to rounding.
pub fn sparse_vecmat_tiled(
    v: &RealMatrix,
    u: &SparseActivation,
    tile_rows: usize,
) -> Result<(RealVector, KernelStats)> {
    let (out, stats) = sparse_vecmat_view(v.view(), u, tile_rows)?;
    Ok((RealVector::new(out)?, stats))
}

/// [`sparse_vecmat_tiled`] over borrowed row-major storage.
pub fn sparse_vecmat_view(
    v: MatrixView<'_>,
    u: &SparseActivation,
    tile_rows: usize,
) -> Result<(Vec<Real>, KernelStats)> {
    if u.mode() != FillMode::Zero {
        return Err(Error::parameter(
            "sparse_vecmat",
            "activation must be zero-fill",
        ));
    }
    if v.rows() != u.len() {
        return Err(Error::ShapeMismatch {
            op: "sparse_vecmat",
            expected: v.rows(),
            got: u.len(),
        });
    }
    if tile_rows == 0 {
        return Err(Error::parameter(
            "sparse_vecmat",
            "tile size must be positive",
        ));
    }

    let cols = v.cols();
    let mut out = vec![0.0 as Real; cols];
    let mut partial = vec![0.0 as Real; cols];
    let mut kept = 0u64;
    let active = u.active();
    let values = u.values();

    let mut tile_start = 0;
    while tile_start < v.rows() {
        let tile_end = (tile_start + tile_rows).min(v.rows());
        partial.iter_mut().for_each(|p| *p = 0.0);
        let mut tile_has_rows = false;
        for i in tile_start..tile_end {
            if active[i] {
                let scale = values[i];
                for (p, w) in partial.iter_mut().zip(v.row(i)) {
                    *p += scale * w;
                }
                kept += 1;
                tile_has_rows = true;
            }
        }
        if tile_has_rows {
            for (o, p) in out.iter_mut().zip(&partial) {
                *o += p;
            }
        }
        tile_start = tile_end;
    }

    let stats = KernelStats {
        mul_adds: 2 * kept * cols as u64,
        rows_skipped: v.rows() as u64 - kept,
        cols_skipped: 0,
        bytes_loaded_model: kept * cols as u64 * SCALAR_BYTES,
    };
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// Union-mask batching
// ---------------------------------------------------------------------------

/// Batched masked matvec. Per-token outputs are identical to calling
/// [`masked_matvec`] per token. Accounting follows the two-mask rule:
/// compute (`mul_adds`) is governed by the individual masks, memory loading
/// (`bytes_loaded_model`, `rows_skipped`) by their OR-union, since one load
/// of a row serves every token in the batch that needs it.
pub fn batched_masked_matmul(
    w: &RealMatrix,
    q_batch: &[RealVector],
    masks: &[Vec<bool>],
) -> Result<(Vec<RealVector>, KernelStats)> {
    if q_batch.is_empty() {
        return Err(Error::EmptyInput("batched_masked_matmul"));
    }
    if q_batch.len() != masks.len() {
        return Err(Error::ShapeMismatch {
            op: "batched_masked_matmul",
            expected: q_batch.len(),
            got: masks.len(),
        });
    }
    for q in q_batch {
        if q.len() != w.cols() {
            return Err(Error::ShapeMismatch {
                op: "batched_masked_matmul",
                expected: w.cols(),
                got: q.len(),
            });
        }
    }
    for mask in masks {
        if mask.len() != w.rows() {
            return Err(Error::ShapeMismatch {
                op: "batched_masked_matmul",
                expected: w.rows(),
                got: mask.len(),
            });
        }
    }

    let mut outputs = Vec::with_capacity(q_batch.len());
    let mut compute_mul_adds = 0u64;
    for (q, mask) in q_batch.iter().zip(masks) {
        let (out, stats) = masked_matvec(w, q, mask)?;
        compute_mul_adds += stats.mul_adds;
        outputs.push(out);
    }

    let mut union = vec![false; w.rows()];
    for mask in masks {
        for (u, m) in union.iter_mut().zip(mask) {
            *u |= *m;
        }
    }
    let loaded = union.iter().filter(|m| **m).count() as u64;

    let stats = KernelStats {
        mul_adds: compute_mul_adds,
        rows_skipped: w.rows() as u64 - loaded,
        cols_skipped: 0,
        bytes_loaded_model: loaded * w.cols() as u64 * SCALAR_BYTES,
    };
    Ok((outputs, stats))
}
