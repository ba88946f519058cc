//! Dense numeric containers and the reference dense linear algebra.
//!
//! Everything here is deliberately plain: row-major storage, explicit
//! transposed-access operations, and no strides. The two matvec operations
//! are the brute-force oracles that every sparse kernel and layer is
//! compared against, so they stay as close to the textbook definition as
//! possible.

use crate::error::{Error, Result};
use crate::Real;

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

/// Dense real vector. Entries are finite unless constructed via
/// [`RealVector::from_logits`], which additionally permits `-inf` so the
/// vector can carry masked attention logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector {
    data: Vec<Real>,
}

impl RealVector {
    /// Build a vector of finite entries. Rejects empty input, NaN, and
    /// infinities.
    pub fn new(data: Vec<Real>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("RealVector::new"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter(
                "RealVector::new",
                "entries must be finite (use from_logits for -inf)",
            ));
        }
        Ok(RealVector { data })
    }

    /// Build a logit-mode vector: `-inf` is permitted, NaN and `+inf` are not.
    pub fn from_logits(data: Vec<Real>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("RealVector::from_logits"));
        }
        if data.iter().any(|v| v.is_nan() || *v == Real::INFINITY) {
            return Err(Error::parameter(
                "RealVector::from_logits",
                "entries must be finite or -inf",
            ));
        }
        Ok(RealVector { data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Real> {
        self.data.iter()
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    /// Standard basis vector `e_j` of the given length.
    pub fn basis(len: usize, j: usize) -> Result<Self> {
        if j >= len {
            return Err(Error::parameter(
                "RealVector::basis",
                format!("index {j} out of range for length {len}"),
            ));
        }
        let mut data = vec![0.0 as Real; len];
        data[j] = 1.0;
        RealVector::new(data)
    }
}

impl std::ops::Index<usize> for RealVector {
    type Output = Real;
    fn index(&self, i: usize) -> &Real {
        &self.data[i]
    }
}

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Dense row-major matrix. Row-major is the normative storage order; any
/// transposed access goes through [`dense_mat_transpose_vec`] or an explicit
/// [`RealMatrix::transpose`], never through implicit strides.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    data: Vec<Real>,
    rows: usize,
    cols: usize,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::parameter(
                "RealMatrix::new",
                format!("dimensions must be positive, got {rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "RealMatrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter(
                "RealMatrix::new",
                "entries must be finite",
            ));
        }
        Ok(RealMatrix { data, rows, cols })
    }

    /// Build from explicit rows; convenient in tests.
    pub fn from_rows(rows: &[&[Real]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("RealMatrix::from_rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::parameter("RealMatrix::from_rows", "ragged rows"));
        }
        let data: Vec<Real> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        RealMatrix::new(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0 as Real; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        RealMatrix::new(n, n, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        RealMatrix::new(rows, cols, vec![0.0 as Real; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    /// Contiguous row `r`.
    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    /// Materialize the transpose. Used when a kernel needs the skippable
    /// unit (a neuron's weights) contiguous.
    pub fn transpose(&self) -> RealMatrix {
        let mut data = vec![0.0 as Real; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        RealMatrix {
            data,
            rows: self.cols,
            cols: self.rows,
        }
    }

    /// Borrowed row-major view of the full matrix.
    pub fn view(&self) -> MatrixView<'_> {
        MatrixView {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
        }
    }
}

/// Borrowed row-major matrix view. Lets kernels run over growing buffers
/// (e.g. a KV cache) without copying them into a `RealMatrix`.
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    data: &'a [Real],
    rows: usize,
    cols: usize,
}

impl<'a> MatrixView<'a> {
    /// Wrap a row-major slice. `data.len()` must equal `rows * cols`.
    pub fn new(data: &'a [Real], rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "MatrixView::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(MatrixView { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &'a [Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

// ---------------------------------------------------------------------------
// Sparse activations
// ---------------------------------------------------------------------------

/// Fill convention for inactive entries of a [`SparseActivation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    /// Inactive entries are exactly 0 (FFN path).
    Zero,
    /// Inactive entries are `-inf` (attention logit path).
    NegInf,
}

/// Dense value buffer plus an active-index mask - the output of the top-k
/// operators.
///
/// Invariants, enforced at construction:
/// - zero-fill: `values[i] == 0` exactly wherever `active[i]` is false;
/// - neg-inf-fill: `values[i] == -inf` exactly wherever `active[i]` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseActivation {
    values: RealVector,
    active: Vec<bool>,
    nominal_k: usize,
    mode: FillMode,
}

impl SparseActivation {
    /// Build a zero-fill activation. Inactive positions must hold exact zeros.
    pub fn zero_fill(values: RealVector, active: Vec<bool>, nominal_k: usize) -> Result<Self> {
        if values.len() != active.len() {
            return Err(Error::ShapeMismatch {
                op: "SparseActivation::zero_fill",
                expected: values.len(),
                got: active.len(),
            });
        }
        if nominal_k == 0 {
            return Err(Error::parameter(
                "SparseActivation::zero_fill",
                "nominal_k must be positive",
            ));
        }
        for (v, a) in values.iter().zip(&active) {
            if !a && *v != 0.0 {
                return Err(Error::parameter(
                    "SparseActivation::zero_fill",
                    "inactive entries must be exactly 0",
                ));
            }
        }
        Ok(SparseActivation {
            values,
            active,
            nominal_k,
            mode: FillMode::Zero,
        })
    }

    /// Build a neg-inf-fill activation. Inactive positions must hold `-inf`.
    pub fn neg_inf_fill(values: RealVector, active: Vec<bool>, nominal_k: usize) -> Result<Self> {
        if values.len() != active.len() {
            return Err(Error::ShapeMismatch {
                op: "SparseActivation::neg_inf_fill",
                expected: values.len(),
                got: active.len(),
            });
        }
        if nominal_k == 0 {
            return Err(Error::parameter(
                "SparseActivation::neg_inf_fill",
                "nominal_k must be positive",
            ));
        }
        for (v, a) in values.iter().zip(&active) {
            if !a && *v != Real::NEG_INFINITY {
                return Err(Error::parameter(
                    "SparseActivation::neg_inf_fill",
                    "inactive entries must be exactly -inf",
                ));
            }
        }
        Ok(SparseActivation {
            values,
            active,
            nominal_k,
            mode: FillMode::NegInf,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &RealVector {
        &self.values
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn nominal_k(&self) -> usize {
        self.nominal_k
    }

    pub fn mode(&self) -> FillMode {
        self.mode
    }

    /// Number of active entries.
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Active fraction of the vector, in [0, 1].
    pub fn density(&self) -> Real {
        self.active_count() as Real / self.len() as Real
    }

    /// Indices and values of the active entries, in ascending index order.
    pub fn iter_active(&self) -> impl Iterator<Item = (usize, Real)> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(move |(i, _)| (i, self.values[i]))
    }
}

// ---------------------------------------------------------------------------
// FLOPs accounting
// ---------------------------------------------------------------------------

/// Per-component multiply-add counts for one layer's forward pass.
/// `total` is maintained as the sum of the three components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct FlopsReport {
    pub ffn: u64,
    pub attn_dot: u64,
    pub attn_proj: u64,
    pub total: u64,
}

impl FlopsReport {
    pub fn new(ffn: u64, attn_dot: u64, attn_proj: u64) -> Self {
        FlopsReport {
            ffn,
            attn_dot,
            attn_proj,
            total: ffn + attn_dot + attn_proj,
        }
    }
}

// ---------------------------------------------------------------------------
// Oracle dense linear algebra
// ---------------------------------------------------------------------------

/// Exact dense product `m * v`. Brute-force oracle for all sparse kernels.
pub fn dense_matvec(m: &RealMatrix, v: &RealVector) -> Result<RealVector> {
    if m.cols() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "dense_matvec",
            expected: m.cols(),
            got: v.len(),
        });
    }
    let out: Vec<Real> = (0..m.rows()).map(|r| dot(m.row(r), v.as_slice())).collect();
    // The product of finite inputs stays finite at the scales this crate
    // works at; validate anyway so overflow surfaces as an error.
    RealVector::new(out)
}

/// Exact `m^T * v` without materializing the transpose.
pub fn dense_mat_transpose_vec(m: &RealMatrix, v: &RealVector) -> Result<RealVector> {
    if m.rows() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "dense_mat_transpose_vec",
            expected: m.rows(),
            got: v.len(),
        });
    }
    let mut out = vec![0.0 as Real; m.cols()];
    for r in 0..m.rows() {
        let row = m.row(r);
        let scale = v[r];
        for (o, w) in out.iter_mut().zip(row) {
            *o += scale * w;
        }
    }
    RealVector::new(out)
}

pub(crate) fn dot(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
