//! Kernel microbenchmarks: dense versus masked/sparse wall time at a given
//! activation density. Single-threaded, medians over a fixed warmup.

use super::{report::SCHEMA_VERSION, trial_rng};
use crate::error::{Error, Result};
use crate::kernels::{masked_matvec, sparse_vecmat};
use crate::layers::LayerConfig;
use crate::tensor::{
    dense_mat_transpose_vec, dense_matvec, RealMatrix, RealVector, SparseActivation,
};
use crate::Real;

use rand::seq::SliceRandom;
use rand::Rng;
use std::hint::black_box;
use std::time::Instant;

/// Fixed number of untimed repetitions before measurement.
pub const BENCH_WARMUP: usize = 5;

/// Median wall times (nanoseconds) for the dense baselines and the sparse
/// kernels on one weight matrix, plus exact work counts. The two dense
/// baselines reuse the same buffer as the sparse kernels, so the comparison
/// isolates the skip rule.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub d_ff: usize,
    pub d_model: usize,
    pub density: Real,
    pub active_rows: usize,
    pub reps: usize,
    pub warmup: usize,
    pub dense_matvec_ns: u64,
    pub masked_matvec_ns: u64,
    pub dense_reduce_ns: u64,
    pub sparse_vecmat_ns: u64,
    pub speedup_masked: Real,
    pub speedup_vecmat: Real,
    pub mul_adds_dense: u64,
    pub mul_adds_masked: u64,
    pub mul_adds_sparse: u64,
}

impl BenchReport {
    /// One CSV row per measured kernel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,kernel,median_ns,mul_adds\n");
        for (name, ns, work) in [
            ("dense_matvec", self.dense_matvec_ns, self.mul_adds_dense),
            ("masked_matvec", self.masked_matvec_ns, self.mul_adds_masked),
            ("dense_reduce", self.dense_reduce_ns, self.mul_adds_dense),
            ("sparse_vecmat", self.sparse_vecmat_ns, self.mul_adds_sparse),
        ] {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.schema_version, name, ns, work
            ));
        }
        out
    }
}

/// Benchmark the masked and sparse kernels against their dense counterparts
/// on a `d_ff x d_model` weight matrix with `ceil(density * d_ff)` active
/// rows at scattered positions. Deterministic inputs per seed; wall times
/// are medians over `reps` runs after [`BENCH_WARMUP`] warmup runs.
pub fn kernel_bench(
    cfg: &LayerConfig,
    density: Real,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Domain {
            op: "kernel_bench",
            value: density as f64,
        });
    }
    if reps == 0 {
        return Err(Error::parameter("kernel_bench", "reps must be positive"));
    }
    let rows = cfg.d_ff;
    let cols = cfg.d_model;
    let mut rng = trial_rng(seed, 0);

    let w = RealMatrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let q = RealVector::new((0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())?;

    let active_rows = ((density * rows as Real).ceil() as usize).clamp(1, rows);
    let mut indices: Vec<usize> = (0..rows).collect();
    indices.shuffle(&mut rng);
    let mut mask = vec![false; rows];
    for &i in &indices[..active_rows] {
        mask[i] = true;
    }
    let values: Vec<Real> = mask
        .iter()
        .map(|&a| if a { rng.random_range(-1.0..1.0) } else { 0.0 })
        .collect();
    let u_dense = RealVector::new(values.clone())?;
    let u = SparseActivation::zero_fill(RealVector::new(values)?, mask.clone(), active_rows)?;

    let dense_matvec_ns = median_ns(reps, || {
        black_box(dense_matvec(black_box(&w), black_box(&q)).unwrap());
    });
    let masked_matvec_ns = median_ns(reps, || {
        black_box(masked_matvec(black_box(&w), black_box(&q), black_box(&mask)).unwrap());
    });
    let dense_reduce_ns = median_ns(reps, || {
        black_box(dense_mat_transpose_vec(black_box(&w), black_box(&u_dense)).unwrap());
    });
    let sparse_vecmat_ns = median_ns(reps, || {
        black_box(sparse_vecmat(black_box(&w), black_box(&u)).unwrap());
    });

    let (_, masked_stats) = masked_matvec(&w, &q, &mask)?;
    let (_, sparse_stats) = sparse_vecmat(&w, &u)?;

    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        d_ff: rows,
        d_model: cols,
        density,
        active_rows,
        reps,
        warmup: BENCH_WARMUP,
        dense_matvec_ns,
        masked_matvec_ns,
        dense_reduce_ns,
        sparse_vecmat_ns,
        speedup_masked: dense_matvec_ns as Real / masked_matvec_ns.max(1) as Real,
        speedup_vecmat: dense_reduce_ns as Real / sparse_vecmat_ns.max(1) as Real,
        mul_adds_dense: 2 * rows as u64 * cols as u64,
        mul_adds_masked: masked_stats.mul_adds,
        mul_adds_sparse: sparse_stats.mul_adds,
    })
}

fn median_ns(reps: usize, mut f: impl FnMut()) -> u64 {
    for _ in 0..BENCH_WARMUP {
        f();
    }
    let mut samples: Vec<u64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos() as u64
        })
        .collect();
    samples.sort_unstable();
    samples[samples.len() / 2]
}
