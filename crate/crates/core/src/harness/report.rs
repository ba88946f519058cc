//! Report types and their CSV/JSON emission. Every report carries
//! `schema_version` so downstream readers can detect format changes.

use super::ModelConfig;
use crate::layers::{
    attention_flops, attention_projection_flops, ffn_flops, AttnVariant, FfnVariant, LayerConfig,
};
use crate::tensor::FlopsReport;
use crate::Real;

/// Version tag embedded in every structured report.
pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Sparsity reporting
// ---------------------------------------------------------------------------

/// Per-layer observations from one decode step.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StepObservation {
    pub position: usize,
    /// Realized FFN nonzero fraction per layer.
    pub ffn_nonzero_frac: Vec<Real>,
    /// Attended-token count per layer, averaged over heads.
    pub attended_mean: Vec<Real>,
    /// Maximum attended-token count per layer across heads.
    pub attended_max: Vec<usize>,
}

/// Aggregated sparsity over a run of decode steps.
///
/// Measurement protocol: every decode position in the run is sampled; FFN
/// fractions and attended counts are first averaged over heads within a
/// step, then over steps per layer; `per_layer_attended_max` is the maximum
/// over all steps and heads.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SparsityReport {
    pub schema_version: u32,
    pub protocol: &'static str,
    pub n_layers: usize,
    pub steps: usize,
    pub per_layer_ffn_nonzero_frac: Vec<Real>,
    pub per_layer_attended_mean: Vec<Real>,
    pub per_layer_attended_max: Vec<usize>,
    pub positions_sampled: Vec<usize>,
}

impl SparsityReport {
    pub fn from_observations(cfg: &ModelConfig, observations: &[StepObservation]) -> Self {
        let n_layers = cfg.n_layers;
        let steps = observations.len();
        let mut ffn = vec![0.0 as Real; n_layers];
        let mut att_mean = vec![0.0 as Real; n_layers];
        let mut att_max = vec![0usize; n_layers];
        for obs in observations {
            for layer in 0..n_layers {
                ffn[layer] += obs.ffn_nonzero_frac[layer];
                att_mean[layer] += obs.attended_mean[layer];
                att_max[layer] = att_max[layer].max(obs.attended_max[layer]);
            }
        }
        if steps > 0 {
            for layer in 0..n_layers {
                ffn[layer] /= steps as Real;
                att_mean[layer] /= steps as Real;
            }
        }
        SparsityReport {
            schema_version: SCHEMA_VERSION,
            protocol:
                "all decode positions sampled; head-averaged per step, then step-averaged per layer",
            n_layers,
            steps,
            per_layer_ffn_nonzero_frac: ffn,
            per_layer_attended_mean: att_mean,
            per_layer_attended_max: att_max,
            positions_sampled: observations.iter().map(|o| o.position).collect(),
        }
    }

    /// One CSV row per layer.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("schema_version,layer,ffn_nonzero_frac,attended_mean,attended_max\n");
        for layer in 0..self.n_layers {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.schema_version,
                layer,
                self.per_layer_ffn_nonzero_frac[layer],
                self.per_layer_attended_mean[layer],
                self.per_layer_attended_max[layer]
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// FLOPs summary
// ---------------------------------------------------------------------------

/// Per-layer FLOPs of the standard and spark variants at a given context
/// length, following the summary-table conventions (FFN at the half-split
/// form, projections identical on both sides).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FlopsSummary {
    pub schema_version: u32,
    pub n_ctx: usize,
    pub standard: FlopsReport,
    pub spark: FlopsReport,
    pub ratio: Real,
}

impl FlopsSummary {
    /// One CSV row per component.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("schema_version,component,standard,spark\n");
        for (name, std_v, spark_v) in [
            ("ffn", self.standard.ffn, self.spark.ffn),
            ("attn_dot", self.standard.attn_dot, self.spark.attn_dot),
            ("attn_proj", self.standard.attn_proj, self.spark.attn_proj),
            ("total", self.standard.total, self.spark.total),
        ] {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.schema_version, name, std_v, spark_v
            ));
        }
        out
    }
}

/// Pure function of the config: per-layer totals for the standard and spark
/// variants plus their ratio.
pub fn flops_summary(cfg: &LayerConfig, n_ctx: usize) -> FlopsSummary {
    let standard = FlopsReport::new(
        ffn_flops(cfg, FfnVariant::Standard),
        attention_flops(cfg, n_ctx, AttnVariant::Standard),
        attention_projection_flops(cfg),
    );
    let spark = FlopsReport::new(
        ffn_flops(cfg, FfnVariant::SparkHalfSplit),
        attention_flops(cfg, n_ctx, AttnVariant::Spark),
        attention_projection_flops(cfg),
    );
    FlopsSummary {
        schema_version: SCHEMA_VERSION,
        n_ctx,
        ratio: standard.total as Real / spark.total as Real,
        standard,
        spark,
    }
}
