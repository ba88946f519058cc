//! FLOPs-per-token formulas for the layer variants. Multiplies and adds are
//! counted separately, so a dense `m x n` product costs `2 m n`. Non-leading
//! terms (normalization, nonlinearities, the quantile evaluation) are
//! omitted.

use super::LayerConfig;

/// FFN cost model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfnVariant {
    /// Dense two-matrix FFN: `4 * d_model * d_ff`.
    Standard,
    /// Spark FFN at the configured split:
    /// `2 (d_ff - k_ff) r_ff + 4 d_model k_ff`.
    Spark,
    /// Spark FFN under the half-split assumption `r = d_model / 2`:
    /// `d_model d_ff + 3 d_model k_ff`. This is the summary-table form.
    SparkHalfSplit,
}

/// Attention dot-product cost model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnVariant {
    /// Dense scores and reduction: `4 * d_model * n_ctx`.
    Standard,
    /// Spark attention with half-split predictor:
    /// `d_model n_ctx + 3 d_model min(k_attn, n_ctx)`.
    Spark,
}

/// FFN multiply-add count per token for the given variant.
pub fn ffn_flops(cfg: &LayerConfig, variant: FfnVariant) -> u64 {
    let d_model = cfg.d_model as u64;
    let d_ff = cfg.d_ff as u64;
    let k = cfg.k_ff as u64;
    match variant {
        FfnVariant::Standard => 4 * d_model * d_ff,
        FfnVariant::Spark => 2 * (d_ff - k) * cfg.r_ff as u64 + 4 * d_model * k,
        FfnVariant::SparkHalfSplit => d_model * d_ff + 3 * d_model * k,
    }
}

/// Attention dot-product multiply-add count per token, summed over heads
/// (head dimensions summing to `d_model`).
pub fn attention_flops(cfg: &LayerConfig, n_ctx: usize, variant: AttnVariant) -> u64 {
    let d_model = cfg.d_model as u64;
    let n_ctx = n_ctx as u64;
    match variant {
        AttnVariant::Standard => 4 * d_model * n_ctx,
        AttnVariant::Spark => d_model * n_ctx + 3 * d_model * n_ctx.min(cfg.k_attn as u64),
    }
}

/// Query/key/value/output projection cost per token: `8 * d_model^2`,
/// identical for the standard and spark variants.
pub fn attention_projection_flops(cfg: &LayerConfig) -> u64 {
    8 * (cfg.d_model as u64) * (cfg.d_model as u64)
}
