//! Flat key=value configuration: a config file and repeatable `--set`
//! overrides, applied on top of a preset. Unknown keys are usage errors.

use spark_core::harness::{AttnPattern, ModelConfig};
use spark_core::Real;

/// Keys accepted by config files and `--set`.
pub const CONFIG_KEYS: &[&str] = &[
    "d_model",
    "d_ff",
    "k_ff",
    "r_ff",
    "d_attn",
    "k_attn",
    "r_attn",
    "n_heads",
    "window",
    "rope_base",
    "scale_logits",
    "n_layers",
    "attn_pattern",
    "seed",
];

/// Parse a config file body: one `key = value` per line, `#` comments.
pub fn apply_file(cfg: &mut ModelConfig, body: &str) -> Result<(), String> {
    for (lineno, raw) in body.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
        apply_key(cfg, key.trim(), value.trim())
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
    }
    Ok(())
}

/// Apply one `key=value` override.
pub fn apply_set(cfg: &mut ModelConfig, pair: &str) -> Result<(), String> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| format!("--set '{pair}': expected KEY=VALUE"))?;
    apply_key(cfg, key.trim(), value.trim())
}

fn apply_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<(), String> {
    let parse_usize = |v: &str| -> Result<usize, String> {
        v.parse()
            .map_err(|_| format!("'{v}' is not a nonnegative integer"))
    };
    match key {
        "d_model" => cfg.layer.d_model = parse_usize(value)?,
        "d_ff" => cfg.layer.d_ff = parse_usize(value)?,
        "k_ff" => cfg.layer.k_ff = parse_usize(value)?,
        "r_ff" => cfg.layer.r_ff = parse_usize(value)?,
        "d_attn" => cfg.layer.d_attn = parse_usize(value)?,
        "k_attn" => cfg.layer.k_attn = parse_usize(value)?,
        "r_attn" => cfg.layer.r_attn = parse_usize(value)?,
        "n_heads" => cfg.layer.n_heads = parse_usize(value)?,
        "window" => {
            cfg.layer.window = match value {
                "none" => None,
                v => Some(parse_usize(v)?),
            }
        }
        "rope_base" => {
            cfg.layer.rope_base = value
                .parse::<Real>()
                .map_err(|_| format!("'{value}' is not a number"))?
        }
        "scale_logits" => {
            cfg.layer.scale_logits = value
                .parse::<bool>()
                .map_err(|_| format!("'{value}' is not a bool"))?
        }
        "n_layers" => cfg.n_layers = parse_usize(value)?,
        "attn_pattern" => {
            cfg.attn_pattern = match value {
                "global" => AttnPattern::Global,
                "alternating" => AttnPattern::AlternatingGlobalLocal,
                other => return Err(format!("'{other}' is not 'global' or 'alternating'")),
            }
        }
        "seed" => {
            cfg.seed = value
                .parse()
                .map_err(|_| format!("'{value}' is not a seed"))?
        }
        unknown => {
            return Err(format!(
                "unknown config key '{unknown}' (valid keys: {})",
                CONFIG_KEYS.join(", ")
            ))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_apply_in_order() {
        let mut cfg = ModelConfig::tiny();
        apply_file(
            &mut cfg,
            "# comment\nk_ff = 100\nwindow = none\nseed=9\nattn_pattern = global\n",
        )
        .unwrap();
        assert_eq!(cfg.layer.k_ff, 100);
        assert_eq!(cfg.layer.window, None);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.attn_pattern, AttnPattern::Global);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut cfg = ModelConfig::tiny();
        assert!(apply_set(&mut cfg, "k_ff").is_err());
        assert!(apply_set(&mut cfg, "mystery=1").is_err());
        assert!(apply_set(&mut cfg, "k_ff=abc").is_err());
        assert!(apply_file(&mut cfg, "k_ff\n").is_err());
    }
}
