//! `spark`: validation, diagnostics, FLOPs accounting, benchmarks, and a
//! decode demo for the sparsity machinery in `spark-core`.
//!
//! Structured results (JSON or CSV, selected with `--output`) go to stdout;
//! human-readable summaries go to stderr. Exit codes: 0 success, 1
//! validation failure, 2 usage error.

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spark_core::harness::{
    flops_summary, gaussian_fit_report, kernel_bench, run_demo, synthetic_gaussian_vector,
    theorem1_montecarlo, ModelConfig, MonteCarloConfig,
};
use spark_core::Real;

use std::path::PathBuf;
use std::process::ExitCode;

/// Environment variable holding the default Monte Carlo worker count.
const THREADS_ENV: &str = "SPARK_THREADS";

#[derive(Parser)]
#[command(name = "spark", version, about = "Statistical top-k sparsity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo validation of the threshold-count concentration bound
    Validate(ValidateArgs),
    /// Gaussian-fit diagnostics: fitted vs exact top-k cutoff on synthetic data
    Diag(DiagArgs),
    /// FLOPs per token: standard vs spark variants
    Flops(FlopsArgs),
    /// Dense vs masked/sparse kernel wall times at a given density
    Bench(BenchArgs),
    /// Seeded decode over the runnable model with a sparsity report
    Demo(DemoArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Runnable desk-scale configuration
    Tiny,
    /// Gemma-2 2B-shaped configuration (FLOPs accounting only)
    #[value(name = "gemma2-2b")]
    Gemma2_2b,
}

#[derive(Args)]
struct OutputArgs {
    /// Structured output format on stdout
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    output: OutputFormat,
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in configuration preset
    #[arg(long, value_enum, default_value_t = Preset::Tiny)]
    preset: Preset,
    /// Flat key=value config file applied over the preset
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field override KEY=VALUE, repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Base seed (overrides the config's seed)
    #[arg(long)]
    seed: Option<u64>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig, String> {
        let mut cfg = match self.preset {
            Preset::Tiny => ModelConfig::tiny(),
            Preset::Gemma2_2b => ModelConfig::gemma2_2b(),
        };
        if let Some(path) = &self.config {
            let body = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            config::apply_file(&mut cfg, &body).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        for pair in &self.set {
            config::apply_set(&mut cfg, pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ValidateArgs {
    /// Vector length per trial
    #[arg(long, default_value_t = 13824)]
    d: usize,
    /// Top-k target
    #[arg(long, default_value_t = 1106)]
    k: usize,
    /// Number of Monte Carlo trials
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Confidence parameter of the bound
    #[arg(long, default_value_t = 0.01)]
    delta: Real,
    /// Mean of the sampled Gaussian
    #[arg(long, default_value_t = 0.0)]
    mu: Real,
    /// Standard deviation of the sampled Gaussian
    #[arg(long, default_value_t = 1.0)]
    sigma: Real,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: SPARK_THREADS or 1)
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DiagArgs {
    /// Synthetic activation length
    #[arg(long, default_value_t = 13824)]
    d: usize,
    /// Top-k target
    #[arg(long, default_value_t = 1106)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct FlopsArgs {
    /// Context length for the attention terms
    #[arg(long, default_value_t = 8192)]
    nctx: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Active-row fraction in (0, 1]
    #[arg(long, default_value_t = 0.08)]
    density: Real,
    /// Timed repetitions per kernel (median reported)
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DemoArgs {
    /// Decode steps to run
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    out: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Validate(args) => {
            let threads = args.threads.or_else(threads_from_env).unwrap_or(1);
            let mc = MonteCarloConfig {
                d: args.d,
                k: args.k,
                mu: args.mu,
                sigma: args.sigma,
                trials: args.trials,
                delta: args.delta,
                seed: args.seed,
                threads,
                count_rule: spark_core::harness::CountRule::StatThreshold,
            };
            let report = theorem1_montecarlo(&mc).map_err(|e| e.to_string())?;
            emit(args.out.output, &report, || report.to_csv())?;
            eprintln!(
                "bound |count-k| <= {:.1} at delta {}: {:.1}% of {} trials within; mean |count-k|/d = {:.5}",
                report.bound_abs,
                report.delta,
                100.0 * report.satisfied_fraction,
                report.trials,
                report.mean_abs_gap_frac
            );
            if report.passes() {
                eprintln!("validation PASSED");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("validation FAILED: bound violated beyond tolerance");
                Ok(ExitCode::from(1))
            }
        }
        Command::Diag(args) => {
            let x = synthetic_gaussian_vector(args.d, args.seed).map_err(|e| e.to_string())?;
            let report = gaussian_fit_report(&x, args.k).map_err(|e| e.to_string())?;
            emit(args.out.output, &report, || report.to_csv())?;
            eprintln!(
                "empirical cutoff {:.6} vs fitted {:.6} (relative gap {:.4}{})",
                report.empirical_cutoff,
                report.fitted_cutoff,
                report.relative_gap,
                if report.degenerate_std {
                    ", degenerate std"
                } else {
                    ""
                }
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Flops(args) => {
            let cfg = args.model.resolve()?;
            let summary = flops_summary(&cfg.layer, args.nctx);
            emit(args.out.output, &summary, || summary.to_csv())?;
            eprintln!(
                "per layer at n_ctx {}: standard {} vs spark {} multiply-adds => ratio {:.3}",
                summary.n_ctx, summary.standard.total, summary.spark.total, summary.ratio
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let cfg = args.model.resolve()?;
            let report = kernel_bench(&cfg.layer, args.density, args.reps, cfg.seed)
                .map_err(|e| e.to_string())?;
            emit(args.out.output, &report, || report.to_csv())?;
            eprintln!(
                "density {:.3} on {}x{}: masked x{:.2}, sparse vecmat x{:.2} vs dense medians",
                report.density,
                report.d_ff,
                report.d_model,
                report.speedup_masked,
                report.speedup_vecmat
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Demo(args) => {
            let cfg = args.model.resolve()?;
            let report = run_demo(&cfg, args.steps).map_err(|e| e.to_string())?;
            emit(args.out.output, &report, || report.to_csv())?;
            eprintln!(
                "{} decode steps over {} layers; mean FFN nonzero fractions {:?}",
                report.steps, report.n_layers, report.per_layer_ffn_nonzero_frac
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
}

fn emit<T: serde::Serialize>(
    format: OutputFormat,
    value: &T,
    csv: impl FnOnce() -> String,
) -> Result<(), String> {
    match format {
        OutputFormat::Json => {
            let body = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
            println!("{body}");
        }
        OutputFormat::Csv => print!("{}", csv()),
    }
    Ok(())
}
