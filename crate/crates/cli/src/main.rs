//! `drf` command line: dataset-free IR/VIS super-resolution fusion.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use drf_core::app::{run_ablate, run_fuse, run_metrics, run_metrics_batch, RunConfig};
use drf_core::trainer::Variant;

#[derive(Parser)]
#[command(
    name = "drf",
    about = "Fuses one infrared/visible image pair by optimizing generator networks \
             against a Retinex loss family on the inputs alone; optionally super-resolves 2x/4x.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse one IR/VIS pair into an output directory.
    Fuse(FuseArgs),
    /// Run all five loss-ablation variants plus a contact sheet.
    Ablate(FuseArgs),
    /// Fusion-quality metrics (MG, CEN, EI, SF) for existing images.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct FuseArgs {
    /// Infrared input image (PNG or PGM, 8/16-bit).
    #[arg(long)]
    ir: Option<PathBuf>,
    /// Visible input image.
    #[arg(long)]
    vis: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Super-resolution factor.
    #[arg(long, value_parser = ["1", "2", "4"])]
    scale: Option<String>,
    /// Gradient steps on the single pair.
    #[arg(long = "iters")]
    iterations: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Retinex term weight.
    #[arg(long)]
    lambda1: Option<f32>,
    /// Joint gradient term weight (0.1 to 0.3).
    #[arg(long)]
    lambda2: Option<f32>,
    /// Illumination lock weight.
    #[arg(long)]
    lambda3: Option<f32>,
    /// Lightness-weight lock weight.
    #[arg(long)]
    lambda4: Option<f32>,
    /// Mean-lightness lock weight.
    #[arg(long)]
    lambda5: Option<f32>,
    /// Loss variant: full, no_alpha, no_grad, no_locks, dot_mode.
    #[arg(long)]
    variant: Option<String>,
    /// Log one CSV row every N iterations.
    #[arg(long = "log-every")]
    log_every: Option<usize>,
    /// Worker threads (metrics batch mode only; accepted here so configs round-trip).
    #[arg(long)]
    workers: Option<usize>,
    /// JSON config to start from; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl FuseArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => {
                let (Some(ir), Some(vis), Some(out)) = (self.ir.clone(), self.vis.clone(), self.out.clone())
                else {
                    bail!("--ir, --vis and --out are required (or provide --config)");
                };
                RunConfig::new(ir, vis, out)
            }
        };
        if let Some(v) = self.ir {
            config.ir = v;
        }
        if let Some(v) = self.vis {
            config.vis = v;
        }
        if let Some(v) = self.out {
            config.out = v;
        }
        if let Some(v) = self.scale {
            config.scale = v.parse().expect("restricted by value_parser");
        }
        if let Some(v) = self.iterations {
            config.iterations = v;
        }
        if let Some(v) = self.lr {
            config.learning_rate = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.lambda1 {
            config.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            config.lambda2 = v;
        }
        if let Some(v) = self.lambda3 {
            config.lambda3 = v;
        }
        if let Some(v) = self.lambda4 {
            config.lambda4 = v;
        }
        if let Some(v) = self.lambda5 {
            config.lambda5 = v;
        }
        if let Some(v) = self.variant {
            config.variant = Variant::parse(&v)?;
        }
        if let Some(v) = self.log_every {
            config.log_every = v;
        }
        if let Some(v) = self.workers {
            config.workers = v;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct MetricsArgs {
    /// First source image (typically IR).
    #[arg(long, requires = "src2", requires = "fused")]
    src1: Option<PathBuf>,
    /// Second source image (typically VIS).
    #[arg(long)]
    src2: Option<PathBuf>,
    /// Fused image to score.
    #[arg(long)]
    fused: Option<PathBuf>,
    /// Batch mode: directory of subdirectories holding ir.*, vis.*, fused.*.
    #[arg(long, conflicts_with = "src1")]
    dir: Option<PathBuf>,
    /// Output file: metrics.json (single) or CSV (batch).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for batch mode.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fuse(args) => {
            let config = args.resolve()?;
            let result = run_fuse(&config)?;
            println!(
                "fused {} + {} -> {} ({} iterations, {:.1}s, alpha = {:.4}/{:.4})",
                config.ir.display(),
                config.vis.display(),
                config.out.display(),
                config.iterations,
                result.elapsed.as_secs_f64(),
                result.alpha1,
                result.alpha2,
            );
        }
        Command::Ablate(args) => {
            let config = args.resolve()?;
            run_ablate(&config)?;
            println!(
                "ablation complete: {} variants under {}",
                Variant::ALL.len(),
                config.out.display()
            );
        }
        Command::Metrics(args) => match (&args.dir, &args.src1) {
            (Some(dir), _) => {
                let out = args
                    .out
                    .clone()
                    .ok_or_else(|| anyhow::anyhow!("--out CSV path is required in batch mode"))?;
                let rows = run_metrics_batch(dir, &out, args.workers)?;
                println!("wrote {rows} rows to {}", out.display());
            }
            (None, Some(src1)) => {
                let (src2, fused) = (
                    args.src2.as_ref().expect("clap requires src2"),
                    args.fused.as_ref().expect("clap requires fused"),
                );
                let report = run_metrics(src1, src2, fused)?;
                let json = serde_json::to_string_pretty(&report)?;
                println!("{json}");
                if let Some(out) = args.out {
                    std::fs::write(out, json)?;
                }
            }
            (None, None) => bail!("either --src1/--src2/--fused or --dir is required"),
        },
    }
    Ok(())
}
