//! File-level drivers: load a pair, train, and emit the output set; run
//! the five-variant ablation; compute metric reports for existing files.
//!
//! One fusion run writes into its output directory: `fused.png` and the
//! two lighting maps as 16-bit grayscale PNG, `alpha.json`, `log.csv`,
//! `metrics.json` (fused vs bicubic-upsampled sources) and `config.json`
//! (the exact resolved configuration; re-running it reproduces every
//! output bit for bit).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Grid;
use crate::error::{Error, Result};
use crate::imageio::{load_gray, save_gray16, save_gray8};
use crate::losses::{LossReport, LossWeights};
use crate::metrics::{evaluate_all, MetricInputs, MetricReport};
use crate::scene::{check_scale, prepare_scene};
use crate::trainer::{run_ablation, FusionResult, TrainConfig, Variant};

/// Resolved configuration of one fusion run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub ir: PathBuf,
    pub vis: PathBuf,
    pub out: PathBuf,
    #[serde(default = "d_scale")]
    pub scale: usize,
    #[serde(default = "d_iters")]
    pub iterations: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_l1")]
    pub lambda1: f32,
    #[serde(default = "d_l2")]
    pub lambda2: f32,
    #[serde(default = "d_l3")]
    pub lambda3: f32,
    #[serde(default = "d_l4")]
    pub lambda4: f32,
    #[serde(default = "d_l5")]
    pub lambda5: f32,
    #[serde(default = "d_variant")]
    pub variant: Variant,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

fn d_scale() -> usize {
    1
}
fn d_iters() -> usize {
    10_000
}
fn d_lr() -> f32 {
    1e-3
}
fn d_l1() -> f32 {
    1.0
}
fn d_l2() -> f32 {
    0.2
}
fn d_l3() -> f32 {
    0.25
}
fn d_l4() -> f32 {
    0.25
}
fn d_l5() -> f32 {
    1.0
}
fn d_variant() -> Variant {
    Variant::Full
}
fn d_log_every() -> usize {
    50
}
fn d_workers() -> usize {
    1
}

impl RunConfig {
    pub fn new(ir: PathBuf, vis: PathBuf, out: PathBuf) -> Self {
        RunConfig {
            ir,
            vis,
            out,
            scale: d_scale(),
            iterations: d_iters(),
            learning_rate: d_lr(),
            seed: 0,
            lambda1: d_l1(),
            lambda2: d_l2(),
            lambda3: d_l3(),
            lambda4: d_l4(),
            lambda5: d_l5(),
            variant: d_variant(),
            log_every: d_log_every(),
            workers: d_workers(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn train_config(&self) -> TrainConfig {
        let weights = LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            lambda5: self.lambda5,
            ..LossWeights::default()
        };
        TrainConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            log_every: self.log_every,
            weights,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

fn write_log_csv(path: &Path, log: &[LossReport]) -> Result<()> {
    let mut text = String::from(LossReport::CSV_HEADER);
    text.push('\n');
    for row in log {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Run one fusion and write the full output set. Returns the result for
/// callers that aggregate (the ablation driver).
pub fn run_fuse(config: &RunConfig) -> Result<FusionResult> {
    check_scale(config.scale)?;
    let ir = load_gray(&config.ir)?;
    let vis = load_gray(&config.vis)?;
    let scene = prepare_scene(&ir, &vis, config.scale, config.seed)?;
    let result = run_ablation(&scene, &config.train_config(), config.variant)?;

    fs::create_dir_all(&config.out)?;
    save_gray16(&config.out.join("fused.png"), &result.fused)?;
    save_gray16(&config.out.join("lighting1.png"), &result.lighting1)?;
    save_gray16(&config.out.join("lighting2.png"), &result.lighting2)?;
    write_log_csv(&config.out.join("log.csv"), &result.log)?;

    let alpha = serde_json::json!({ "alpha1": result.alpha1, "alpha2": result.alpha2 });
    fs::write(config.out.join("alpha.json"), serde_json::to_string_pretty(&alpha)?)?;

    let mut report = evaluate_all(&ir, &vis, &result.fused)?;
    report.inputs = MetricInputs {
        src1: config.ir.display().to_string(),
        src2: config.vis.display().to_string(),
        fused: config.out.join("fused.png").display().to_string(),
    };
    fs::write(config.out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(config.out.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(result)
}

const SHEET_GUTTER: usize = 4;

/// Five fused images side by side with white gutters between panels.
fn contact_sheet(panels: &[&Grid]) -> Result<Grid> {
    let (_, h, w) = panels[0].shape();
    for p in panels {
        if p.shape() != (1, h, w) {
            return Err(Error::shape("contact_sheet", format!("1x{h}x{w}"), p.shape_string()));
        }
    }
    let total_w = panels.len() * w + (panels.len() - 1) * SHEET_GUTTER;
    let mut sheet = Grid::full(1, h, total_w, 1.0);
    for (i, p) in panels.iter().enumerate() {
        let x0 = i * (w + SHEET_GUTTER);
        for y in 0..h {
            for x in 0..w {
                sheet.set(0, y, x0 + x, p.at(0, y, x));
            }
        }
    }
    Ok(sheet)
}

/// Run all five loss variants into subdirectories of `config.out`, then
/// emit a side-by-side contact sheet and a combined lightness-weight
/// trajectory CSV.
pub fn run_ablate(config: &RunConfig) -> Result<()> {
    let mut results: Vec<(Variant, FusionResult)> = Vec::new();
    for variant in Variant::ALL {
        let sub = RunConfig {
            out: config.out.join(variant.name()),
            variant,
            ..config.clone()
        };
        results.push((variant, run_fuse(&sub)?));
    }

    let panels: Vec<&Grid> = results.iter().map(|(_, r)| &r.fused).collect();
    save_gray8(&config.out.join("contact_sheet.png"), &contact_sheet(&panels)?)?;

    // iter column plus alpha1/alpha2 per variant, aligned by log row
    let mut csv = String::from("iter");
    for (v, _) in &results {
        csv.push_str(&format!(",{0}_alpha1,{0}_alpha2", v.name()));
    }
    csv.push('\n');
    let rows = results[0].1.log.len();
    for i in 0..rows {
        csv.push_str(&results[0].1.log[i].iter.to_string());
        for (_, r) in &results {
            csv.push_str(&format!(",{},{}", r.log[i].alpha1, r.log[i].alpha2));
        }
        csv.push('\n');
    }
    fs::write(config.out.join("alpha_trajectories.csv"), csv)?;
    Ok(())
}

/// Metric report for three existing files; sources are bicubic-upsampled
/// when their dims differ from the fused image.
pub fn run_metrics(src1: &Path, src2: &Path, fused: &Path) -> Result<MetricReport> {
    let s1 = load_gray(src1)?;
    let s2 = load_gray(src2)?;
    let f = load_gray(fused)?;
    let mut report = evaluate_all(&s1, &s2, &f)?;
    report.inputs = MetricInputs {
        src1: src1.display().to_string(),
        src2: src2.display().to_string(),
        fused: fused.display().to_string(),
    };
    Ok(report)
}

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    for ext in ["png", "pgm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            return Some(p);
        }
    }
    None
}

/// Batch metrics over a directory of triples: every subdirectory holding
/// `ir.*`, `vis.*` and `fused.*` (png or pgm) contributes one CSV row,
/// in subdirectory name order. The result is identical for any worker
/// count.
pub fn run_metrics_batch(dir: &Path, out_csv: &Path, workers: usize) -> Result<usize> {
    let mut triples: Vec<(String, PathBuf, PathBuf, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let sub = entry.path();
        let (Some(ir), Some(vis), Some(fused)) = (
            find_image(&sub, "ir"),
            find_image(&sub, "vis"),
            find_image(&sub, "fused"),
        ) else {
            continue;
        };
        triples.push((entry.file_name().to_string_lossy().into_owned(), ir, vis, fused));
    }
    triples.sort_by(|a, b| a.0.cmp(&b.0));

    let workers = workers.max(1).min(triples.len().max(1));
    let mut reports: Vec<Option<Result<MetricReport>>> = Vec::new();
    reports.resize_with(triples.len(), || None);
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in reports.chunks_mut(triples.len().div_ceil(workers)).enumerate() {
            let chunk_size = triples.len().div_ceil(workers);
            let start = chunk_idx * chunk_size;
            let triples = &triples;
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let (_, ir, vis, fused) = &triples[start + i];
                    *slot = Some(run_metrics(ir, vis, fused));
                }
            });
        }
    });

    let mut csv = String::from("name,mg,cen,ei,sf\n");
    let mut count = 0;
    for (i, slot) in reports.into_iter().enumerate() {
        let report = slot.expect("every slot filled")?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            triples[i].0, report.mg, report.cen, report.ei, report.sf
        ));
        count += 1;
    }
    fs::write(out_csv, csv)?;
    Ok(count)
}
