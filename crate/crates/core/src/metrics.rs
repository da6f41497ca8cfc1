//! Fusion-quality metrics: mean gradient (MG), cross entropy (CEN),
//! edge intensity (EI) and spatial frequency (SF).
//!
//! Standard fusion-literature definitions, computed in f64 on the 0-255
//! intensity scale regardless of the grids' [0,1] storage. Higher is
//! better for MG/EI/SF (high-frequency content), lower for CEN
//! (histogram divergence between each source and the fused image).

use serde::{Deserialize, Serialize};

use crate::diffcore::Grid;
use crate::error::{Error, Result};
use crate::scene::bicubic_upsample;

const INTENSITY_SCALE: f64 = 255.0;
const BINS: usize = 256;

fn check_gray(img: &Grid, context: &'static str, min_dim: usize) -> Result<(usize, usize)> {
    let (c, h, w) = img.shape();
    if c != 1 {
        return Err(Error::shape(context, "single channel", img.shape_string()));
    }
    if h < min_dim || w < min_dim {
        return Err(Error::shape(
            context,
            format!("at least {min_dim}x{min_dim}"),
            format!("{h}x{w}"),
        ));
    }
    Ok((h, w))
}

#[inline]
fn px(img: &Grid, w: usize, y: usize, x: usize) -> f64 {
    img.data()[y * w + x] as f64 * INTENSITY_SCALE
}

/// Mean of `sqrt((dx^2 + dy^2) / 2)` over forward differences.
pub fn mean_gradient(img: &Grid) -> Result<f64> {
    let (h, w) = check_gray(img, "mean_gradient", 2)?;
    let data = img.data();
    let mut acc = 0.0f64;
    for y in 0..h - 1 {
        let row = &data[y * w..(y + 1) * w];
        let next = &data[(y + 1) * w..(y + 2) * w];
        for x in 0..w - 1 {
            let v = row[x] as f64 * INTENSITY_SCALE;
            let dx = row[x + 1] as f64 * INTENSITY_SCALE - v;
            let dy = next[x] as f64 * INTENSITY_SCALE - v;
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    Ok(acc / ((h - 1) * (w - 1)) as f64)
}

fn histogram(img: &Grid) -> Vec<f64> {
    let mut counts = vec![0u64; BINS];
    for &v in img.data() {
        let bin = (v as f64 * INTENSITY_SCALE).round().clamp(0.0, 255.0) as usize;
        counts[bin] += 1;
    }
    let n = img.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// KL-style divergence `sum p log2(p/q)` over bins with `p > 0`; empty
/// `q` bins are clamped to `1/(4 H W)` to keep the sum defined.
fn divergence(p: &[f64], q: &[f64], pixels: usize) -> f64 {
    let clamp = 1.0 / (4.0 * pixels as f64);
    let mut acc = 0.0;
    for (pv, qv) in p.iter().zip(q) {
        if *pv > 0.0 {
            let q_eff = if *qv > 0.0 { *qv } else { clamp };
            acc += pv * (pv / q_eff).log2();
        }
    }
    acc
}

/// Average histogram divergence of the two sources against the fused
/// image. Returns (cen, per-source components).
pub fn cross_entropy(src1: &Grid, src2: &Grid, fused: &Grid) -> Result<(f64, f64, f64)> {
    let dims = check_gray(fused, "cross_entropy", 1)?;
    for s in [src1, src2] {
        if check_gray(s, "cross_entropy", 1)? != dims {
            return Err(Error::shape(
                "cross_entropy",
                format!("{}x{}", dims.0, dims.1),
                s.shape_string(),
            ));
        }
    }
    let hf = histogram(fused);
    let d1 = divergence(&histogram(src1), &hf, fused.len());
    let d2 = divergence(&histogram(src2), &hf, fused.len());
    Ok(((d1 + d2) / 2.0, d1, d2))
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

/// Mean Sobel magnitude with reflected borders.
pub fn edge_intensity(img: &Grid) -> Result<f64> {
    let (h, w) = check_gray(img, "edge_intensity", 3)?;
    let mut acc = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for ky in 0..3 {
                let yy = reflect(y as isize + ky as isize - 1, h);
                for kx in 0..3 {
                    let xx = reflect(x as isize + kx as isize - 1, w);
                    let v = px(img, w, yy, xx);
                    sx += SOBEL_X[ky][kx] * v;
                    sy += SOBEL_Y[ky][kx] * v;
                }
            }
            acc += (sx * sx + sy * sy).sqrt();
        }
    }
    Ok(acc / (h * w) as f64)
}

/// Root-mean-square of horizontal and vertical first differences,
/// combined as `sqrt(RF^2 + CF^2)`.
pub fn spatial_frequency(img: &Grid) -> Result<f64> {
    let (h, w) = check_gray(img, "spatial_frequency", 2)?;
    let data = img.data();
    let mut rf = 0.0f64;
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        for x in 1..w {
            let d = (row[x] as f64 - row[x - 1] as f64) * INTENSITY_SCALE;
            rf += d * d;
        }
    }
    let rf = (rf / (h * (w - 1)) as f64).sqrt();
    let mut cf = 0.0f64;
    for y in 1..h {
        let row = &data[y * w..(y + 1) * w];
        let prev = &data[(y - 1) * w..y * w];
        for x in 0..w {
            let d = (row[x] as f64 - prev[x] as f64) * INTENSITY_SCALE;
            cf += d * d;
        }
    }
    let cf = (cf / ((h - 1) * w) as f64).sqrt();
    Ok((rf * rf + cf * cf).sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricInputs {
    pub src1: String,
    pub src2: String,
    pub fused: String,
}

/// All four metrics on one fused image, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mg: f64,
    pub cen: f64,
    pub ei: f64,
    pub sf: f64,
    pub cen_src1: f64,
    pub cen_src2: f64,
    pub inputs: MetricInputs,
}

/// Evaluate the full report. Sources at a lower resolution than the
/// fused image are bicubic-upsampled to its dims first.
pub fn evaluate_all(src1: &Grid, src2: &Grid, fused: &Grid) -> Result<MetricReport> {
    let (_, fh, fw) = fused.shape();
    let upsample = |src: &Grid| -> Result<Grid> {
        let (_, sh, sw) = src.shape();
        if (sh, sw) == (fh, fw) {
            return Ok(src.clone());
        }
        if fh % sh != 0 || fw % sw != 0 || fh / sh != fw / sw {
            return Err(Error::shape(
                "evaluate_all",
                format!("source dims dividing fused {fh}x{fw} by one factor"),
                format!("{sh}x{sw}"),
            ));
        }
        bicubic_upsample(src, fh / sh)
    };
    let s1 = upsample(src1)?;
    let s2 = upsample(src2)?;
    let (cen, cen_src1, cen_src2) = cross_entropy(&s1, &s2, fused)?;
    Ok(MetricReport {
        mg: mean_gradient(fused)?,
        cen,
        ei: edge_intensity(fused)?,
        sf: spatial_frequency(fused)?,
        cen_src1,
        cen_src2,
        inputs: MetricInputs::default(),
    })
}
