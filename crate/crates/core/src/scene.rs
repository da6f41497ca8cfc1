//! Scene preparation: everything that happens to the IR/VIS pair before
//! optimization. Grayscale inputs in [0,1] are reflection-padded up to
//! the next multiple of 32 (bottom/right, original dims recorded for the
//! final crop), bicubic-interpolated by the scale factor to form the
//! fusion network's inputs, and an adjusting-network noise grid is drawn
//! once from the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Grid;
use crate::error::{Error, Result};

/// One preprocessed IR/VIS pair: the unit of training.
#[derive(Debug, Clone)]
pub struct Scene {
    /// Recorded-resolution inputs, padded, values in [0,1].
    pub i1_lr: Grid,
    pub i2_lr: Grid,
    /// Bicubic x-scale interpolations of the padded inputs; the fusion
    /// network's inputs. Equal to the LR grids when scale is 1.
    pub i1_hr: Grid,
    pub i2_hr: Grid,
    /// Fixed adjusting-network input, uniform in [0, 0.1), LR dims.
    pub noise: Grid,
    pub scale: usize,
    pub seed: u64,
    /// Pre-padding dims, for cropping outputs back.
    pub orig_h: usize,
    pub orig_w: usize,
}

/// Smallest multiple of `m` that is >= `n`.
fn next_multiple(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

fn mirror_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

/// Reflection-pad on the bottom/right edges only (edge pixel not
/// duplicated) up to the target dims.
pub fn pad_to(grid: &Grid, th: usize, tw: usize) -> Result<Grid> {
    let (c, h, w) = grid.shape();
    if th < h || tw < w {
        return Err(Error::arg(format!("pad target {th}x{tw} smaller than input {h}x{w}")));
    }
    if th - h > h - 1 || tw - w > w - 1 {
        return Err(Error::arg(format!(
            "input {h}x{w} too small to mirror-pad to {th}x{tw}"
        )));
    }
    let mut out = Grid::zeros(c, th, tw);
    for ci in 0..c {
        for y in 0..th {
            let sy = mirror_index(y, h);
            for x in 0..tw {
                let sx = mirror_index(x, w);
                out.set(ci, y, x, grid.at(ci, sy, sx));
            }
        }
    }
    Ok(out)
}

/// Top-left crop.
pub fn crop(grid: &Grid, th: usize, tw: usize) -> Result<Grid> {
    let (c, h, w) = grid.shape();
    if th > h || tw > w {
        return Err(Error::arg(format!("crop {th}x{tw} exceeds input {h}x{w}")));
    }
    let mut out = Grid::zeros(c, th, tw);
    for ci in 0..c {
        for y in 0..th {
            for x in 0..tw {
                out.set(ci, y, x, grid.at(ci, y, x));
            }
        }
    }
    Ok(out)
}

/// Catmull-Rom kernel weights for fractional offset `t` over the four
/// taps at i-1 .. i+2.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Separable bicubic (Catmull-Rom) upsampling by an integer factor,
/// align-corners-false, output clamped to [0,1].
pub fn bicubic_upsample(grid: &Grid, factor: usize) -> Result<Grid> {
    if factor == 0 {
        return Err(Error::arg("bicubic factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (c, h, w) = grid.shape();
    let (oh, ow) = (h * factor, w * factor);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    // horizontal pass: c x h x ow
    let mut tmp = vec![0.0f64; c * h * ow];
    for ci in 0..c {
        for y in 0..h {
            for ox in 0..ow {
                let src = (ox as f64 + 0.5) / factor as f64 - 0.5;
                let i = src.floor();
                let wts = catmull_rom(src - i);
                let i = i as isize;
                let mut acc = 0.0;
                for (k, wt) in wts.iter().enumerate() {
                    acc += wt * grid.at(ci, y, clamp(i - 1 + k as isize, w)) as f64;
                }
                tmp[(ci * h + y) * ow + ox] = acc;
            }
        }
    }
    // vertical pass
    let mut out = Grid::zeros(c, oh, ow);
    for ci in 0..c {
        for oy in 0..oh {
            let src = (oy as f64 + 0.5) / factor as f64 - 0.5;
            let i = src.floor();
            let wts = catmull_rom(src - i);
            let i = i as isize;
            for ox in 0..ow {
                let mut acc = 0.0;
                for (k, wt) in wts.iter().enumerate() {
                    acc += wt * tmp[(ci * h + clamp(i - 1 + k as isize, h)) * ow + ox];
                }
                out.set(ci, oy, ox, acc.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(out)
}

/// Scale factors supported by the trainer.
pub fn check_scale(scale: usize) -> Result<()> {
    if ![1, 2, 4].contains(&scale) {
        return Err(Error::arg(format!("scale must be 1, 2 or 4, got {scale}")));
    }
    Ok(())
}

/// Build a [`Scene`] from two same-shape grayscale grids in [0,1].
pub fn prepare_scene(ir: &Grid, vis: &Grid, scale: usize, seed: u64) -> Result<Scene> {
    check_scale(scale)?;
    if !ir.same_shape(vis) {
        return Err(Error::shape("prepare_scene", ir.shape_string(), vis.shape_string()));
    }
    let (c, h, w) = ir.shape();
    if c != 1 {
        return Err(Error::shape("prepare_scene", "single-channel inputs", ir.shape_string()));
    }
    let (ph, pw) = (next_multiple(h, 32), next_multiple(w, 32));
    let i1_lr = pad_to(ir, ph, pw)?;
    let i2_lr = pad_to(vis, ph, pw)?;
    let i1_hr = bicubic_upsample(&i1_lr, scale)?;
    let i2_hr = bicubic_upsample(&i2_lr, scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Grid::new(1, ph, pw, (0..ph * pw).map(|_| rng.gen_range(0.0..0.1)).collect())?;
    Ok(Scene {
        i1_lr,
        i2_lr,
        i1_hr,
        i2_hr,
        noise,
        scale,
        seed,
        orig_h: h,
        orig_w: w,
    })
}
