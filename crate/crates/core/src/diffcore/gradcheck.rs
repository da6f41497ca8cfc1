//! Central-difference gradient verification.
//!
//! The test oracle for every differentiable op and loss: analytic
//! gradients from one backward pass are compared against
//! `(f(x + s e) - f(x - s e)) / 2s` on a sampled coordinate subset.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::grid::Grid;
use crate::diffcore::tape::{Tape, Var};
use crate::error::Result;

/// Worst relative error between analytic and numeric gradients of `f`
/// with respect to `x`, over `samples` randomly chosen coordinates.
///
/// `f` must deterministically build a scalar loss from the given leaf;
/// it is re-invoked on a fresh tape for every evaluation. The error
/// denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Grid, step: f32, samples: usize, seed: u64) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_floored(f, x, step, samples, seed, 0.0)
}

/// [`grad_check`] sampling only coordinates with `|analytic| >= min_grad`.
///
/// The fp32 difference quotient carries absolute noise around
/// `ulp(|loss|) / step`; against a near-cancelled gradient the relative
/// error measures that noise, not the implementation. The floor keeps
/// sampled coordinates adjudicable. Errors if nothing qualifies.
pub fn grad_check_floored<F>(
    f: F,
    x: &Grid,
    step: f32,
    samples: usize,
    seed: u64,
    min_grad: f32,
) -> Result<f32>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let mut leaf = x.clone();
        leaf.set_requires_grad(true);
        let xv = tape.param(leaf);
        let loss = f(&mut tape, xv)?;
        tape.backward(loss)?;
        tape.grad(xv).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()])
    };

    let eval = |grid: &Grid| -> Result<f32> {
        let mut tape = Tape::new();
        let xv = tape.leaf(grid.clone());
        let loss = f(&mut tape, xv)?;
        Ok(tape.value(loss).data()[0])
    };

    let eligible: Vec<usize> = (0..x.len()).filter(|&i| analytic[i].abs() >= min_grad).collect();
    if eligible.is_empty() {
        return Err(crate::error::Error::arg(format!(
            "grad_check: no coordinate has |analytic gradient| >= {min_grad}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, eligible.len(), samples.min(eligible.len()));

    let mut worst = 0.0f32;
    for k in picks {
        let idx = eligible[k];
        let mut plus = x.clone();
        plus.data_mut()[idx] += step;
        let mut minus = x.clone();
        minus.data_mut()[idx] -= step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let a = analytic[idx];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let err = (a - numeric).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_grid(c: usize, h: usize, w: usize, seed: u64, lo: f32, hi: f32) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * h * w).map(|_| rng.gen_range(lo..hi)).collect();
        Grid::new(c, h, w, data).unwrap()
    }

    /// Shift values toward +/- so no sample sits within `margin` of zero.
    fn away_from_zero(mut g: Grid, margin: f32) -> Grid {
        for v in g.data_mut() {
            if v.abs() < margin {
                *v = if *v >= 0.0 { margin } else { -margin };
            }
        }
        g
    }

    #[test]
    fn mean_is_exact() {
        // Central differences are exact for linear functions at any step;
        // a large step keeps the quotient far above fp32 rounding noise.
        let x = random_grid(1, 4, 4, 1, -1.0, 1.0);
        let err = grad_check(|t, v| Ok(t.mean(v)), &x, 0.25, 16, 7).unwrap();
        assert!(err <= 1e-6, "mean grad err {err}");
    }

    #[test]
    fn mean_abs_away_from_kink() {
        let x = away_from_zero(random_grid(1, 4, 4, 2, -1.0, 1.0), 0.1);
        let err = grad_check(
            |t, v| {
                let a = t.abs(v);
                Ok(t.mean(a))
            },
            &x,
            1e-3,
            16,
            8,
        )
        .unwrap();
        assert!(err <= 1e-3, "abs grad err {err}");
    }

    #[test]
    fn mul_gradient_matches() {
        let x = random_grid(1, 4, 4, 3, -1.0, 1.0);
        let other = random_grid(1, 4, 4, 4, -1.0, 1.0);
        let err = grad_check(
            |t, v| {
                let o = t.leaf(other.clone());
                let m = t.mul(v, o)?;
                Ok(t.mean(m))
            },
            &x,
            1e-3,
            16,
            9,
        )
        .unwrap();
        assert!(err <= 1e-3, "mul grad err {err}");
    }

    #[test]
    fn conv_and_pad_gradient_matches() {
        // positive kernel: random signs can cancel a coordinate's gradient
        // to ~0, where the fp32 difference quotient is pure noise
        let x = random_grid(2, 6, 6, 5, -1.0, 1.0);
        let kernel = random_grid(2 * 3, 3, 3, 6, 0.1, 0.5);
        let bias = random_grid(3, 1, 1, 7, -0.1, 0.1);
        for stride in [1usize, 2] {
            let err = grad_check(
                |t, v| {
                    let p = t.reflection_pad(v, 1)?;
                    let k = t.leaf(kernel.clone());
                    let b = t.leaf(bias.clone());
                    let c = t.conv2d(p, k, b, stride)?;
                    Ok(t.mean(c))
                },
                &x,
                1e-3,
                24,
                10 + stride as u64,
            )
            .unwrap();
            assert!(err <= 1e-3, "conv stride {stride} grad err {err}");
        }
    }

    #[test]
    fn conv_kernel_and_bias_gradient_matches() {
        let input = random_grid(2, 5, 5, 11, 0.1, 1.0);
        let kernel = random_grid(2 * 3, 3, 3, 12, -0.5, 0.5);
        let err = grad_check(
            |t, v| {
                let x = t.leaf(input.clone());
                let b = t.leaf(Grid::zeros(3, 1, 1));
                let c = t.conv2d(x, v, b, 1)?;
                Ok(t.mean(c))
            },
            &kernel,
            1e-3,
            24,
            13,
        )
        .unwrap();
        assert!(err <= 1e-3, "kernel grad err {err}");
    }

    #[test]
    fn batch_norm_gradient_matches() {
        // Weight the output by a fixed random grid; a symmetric loss like
        // mean(y^2) is nearly invariant under normalization and its true
        // gradient sinks below the fp32 difference noise.
        let x = random_grid(2, 4, 4, 14, -1.0, 1.0);
        let scale = random_grid(2, 1, 1, 15, 0.5, 1.5);
        let shift = random_grid(2, 1, 1, 16, -0.5, 0.5);
        let probe = random_grid(2, 4, 4, 33, -1.0, 1.0);
        let err = grad_check(
            |t, v| {
                let s = t.leaf(scale.clone());
                let b = t.leaf(shift.clone());
                let y = t.batch_norm(v, s, b, 1e-5)?;
                let r = t.leaf(probe.clone());
                let weighted = t.mul(y, r)?;
                Ok(t.mean(weighted))
            },
            &x,
            1e-3,
            24,
            17,
        )
        .unwrap();
        assert!(err <= 1e-3, "batch_norm grad err {err}");
    }

    #[test]
    fn activation_gradients_match() {
        // leaky_relu away from the kink, including the stated x = -3 slope case
        let mut x = away_from_zero(random_grid(1, 4, 4, 18, -2.0, 2.0), 0.1);
        x.data_mut()[0] = -3.0;
        let err = grad_check(
            |t, v| {
                let y = t.leaky_relu(v, 0.2);
                Ok(t.mean(y))
            },
            &x,
            1e-3,
            16,
            19,
        )
        .unwrap();
        assert!(err <= 1e-3, "leaky_relu grad err {err}");

        // sigmoid derivative at 0 is 0.25
        let zero = Grid::zeros(1, 1, 1);
        let mut tape = Tape::new();
        let mut leaf = zero.clone();
        leaf.set_requires_grad(true);
        let xv = tape.param(leaf);
        let s = tape.sigmoid(xv);
        let m = tape.mean(s);
        tape.backward(m).unwrap();
        assert!((tape.grad(xv).unwrap()[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn resize_gradients_match() {
        // positive probes: interpolation weights are nonnegative, so no
        // coordinate's gradient cancels toward the noise floor
        let x = random_grid(1, 4, 4, 20, -1.0, 1.0);
        let probe_up = random_grid(1, 8, 8, 26, 0.5, 1.5);
        let err = grad_check(
            |t, v| {
                let y = t.bilinear_resize(v, 2.0)?;
                let r = t.leaf(probe_up.clone());
                let w = t.mul(y, r)?;
                Ok(t.mean(w))
            },
            &x,
            1e-3,
            16,
            21,
        )
        .unwrap();
        assert!(err <= 1e-3, "bilinear grad err {err}");

        let probe_down = random_grid(1, 2, 2, 27, 0.5, 1.5);
        let err = grad_check(
            |t, v| {
                let y = t.area_downsample(v, 2)?;
                let r = t.leaf(probe_down.clone());
                let w = t.mul(y, r)?;
                Ok(t.mean(w))
            },
            &x,
            1e-3,
            16,
            22,
        )
        .unwrap();
        assert!(err <= 1e-3, "area grad err {err}");
        // direct statement: d(sum of factor-2 mean) / d(any pixel) = 1/4
        let mut t = Tape::new();
        let mut g = Grid::zeros(1, 2, 2);
        g.set_requires_grad(true);
        let v = t.param(g);
        let y = t.area_downsample(v, 2).unwrap();
        let m = t.mean(y);
        t.backward(m).unwrap();
        assert!(t.grad(v).unwrap().iter().all(|&d| (d - 0.25).abs() < 1e-6));
    }

    #[test]
    fn laplacian_gradient_matches() {
        // checkerboard probe: the Laplacian adjoint of an alternating sign
        // pattern is +-8/N everywhere, never near the noise floor
        let x = random_grid(1, 5, 5, 23, -1.0, 1.0);
        let probe = Grid::new(
            1,
            5,
            5,
            (0..25).map(|i| if (i / 5 + i % 5) % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        )
        .unwrap();
        let err = grad_check(
            |t, v| {
                let y = t.laplacian(v);
                let r = t.leaf(probe.clone());
                let w = t.mul(y, r)?;
                Ok(t.mean(w))
            },
            &x,
            1e-3,
            25,
            24,
        )
        .unwrap();
        assert!(err <= 1e-3, "laplacian grad err {err}");
    }

    #[test]
    fn log_and_scalar_gradients_match() {
        let x = random_grid(1, 4, 4, 25, 0.2, 2.0);
        let err = grad_check(
            |t, v| {
                let a = t.abs(v);
                let shifted = t.scalar_add(a, 0.05);
                let l = t.log(shifted)?;
                let scaled = t.scalar_mul(l, 0.7);
                Ok(t.mean(scaled))
            },
            &x,
            1e-3,
            16,
            26,
        )
        .unwrap();
        assert!(err <= 1e-3, "log chain grad err {err}");
    }

    #[test]
    fn max_routes_gradient_away_from_ties() {
        let x = random_grid(1, 4, 4, 27, 0.5, 1.5);
        let other = random_grid(1, 4, 4, 28, -1.5, -0.5); // |a - b| > 0.05 everywhere
        let err = grad_check(
            |t, v| {
                let o = t.leaf(other.clone());
                let m = t.max(v, o)?;
                Ok(t.mean(m))
            },
            &x,
            1e-3,
            16,
            29,
        )
        .unwrap();
        assert!(err <= 1e-3, "max grad err {err}");

        let err = grad_check(
            |t, v| {
                let o = t.leaf(other.clone());
                let m = t.abs_max(v, o)?;
                Ok(t.mean(m))
            },
            &x,
            1e-3,
            16,
            30,
        )
        .unwrap();
        assert!(err <= 1e-3, "abs_max grad err {err}");
    }

    #[test]
    fn scalar_broadcast_gradient_matches() {
        let x = random_grid(1, 4, 4, 31, -1.0, 1.0);
        // gradient w.r.t. the broadcast scalar
        let s = Grid::scalar(0.6);
        let err = grad_check(
            |t, v| {
                let a = t.leaf(x.clone());
                let y = t.mul_scalar_grid(a, v)?;
                Ok(t.mean(y))
            },
            &s,
            1e-3,
            1,
            32,
        )
        .unwrap();
        assert!(err <= 1e-3, "scalar-grid grad err {err}");
    }
}
