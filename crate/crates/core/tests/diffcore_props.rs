//! Property tests for the differentiable operator set.

use drf_core::diffcore::{Grid, Tape};
use proptest::prelude::*;

fn finite_grid(h: usize, w: usize) -> impl Strategy<Value = Grid> {
    prop::collection::vec(-10.0f32..10.0, h * w)
        .prop_map(move |data| Grid::new(1, h, w, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sigmoid_output_strictly_inside_unit_interval(grid in finite_grid(4, 5)) {
        let mut tape = Tape::new();
        let x = tape.leaf(grid);
        let y = tape.sigmoid(x);
        prop_assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn leaky_relu_preserves_sign_of_nonzeros(grid in finite_grid(4, 5)) {
        let mut tape = Tape::new();
        let x = tape.leaf(grid.clone());
        let y = tape.leaky_relu(x, 0.2);
        for (&xv, &yv) in grid.data().iter().zip(tape.value(y).data()) {
            if xv != 0.0 {
                prop_assert!(xv.signum() == yv.signum());
            } else {
                prop_assert!(yv == 0.0);
            }
        }
    }

    #[test]
    fn area_downsample_commutes_with_constants(v in -5.0f32..5.0) {
        let mut tape = Tape::new();
        let x = tape.leaf(Grid::full(1, 8, 8, v));
        let y = tape.area_downsample(x, 2).unwrap();
        prop_assert!(tape.value(y).data().iter().all(|&o| (o - v).abs() <= 1e-5));
    }

    #[test]
    fn laplacian_zero_on_interior_of_affine(a in -2.0f32..2.0, b in -2.0f32..2.0, c in -2.0f32..2.0) {
        let (h, w) = (6usize, 6usize);
        let data: Vec<f32> = (0..h * w)
            .map(|i| a * (i / w) as f32 + b * (i % w) as f32 + c)
            .collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Grid::new(1, h, w, data).unwrap());
        let y = tape.laplacian(x);
        for yy in 1..h - 1 {
            for xx in 1..w - 1 {
                prop_assert!(tape.value(y).at(0, yy, xx).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn forward_values_stay_finite(grid in finite_grid(6, 6)) {
        let mut tape = Tape::new();
        let x = tape.leaf(grid);
        let p = tape.reflection_pad(x, 1).unwrap();
        let k = tape.leaf(Grid::full(3, 3, 3, 0.11));
        let bias = tape.leaf(Grid::full(3, 1, 1, -0.2));
        let conv = tape.conv2d(p, k, bias, 1).unwrap();
        let s = tape.leaf(Grid::full(3, 1, 1, 1.0));
        let sh = tape.leaf(Grid::zeros(3, 1, 1));
        let bn = tape.batch_norm(conv, s, sh, 1e-5).unwrap();
        let act = tape.leaky_relu(bn, 0.2);
        let sig = tape.sigmoid(act);
        let lap = tape.laplacian(sig);
        let m = tape.mean(lap);
        prop_assert!(tape.value(sig).all_finite());
        prop_assert!(tape.value(m).all_finite());
    }

    #[test]
    fn forward_is_bit_deterministic(grid in finite_grid(6, 6)) {
        let run = |g: &Grid| {
            let mut tape = Tape::new();
            let x = tape.leaf(g.clone());
            let p = tape.reflection_pad(x, 1).unwrap();
            let up = tape.bilinear_resize(p, 2.0).unwrap();
            let down = tape.area_downsample(up, 4).unwrap();
            let sg = tape.sigmoid(down);
            tape.value(sg).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(&grid), run(&grid));
    }

    #[test]
    fn max_selects_pointwise_maximum(a in finite_grid(3, 4), b in finite_grid(3, 4)) {
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.leaf(b.clone());
        let m = tape.max(va, vb).unwrap();
        for ((&x, &y), &o) in a.data().iter().zip(b.data()).zip(tape.value(m).data()) {
            prop_assert!(o == x.max(y));
        }
    }
}
