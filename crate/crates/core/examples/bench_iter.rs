// timing probe: one training iteration at smoke-test scale
use std::time::Instant;

use drf_core::diffcore::Grid;
use drf_core::scene::prepare_scene;
use drf_core::trainer::{train, TrainConfig};

fn main() {
    let (h, w) = (64, 64);
    let ir = Grid::new(1, h, w, (0..h * w).map(|i| ((i % 97) as f32) / 97.0).collect()).unwrap();
    let vis = Grid::new(1, h, w, (0..h * w).map(|i| ((i % 31) as f32) / 31.0).collect()).unwrap();
    let scene = prepare_scene(&ir, &vis, 2, 7).unwrap();
    let config = TrainConfig {
        iterations: 10,
        log_every: 1,
        seed: 7,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let result = train(&scene, &config).unwrap();
    let dt = t0.elapsed();
    println!(
        "10 iters (64x64, scale 2): {:?} total, {:?}/iter, total loss {} -> {}",
        dt,
        dt / 10,
        result.log.first().unwrap().total,
        result.log.last().unwrap().total
    );
}
