// timing probe: phase breakdown of one iteration
use std::time::Instant;

use drf_core::diffcore::{Grid, Tape};
use drf_core::losses::LossWeights;
use drf_core::networks::{
    build_singlepath, build_zippernet, extract_alpha, singlepath_forward, zippernet_forward,
    NetSpec,
};
use drf_core::scene::prepare_scene;

fn main() {
    let (h, w) = (64, 64);
    let ir = Grid::new(1, h, w, (0..h * w).map(|i| ((i % 97) as f32) / 97.0).collect()).unwrap();
    let vis = Grid::new(1, h, w, (0..h * w).map(|i| ((i % 31) as f32) / 31.0).collect()).unwrap();
    let scene = prepare_scene(&ir, &vis, 2, 7).unwrap();

    let zipper = build_zippernet(&NetSpec::zipper(), 7).unwrap();
    let light1 = build_singlepath(&NetSpec::lighting(), 8).unwrap();
    let light2 = build_singlepath(&NetSpec::lighting(), 9).unwrap();
    let adjust = build_singlepath(&NetSpec::adjusting(), 10).unwrap();
    let weights = LossWeights::default();

    let mut tape = Tape::new();
    for round in 0..3 {
        tape.clear();
        let t0 = Instant::now();
        let bz = zipper.bind(&mut tape);
        let b1 = light1.bind(&mut tape);
        let b2 = light2.bind(&mut tape);
        let ba = adjust.bind(&mut tape);
        let t_bind = t0.elapsed();

        let t1 = Instant::now();
        let i1_hr = tape.leaf(scene.i1_hr.clone());
        let i2_hr = tape.leaf(scene.i2_hr.clone());
        let (r_hr, _) = zippernet_forward(&mut tape, &bz, i1_hr, i2_hr).unwrap();
        let t_zipper = t1.elapsed();

        let t2 = Instant::now();
        let i1_lr = tape.leaf(scene.i1_lr.clone());
        let i2_lr = tape.leaf(scene.i2_lr.clone());
        let (l1, _) = singlepath_forward(&mut tape, &b1, i1_lr).unwrap();
        let (l2, _) = singlepath_forward(&mut tape, &b2, i2_lr).unwrap();
        let noise = tape.leaf(scene.noise.clone());
        let (amap, _) = singlepath_forward(&mut tape, &ba, noise).unwrap();
        let (a1, a2) = extract_alpha(&mut tape, amap).unwrap();
        let t_single = t2.elapsed();

        let t3 = Instant::now();
        let r_lr = tape.area_downsample(r_hr, 2).unwrap();
        let retinex = drf_core::losses::retinex_loss_log(
            &mut tape, r_lr, l1, l2, i1_lr, i2_lr, a1, a2, weights.c,
        )
        .unwrap();
        let grad = drf_core::losses::joint_gradient_loss(&mut tape, r_hr, i1_hr, i2_hr).unwrap();
        let llock = drf_core::losses::l_lock_loss(&mut tape, l1, l2).unwrap();
        let alock = drf_core::losses::alpha_lock_loss(&mut tape, a1, a2).unwrap();
        let mlock = drf_core::losses::mean_lock_loss(&mut tape, r_hr, i1_lr, i2_lr).unwrap();
        let terms = drf_core::losses::LossTerms {
            retinex: Some(retinex),
            grad: Some(grad),
            l_lock: Some(llock),
            a_lock: Some(alock),
            mean_lock: Some(mlock),
        };
        let (total, _) = drf_core::losses::total_loss(&mut tape, &terms, &weights).unwrap();
        let t_loss = t3.elapsed();

        let t4 = Instant::now();
        tape.backward(total).unwrap();
        let t_back = t4.elapsed();

        println!(
            "round {round}: bind {:?}  zipper_fwd {:?}  singles_fwd {:?}  loss {:?}  backward {:?}  nodes {}",
            t_bind, t_zipper, t_single, t_loss, t_back, tape.len()
        );
    }
}
