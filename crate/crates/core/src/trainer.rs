//! Per-scene optimization: builds the four generators, iterates gradient
//! steps on the weighted loss total, and emits the fused outputs.
//!
//! One "epoch" is one gradient step on the single fixed input pair. The
//! fusion network always runs at the upsampled resolution; its output is
//! block-mean downsampled back to the recorded resolution for the
//! Retinex term (an exact identity at scale 1), while the gradient term
//! compares Laplacians at the output resolution and the mean lock is
//! shape-free.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Grid, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{
    alpha_lock_loss, joint_gradient_loss, l_lock_loss, mean_lock_loss, retinex_loss_dot,
    retinex_loss_log, total_loss, LossReport, LossTerms, LossWeights, RetinexMode,
};
use crate::networks::{
    build_singlepath, build_zippernet, extract_alpha, singlepath_forward, zippernet_forward,
    BoundParams, NetSpec, ParamStore,
};
use crate::scene::{crop, Scene};

/// Optimization hyperparameters. Defaults follow the training recipe:
/// learning rate 1e-3 for 10000 single-pair epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub iterations: usize,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub log_every: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            iterations: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 50,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::arg("iterations must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(Error::arg("log_every must be >= 1"));
        }
        self.weights.validate()
    }
}

/// Loss-ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// All terms, log-mode Retinex loss.
    Full,
    /// Adjusting network removed, lightness weights pinned to 1, alpha
    /// lock disabled.
    NoAlpha,
    /// Joint gradient term disabled.
    NoGrad,
    /// All three lock terms disabled.
    NoLocks,
    /// Dot-mode Retinex loss; lightness weights unused.
    DotMode,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoAlpha,
        Variant::NoGrad,
        Variant::NoLocks,
        Variant::DotMode,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAlpha => "no_alpha",
            Variant::NoGrad => "no_grad",
            Variant::NoLocks => "no_locks",
            Variant::DotMode => "dot_mode",
        }
    }

    pub fn parse(name: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::arg(format!("unknown variant {name}; expected one of full, no_alpha, no_grad, no_locks, dot_mode")))
    }

    /// Whether the adjusting network exists in this variant.
    fn uses_adjusting(&self) -> bool {
        matches!(self, Variant::Full | Variant::NoGrad | Variant::NoLocks)
    }

    /// Term switches and Retinex mode for this variant on top of the
    /// configured weights.
    fn apply(&self, base: &LossWeights) -> LossWeights {
        let mut w = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoAlpha => w.enable.a_lock = false,
            Variant::NoGrad => w.enable.grad = false,
            Variant::NoLocks => {
                w.enable.l_lock = false;
                w.enable.a_lock = false;
                w.enable.mean_lock = false;
            }
            Variant::DotMode => {
                w.retinex_mode = RetinexMode::Dot;
                w.enable.a_lock = false;
            }
        }
        w
    }
}

/// Outputs of one training session: the fused image and illumination
/// maps (cropped back to the original dims), the final lightness
/// weights, and the loss log.
#[derive(Debug)]
pub struct FusionResult {
    pub fused: Grid,
    pub lighting1: Grid,
    pub lighting2: Grid,
    pub alpha1: f32,
    pub alpha2: f32,
    pub log: Vec<LossReport>,
    pub elapsed: Duration,
}

/// Adam state for one parameter store; moments persist across steps.
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: store.iter().map(|(_, g)| vec![0.0; g.len()]).collect(),
            v: store.iter().map(|(_, g)| vec![0.0; g.len()]).collect(),
        }
    }

    /// Bias-corrected first/second-moment update applied in place; reads
    /// each parameter's grad buffer.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..self.m.len() {
            let (_, grid) = store.entry_mut(i);
            let (data, grads) = grid.data_and_grad();
            let Some(grads) = grads else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..data.len() {
                let g = grads[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

struct Nets {
    zipper: ParamStore,
    light1: ParamStore,
    light2: ParamStore,
    adjust: Option<ParamStore>,
}

impl Nets {
    fn build(seed: u64, with_adjust: bool) -> Result<Nets> {
        Ok(Nets {
            zipper: build_zippernet(&NetSpec::zipper(), seed)?,
            light1: build_singlepath(&NetSpec::lighting(), seed.wrapping_add(1))?,
            light2: build_singlepath(&NetSpec::lighting(), seed.wrapping_add(2))?,
            adjust: if with_adjust {
                Some(build_singlepath(&NetSpec::adjusting(), seed.wrapping_add(3))?)
            } else {
                None
            },
        })
    }
}

struct ForwardOutputs {
    r_hr: Var,
    l1: Var,
    l2: Var,
    alpha: Option<(Var, Var)>,
}

fn forward_nets(
    tape: &mut Tape,
    scene: &Scene,
    bz: &BoundParams,
    b1: &BoundParams,
    b2: &BoundParams,
    ba: Option<&BoundParams>,
) -> Result<ForwardOutputs> {
    let i1_hr = tape.leaf(scene.i1_hr.clone());
    let i2_hr = tape.leaf(scene.i2_hr.clone());
    let i1_lr = tape.leaf(scene.i1_lr.clone());
    let i2_lr = tape.leaf(scene.i2_lr.clone());
    let (r_hr, _) = zippernet_forward(tape, bz, i1_hr, i2_hr)?;
    let (l1, _) = singlepath_forward(tape, b1, i1_lr)?;
    let (l2, _) = singlepath_forward(tape, b2, i2_lr)?;
    let alpha = match ba {
        Some(ba) => {
            let noise = tape.leaf(scene.noise.clone());
            let (map, _) = singlepath_forward(tape, ba, noise)?;
            Some(extract_alpha(tape, map)?)
        }
        None => None,
    };
    Ok(ForwardOutputs { r_hr, l1, l2, alpha })
}

fn build_loss(
    tape: &mut Tape,
    scene: &Scene,
    out: &ForwardOutputs,
    weights: &LossWeights,
) -> Result<(Var, crate::losses::TermValues)> {
    let i1_hr = tape.leaf(scene.i1_hr.clone());
    let i2_hr = tape.leaf(scene.i2_hr.clone());
    let i1_lr = tape.leaf(scene.i1_lr.clone());
    let i2_lr = tape.leaf(scene.i2_lr.clone());

    // Retinex residuals live at the recorded resolution.
    let r_lr = if scene.scale > 1 {
        tape.area_downsample(out.r_hr, scene.scale)?
    } else {
        out.r_hr
    };
    let (a1, a2) = match out.alpha {
        Some(pair) => pair,
        None => (tape.leaf(Grid::scalar(1.0)), tape.leaf(Grid::scalar(1.0))),
    };

    let mut terms = LossTerms::default();
    if weights.enable.retinex {
        terms.retinex = Some(match weights.retinex_mode {
            RetinexMode::Log => {
                retinex_loss_log(tape, r_lr, out.l1, out.l2, i1_lr, i2_lr, a1, a2, weights.c)?
            }
            RetinexMode::Dot => retinex_loss_dot(tape, r_lr, out.l1, out.l2, i1_lr, i2_lr)?,
        });
    }
    if weights.enable.grad {
        terms.grad = Some(joint_gradient_loss(tape, out.r_hr, i1_hr, i2_hr)?);
    }
    if weights.enable.l_lock {
        terms.l_lock = Some(l_lock_loss(tape, out.l1, out.l2)?);
    }
    if weights.enable.a_lock && out.alpha.is_some() {
        terms.a_lock = Some(alpha_lock_loss(tape, a1, a2)?);
    }
    if weights.enable.mean_lock {
        terms.mean_lock = Some(mean_lock_loss(tape, out.r_hr, i1_lr, i2_lr)?);
    }
    total_loss(tape, &terms, weights)
}

/// Optimize one scene with the full loss family.
pub fn train(scene: &Scene, config: &TrainConfig) -> Result<FusionResult> {
    run_ablation(scene, config, Variant::Full)
}

/// Optimize one scene under the given loss variant.
pub fn run_ablation(scene: &Scene, config: &TrainConfig, variant: Variant) -> Result<FusionResult> {
    config.validate()?;
    let started = Instant::now();
    let weights = variant.apply(&config.weights);
    let mut nets = Nets::build(config.seed, variant.uses_adjusting())?;

    let (lr, b1c, b2c, eps) = (config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut adam_z = Adam::new(&nets.zipper, lr, b1c, b2c, eps);
    let mut adam_1 = Adam::new(&nets.light1, lr, b1c, b2c, eps);
    let mut adam_2 = Adam::new(&nets.light2, lr, b1c, b2c, eps);
    let mut adam_a = nets.adjust.as_ref().map(|s| Adam::new(s, lr, b1c, b2c, eps));

    let mut tape = Tape::new();
    let mut log = Vec::new();
    for iter in 1..=config.iterations {
        tape.clear();
        let bz = nets.zipper.bind(&mut tape);
        let bl1 = nets.light1.bind(&mut tape);
        let bl2 = nets.light2.bind(&mut tape);
        let ba = nets.adjust.as_ref().map(|s| s.bind(&mut tape));

        let out = forward_nets(&mut tape, scene, &bz, &bl1, &bl2, ba.as_ref())?;
        let (total, values) = build_loss(&mut tape, scene, &out, &weights)?;
        if !values.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        tape.backward(total)?;

        copy_grads(&tape, &bz, &mut nets.zipper);
        copy_grads(&tape, &bl1, &mut nets.light1);
        copy_grads(&tape, &bl2, &mut nets.light2);
        if let (Some(ba), Some(adjust)) = (&ba, nets.adjust.as_mut()) {
            copy_grads(&tape, ba, adjust);
        }
        adam_z.step(&mut nets.zipper);
        adam_1.step(&mut nets.light1);
        adam_2.step(&mut nets.light2);
        if let (Some(adam), Some(adjust)) = (adam_a.as_mut(), nets.adjust.as_mut()) {
            adam.step(adjust);
        }
        tape.zero_grads();

        if (iter - 1) % config.log_every == 0 {
            let (a1v, a2v) = alpha_values(&tape, &out);
            log.push(LossReport {
                iter,
                retinex: values.retinex,
                grad: values.grad,
                l_lock: values.l_lock,
                a_lock: values.a_lock,
                mean_lock: values.mean_lock,
                total: values.total,
                alpha1: a1v,
                alpha2: a2v,
            });
        }
    }

    // Final forward with the trained parameters, no gradient pass.
    tape.clear();
    let bz = nets.zipper.bind(&mut tape);
    let bl1 = nets.light1.bind(&mut tape);
    let bl2 = nets.light2.bind(&mut tape);
    let ba = nets.adjust.as_ref().map(|s| s.bind(&mut tape));
    let out = forward_nets(&mut tape, scene, &bz, &bl1, &bl2, ba.as_ref())?;
    let (a1v, a2v) = alpha_values(&tape, &out);

    let fused = crop(
        tape.value(out.r_hr),
        scene.orig_h * scene.scale,
        scene.orig_w * scene.scale,
    )?;
    let lighting1 = crop(tape.value(out.l1), scene.orig_h, scene.orig_w)?;
    let lighting2 = crop(tape.value(out.l2), scene.orig_h, scene.orig_w)?;

    Ok(FusionResult {
        fused,
        lighting1,
        lighting2,
        alpha1: a1v,
        alpha2: a2v,
        log,
        elapsed: started.elapsed(),
    })
}

fn alpha_values(tape: &Tape, out: &ForwardOutputs) -> (f32, f32) {
    match out.alpha {
        Some((a1, a2)) => (tape.value(a1).data()[0], tape.value(a2).data()[0]),
        None => (1.0, 1.0),
    }
}

fn copy_grads(tape: &Tape, bound: &BoundParams, store: &mut ParamStore) {
    for (i, &var) in bound.vars().iter().enumerate() {
        let (_, grid) = store.entry_mut(i);
        let dst = grid.grad_mut();
        match tape.grad(var) {
            Some(src) => dst.copy_from_slice(src),
            None => dst.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::prepare_scene;

    fn toy_scene(h: usize, w: usize, scale: usize) -> Scene {
        let ir = Grid::new(
            1,
            h,
            w,
            (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    let d = ((y as f32 - h as f32 / 2.0).powi(2) + (x as f32 - w as f32 / 2.0).powi(2)).sqrt();
                    (-d * d / 50.0).exp() * 0.8 + 0.1
                })
                .collect(),
        )
        .unwrap();
        let vis = Grid::new(
            1,
            h,
            w,
            (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    0.5 + 0.3 * ((x as f32 / 5.0).sin() * (y as f32 / 7.0).cos())
                })
                .collect(),
        )
        .unwrap();
        prepare_scene(&ir, &vis, scale, 11).unwrap()
    }

    fn quick_config(iters: usize) -> TrainConfig {
        TrainConfig {
            iterations: iters,
            log_every: 1,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_hand_cases() {
        let mut store = ParamStore::new();
        store.add("p", Grid::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&store, 1e-3, 0.9, 0.999, 1e-8);
        // gradient of exactly 1 at t=1 moves the parameter by ~lr
        store.entry_mut(0).1.grad_mut()[0] = 1.0;
        adam.step(&mut store);
        let moved = 1.0 - store.get("p").unwrap().data()[0];
        assert!((moved - 1e-3).abs() < 1e-6, "step {moved}");
        // zero gradient: first moment decays but the parameter barely moves
        // (pure Adam has no weight decay; with m=v=0 it would be exact)
        let mut store2 = ParamStore::new();
        store2.add("p", Grid::scalar(0.5)).unwrap();
        let mut adam2 = Adam::new(&store2, 1e-3, 0.9, 0.999, 1e-8);
        store2.entry_mut(0).1.grad_mut()[0] = 0.0;
        adam2.step(&mut store2);
        assert_eq!(store2.get("p").unwrap().data()[0], 0.5);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            store.add("p", Grid::new(1, 1, 4, vec![0.1, -0.2, 0.3, -0.4]).unwrap()).unwrap();
            let mut adam = Adam::new(&store, 1e-2, 0.9, 0.999, 1e-8);
            for step in 0..20 {
                let g: Vec<f32> = (0..4).map(|j| ((step * 4 + j) as f32 * 0.37).sin()).collect();
                store.entry_mut(0).1.grad_mut().copy_from_slice(&g);
                adam.step(&mut store);
            }
            store.get("p").unwrap().data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn short_training_descends() {
        let scene = toy_scene(32, 32, 1);
        let result = train(&scene, &quick_config(50)).unwrap();
        assert_eq!(result.log.len(), 50);
        let first = result.log.first().unwrap().total;
        let last = result.log.last().unwrap().total;
        assert!(last < first, "no descent: {first} -> {last}");
        // outputs stay in range, weights stay in (0,1)
        assert!(result.fused.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for row in &result.log {
            assert!(row.alpha1 > 0.0 && row.alpha1 < 1.0);
            assert!(row.alpha2 > 0.0 && row.alpha2 < 1.0);
        }
        assert_eq!(result.fused.shape(), (1, 32, 32));
        assert_eq!(result.lighting1.shape(), (1, 32, 32));
    }

    #[test]
    fn training_is_deterministic() {
        let scene = toy_scene(32, 32, 1);
        let a = train(&scene, &quick_config(8)).unwrap();
        let b = train(&scene, &quick_config(8)).unwrap();
        let bits = |g: &Grid| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.fused), bits(&b.fused));
        assert_eq!(a.log, b.log);
        assert_eq!(a.alpha1.to_bits(), b.alpha1.to_bits());
    }

    #[test]
    fn crop_and_scale_contract() {
        // 40x40 pads to 64x64; scale 2 output must be 80x80
        let scene = toy_scene(40, 40, 2);
        let result = train(&scene, &quick_config(2)).unwrap();
        assert_eq!(result.fused.shape(), (1, 80, 80));
        assert_eq!(result.lighting1.shape(), (1, 40, 40));
        assert_eq!(result.lighting2.shape(), (1, 40, 40));
    }

    #[test]
    fn log_row_count_matches_ceil() {
        let scene = toy_scene(32, 32, 1);
        let config = TrainConfig {
            iterations: 10,
            log_every: 3,
            seed: 1,
            ..TrainConfig::default()
        };
        let result = train(&scene, &config).unwrap();
        assert_eq!(result.log.len(), 4); // iters 1, 4, 7, 10
        assert_eq!(result.log.last().unwrap().iter, 10);
    }

    #[test]
    fn ablation_variant_wiring() {
        let scene = toy_scene(32, 32, 1);
        let config = quick_config(2);

        let no_alpha = run_ablation(&scene, &config, Variant::NoAlpha).unwrap();
        assert_eq!(no_alpha.alpha1, 1.0);
        assert_eq!(no_alpha.alpha2, 1.0);
        for row in &no_alpha.log {
            assert_eq!(row.a_lock, 0.0);
        }

        let no_grad = run_ablation(&scene, &config, Variant::NoGrad).unwrap();
        for row in &no_grad.log {
            assert_eq!(row.grad, 0.0);
            let recomposed = row.retinex * config.weights.lambda1
                + row.l_lock * config.weights.lambda3
                + row.a_lock * config.weights.lambda4
                + row.mean_lock * config.weights.lambda5;
            assert!((row.total - recomposed).abs() <= 1e-5);
        }

        let dot = run_ablation(&scene, &config, Variant::DotMode).unwrap();
        assert!(dot.log.iter().all(|r| r.retinex > 0.0));
        assert_eq!(dot.alpha1, 1.0);

        let no_locks = run_ablation(&scene, &config, Variant::NoLocks).unwrap();
        for row in &no_locks.log {
            assert_eq!(row.l_lock, 0.0);
            assert_eq!(row.a_lock, 0.0);
            assert_eq!(row.mean_lock, 0.0);
        }

        // full variant is plain train()
        let full = run_ablation(&scene, &config, Variant::Full).unwrap();
        let plain = train(&scene, &config).unwrap();
        assert_eq!(full.log, plain.log);
    }

    #[test]
    fn divergence_aborts_with_iteration() {
        let scene = toy_scene(32, 32, 1);
        let config = TrainConfig {
            learning_rate: 1e20,
            iterations: 6,
            log_every: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        match train(&scene, &config) {
            Err(Error::NonFiniteLoss { iteration }) => assert!(iteration >= 2),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(Variant::parse("no_grad").unwrap(), Variant::NoGrad);
        assert_eq!(Variant::parse("dot_mode").unwrap(), Variant::DotMode);
        assert!(Variant::parse("bogus").is_err());
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
    }
}
