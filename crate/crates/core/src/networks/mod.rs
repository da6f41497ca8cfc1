//! The three generator networks and their parameter plumbing.
//!
//! All are encoder-decoder architectures over single-channel grids with
//! five encoder and five decoder blocks and skip concatenations that are
//! mirror-symmetric about the bottleneck. The fusion generator runs two
//! encoder paths that exchange features at alternating depths; the
//! lighting/adjusting generators are the single-path variant.

mod checkpoint;
mod singlepath;
mod zipper;

pub use checkpoint::{load_params, save_params};
pub use singlepath::{build_singlepath, extract_alpha, singlepath_forward, SinglePathTrace};
pub use zipper::{build_zippernet, zippernet_forward, ZipperTrace};

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{Grid, Tape, Var};
use crate::error::{Error, Result};

/// Leaky-ReLU slope used throughout the generators.
pub const LEAKY_SLOPE: f32 = 0.2;
/// Normalization epsilon.
pub const BN_EPS: f32 = 1e-5;
/// Input spatial dims must divide this (five stride-2 halvings).
pub const DIM_MULTIPLE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Zipper,
    SinglePath,
}

/// Architecture description shared by all three networks.
#[derive(Debug, Clone)]
pub struct NetSpec {
    pub kind: NetKind,
    pub depth: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub out_channels: usize,
}

impl NetSpec {
    pub fn zipper() -> Self {
        NetSpec {
            kind: NetKind::Zipper,
            depth: 5,
            encoder_channels: vec![8, 16, 32, 64, 128],
            decoder_channels: vec![128, 64, 32, 16, 8],
            out_channels: 1,
        }
    }

    pub fn lighting() -> Self {
        NetSpec {
            kind: NetKind::SinglePath,
            out_channels: 1,
            ..NetSpec::zipper()
        }
    }

    pub fn adjusting() -> Self {
        NetSpec {
            kind: NetKind::SinglePath,
            out_channels: 2,
            ..NetSpec::zipper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth != 5
            || self.encoder_channels != [8, 16, 32, 64, 128]
            || self.decoder_channels != [128, 64, 32, 16, 8]
        {
            return Err(Error::arg(
                "network spec must use depth 5 with encoder channels [8,16,32,64,128] \
                 and decoder channels [128,64,32,16,8]",
            ));
        }
        let ok = match self.kind {
            NetKind::Zipper => self.out_channels == 1,
            NetKind::SinglePath => self.out_channels == 1 || self.out_channels == 2,
        };
        if !ok {
            return Err(Error::arg(format!(
                "unsupported out_channels {} for {:?}",
                self.out_channels, self.kind
            )));
        }
        Ok(())
    }
}

/// Ordered collection of named learnable grids. Iteration order is the
/// insertion order, which the builders fix, so rebuilding with the same
/// seed reproduces identical stores.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Grid)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut grid: Grid) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        grid.set_requires_grad(true);
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, grid));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, g)| g.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Grid> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn entry(&self, i: usize) -> (&str, &Grid) {
        let (n, g) = &self.entries[i];
        (n, g)
    }

    pub fn entry_mut(&mut self, i: usize) -> (&str, &mut Grid) {
        let (n, g) = &mut self.entries[i];
        (n, g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grid)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    /// Push every parameter onto the tape as a learnable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut map = HashMap::with_capacity(self.entries.len());
        for (name, grid) in &self.entries {
            let (c, h, w) = grid.shape();
            let leaf = Grid::new(c, h, w, grid.data().to_vec()).expect("shape is consistent");
            let v = tape.param(leaf);
            vars.push(v);
            map.insert(name.clone(), v);
        }
        BoundParams { vars, map }
    }
}

/// Tape handles for one store's parameters, aligned with its entry order.
pub struct BoundParams {
    vars: Vec<Var>,
    map: HashMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        match self.map.get(name) {
            Some(v) => *v,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Seeded He-normal initializer shared by the builders.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    pub store: ParamStore,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: ParamStore::new(),
        }
    }

    /// He-normal conv weight (fan-in) plus zero bias.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let fan_in = (cin * k * k) as f32;
        let std = (2.0 / fan_in).sqrt();
        let normal = Normal::new(0.0f32, std).expect("std is finite");
        let data: Vec<f32> = (0..cout * cin * k * k)
            .map(|_| normal.sample(&mut self.rng))
            .collect();
        self.store.add(format!("{name}.weight"), Grid::new(cout * cin, k, k, data)?)?;
        self.store.add(format!("{name}.bias"), Grid::zeros(cout, 1, 1))?;
        Ok(())
    }

    /// Normalization scale (ones) and shift (zeros).
    pub fn bn(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.add(format!("{name}.scale"), Grid::full(c, 1, 1, 1.0))?;
        self.store.add(format!("{name}.shift"), Grid::zeros(c, 1, 1))?;
        Ok(())
    }
}

/// Shared forward helpers, parameterized by a name prefix.
pub(crate) struct Layers<'a> {
    pub tape: &'a mut Tape,
    pub bound: &'a BoundParams,
}

impl<'a> Layers<'a> {
    /// Reflection-padded 3x3 convolution keeping spatial dims (stride 1)
    /// or halving them (stride 2).
    pub fn conv3(&mut self, name: &str, x: Var, stride: usize) -> Result<Var> {
        let p = self.tape.reflection_pad(x, 1)?;
        self.tape.conv2d(
            p,
            self.bound.var(&format!("{name}.weight")),
            self.bound.var(&format!("{name}.bias")),
            stride,
        )
    }

    pub fn conv1x1(&mut self, name: &str, x: Var) -> Result<Var> {
        self.tape.conv2d(
            x,
            self.bound.var(&format!("{name}.weight")),
            self.bound.var(&format!("{name}.bias")),
            1,
        )
    }

    pub fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        self.tape.batch_norm(
            x,
            self.bound.var(&format!("{name}.scale")),
            self.bound.var(&format!("{name}.shift")),
            BN_EPS,
        )
    }

    pub fn lrelu(&mut self, x: Var) -> Var {
        self.tape.leaky_relu(x, LEAKY_SLOPE)
    }
}

pub(crate) fn check_input_dims(grid: &Grid, context: &'static str) -> Result<()> {
    let (c, h, w) = grid.shape();
    if c != 1 {
        return Err(Error::shape(context, "single-channel input", grid.shape_string()));
    }
    if h % DIM_MULTIPLE != 0 || w % DIM_MULTIPLE != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            context,
            format!("spatial dims divisible by {DIM_MULTIPLE}"),
            format!("{h}x{w}"),
        ));
    }
    Ok(())
}
