//! Dual-path feature-switching encoder-decoder ("ZipperNet").
//!
//! Each path runs five encoder blocks; the pre-downsample activation of
//! each block is that path's *tap*. At odd depths path A's tap is added
//! into path B's tap before B downsamples, at even depths the reverse.
//! The decoder starts from the channel-concatenation of both depth-5
//! outputs; every decoder block upsamples x2 and concatenates both
//! paths' same-resolution taps before its convolutions, so encoder
//! block d feeds decoder block 6-d across the mirror line.

use super::{check_input_dims, BoundParams, Init, Layers, NetKind, NetSpec, ParamStore};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Encoder block: two padded stride-1 3x3 convs, norm, leaky-ReLU, a
/// stride-1 3x3 conv producing the tap, then a stride-2 3x3 conv with
/// norm and leaky-ReLU. Returns (tap, downsampled) with the switch
/// applied between them by the caller.
fn enc_block_names(prefix: &str) -> [String; 6] {
    [
        format!("{prefix}.conv1"),
        format!("{prefix}.conv2"),
        format!("{prefix}.bn1"),
        format!("{prefix}.conv3"),
        format!("{prefix}.conv4"),
        format!("{prefix}.bn2"),
    ]
}

pub(crate) fn build_enc_block(init: &mut Init, prefix: &str, cin: usize, cout: usize) -> Result<()> {
    let [c1, c2, b1, c3, c4, b2] = enc_block_names(prefix);
    init.conv(&c1, cin, cout, 3)?;
    init.conv(&c2, cout, cout, 3)?;
    init.bn(&b1, cout)?;
    init.conv(&c3, cout, cout, 3)?;
    init.conv(&c4, cout, cout, 3)?;
    init.bn(&b2, cout)?;
    Ok(())
}

/// Runs the block up to the tap; the stride-2 half is [`enc_block_down`].
pub(crate) fn enc_block_tap(l: &mut Layers, prefix: &str, x: Var) -> Result<Var> {
    let [c1, c2, b1, c3, _, _] = enc_block_names(prefix);
    let x = l.conv3(&c1, x, 1)?;
    let x = l.conv3(&c2, x, 1)?;
    let x = l.bn(&b1, x)?;
    let x = l.lrelu(x);
    l.conv3(&c3, x, 1)
}

pub(crate) fn enc_block_down(l: &mut Layers, prefix: &str, tap: Var) -> Result<Var> {
    let [_, _, _, _, c4, b2] = enc_block_names(prefix);
    let x = l.conv3(&c4, tap, 2)?;
    let x = l.bn(&b2, x)?;
    Ok(l.lrelu(x))
}

pub(crate) fn build_dec_block(init: &mut Init, prefix: &str, cin: usize, cout: usize) -> Result<()> {
    init.bn(&format!("{prefix}.bn0"), cin)?;
    init.conv(&format!("{prefix}.conv1"), cin, cout, 3)?;
    init.conv(&format!("{prefix}.conv2"), cout, cout, 3)?;
    init.bn(&format!("{prefix}.bn1"), cout)?;
    init.conv(&format!("{prefix}.conv3"), cout, cout, 3)?;
    init.conv(&format!("{prefix}.conv4"), cout, cout, 3)?;
    init.bn(&format!("{prefix}.bn2"), cout)?;
    Ok(())
}

/// Decoder block body after the upsample+skip concatenation.
pub(crate) fn dec_block(l: &mut Layers, prefix: &str, x: Var) -> Result<Var> {
    let x = l.bn(&format!("{prefix}.bn0"), x)?;
    let x = l.conv3(&format!("{prefix}.conv1"), x, 1)?;
    let x = l.conv3(&format!("{prefix}.conv2"), x, 1)?;
    let x = l.bn(&format!("{prefix}.bn1"), x)?;
    let x = l.lrelu(x);
    let x = l.conv3(&format!("{prefix}.conv3"), x, 1)?;
    let x = l.conv3(&format!("{prefix}.conv4"), x, 1)?;
    let x = l.bn(&format!("{prefix}.bn2"), x)?;
    Ok(l.lrelu(x))
}

/// Build the dual-path network's parameters, He-normal seeded.
pub fn build_zippernet(spec: &NetSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    if spec.kind != NetKind::Zipper {
        return Err(Error::arg("build_zippernet requires a zipper spec"));
    }
    let mut init = Init::new(seed);
    let enc = &spec.encoder_channels;
    for path in ["a", "b"] {
        let mut cin = 1;
        for (d, &cout) in enc.iter().enumerate() {
            build_enc_block(&mut init, &format!("enc_{path}{}", d + 1), cin, cout)?;
            cin = cout;
        }
    }
    // Decoder feature starts as the concatenation of both bottleneck
    // outputs; each block then sees both paths' taps appended.
    let mut feat = 2 * enc[4];
    for (d, &cout) in spec.decoder_channels.iter().enumerate() {
        let tap_ch = enc[enc.len() - 1 - d];
        let cin = feat + 2 * tap_ch;
        build_dec_block(&mut init, &format!("dec{}", d + 1), cin, cout)?;
        feat = cout;
    }
    init.conv("head.conv", feat, spec.out_channels, 1)?;
    Ok(init.store)
}

/// Intermediate activations exposed for shape and wiring tests.
pub struct ZipperTrace {
    /// Post-switch pre-downsample activations per depth, path A.
    pub taps_a: Vec<Var>,
    /// Post-switch pre-downsample activations per depth, path B.
    pub taps_b: Vec<Var>,
    /// Per-path encoder outputs at the bottleneck.
    pub enc_out_a: Var,
    pub enc_out_b: Var,
    /// Output of each decoder block, shallowest last.
    pub dec_feats: Vec<Var>,
}

/// Forward pass: two same-shape single-channel inputs in [0,1] with
/// spatial dims divisible by 32; output has the input shape, values in
/// (0,1) from the sigmoid head.
pub fn zippernet_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    in_a: Var,
    in_b: Var,
) -> Result<(Var, ZipperTrace)> {
    check_input_dims(tape.value(in_a), "zippernet input a")?;
    check_input_dims(tape.value(in_b), "zippernet input b")?;
    if !tape.value(in_a).same_shape(tape.value(in_b)) {
        return Err(Error::shape(
            "zippernet inputs",
            tape.value(in_a).shape_string(),
            tape.value(in_b).shape_string(),
        ));
    }

    let mut l = Layers { tape, bound };
    let (mut x_a, mut x_b) = (in_a, in_b);
    let mut taps_a = Vec::with_capacity(5);
    let mut taps_b = Vec::with_capacity(5);
    for d in 1..=5 {
        let tap_a = enc_block_tap(&mut l, &format!("enc_a{d}"), x_a)?;
        let tap_b = enc_block_tap(&mut l, &format!("enc_b{d}"), x_b)?;
        // Feature switching: odd depths push A into B, even depths B into A.
        let (tap_a, tap_b) = if d % 2 == 1 {
            (tap_a, l.tape.add(tap_b, tap_a)?)
        } else {
            (l.tape.add(tap_a, tap_b)?, tap_b)
        };
        taps_a.push(tap_a);
        taps_b.push(tap_b);
        x_a = enc_block_down(&mut l, &format!("enc_a{d}"), tap_a)?;
        x_b = enc_block_down(&mut l, &format!("enc_b{d}"), tap_b)?;
    }

    let mut x = l.tape.concat_channels(&[x_a, x_b])?;
    let mut dec_feats = Vec::with_capacity(5);
    for d in 1..=5 {
        let up = l.tape.bilinear_resize(x, 2.0)?;
        let skip_a = taps_a[5 - d];
        let skip_b = taps_b[5 - d];
        let cat = l.tape.concat_channels(&[up, skip_a, skip_b])?;
        x = dec_block(&mut l, &format!("dec{d}"), cat)?;
        dec_feats.push(x);
    }
    let logits = l.conv1x1("head.conv", x)?;
    let out = l.tape.sigmoid(logits);
    Ok((
        out,
        ZipperTrace {
            taps_a,
            taps_b,
            enc_out_a: x_a,
            enc_out_b: x_b,
            dec_feats,
        },
    ))
}
