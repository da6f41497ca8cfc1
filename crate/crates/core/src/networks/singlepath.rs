//! Single-path variant of the encoder-decoder: identical block recipes
//! minus the cross-path switching. Used for the two lighting generators
//! (one output channel) and the adjusting generator (two channels, of
//! which only the center pixels are consumed).

use super::zipper::{build_dec_block, build_enc_block, dec_block, enc_block_down, enc_block_tap};
use super::{check_input_dims, BoundParams, Init, Layers, NetKind, NetSpec, ParamStore};
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

pub fn build_singlepath(spec: &NetSpec, seed: u64) -> Result<ParamStore> {
    spec.validate()?;
    if spec.kind != NetKind::SinglePath {
        return Err(Error::arg("build_singlepath requires a single_path spec"));
    }
    let mut init = Init::new(seed);
    let enc = &spec.encoder_channels;
    let mut cin = 1;
    for (d, &cout) in enc.iter().enumerate() {
        build_enc_block(&mut init, &format!("enc{}", d + 1), cin, cout)?;
        cin = cout;
    }
    let mut feat = enc[4];
    for (d, &cout) in spec.decoder_channels.iter().enumerate() {
        let tap_ch = enc[enc.len() - 1 - d];
        build_dec_block(&mut init, &format!("dec{}", d + 1), feat + tap_ch, cout)?;
        feat = cout;
    }
    init.conv("head.conv", feat, spec.out_channels, 1)?;
    Ok(init.store)
}

pub struct SinglePathTrace {
    pub taps: Vec<Var>,
    pub enc_out: Var,
    pub dec_feats: Vec<Var>,
}

/// Forward pass; dims divisible by 32, output same spatial size with
/// values in (0,1).
pub fn singlepath_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    input: Var,
) -> Result<(Var, SinglePathTrace)> {
    check_input_dims(tape.value(input), "single-path input")?;
    let mut l = Layers { tape, bound };
    let mut x = input;
    let mut taps = Vec::with_capacity(5);
    for d in 1..=5 {
        let p = format!("enc{d}");
        let tap = enc_block_tap(&mut l, &p, x)?;
        taps.push(tap);
        x = enc_block_down(&mut l, &p, tap)?;
    }
    let enc_out = x;
    let mut dec_feats = Vec::with_capacity(5);
    for d in 1..=5 {
        let up = l.tape.bilinear_resize(x, 2.0)?;
        let cat = l.tape.concat_channels(&[up, taps[5 - d]])?;
        x = dec_block(&mut l, &format!("dec{d}"), cat)?;
        dec_feats.push(x);
    }
    let logits = l.conv1x1("head.conv", x)?;
    let out = l.tape.sigmoid(logits);
    Ok((out, SinglePathTrace { taps, enc_out, dec_feats }))
}

/// Center-pixel lightness weights from the adjusting generator's two
/// output channels, still attached to the tape so gradients reach the
/// generator. Position is (floor(H/2), floor(W/2)).
pub fn extract_alpha(tape: &mut Tape, adjusting_output: Var) -> Result<(Var, Var)> {
    let (c, h, w) = tape.value(adjusting_output).shape();
    if c != 2 {
        return Err(Error::shape(
            "extract_alpha",
            "2-channel map",
            tape.value(adjusting_output).shape_string(),
        ));
    }
    let a1 = tape.select_pixel(adjusting_output, 0, h / 2, w / 2)?;
    let a2 = tape.select_pixel(adjusting_output, 1, h / 2, w / 2)?;
    Ok((a1, a2))
}
