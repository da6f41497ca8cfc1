//! The Retinex-based loss family binding the generated reflectance,
//! illumination maps and lightness weights to the two inputs.
//!
//! All image losses are L1-style per-pixel means. The log-mode Retinex
//! loss works on `log|x + c|` so that near-zero values from randomly
//! initialized generators stay stable; the dot-mode variant keeps the
//! raw `R*L - I` residual and exists for the ablation harness.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetinexMode {
    Log,
    Dot,
}

/// Which loss terms participate in the total; disabled terms contribute
/// exactly zero and are not computed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TermEnable {
    pub retinex: bool,
    pub grad: bool,
    pub l_lock: bool,
    pub a_lock: bool,
    pub mean_lock: bool,
}

impl Default for TermEnable {
    fn default() -> Self {
        TermEnable {
            retinex: true,
            grad: true,
            l_lock: true,
            a_lock: true,
            mean_lock: true,
        }
    }
}

/// The five weighting coefficients, the log bias, and the term switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
    pub lambda4: f32,
    pub lambda5: f32,
    /// Bias added inside `log|x + c|`.
    pub c: f32,
    #[serde(default)]
    pub enable: TermEnable,
    #[serde(default = "default_mode")]
    pub retinex_mode: RetinexMode,
}

fn default_mode() -> RetinexMode {
    RetinexMode::Log
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.2,
            lambda3: 0.25,
            lambda4: 0.25,
            lambda5: 1.0,
            c: 1e-7,
            enable: TermEnable::default(),
            retinex_mode: RetinexMode::Log,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5];
        if ls.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::arg("loss weights must be finite and non-negative"));
        }
        if !(0.1..=0.3).contains(&self.lambda2) {
            return Err(Error::arg(format!(
                "lambda2 must lie in [0.1, 0.3], got {}",
                self.lambda2
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::arg("log bias c must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration record of unweighted term values, the weighted total,
/// and the lightness weights. Serializes to one CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iter: usize,
    pub retinex: f32,
    pub grad: f32,
    pub l_lock: f32,
    pub a_lock: f32,
    pub mean_lock: f32,
    pub total: f32,
    pub alpha1: f32,
    pub alpha2: f32,
}

impl LossReport {
    pub const CSV_HEADER: &'static str =
        "iter,retinex,grad,l_lock,a_lock,mean_lock,total,alpha1,alpha2";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.retinex,
            self.grad,
            self.l_lock,
            self.a_lock,
            self.mean_lock,
            self.total,
            self.alpha1,
            self.alpha2
        )
    }
}

fn check_same_shapes(tape: &Tape, context: &'static str, vars: &[Var]) -> Result<()> {
    let first = tape.value(vars[0]).shape();
    for v in &vars[1..] {
        if tape.value(*v).shape() != first {
            return Err(Error::shape(
                context,
                format!("{}x{}x{}", first.0, first.1, first.2),
                tape.value(*v).shape_string(),
            ));
        }
    }
    Ok(())
}

/// `log|x + c|` as a tape composition.
fn log_biased(tape: &mut Tape, x: Var, c: f32) -> Result<Var> {
    let shifted = tape.scalar_add(x, c);
    let a = tape.abs(shifted);
    tape.log(a)
}

/// Log-mode Retinex loss: per-pixel mean of
/// `|a1*(log|R+c| + log|L1+c|) - log|I1+c|| + |a2*(...L2...) - log|I2+c||`.
pub fn retinex_loss_log(
    tape: &mut Tape,
    r: Var,
    l1: Var,
    l2: Var,
    i1: Var,
    i2: Var,
    alpha1: Var,
    alpha2: Var,
    c: f32,
) -> Result<Var> {
    check_same_shapes(tape, "retinex_loss_log", &[r, l1, l2, i1, i2])?;
    let log_r = log_biased(tape, r, c)?;
    let mut branches = Vec::with_capacity(2);
    for (l, i, alpha) in [(l1, i1, alpha1), (l2, i2, alpha2)] {
        let log_l = log_biased(tape, l, c)?;
        let log_i = log_biased(tape, i, c)?;
        let s = tape.add(log_r, log_l)?;
        let scaled = tape.mul_scalar_grid(s, alpha)?;
        let residual = tape.sub(scaled, log_i)?;
        branches.push(tape.abs(residual));
    }
    let sum = tape.add(branches[0], branches[1])?;
    Ok(tape.mean(sum))
}

/// Dot-mode Retinex loss: per-pixel mean of `|R*L1 - I1| + |R*L2 - I2|`.
pub fn retinex_loss_dot(tape: &mut Tape, r: Var, l1: Var, l2: Var, i1: Var, i2: Var) -> Result<Var> {
    check_same_shapes(tape, "retinex_loss_dot", &[r, l1, l2, i1, i2])?;
    let mut branches = Vec::with_capacity(2);
    for (l, i) in [(l1, i1), (l2, i2)] {
        let prod = tape.mul(r, l)?;
        let residual = tape.sub(prod, i)?;
        branches.push(tape.abs(residual));
    }
    let sum = tape.add(branches[0], branches[1])?;
    Ok(tape.mean(sum))
}

/// High-frequency guidance: per-pixel mean of `|lap(R) - m|` where `m`
/// keeps whichever of `lap(I1)`, `lap(I2)` has the larger magnitude
/// (sign preserved, so edge polarity survives).
pub fn joint_gradient_loss(tape: &mut Tape, r_hr: Var, i1_hr: Var, i2_hr: Var) -> Result<Var> {
    check_same_shapes(tape, "joint_gradient_loss", &[r_hr, i1_hr, i2_hr])?;
    let lap_r = tape.laplacian(r_hr);
    let lap1 = tape.laplacian(i1_hr);
    let lap2 = tape.laplacian(i2_hr);
    let m = tape.abs_max(lap1, lap2)?;
    let residual = tape.sub(lap_r, m)?;
    let a = tape.abs(residual);
    Ok(tape.mean(a))
}

/// Keeps illumination maps near 1: per-pixel mean of `|L1-1| + |L2-1|`.
pub fn l_lock_loss(tape: &mut Tape, l1: Var, l2: Var) -> Result<Var> {
    check_same_shapes(tape, "l_lock_loss", &[l1, l2])?;
    let d1 = tape.scalar_add(l1, -1.0);
    let a1 = tape.abs(d1);
    let d2 = tape.scalar_add(l2, -1.0);
    let a2 = tape.abs(d2);
    let sum = tape.add(a1, a2)?;
    Ok(tape.mean(sum))
}

/// Keeps the lightness weights near 0.5: `|a1 - 0.5| + |a2 - 0.5|`.
pub fn alpha_lock_loss(tape: &mut Tape, alpha1: Var, alpha2: Var) -> Result<Var> {
    let d1 = tape.scalar_add(alpha1, -0.5);
    let a1 = tape.abs(d1);
    let d2 = tape.scalar_add(alpha2, -0.5);
    let a2 = tape.abs(d2);
    tape.add(a1, a2)
}

/// Keeps the fused image's mean lightness near the inputs' average:
/// `|mean(R) - (mean(I1) + mean(I2)) / 2|`. Shape-free, so `R` may be at
/// a different resolution than the inputs.
pub fn mean_lock_loss(tape: &mut Tape, r_hr: Var, i1: Var, i2: Var) -> Result<Var> {
    let m_r = tape.mean(r_hr);
    let m1 = tape.mean(i1);
    let m2 = tape.mean(i2);
    let s = tape.add(m1, m2)?;
    let target = tape.scalar_mul(s, 0.5);
    let d = tape.sub(m_r, target)?;
    Ok(tape.abs(d))
}

/// Scalar term handles feeding the weighted total; `None` for terms a
/// variant does not compute.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub retinex: Option<Var>,
    pub grad: Option<Var>,
    pub l_lock: Option<Var>,
    pub a_lock: Option<Var>,
    pub mean_lock: Option<Var>,
}

/// Unweighted term values plus the weighted total, as plain numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TermValues {
    pub retinex: f32,
    pub grad: f32,
    pub l_lock: f32,
    pub a_lock: f32,
    pub mean_lock: f32,
    pub total: f32,
}

fn add_term(
    tape: &mut Tape,
    total: &mut Option<Var>,
    term: Option<Var>,
    enabled: bool,
    lambda: f32,
) -> Result<f32> {
    let Some(v) = term else { return Ok(0.0) };
    if !tape.value(v).is_scalar() {
        return Err(Error::shape("total_loss", "scalar term", tape.value(v).shape_string()));
    }
    let raw = tape.value(v).data()[0];
    if enabled {
        let weighted = tape.scalar_mul(v, lambda);
        *total = Some(match total.take() {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
    }
    Ok(raw)
}

/// Weighted sum over the enabled, provided terms. Returns the total as
/// a tape scalar plus the unweighted term values for logging.
pub fn total_loss(tape: &mut Tape, terms: &LossTerms, weights: &LossWeights) -> Result<(Var, TermValues)> {
    weights.validate()?;
    let mut values = TermValues::default();
    let mut total: Option<Var> = None;
    let en = &weights.enable;
    values.retinex = add_term(tape, &mut total, terms.retinex, en.retinex, weights.lambda1)?;
    values.grad = add_term(tape, &mut total, terms.grad, en.grad, weights.lambda2)?;
    values.l_lock = add_term(tape, &mut total, terms.l_lock, en.l_lock, weights.lambda3)?;
    values.a_lock = add_term(tape, &mut total, terms.a_lock, en.a_lock, weights.lambda4)?;
    values.mean_lock = add_term(tape, &mut total, terms.mean_lock, en.mean_lock, weights.lambda5)?;
    let total = total.unwrap_or_else(|| tape.leaf(crate::diffcore::Grid::scalar(0.0)));
    values.total = tape.value(total).data()[0];
    Ok((total, values))
}
