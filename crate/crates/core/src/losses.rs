//! Supervised and adversarial objectives, recorded on a [`Graph`] so they can
//! be differentiated.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Var};

/// Lower bound applied to every log argument.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the L1 term, applied inside [`l1_loss`].
    pub beta: f64,
    /// Weight of the generator adversarial term.
    pub lambda: f64,
    pub use_l1: bool,
    pub use_gan: bool,
    /// Generator minimizes `mean log(1 - D(G(x)))` instead of `-mean log D(G(x))`.
    pub saturating_gan: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 5e-6,
            lambda: 5e-3,
            use_l1: false,
            use_gan: true,
            saturating_gan: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn check_same<T: Element>(g: &Graph<T>, op: &'static str, x: Var, y: Var) -> Result<()> {
    if g.shape(x) != g.shape(y) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(y).to_vec(),
        });
    }
    Ok(())
}

fn check_probabilities<T: Element>(g: &Graph<T>, op: &'static str, p: Var) -> Result<()> {
    let bad = g
        .value(p)
        .data()
        .iter()
        .position(|v| !(*v >= T::zero() && *v <= T::one()));
    match bad {
        Some(i) => Err(Error::invalid(
            op,
            format!("value {} at index {i} is not a probability", g.value(p).data()[i]),
        )),
        None => Ok(()),
    }
}

fn mean_log<T: Element>(g: &mut Graph<T>, p: Var) -> Result<Var> {
    let c = g.clamp_min(p, LOG_EPS)?;
    let l = g.log(c)?;
    g.mean(l)
}

/// `beta * mean |x - y|`.
pub fn l1_loss<T: Element>(g: &mut Graph<T>, x: Var, y: Var, beta: f64) -> Result<Var> {
    check_same(g, "l1_loss", x, y)?;
    let d = g.sub(x, y)?;
    let a = g.abs(d)?;
    let m = g.mean(a)?;
    g.scale(m, beta)
}

/// `mean (x - y)^2`.
pub fn mse_loss<T: Element>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    check_same(g, "mse_loss", x, y)?;
    let d = g.sub(x, y)?;
    let s = g.square(d)?;
    g.mean(s)
}

/// Discriminator objective to minimize: `-mean log d_real - mean log(1 - d_fake)`.
pub fn gan_loss_discriminator<T: Element>(g: &mut Graph<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_probabilities(g, "gan_loss_discriminator", d_real)?;
    check_probabilities(g, "gan_loss_discriminator", d_fake)?;
    let real = mean_log(g, d_real)?;
    let not_fake = g.rsub_scalar(1.0, d_fake)?;
    let fake = mean_log(g, not_fake)?;
    let s = g.add(real, fake)?;
    g.scale(s, -1.0)
}

/// Generator adversarial term. The default is `-mean log d_fake`; with
/// `saturating` it is `mean log(1 - d_fake)`.
pub fn gan_loss_generator<T: Element>(g: &mut Graph<T>, d_fake: Var, saturating: bool) -> Result<Var> {
    check_probabilities(g, "gan_loss_generator", d_fake)?;
    if saturating {
        let not_fake = g.rsub_scalar(1.0, d_fake)?;
        mean_log(g, not_fake)
    } else {
        let l = mean_log(g, d_fake)?;
        g.scale(l, -1.0)
    }
}

/// `mse + lambda * gan + l1`, dropping the terms disabled in `cfg`.
pub fn total_loss<T: Element>(g: &mut Graph<T>, mse: Var, gan: Var, l1: Var, cfg: &LossConfig) -> Result<Var> {
    let mut total = mse;
    if cfg.use_gan {
        let w = g.scale(gan, cfg.lambda)?;
        total = g.add(total, w)?;
    }
    if cfg.use_l1 {
        total = g.add(total, l1)?;
    }
    Ok(total)
}
