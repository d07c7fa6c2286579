use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, Param, Tensor};

use super::Module;

pub const INIT_STD: f64 = 0.02;

/// Standard GAN initialization, keyed on the parameter name suffix:
/// `*.weight ~ N(0, 0.02)`, `*.gamma ~ N(1, 0.02)`, `*.bias` and `*.beta` are zero.
///
/// Draws follow the module's visiting order, so the result is a pure
/// function of the seed.
pub fn init_parameters<T: Element, M: Module<T> + ?Sized, R: Rng + ?Sized>(net: &M, rng: &mut R) {
    net.visit(&mut |p| init_param(p, rng));
}

pub fn init_param<T: Element, R: Rng + ?Sized>(p: &Param<T>, rng: &mut R) {
    let shape = p.shape();
    let mean = if p.name().ends_with(".weight") {
        Some(0.0)
    } else if p.name().ends_with(".gamma") {
        Some(1.0)
    } else {
        None
    };
    let value = match mean {
        Some(mean) => {
            let dist = Normal::new(mean, INIT_STD).expect("valid normal");
            Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
        }
        None => Tensor::zeros(shape),
    };
    p.set_value(value);
}
