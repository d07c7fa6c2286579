use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Element, Param};

pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adaptive-moment optimizer over a fixed parameter list.
///
/// Parameters are deduplicated by storage, so a layer reachable twice through
/// sharing is stepped once per call.
#[derive(Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    params: Vec<Param<T>>,
    pub state: Vec<Moments<T>>,
    pub step: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(params: Vec<Param<T>>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let mut seen = HashSet::new();
        let params: Vec<Param<T>> = params.into_iter().filter(|p| seen.insert(p.storage_id())).collect();
        let state = params
            .iter()
            .map(|p| Moments {
                name: p.name().to_string(),
                m: vec![T::zero(); p.numel()],
                v: vec![T::zero(); p.numel()],
            })
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            params,
            state,
            step: 0,
        }
    }

    pub fn for_module<M: Module<T> + ?Sized>(net: &M, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self::new(net.parameters(), lr, beta1, beta2)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Param::zero_grad);
    }

    /// One bias-corrected update from the accumulated gradients.
    ///
    /// Every gradient is checked before anything is written, so a NaN leaves
    /// all parameters and moments untouched.
    pub fn step(&mut self) -> Result<()> {
        for p in &self.params {
            let cell = p.read();
            if cell.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name().to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(ADAM_EPS));
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::lit(self.lr);
        for (p, s) in self.params.iter().zip(&mut self.state) {
            let mut cell = p.write();
            let cell = &mut *cell;
            let value = cell.value.data_mut();
            for (((w, &g), m), v) in value.iter_mut().zip(&cell.grad).zip(&mut s.m).zip(&mut s.v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
