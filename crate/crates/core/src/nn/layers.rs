use std::sync::RwLock;

use crate::error::Result;
use crate::tensor::{Element, Graph, Mode, Param, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Visits the trainable parameters and batch-norm layers of a network.
///
/// Visiting order is fixed, so parameter lists, initialization draws and
/// checkpoint tables are reproducible.
pub trait Module<T: Element> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));

    fn visit_norms(&self, f: &mut dyn FnMut(&BatchNorm2d<T>));

    fn parameters(&self) -> Vec<Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.clone()));
        out
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit(&mut |p| p.zero_grad());
    }
}

#[derive(Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::zeros(vec![out_ch, in_ch, kernel[0], kernel[1]]),
            ),
            bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(vec![out_ch]))),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = self.bias.as_ref().map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

/// Transposed convolution; weight layout `[C_in, C_out, kh, kw]`.
#[derive(Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::zeros(vec![in_ch, out_ch, kernel, kernel]),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![out_ch])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        g.conv_transpose2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel batch normalization with running statistics.
///
/// Running statistics are buffers, not parameters: they are never shared
/// between linked networks.
#[derive(Debug)]
pub struct BatchNorm2d<T> {
    name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    running: RwLock<RunningStats<T>>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running: RwLock::new(RunningStats {
                mean: vec![T::zero(); channels],
                var: vec![T::one(); channels],
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn running_stats(&self) -> RunningStats<T> {
        self.running.read().expect("running stats lock poisoned").clone()
    }

    pub fn set_running_stats(&self, stats: RunningStats<T>) {
        *self.running.write().expect("running stats lock poisoned") = stats;
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
                let m = T::lit(BN_MOMENTUM);
                let mut rs = self.running.write().expect("running stats lock poisoned");
                for (r, b) in rs.mean.iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * *b;
                }
                for (r, b) in rs.var.iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * *b;
                }
                Ok(y)
            }
            Mode::Eval => {
                let rs = self.running_stats();
                g.batch_norm_eval(x, gamma, beta, &rs.mean, &rs.var, BN_EPS)
            }
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let bn = BatchNorm2d::<f64>::new("bn", 1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 1, 1, 1], vec![1.0, 3.0]).unwrap());
        bn.forward(&mut g, x, Mode::Train).unwrap();
        let rs = bn.running_stats();
        assert!((rs.mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance 2.0
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-12);
        // eval mode does not move the statistics
        bn.forward(&mut g, x, Mode::Eval).unwrap();
        assert_eq!(bn.running_stats(), rs);
    }
}
