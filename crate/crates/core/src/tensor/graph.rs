use rand::Rng;

use crate::error::{Error, Result};

use super::conv::{self, ConvGrads};
use super::{Element, Param, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Training or inference behaviour for batch norm, dropout and noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        invstd: Vec<T>,
        train: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Log(Var),
    ClampMin(Var, T),
    ConcatChannels(Vec<Var>),
    ConcatBatch(Vec<Var>),
    NarrowBatch {
        x: Var,
        start: usize,
    },
    CropPad {
        x: Var,
        off_y: isize,
        off_x: isize,
    },
    Reshape(Var),
    MaskMul {
        x: Var,
        mask: Vec<T>,
    },
    ResizeNearest {
        x: Var,
        src: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Tape of executed operations.
///
/// Nodes are appended as operations run, so the record is in topological
/// order by construction. [`backward`](Graph::backward) walks it in reverse
/// and then adds the gradients of bound [`Param`]s into their accumulators.
#[derive(Debug)]
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(Var, Param<T>)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        None => *slot = Some(delta),
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a = *a + b),
    }
}

/// Reduces a broadcast gradient back onto a scalar operand.
fn unbroadcast<T: Element>(grad: Vec<T>, numel: usize) -> Vec<T> {
    if grad.len() == numel {
        grad
    } else {
        vec![grad.iter().fold(T::zero(), |a, &b| a + b)]
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite { op: op_name, index });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is tracked but not written anywhere else.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Binds a parameter: its current value becomes a leaf, and
    /// [`backward`](Self::backward) adds the leaf's gradient into the parameter.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        let v = self.leaf(p.value(), true);
        self.bindings.push((v, p.clone()));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", out, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = conv::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            "conv_transpose2d",
            out,
            Op::ConvTranspose2d { x, w, b, stride, pad },
            &inputs,
        )
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let out = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::LeakyRelu(alpha) => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid("leaky_relu", format!("slope {alpha} not in (0,1)")));
                }
                let a = T::lit(alpha);
                self.value(x).map(|v| if v > T::zero() { v } else { a * v })
            }
            Activation::Sigmoid => self.value(x).map(sigmoid),
            Activation::Tanh => self.value(x).map(|v| v.tanh()),
        };
        self.push("activation", out, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.activation(Activation::LeakyRelu(alpha), x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Tanh, x)
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<[usize; 4]> {
        let dims = self.value(x).dims4("batch_norm")?;
        for p in [gamma, beta] {
            if self.shape(p) != [dims[1]] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm (affine vs channels)",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        Ok(dims)
    }

    /// Batch statistics normalization over (N, H, W) per channel.
    ///
    /// Returns the output together with the batch mean and the unbiased batch
    /// variance, which the caller folds into its running statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<T>, Vec<T>)> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        let m = n * h * w;
        if m < 2 {
            return Err(Error::invalid(
                "batch_norm",
                format!("train mode needs N*H*W >= 2 per channel, got {m}"),
            ));
        }
        let plane = h * w;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut invstd = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mf = T::lit(m as f64);
        for ch in 0..c {
            let items = (0..n).map(|i| &xv[(i * c + ch) * plane..(i * c + ch + 1) * plane]);
            let mu = items.clone().flatten().fold(T::zero(), |a, &v| a + v) / mf;
            let ss = items.flatten().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu));
            mean[ch] = mu;
            var[ch] = ss / T::lit((m - 1) as f64);
            invstd[ch] = T::one() / (ss / mf + T::lit(eps)).sqrt();
            for i in 0..n {
                let range = (i * c + ch) * plane..(i * c + ch + 1) * plane;
                for k in range {
                    let xh = (xv[k] - mu) * invstd[ch];
                    xhat[k] = xh;
                    out[k] = g[ch] * xh + b[ch];
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            invstd,
            train: true,
        };
        let v = self.push("batch_norm", out, op, &[x, gamma, beta])?;
        Ok((v, mean, var))
    }

    /// Normalization with fixed statistics; differentiable in `x`, `gamma`, `beta`.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let [n, c, h, w] = self.bn_check(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::invalid("batch_norm", "running statistics have the wrong length"));
        }
        let plane = h * w;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for (k, (&xk, (xh, o))) in xv.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (k / plane) % c;
            *xh = (xk - mean[ch]) * invstd[ch];
            *o = g[ch] * *xh + b[ch];
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            invstd,
            train: false,
        };
        self.push("batch_norm", out, op, &[x, gamma, beta])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            Ok(ta.map(|x| f(x, y)))
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    /// `a + b`; either operand may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Product with scalar broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise product of two same-shape tensors.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        self.mul(a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    /// `c - x` for a constant `c`.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Result<Var> {
        let k = self.constant(Tensor::scalar(T::lit(c)));
        self.sub(k, x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / T::lit(t.numel() as f64));
        self.push("mean", out, Op::Mean(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        self.push("abs", out, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push("square", out, Op::Square(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(index) = t.data().iter().position(|&v| v <= T::zero() || v.is_nan()) {
            return Err(Error::LogDomain {
                index,
                value: t.data()[index].as_f64(),
            });
        }
        let out = t.map(|v| v.ln());
        self.push("log", out, Op::Log(x), &[x])
    }

    /// `max(x, min)`; the gradient passes only where `x > min`.
    pub fn clamp_min(&mut self, x: Var, min: f64) -> Result<Var> {
        let m = T::lit(min);
        let out = self.value(x).map(|v| v.max(m));
        self.push("clamp_min", out, Op::ClampMin(x, m), &[x])
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no tensors given"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut channels = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for i in 0..n {
            for &p in parts {
                let t = self.value(p);
                let item = t.shape()[1] * plane;
                data.extend_from_slice(&t.data()[i * item..(i + 1) * item]);
            }
        }
        let out = Tensor::new(vec![n, channels, h, w], data)?;
        self.push("concat_channels", out, Op::ConcatChannels(parts.to_vec()), parts)
    }

    /// Concatenates along the leading (batch) axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::cat_batch(&refs)?;
        self.push("concat_batch", out, Op::ConcatBatch(parts.to_vec()), parts)
    }

    /// Items `start..end` along the leading axis.
    pub fn narrow_batch(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).narrow_batch(start, end)?;
        self.push("narrow_batch", out, Op::NarrowBatch { x, start }, &[x])
    }

    /// Centre-crops or zero-pads the spatial extent to `height × width`.
    pub fn crop_pad(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("crop_pad")?;
        if height == 0 || width == 0 {
            return Err(Error::invalid("crop_pad", "target extent must be positive"));
        }
        let off_y = (height as isize - h as isize).div_euclid(2);
        let off_x = (width as isize - w as isize).div_euclid(2);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * c * height * width];
        for plane in 0..n * c {
            for y in 0..height {
                let sy = y as isize - off_y;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for xo in 0..width {
                    let sx = xo as isize - off_x;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    data[(plane * height + y) * width + xo] = src[(plane * h + sy as usize) * w + sx as usize];
                }
            }
        }
        let out = Tensor::new(vec![n, c, height, width], data)?;
        self.push("crop_pad", out, Op::CropPad { x, off_y, off_x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Inverted dropout: in train mode each element is zeroed with probability
    /// `p` and survivors are scaled by `1/(1-p)`. Identity in eval mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("probability {p} not in [0,1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("dropout", out, Op::MaskMul { x, mask }, &[x])
    }

    /// Nearest-neighbour resampling of the spatial extent (pixel-centre aligned).
    pub fn resize_nearest(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("resize_nearest")?;
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize_nearest", "target extent must be positive"));
        }
        if (h, w) == (height, width) {
            return Ok(x);
        }
        let rows: Vec<usize> = (0..height).map(|y| nearest_src(y, h, height)).collect();
        let cols: Vec<usize> = (0..width).map(|x| nearest_src(x, w, width)).collect();
        let src: Vec<usize> = rows
            .iter()
            .flat_map(|&sy| cols.iter().map(move |&sx| sy * w + sx))
            .collect();
        let t = self.value(x);
        let mut data = Vec::with_capacity(n * c * height * width);
        for plane in t.data().chunks(h * w) {
            data.extend(src.iter().map(|&s| plane[s]));
        }
        let out = Tensor::new(vec![n, c, height, width], data)?;
        self.push("resize_nearest", out, Op::ResizeNearest { x, src }, &[x])
    }

    /// Side of the non-differentiable point of every piecewise-linear
    /// element (relu, leaky relu, abs, clamp_min), in tape order. Central
    /// differences are only valid between evaluations with equal patterns.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (x, at) = match &node.op {
                Op::Act {
                    x,
                    kind: Activation::Relu | Activation::LeakyRelu(_),
                } => (*x, T::zero()),
                Op::Abs(x) => (*x, T::zero()),
                Op::ClampMin(x, m) => (*x, *m),
                _ => continue,
            };
            out.extend(self.value(x).data().iter().map(|&v| v > at));
        }
        out
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Gradients from every path into a node are summed. After the sweep each
    /// bound parameter's accumulator receives `+= ∂root/∂param`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NotScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &gy, &mut grads)?;
            }
            grads[i] = Some(gy);
        }
        for (v, p) in &self.bindings {
            if let Some(g) = &grads[v.0] {
                p.accumulate_grad(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let send = |v: Var, g: Vec<T>, grads: &mut [Option<Vec<T>>]| {
            if needs(v) {
                accumulate(&mut grads[v.0], g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } | Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let need = [needs(*x), needs(*w), b.is_some_and(needs)];
                let backward = if matches!(node.op, Op::Conv2d { .. }) {
                    conv::conv2d_backward
                } else {
                    conv::conv_transpose2d_backward
                };
                let ConvGrads { input, weight, bias } =
                    backward(self.value(*x), self.value(*w), *stride, *pad, gy, need)?;
                if let Some(g) = input {
                    send(*x, g, grads);
                }
                if let Some(g) = weight {
                    send(*w, g, grads);
                }
                if let (Some(b), Some(g)) = (b, bias) {
                    send(*b, g, grads);
                }
            }
            Op::Act { x, kind } => {
                let xs = self.value(*x).data();
                let ys = node.value.data();
                let g: Vec<T> = match *kind {
                    Activation::Relu => xs
                        .iter()
                        .zip(gy)
                        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                        .collect(),
                    Activation::LeakyRelu(alpha) => {
                        let a = T::lit(alpha);
                        xs.iter()
                            .zip(gy)
                            .map(|(&v, &d)| if v > T::zero() { d } else { a * d })
                            .collect()
                    }
                    Activation::Sigmoid => ys.iter().zip(gy).map(|(&y, &d)| d * y * (T::one() - y)).collect(),
                    Activation::Tanh => ys.iter().zip(gy).map(|(&y, &d)| d * (T::one() - y * y)).collect(),
                };
                send(*x, g, grads);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                invstd,
                train,
            } => {
                let [n, c, h, w] = node.value.dims4("batch_norm")?;
                let plane = h * w;
                let gam = self.value(*gamma).data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (k, (&d, &xh)) in gy.iter().zip(xhat).enumerate() {
                    let ch = (k / plane) % c;
                    sum_dy[ch] = sum_dy[ch] + d;
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + d * xh;
                }
                if needs(*x) {
                    let m = T::lit((n * plane) as f64);
                    let dx = gy
                        .iter()
                        .zip(xhat)
                        .enumerate()
                        .map(|(k, (&d, &xh))| {
                            let ch = (k / plane) % c;
                            if *train {
                                gam[ch] * invstd[ch] / m * (m * d - sum_dy[ch] - xh * sum_dy_xhat[ch])
                            } else {
                                d * gam[ch] * invstd[ch]
                            }
                        })
                        .collect();
                    send(*x, dx, grads);
                }
                send(*gamma, sum_dy_xhat, grads);
                send(*beta, sum_dy, grads);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if needs(*a) {
                    send(*a, unbroadcast(gy.to_vec(), self.value(*a).numel()), grads);
                }
                if needs(*b) {
                    let g = if neg {
                        gy.iter().map(|&d| -d).collect()
                    } else {
                        gy.to_vec()
                    };
                    send(*b, unbroadcast(g, self.value(*b).numel()), grads);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let pick = |t: &Tensor<T>, k: usize| if t.is_scalar() { t.data()[0] } else { t.data()[k] };
                if needs(*a) {
                    let g = gy.iter().enumerate().map(|(k, &d)| d * pick(tb, k)).collect();
                    send(*a, unbroadcast(g, ta.numel()), grads);
                }
                if needs(*b) {
                    let g = gy.iter().enumerate().map(|(k, &d)| d * pick(ta, k)).collect();
                    send(*b, unbroadcast(g, tb.numel()), grads);
                }
            }
            Op::Scale(x, c) => send(*x, gy.iter().map(|&d| d * *c).collect(), grads),
            Op::Sum(x) => send(*x, vec![gy[0]; self.value(*x).numel()], grads),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![gy[0] / T::lit(n as f64); n], grads);
            }
            Op::Abs(x) => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &d)| {
                        if v > T::zero() {
                            d
                        } else if v < T::zero() {
                            -d
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                send(*x, g, grads);
            }
            Op::Square(x) => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &d)| d * (v + v))
                    .collect();
                send(*x, g, grads);
            }
            Op::Log(x) => {
                let g = self.value(*x).data().iter().zip(gy).map(|(&v, &d)| d / v).collect();
                send(*x, g, grads);
            }
            Op::ClampMin(x, m) => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &d)| if v > *m { d } else { T::zero() })
                    .collect();
                send(*x, g, grads);
            }
            Op::ConcatChannels(parts) => {
                let [n, channels, h, w] = node.value.dims4("concat_channels")?;
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if needs(p) {
                        let mut g = Vec::with_capacity(n * pc * plane);
                        for i in 0..n {
                            let start = (i * channels + offset) * plane;
                            g.extend_from_slice(&gy[start..start + pc * plane]);
                        }
                        send(p, g, grads);
                    }
                    offset += pc;
                }
            }
            Op::ConcatBatch(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if needs(p) {
                        send(p, gy[start..start + len].to_vec(), grads);
                    }
                    start += len;
                }
            }
            Op::NarrowBatch { x, start } => {
                let t = self.value(*x);
                let item = t.numel() / t.shape()[0];
                let mut g = vec![T::zero(); t.numel()];
                g[start * item..start * item + gy.len()].copy_from_slice(gy);
                send(*x, g, grads);
            }
            Op::CropPad { x, off_y, off_x } => {
                let [n, c, h, w] = self.value(*x).dims4("crop_pad")?;
                let [_, _, height, width] = node.value.dims4("crop_pad")?;
                let mut g = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for sy in 0..h {
                        let y = sy as isize + off_y;
                        if y < 0 || y >= height as isize {
                            continue;
                        }
                        for sx in 0..w {
                            let xo = sx as isize + off_x;
                            if xo < 0 || xo >= width as isize {
                                continue;
                            }
                            g[(plane * h + sy) * w + sx] = gy[(plane * height + y as usize) * width + xo as usize];
                        }
                    }
                }
                send(*x, g, grads);
            }
            Op::Reshape(x) => send(*x, gy.to_vec(), grads),
            Op::MaskMul { x, mask } => send(*x, gy.iter().zip(mask).map(|(&d, &m)| d * m).collect(), grads),
            Op::ResizeNearest { x, src } => {
                let t = self.value(*x);
                let [_, _, h, w] = t.dims4("resize_nearest")?;
                let mut g = vec![T::zero(); t.numel()];
                for (gplane, dplane) in g.chunks_mut(h * w).zip(gy.chunks(src.len())) {
                    for (&s, &d) in src.iter().zip(dplane) {
                        gplane[s] = gplane[s] + d;
                    }
                }
                send(*x, g, grads);
            }
        }
        Ok(())
    }
}

/// Source index for nearest-neighbour resampling with pixel-centre alignment.
pub(crate) fn nearest_src(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
    pos.min(src_len - 1)
}
