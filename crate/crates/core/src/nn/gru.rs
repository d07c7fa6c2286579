use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Param, Tensor, Var};

use super::layers::Module;
use super::BatchNorm2d;

/// Convolutional GRU cell.
///
/// ```text
/// r = σ(W_hr * h + W_xr * x + b_r)
/// z = σ(W_hz * h + W_xz * x + b_z)
/// ĥ = tanh(W_h * (r ⊙ h) + W_x * x + b)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
///
/// `*` is a stride-1 convolution that preserves the spatial extent; `⊙` is the
/// elementwise product.
#[derive(Debug)]
pub struct ConvGruCell<T> {
    pub w_hr: Param<T>,
    pub w_xr: Param<T>,
    pub b_r: Param<T>,
    pub w_hz: Param<T>,
    pub w_xz: Param<T>,
    pub b_z: Param<T>,
    pub w_h: Param<T>,
    pub w_x: Param<T>,
    pub b: Param<T>,
    kernel: usize,
    hidden: usize,
    input: usize,
}

/// Cell parameters bound to one graph, so every step of a sequence reuses
/// the same leaves.
#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    w_hr: Var,
    w_xr: Var,
    b_r: Var,
    w_hz: Var,
    w_xz: Var,
    b_z: Var,
    w_h: Var,
    w_x: Var,
    b: Var,
}

impl<T: Element> ConvGruCell<T> {
    pub fn new(name: &str, input_channels: usize, hidden_channels: usize, kernel: usize) -> Self {
        let w = |tag: &str, cin: usize| {
            Param::new(
                format!("{name}.{tag}.weight"),
                Tensor::zeros(vec![hidden_channels, cin, kernel, kernel]),
            )
        };
        let b = |tag: &str| Param::new(format!("{name}.{tag}.bias"), Tensor::zeros(vec![hidden_channels]));
        Self {
            w_hr: w("hr", hidden_channels),
            w_xr: w("xr", input_channels),
            b_r: b("r"),
            w_hz: w("hz", hidden_channels),
            w_xz: w("xz", input_channels),
            b_z: b("z"),
            w_h: w("h", hidden_channels),
            w_x: w("x", input_channels),
            b: b("candidate"),
            kernel,
            hidden: hidden_channels,
            input: input_channels,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundGru {
        BoundGru {
            w_hr: g.param(&self.w_hr),
            w_xr: g.param(&self.w_xr),
            b_r: g.param(&self.b_r),
            w_hz: g.param(&self.w_hz),
            w_xz: g.param(&self.w_xz),
            b_z: g.param(&self.b_z),
            w_h: g.param(&self.w_h),
            w_x: g.param(&self.w_x),
            b: g.param(&self.b),
        }
    }

    /// Zero initial hidden state matching `x`'s batch and spatial extent.
    pub fn initial_state(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let [n, _, h, w] = g.value(x).dims4("conv_gru")?;
        Ok(g.constant(Tensor::zeros(vec![n, self.hidden, h, w])))
    }

    /// Same-extent convolution; even kernels are padded by `k/2` and cropped back.
    fn conv_same(&self, g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [_, _, h, wd] = g.value(x).dims4("conv_gru")?;
        let y = g.conv2d(x, w, b, 1, self.kernel / 2)?;
        if self.kernel.is_multiple_of(2) {
            g.crop_pad(y, h, wd)
        } else {
            Ok(y)
        }
    }

    pub fn step(&self, g: &mut Graph<T>, p: &BoundGru, x: Var, h_prev: Var) -> Result<Var> {
        let [xn, xc, xh, xw] = g.value(x).dims4("conv_gru")?;
        let [hn, hc, hh, hw] = g.value(h_prev).dims4("conv_gru")?;
        if (xn, xh, xw) != (hn, hh, hw) || xc != self.input || hc != self.hidden {
            return Err(Error::ShapeMismatch {
                op: "conv_gru_step (input vs hidden state)",
                lhs: g.shape(x).to_vec(),
                rhs: g.shape(h_prev).to_vec(),
            });
        }
        let gate = |g: &mut Graph<T>, wh: Var, wx: Var, b: Var| -> Result<Var> {
            let a = self.conv_same(g, h_prev, wh, None)?;
            let c = self.conv_same(g, x, wx, Some(b))?;
            let s = g.add(a, c)?;
            g.sigmoid(s)
        };
        let r = gate(g, p.w_hr, p.w_xr, p.b_r)?;
        let z = gate(g, p.w_hz, p.w_xz, p.b_z)?;
        let rh = g.hadamard(r, h_prev)?;
        let a = self.conv_same(g, rh, p.w_h, None)?;
        let c = self.conv_same(g, x, p.w_x, Some(p.b))?;
        let pre = g.add(a, c)?;
        let candidate = g.tanh(pre)?;
        let keep = g.rsub_scalar(1.0, z)?;
        let old = g.hadamard(keep, h_prev)?;
        let new = g.hadamard(z, candidate)?;
        g.add(old, new)
    }
}

impl<T: Element> Module<T> for ConvGruCell<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for p in [
            &self.w_hr, &self.w_xr, &self.b_r, &self.w_hz, &self.w_xz, &self.b_z, &self.w_h, &self.w_x, &self.b,
        ] {
            f(p);
        }
    }

    fn visit_norms(&self, _f: &mut dyn FnMut(&BatchNorm2d<T>)) {}
}
