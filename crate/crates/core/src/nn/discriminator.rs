use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Mode, Param, Var};

use super::generator::{KERNEL, LEAKY_SLOPE};
use super::init::init_parameters;
use super::layers::{BatchNorm2d, Conv2d, Module};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub input_size: (usize, usize),
    /// 1 for masks only; 2 when the MRI slice is concatenated as a condition.
    pub in_channels: usize,
    /// Feature counts of the stride-2 blocks.
    pub widths: Vec<usize>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            in_channels: 1,
            widths: vec![64, 128, 256, 512, 512],
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let m = 1usize << self.widths.len();
        if self.widths.is_empty() || self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::invalid("discriminator", "widths and channels must be positive"));
        }
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(
                "discriminator",
                format!("input size {h}x{w} is not divisible by {m}"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct DiscBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

/// Mask discriminator: stride-2 conv → LeakyReLU(0.2) → BN blocks, then an
/// affine map of the flattened features (a convolution spanning the whole
/// remaining extent) and a sigmoid. Output is one probability per item.
#[derive(Debug)]
pub struct Discriminator<T> {
    name: String,
    spec: DiscriminatorSpec,
    pub blocks: Vec<DiscBlock<T>>,
    pub head: Conv2d<T>,
}

impl<T: Element> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let blocks = spec
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let cin = if i == 0 { spec.in_channels } else { spec.widths[i - 1] };
                DiscBlock {
                    conv: Conv2d::new(&format!("{name}.conv{}.conv", i + 1), cin, w, [KERNEL; 2], 2, 1, true),
                    bn: BatchNorm2d::new(&format!("{name}.conv{}.bn", i + 1), w),
                }
            })
            .collect();
        let shrink = 1 << spec.widths.len();
        let kernel = [spec.input_size.0 / shrink, spec.input_size.1 / shrink];
        let last = *spec.widths.last().expect("validated non-empty");
        let head = Conv2d::new(&format!("{name}.fc"), last, 1, kernel, 1, 0, true);
        let net = Self {
            name: name.to_string(),
            spec,
            blocks,
            head,
        };
        init_parameters(&net, rng);
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// `[N, C, H, W]` → `[N]` probabilities in (0, 1).
    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let [n, c, h, w] = g.value(x).dims4("discriminator")?;
        if c != self.spec.in_channels || (h, w) != self.spec.input_size {
            return Err(Error::ShapeMismatch {
                op: "discriminator input",
                lhs: vec![n, self.spec.in_channels, self.spec.input_size.0, self.spec.input_size.1],
                rhs: g.shape(x).to_vec(),
            });
        }
        let mut h = x;
        for b in &self.blocks {
            let y = b.conv.forward(g, h)?;
            let y = g.leaky_relu(y, LEAKY_SLOPE)?;
            h = b.bn.forward(g, y, mode)?;
        }
        let logit = self.head.forward(g, h)?;
        let p = g.sigmoid(logit)?;
        g.reshape(p, vec![n])
    }
}

impl<T: Element> Module<T> for Discriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for b in &self.blocks {
            b.conv.visit(f);
            b.bn.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_norms(&self, f: &mut dyn FnMut(&BatchNorm2d<T>)) {
        for b in &self.blocks {
            f(&b.bn);
        }
    }
}
