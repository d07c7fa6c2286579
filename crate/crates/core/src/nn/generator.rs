use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Mode, Param, Tensor, Var};

use super::gru::ConvGruCell;
use super::init::init_parameters;
use super::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Module};

/// Number of encoder blocks, and of decoder blocks.
pub const DEPTH: usize = 6;
/// Kernel extent of every stride-2 (de)convolution; with padding 1 it halves
/// or doubles even extents exactly.
pub const KERNEL: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Decoder blocks (1-based, counted from the bottleneck) that receive noise.
pub const NOISY_DECODER_BLOCKS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Noise {
    Off,
    /// Inverted dropout with drop probability `p`.
    Dropout(f64),
    /// Additive zero-mean Gaussian noise.
    Gaussian(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub input_size: (usize, usize),
    pub in_channels: usize,
    /// Encoder feature counts; the decoder mirrors them.
    pub block_widths: [usize; DEPTH],
    /// R-FCNN when true: a ConvGRU runs over the bottleneck features.
    pub recurrent: bool,
    /// Noise applied after the first three decoder blocks in train mode.
    pub noise: Noise,
    pub gru_kernel: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            in_channels: 1,
            block_widths: [64, 128, 256, 512, 512, 512],
            recurrent: false,
            noise: Noise::Dropout(0.5),
            gru_kernel: 3,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let m = 1 << DEPTH;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::invalid(
                "generator",
                format!("input size {h}x{w} is not divisible by {m}"),
            ));
        }
        if self.in_channels == 0 || self.block_widths.contains(&0) {
            return Err(Error::invalid("generator", "channel counts must be positive"));
        }
        if self.gru_kernel == 0 {
            return Err(Error::invalid("generator", "ConvGRU kernel must be positive"));
        }
        match self.noise {
            Noise::Dropout(p) if !(0.0..1.0).contains(&p) => Err(Error::invalid(
                "generator",
                format!("dropout probability {p} not in [0,1)"),
            )),
            Noise::Gaussian(s) if !(s >= 0.0 && s.is_finite()) => Err(Error::invalid(
                "generator",
                format!("noise standard deviation {s} must be non-negative"),
            )),
            _ => Ok(()),
        }
    }

    /// Spatial extent of the bottleneck feature map.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        (self.input_size.0 >> DEPTH, self.input_size.1 >> DEPTH)
    }

    /// Output channels of decoder block `j` (1-based).
    fn decoder_out(&self, j: usize) -> usize {
        if j == DEPTH {
            self.block_widths[0]
        } else {
            self.block_widths[DEPTH - 1 - j]
        }
    }

    /// Input channels of decoder block `j` (1-based): the bottleneck for the
    /// first block, otherwise the previous block's output concatenated with the
    /// matching encoder output.
    fn decoder_in(&self, j: usize) -> usize {
        if j == 1 {
            self.block_widths[DEPTH - 1]
        } else {
            2 * self.decoder_out(j - 1)
        }
    }
}

#[derive(Debug)]
pub struct EncoderBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Debug)]
pub struct DecoderBlock<T> {
    pub deconv: ConvTranspose2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Element> DecoderBlock<T> {
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.deconv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }

    pub(crate) fn params(&self) -> Vec<Param<T>> {
        let mut v = Vec::new();
        self.deconv.visit(&mut |p| v.push(p.clone()));
        self.bn.visit(&mut |p| v.push(p.clone()));
        v
    }
}

/// Options that alter a forward pass, used by diagnostics.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the skip connection from this encoder block (1-based) with zeros.
    pub ablate_skip: Option<usize>,
}

/// Encoder/decoder segmentation network (FCNN, or R-FCNN when recurrent).
///
/// Encoder block `i` is conv(stride 2) → BN → ReLU. Decoder block `j` is
/// deconv(stride 2) → BN → LeakyReLU(0.2), with noise after blocks 1–3. The
/// output of encoder block `i` (`i < 6`) is concatenated onto the output of
/// decoder block `6 − i`, forming the input of decoder block `7 − i`. A 3×3
/// convolution and a sigmoid map the last decoder features to one channel.
#[derive(Debug)]
pub struct Generator<T> {
    name: String,
    spec: GeneratorSpec,
    pub encoder: Vec<EncoderBlock<T>>,
    pub gru: Option<ConvGruCell<T>>,
    pub decoder: Vec<DecoderBlock<T>>,
    pub head: Conv2d<T>,
}

impl<T: Element> Generator<T> {
    /// Builds the network and initializes every parameter from `rng`.
    pub fn new<R: Rng + ?Sized>(name: &str, spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let w = spec.block_widths;
        let encoder = (0..DEPTH)
            .map(|i| {
                let cin = if i == 0 { spec.in_channels } else { w[i - 1] };
                EncoderBlock {
                    conv: Conv2d::new(&format!("{name}.enc{}.conv", i + 1), cin, w[i], [KERNEL; 2], 2, 1, true),
                    bn: BatchNorm2d::new(&format!("{name}.enc{}.bn", i + 1), w[i]),
                }
            })
            .collect();
        let gru = spec
            .recurrent
            .then(|| ConvGruCell::new(&format!("{name}.gru"), w[DEPTH - 1], w[DEPTH - 1], spec.gru_kernel));
        let decoder = (1..=DEPTH)
            .map(|j| DecoderBlock {
                deconv: ConvTranspose2d::new(
                    &format!("{name}.dec{j}.deconv"),
                    spec.decoder_in(j),
                    spec.decoder_out(j),
                    KERNEL,
                    2,
                    1,
                ),
                bn: BatchNorm2d::new(&format!("{name}.dec{j}.bn"), spec.decoder_out(j)),
            })
            .collect();
        let head = Conv2d::new(&format!("{name}.head"), w[0], 1, [3, 3], 1, 1, true);
        let net = Self {
            name: name.to_string(),
            spec,
            encoder,
            gru,
            decoder,
            head,
        };
        init_parameters(&net, rng);
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn is_recurrent(&self) -> bool {
        self.gru.is_some()
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<usize> {
        let [n, c, h, w] = g.value(x).dims4("generator")?;
        if c != self.spec.in_channels || (h, w) != self.spec.input_size {
            return Err(Error::ShapeMismatch {
                op: "generator input",
                lhs: vec![n, self.spec.in_channels, self.spec.input_size.0, self.spec.input_size.1],
                rhs: g.shape(x).to_vec(),
            });
        }
        Ok(n)
    }

    /// Runs the encoder; returns the outputs of all six blocks.
    fn encode(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(DEPTH);
        let mut h = x;
        for block in &self.encoder {
            let y = block.conv.forward(g, h)?;
            let y = block.bn.forward(g, y, mode)?;
            h = g.relu(y)?;
            feats.push(h);
        }
        Ok(feats)
    }

    fn noise(&self, g: &mut Graph<T>, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        match self.spec.noise {
            Noise::Off => Ok(x),
            Noise::Dropout(p) => g.dropout(x, p, mode, rng),
            Noise::Gaussian(sigma) => {
                if mode == Mode::Eval || sigma == 0.0 {
                    return Ok(x);
                }
                let dist = Normal::new(0.0, sigma).map_err(|e| Error::invalid("noise", e.to_string()))?;
                let noise = Tensor::from_fn(g.shape(x).to_vec(), |_| T::lit(dist.sample(rng)));
                let n = g.constant(noise);
                g.add(x, n)
            }
        }
    }

    fn decode(
        &self,
        g: &mut Graph<T>,
        bottleneck: Var,
        feats: &[Var],
        mode: Mode,
        rng: &mut dyn RngCore,
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let mut h = bottleneck;
        for (j, block) in self.decoder.iter().enumerate().map(|(k, b)| (k + 1, b)) {
            if j > 1 {
                let enc = DEPTH + 1 - j;
                let mut skip = feats[enc - 1];
                if opts.ablate_skip == Some(enc) {
                    skip = g.constant(Tensor::zeros(g.shape(skip).to_vec()));
                }
                h = g.concat_channels(&[h, skip])?;
            }
            let y = block.deconv.forward(g, h)?;
            let y = block.bn.forward(g, y, mode)?;
            h = g.leaky_relu(y, LEAKY_SLOPE)?;
            if j <= NOISY_DECODER_BLOCKS {
                h = self.noise(g, h, mode, rng)?;
            }
        }
        let logits = self.head.forward(g, h)?;
        g.sigmoid(logits)
    }

    /// Segments each slice of `[N, C, H, W]` independently.
    pub fn fcnn_forward(&self, g: &mut Graph<T>, x: Var, mode: Mode, rng: &mut dyn RngCore) -> Result<Var> {
        self.fcnn_forward_with(g, x, mode, rng, &ForwardOptions::default())
    }

    pub fn fcnn_forward_with(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
        opts: &ForwardOptions,
    ) -> Result<Var> {
        self.check_input(g, x)?;
        let feats = self.encode(g, x, mode)?;
        self.decode(g, feats[DEPTH - 1], &feats, mode, rng, opts)
    }

    /// Segments consecutive base→apex sequences packed along the batch axis.
    ///
    /// `lengths` gives the slice count of each sequence. The encoder runs over
    /// all slices at once, the ConvGRU consumes each sequence's bottleneck
    /// features in order starting from a zero state, and the decoder maps each
    /// hidden state back with that slice's skip connections.
    pub fn rfcnn_forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        lengths: &[usize],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        self.rfcnn_forward_with(g, x, lengths, mode, rng, &ForwardOptions::default())
    }

    pub fn rfcnn_forward_with(
        &self,
        g: &mut Graph<T>,
        x: Var,
        lengths: &[usize],
        mode: Mode,
        rng: &mut dyn RngCore,
        opts: &ForwardOptions,
    ) -> Result<Var> {
        let gru = self
            .gru
            .as_ref()
            .ok_or_else(|| Error::invalid("rfcnn_forward", "generator has no recurrent unit"))?;
        let n = self.check_input(g, x)?;
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(Error::invalid("rfcnn_forward", "empty slice sequence"));
        }
        if lengths.iter().sum::<usize>() != n {
            return Err(Error::invalid(
                "rfcnn_forward",
                format!("sequence lengths {lengths:?} do not cover {n} slices"),
            ));
        }
        let feats = self.encode(g, x, mode)?;
        let bottleneck = feats[DEPTH - 1];
        let bound = gru.bind(g);
        let mut states = Vec::with_capacity(n);
        let mut start = 0;
        for &len in lengths {
            let first = g.narrow_batch(bottleneck, start, start + 1)?;
            let mut h = gru.initial_state(g, first)?;
            for s in start..start + len {
                let xs = g.narrow_batch(bottleneck, s, s + 1)?;
                h = gru.step(g, &bound, xs, h)?;
                states.push(h);
            }
            start += len;
        }
        let hidden = g.concat_batch(&states)?;
        self.decode(g, hidden, &feats, mode, rng, opts)
    }

    /// Dispatches on the architecture: per-slice for FCNN, sequential for R-FCNN.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: Var,
        lengths: &[usize],
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        if self.is_recurrent() {
            self.rfcnn_forward(g, x, lengths, mode, rng)
        } else {
            self.fcnn_forward(g, x, mode, rng)
        }
    }
}

impl<T: Element> Module<T> for Generator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for b in &self.encoder {
            b.conv.visit(f);
            b.bn.visit(f);
        }
        if let Some(gru) = &self.gru {
            gru.visit(f);
        }
        for b in &self.decoder {
            b.deconv.visit(f);
            b.bn.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_norms(&self, f: &mut dyn FnMut(&BatchNorm2d<T>)) {
        for b in &self.encoder {
            f(&b.bn);
        }
        for b in &self.decoder {
            f(&b.bn);
        }
    }
}
