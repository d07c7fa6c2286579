use std::ops::{Add, Div};

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::losses::{gan_loss_discriminator, gan_loss_generator, l1_loss, mse_loss, total_loss, LossConfig};
use crate::nn::{
    layers_linked, link_shared_parameters, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Module,
};
use crate::tensor::{Element, Graph, Mode, Tensor, Var};

use super::adam::Adam;
use super::batch::Batch;
use super::config::{GeneratorKind, TrainConfig, Variant};

/// Losses of one optimizer step; the generator terms are those of the
/// global (full field of view) generator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_mse: f64,
    pub g_gan: f64,
    pub g_l1: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_mse, self.g_gan, self.g_l1]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl Add for StepLosses {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            d_loss: self.d_loss + o.d_loss,
            g_mse: self.g_mse + o.g_mse,
            g_gan: self.g_gan + o.g_gan,
            g_l1: self.g_l1 + o.g_l1,
        }
    }
}

impl Div<f64> for StepLosses {
    type Output = Self;

    fn div(self, d: f64) -> Self {
        Self {
            d_loss: self.d_loss / d,
            g_mse: self.g_mse / d,
            g_gan: self.g_gan / d,
            g_l1: self.g_l1 / d,
        }
    }
}

/// The generators and discriminators of one training variant.
///
/// `discs[0]` judges the global stream (and in ROI-GAN-A also the local one);
/// `discs[1]`, when present, judges the local stream.
#[derive(Debug)]
pub struct Networks<T> {
    pub global: Generator<T>,
    pub local: Option<Generator<T>>,
    pub discs: Vec<Discriminator<T>>,
}

pub const GLOBAL_GEN: &str = "global";
pub const LOCAL_GEN: &str = "local";
pub const GLOBAL_DISC: &str = "disc";
pub const LOCAL_DISC: &str = "disc_local";

impl<T: Element> Networks<T> {
    /// Builds, initializes (in a fixed order from `rng`) and links the
    /// networks `cfg` asks for.
    pub fn build<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let gspec = |size| GeneratorSpec {
            input_size: size,
            in_channels: 1,
            block_widths: cfg.widths,
            recurrent: cfg.generator == GeneratorKind::Rfcnn,
            noise: cfg.noise,
            gru_kernel: cfg.gru_kernel,
        };
        let dspec = |size| DiscriminatorSpec {
            input_size: size,
            in_channels: if cfg.disc_conditioned { 2 } else { 1 },
            widths: cfg.disc_widths.clone(),
        };
        let global = Generator::new(GLOBAL_GEN, gspec(cfg.input_size), rng)?;
        let mut local = if cfg.variant.is_roigan() {
            Some(Generator::new(LOCAL_GEN, gspec(cfg.roi_size), rng)?)
        } else {
            None
        };
        let mut discs = Vec::new();
        if cfg.variant.discriminator_count() >= 1 {
            discs.push(Discriminator::new(GLOBAL_DISC, dspec(cfg.input_size), rng)?);
        }
        if cfg.variant.discriminator_count() == 2 {
            discs.push(Discriminator::new(LOCAL_DISC, dspec(cfg.roi_size), rng)?);
        }
        if let Some(local) = &mut local {
            let pair = match discs.as_mut_slice() {
                [a, b] => Some((&*a, b)),
                _ => None,
            };
            link_shared_parameters(&global, local, pair, &cfg.sharing())?;
        }
        Ok(Self { global, local, discs })
    }

    /// Every network with its checkpoint prefix, in a fixed order.
    pub fn modules(&self) -> Vec<&dyn Module<T>> {
        let mut v: Vec<&dyn Module<T>> = vec![&self.global];
        if let Some(l) = &self.local {
            v.push(l);
        }
        v.extend(self.discs.iter().map(|d| d as &dyn Module<T>));
        v
    }
}

/// One optimizer per network, in [`Networks::modules`] order.
#[derive(Debug)]
pub struct Optimizers<T> {
    pub global: Adam<T>,
    pub local: Option<Adam<T>>,
    pub discs: Vec<Adam<T>>,
}

impl<T: Element> Optimizers<T> {
    pub fn new(nets: &Networks<T>, cfg: &TrainConfig) -> Self {
        let make = |m: &dyn Module<T>| Adam::for_module(m, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
        Self {
            global: make(&nets.global),
            local: nets.local.as_ref().map(|l| make(l)),
            discs: nets.discs.iter().map(|d| make(d)).collect(),
        }
    }

    pub fn all(&self) -> Vec<&Adam<T>> {
        let mut v = vec![&self.global];
        v.extend(self.local.as_ref());
        v.extend(self.discs.iter());
        v
    }

    pub fn all_mut(&mut self) -> Vec<&mut Adam<T>> {
        let mut v = vec![&mut self.global];
        v.extend(self.local.as_mut());
        v.extend(self.discs.iter_mut());
        v
    }
}

fn scalar<T: Element>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

/// Discriminator input: the mask, or mask and image stacked as channels.
fn disc_input<T: Element>(g: &mut Graph<T>, mask: Var, image: Var, conditioned: bool) -> Result<Var> {
    if conditioned {
        g.concat_channels(&[mask, image])
    } else {
        Ok(mask)
    }
}

/// Supervised terms of a generator output against its target.
fn supervised<T: Element>(g: &mut Graph<T>, fake: Var, target: Var, loss: &LossConfig) -> Result<(Var, Var)> {
    let mse = mse_loss(g, fake, target)?;
    let l1 = l1_loss(g, fake, target, loss.beta)?;
    Ok((mse, l1))
}

/// Inputs to a discriminator step: real and generated masks with their images.
struct DiscStream<T> {
    real: Tensor<T>,
    fake: Tensor<T>,
    image: Tensor<T>,
    /// Resample everything to this extent first (single shared discriminator).
    resize: Option<(usize, usize)>,
}

/// Sum over `streams` of the discriminator loss, minimized by one update
/// of `opt`. Generated masks enter as constants, so no generator moves.
fn disc_step<T: Element>(
    disc: &Discriminator<T>,
    opt: &mut Adam<T>,
    streams: &[DiscStream<T>],
    conditioned: bool,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut total: Option<Var> = None;
    for s in streams {
        let mut real = g.constant(s.real.clone());
        let mut fake = g.constant(s.fake.clone());
        let mut image = g.constant(s.image.clone());
        if let Some((h, w)) = s.resize {
            real = g.resize_nearest(real, h, w)?;
            fake = g.resize_nearest(fake, h, w)?;
            image = g.resize_nearest(image, h, w)?;
        }
        let real_in = disc_input(&mut g, real, image, conditioned)?;
        let fake_in = disc_input(&mut g, fake, image, conditioned)?;
        let d_real = disc.forward(&mut g, real_in, Mode::Train)?;
        let d_fake = disc.forward(&mut g, fake_in, Mode::Train)?;
        let l = gan_loss_discriminator(&mut g, d_real, d_fake)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("disc_step", "no streams"))?;
    opt.zero_grad();
    g.backward(total)?;
    opt.step()?;
    Ok(scalar(&g, total))
}

/// Generator adversarial term of `fake` (already on `g`) under `disc`.
fn adversarial<T: Element>(
    g: &mut Graph<T>,
    disc: &Discriminator<T>,
    fake: Var,
    image: Var,
    resize: Option<(usize, usize)>,
    cfg: &TrainConfig,
) -> Result<Var> {
    let (mut fake, mut image) = (fake, image);
    if let Some((h, w)) = resize {
        fake = g.resize_nearest(fake, h, w)?;
        image = g.resize_nearest(image, h, w)?;
    }
    let input = disc_input(g, fake, image, cfg.disc_conditioned)?;
    let d = disc.forward(g, input, Mode::Train)?;
    gan_loss_generator(g, d, cfg.loss.saturating_gan)
}

/// Supervised step: minimize MSE (+ L1) with no adversary.
pub fn train_step_plain<T: Element>(
    gen: &Generator<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    opt: &mut Adam<T>,
    rng: &mut dyn RngCore,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let x = g.constant(batch.images.clone());
    let y = g.constant(batch.masks.clone());
    let fake = gen.forward(&mut g, x, &batch.lengths, Mode::Train, rng)?;
    let (mse, l1) = supervised(&mut g, fake, y, &cfg.loss)?;
    let loss = LossConfig {
        use_gan: false,
        ..cfg.loss
    };
    let total = total_loss(&mut g, mse, mse, l1, &loss)?;
    opt.zero_grad();
    g.backward(total)?;
    opt.step()?;
    Ok(StepLosses {
        d_loss: 0.0,
        g_mse: scalar(&g, mse),
        g_gan: 0.0,
        g_l1: scalar(&g, l1),
    })
}

/// Generator update from the total loss on an existing forward pass.
fn gen_update<T: Element>(
    g: &mut Graph<T>,
    fake: Var,
    image: Var,
    target: Var,
    disc: &Discriminator<T>,
    cfg: &TrainConfig,
    opt: &mut Adam<T>,
) -> Result<(f64, f64, f64)> {
    let (mse, l1) = supervised(g, fake, target, &cfg.loss)?;
    let gan = adversarial(g, disc, fake, image, None, cfg)?;
    let total = total_loss(g, mse, gan, l1, &cfg.loss)?;
    opt.zero_grad();
    g.backward(total)?;
    opt.step()?;
    Ok((scalar(g, mse), scalar(g, gan), scalar(g, l1)))
}

/// One adversarial step: the generator runs once; the discriminator is
/// updated on that output (detached) and the ground truth; then the
/// generator is updated on MSE (+ L1) + λ·adversarial under the updated
/// discriminator.
pub fn train_step_gan<T: Element>(
    gen: &Generator<T>,
    disc: &Discriminator<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    opt_g: &mut Adam<T>,
    opt_d: &mut Adam<T>,
    rng: &mut dyn RngCore,
) -> Result<StepLosses> {
    let mut g = Graph::new();
    let x = g.constant(batch.images.clone());
    let y = g.constant(batch.masks.clone());
    let fake = gen.forward(&mut g, x, &batch.lengths, Mode::Train, rng)?;
    let stream = DiscStream {
        real: batch.masks.clone(),
        fake: g.value(fake).clone(),
        image: batch.images.clone(),
        resize: None,
    };
    let d_loss = disc_step(disc, opt_d, &[stream], cfg.disc_conditioned)?;
    let (g_mse, g_gan, g_l1) = gen_update(&mut g, fake, x, y, disc, cfg, opt_g)?;
    Ok(StepLosses {
        d_loss,
        g_mse,
        g_gan,
        g_l1,
    })
}

/// One ROI-GAN step.
///
/// 1. The local generator segments the ROI crops and is updated on its
///    supervised loss; shared decoder blocks thereby change for both
///    generators.
/// 2. The global generator segments the full images.
/// 3. The discriminator(s) are updated on both streams, then the global
///    generator is updated on its total loss and, with `local_gan_term`, the
///    local generator on λ·adversarial of its step-1 output.
///
/// With `roi` absent (or `roi_stream` off) only the global stream runs, which
/// is exactly [`train_step_gan`] for ROI-GAN-A.
pub fn train_step_roigan<T: Element>(
    nets: &Networks<T>,
    opts: &mut Optimizers<T>,
    full: &Batch<T>,
    roi: Option<&Batch<T>>,
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<StepLosses> {
    if !cfg.variant.is_roigan() {
        return Err(Error::invalid(
            "train_step_roigan",
            format!("variant {} is not ROI-GAN", cfg.variant.as_str()),
        ));
    }
    let local = nets
        .local
        .as_ref()
        .ok_or_else(|| Error::invalid("train_step_roigan", "no local generator"))?;
    let opt_local = opts
        .local
        .as_mut()
        .ok_or_else(|| Error::invalid("train_step_roigan", "no local optimizer"))?;
    if !layers_linked(&nets.global, local, &cfg.shared_generator_layers) {
        return Err(Error::invalid(
            "train_step_roigan",
            "local and global generators are not linked",
        ));
    }
    let want = cfg.variant.discriminator_count();
    if nets.discs.len() != want || opts.discs.len() != want {
        return Err(Error::invalid(
            "train_step_roigan",
            format!(
                "{} needs {want} discriminators, got {}",
                cfg.variant.as_str(),
                nets.discs.len()
            ),
        ));
    }
    if cfg.variant == Variant::RoiganC
        && !layers_linked(&nets.discs[0], &nets.discs[1], &cfg.shared_discriminator_layers)
    {
        return Err(Error::invalid("train_step_roigan", "discriminators are not linked"));
    }
    let roi = roi.filter(|_| cfg.roi_stream);

    // Step 1: local generator on the ROI crops.
    let mut local_pass = None;
    if let Some(rb) = roi {
        let mut gl = Graph::new();
        let x = gl.constant(rb.images.clone());
        let y = gl.constant(rb.masks.clone());
        let fake = local.forward(&mut gl, x, &rb.lengths, Mode::Train, rng)?;
        let (mse, l1) = supervised(&mut gl, fake, y, &cfg.loss)?;
        let loss = LossConfig {
            use_gan: false,
            ..cfg.loss
        };
        let total = total_loss(&mut gl, mse, mse, l1, &loss)?;
        opt_local.zero_grad();
        gl.backward(total)?;
        opt_local.step()?;
        local_pass = Some((gl, fake, x, rb));
    }

    // Step 2: global generator on the full images.
    let mut g = Graph::new();
    let x = g.constant(full.images.clone());
    let y = g.constant(full.masks.clone());
    let fake = nets.global.forward(&mut g, x, &full.lengths, Mode::Train, rng)?;

    // Step 3: discriminators, then adversarial updates of the generators.
    let full_size = (full.images.shape()[2], full.images.shape()[3]);
    let global_stream = DiscStream {
        real: full.masks.clone(),
        fake: g.value(fake).clone(),
        image: full.images.clone(),
        resize: None,
    };
    let local_stream = local_pass.as_ref().map(|(gl, lf, _, rb)| DiscStream {
        real: rb.masks.clone(),
        fake: gl.value(*lf).clone(),
        image: rb.images.clone(),
        resize: (want == 1).then_some(full_size),
    });
    let mut d_loss = 0.0;
    match (want, local_stream) {
        (1, local) => {
            let mut streams = vec![global_stream];
            streams.extend(local);
            d_loss += disc_step(&nets.discs[0], &mut opts.discs[0], &streams, cfg.disc_conditioned)?;
        }
        (_, local) => {
            d_loss += disc_step(
                &nets.discs[0],
                &mut opts.discs[0],
                &[global_stream],
                cfg.disc_conditioned,
            )?;
            if let Some(s) = local {
                d_loss += disc_step(&nets.discs[1], &mut opts.discs[1], &[s], cfg.disc_conditioned)?;
            }
        }
    }
    let (g_mse, g_gan, g_l1) = gen_update(&mut g, fake, x, y, &nets.discs[0], cfg, &mut opts.global)?;

    if let Some((mut gl, lf, lx, _)) = local_pass {
        if cfg.local_gan_term && cfg.loss.use_gan {
            let (disc, resize) = if want == 1 {
                (&nets.discs[0], Some(full_size))
            } else {
                (&nets.discs[1], None)
            };
            let gan = adversarial(&mut gl, disc, lf, lx, resize, cfg)?;
            let weighted = gl.scale(gan, cfg.loss.lambda)?;
            opt_local.zero_grad();
            gl.backward(weighted)?;
            opt_local.step()?;
        }
    }
    Ok(StepLosses {
        d_loss,
        g_mse,
        g_gan,
        g_l1,
    })
}
