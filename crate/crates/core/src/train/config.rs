use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::{DiscriminatorMode, Noise, SharingSpec, DEPTH};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Supervised only.
    Plain,
    /// One generator, one discriminator.
    Gan,
    RoiganA,
    RoiganB,
    RoiganC,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Plain,
        Variant::Gan,
        Variant::RoiganA,
        Variant::RoiganB,
        Variant::RoiganC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Gan => "gan",
            Variant::RoiganA => "roigan_a",
            Variant::RoiganB => "roigan_b",
            Variant::RoiganC => "roigan_c",
        }
    }

    pub fn is_roigan(self) -> bool {
        matches!(self, Variant::RoiganA | Variant::RoiganB | Variant::RoiganC)
    }

    pub fn discriminator_count(self) -> usize {
        match self {
            Variant::Plain => 0,
            Variant::Gan | Variant::RoiganA => 1,
            Variant::RoiganB | Variant::RoiganC => 2,
        }
    }

    pub fn discriminator_mode(self) -> DiscriminatorMode {
        match self {
            Variant::RoiganB => DiscriminatorMode::Independent,
            Variant::RoiganC => DiscriminatorMode::Shared,
            _ => DiscriminatorMode::Single,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant `{s}` (plain, gan, roigan_a, roigan_b, roigan_c)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    Fcnn,
    Rfcnn,
}

impl GeneratorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorKind::Fcnn => "fcnn",
            GeneratorKind::Rfcnn => "rfcnn",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcnn" => Ok(GeneratorKind::Fcnn),
            "rfcnn" => Ok(GeneratorKind::Rfcnn),
            _ => Err(Error::Config(format!("unknown generator `{s}` (fcnn, rfcnn)"))),
        }
    }
}

/// Everything that determines a training run, as a flat key=value set.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub generator: GeneratorKind,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    pub batch_stacks: usize,
    pub seed: u64,
    /// Full-image extent (H, W) the networks are built for.
    pub input_size: (usize, usize),
    /// Extent ROI crops are resampled to for the local generator.
    pub roi_size: (usize, usize),
    pub roi_margin: usize,
    pub widths: [usize; DEPTH],
    pub disc_widths: Vec<usize>,
    pub noise: Noise,
    pub gru_kernel: usize,
    /// Discriminators see the image next to the mask.
    pub disc_conditioned: bool,
    /// Local generator also receives the adversarial term in ROI-GAN steps.
    pub local_gan_term: bool,
    /// ROI-GAN only: when false the local stream is skipped entirely.
    pub roi_stream: bool,
    pub shared_generator_layers: BTreeSet<usize>,
    pub shared_discriminator_layers: BTreeSet<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sharing = SharingSpec::default();
        Self {
            variant: Variant::Plain,
            generator: GeneratorKind::Fcnn,
            loss: LossConfig::default(),
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            epochs: 10,
            batch_stacks: 1,
            seed: 0,
            input_size: (64, 64),
            roi_size: (64, 64),
            roi_margin: 4,
            widths: [16, 32, 64, 64, 64, 64],
            disc_widths: vec![16, 32, 64, 64, 64],
            noise: Noise::Dropout(0.5),
            gru_kernel: 3,
            disc_conditioned: false,
            local_gan_term: true,
            roi_stream: true,
            shared_generator_layers: sharing.generator_shared_layers,
            shared_discriminator_layers: sharing.discriminator_shared_layers,
        }
    }
}

/// A documented configuration key.
pub struct KeyDoc {
    pub key: &'static str,
    pub help: &'static str,
}

pub const KEYS: &[KeyDoc] = &[
    KeyDoc {
        key: "variant",
        help: "training procedure: plain, gan, roigan_a, roigan_b, roigan_c",
    },
    KeyDoc {
        key: "generator",
        help: "generator architecture: fcnn or rfcnn",
    },
    KeyDoc {
        key: "beta",
        help: "weight of the L1 term",
    },
    KeyDoc {
        key: "lambda",
        help: "weight of the generator adversarial term",
    },
    KeyDoc {
        key: "use_l1",
        help: "add the L1 term to the generator loss",
    },
    KeyDoc {
        key: "use_gan",
        help: "add the adversarial term to the generator loss (ignored by plain)",
    },
    KeyDoc {
        key: "saturating_gan",
        help: "generator minimizes log(1 - D(G(x))) instead of -log D(G(x))",
    },
    KeyDoc {
        key: "learning_rate",
        help: "Adam step size",
    },
    KeyDoc {
        key: "adam_beta1",
        help: "Adam first-moment decay",
    },
    KeyDoc {
        key: "adam_beta2",
        help: "Adam second-moment decay",
    },
    KeyDoc {
        key: "epochs",
        help: "passes over the training split",
    },
    KeyDoc {
        key: "batch_stacks",
        help: "whole stacks per optimizer step",
    },
    KeyDoc {
        key: "seed",
        help: "seed for initialization, shuffling and noise",
    },
    KeyDoc {
        key: "input_size",
        help: "full image extent HxW, multiples of 64",
    },
    KeyDoc {
        key: "roi_size",
        help: "extent ROI crops are resampled to, multiples of 64",
    },
    KeyDoc {
        key: "roi_margin",
        help: "pixels added around the ground-truth bounding box",
    },
    KeyDoc {
        key: "widths",
        help: "six comma-separated encoder widths",
    },
    KeyDoc {
        key: "disc_widths",
        help: "comma-separated discriminator block widths",
    },
    KeyDoc {
        key: "noise",
        help: "decoder noise: off, dropout:P or gaussian:SIGMA",
    },
    KeyDoc {
        key: "gru_kernel",
        help: "ConvGRU kernel extent",
    },
    KeyDoc {
        key: "disc_conditioned",
        help: "discriminators also see the image",
    },
    KeyDoc {
        key: "local_gan_term",
        help: "local generator also gets the adversarial term",
    },
    KeyDoc {
        key: "roi_stream",
        help: "run the local ROI stream in ROI-GAN variants",
    },
    KeyDoc {
        key: "shared_generator_layers",
        help: "decoder blocks shared by local and global generators",
    },
    KeyDoc {
        key: "shared_discriminator_layers",
        help: "discriminator blocks shared in roigan_c",
    },
];

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x)).collect()
}

fn parse_size(key: &str, v: &str) -> Result<(usize, usize)> {
    let (h, w) = v
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("`{key}` expects HxW, got `{v}`")))?;
    Ok((parse(key, h)?, parse(key, w)?))
}

fn join<I: IntoIterator<Item = usize>>(v: I) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn check_size(key: &str, (h, w): (usize, usize)) -> Result<()> {
    let m = 1 << DEPTH;
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Config(format!(
            "`{key}` {h}x{w} must be a positive multiple of {m}"
        )));
    }
    Ok(())
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.variant = value.trim().parse()?,
            "generator" => self.generator = value.trim().parse()?,
            "beta" => self.loss.beta = parse(key, value)?,
            "lambda" => self.loss.lambda = parse(key, value)?,
            "use_l1" => self.loss.use_l1 = parse_bool(key, value)?,
            "use_gan" => self.loss.use_gan = parse_bool(key, value)?,
            "saturating_gan" => self.loss.saturating_gan = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_stacks" => self.batch_stacks = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "input_size" => self.input_size = parse_size(key, value)?,
            "roi_size" => self.roi_size = parse_size(key, value)?,
            "roi_margin" => self.roi_margin = parse(key, value)?,
            "widths" => {
                let v = parse_list(key, value)?;
                self.widths = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("`widths` needs exactly {DEPTH} values")))?;
            }
            "disc_widths" => self.disc_widths = parse_list(key, value)?,
            "noise" => {
                let v = value.trim();
                self.noise = match v.split_once(':') {
                    None if v == "off" => Noise::Off,
                    Some(("dropout", p)) => Noise::Dropout(parse(key, p)?),
                    Some(("gaussian", s)) => Noise::Gaussian(parse(key, s)?),
                    _ => {
                        return Err(Error::Config(format!(
                            "invalid noise `{v}` (off, dropout:P, gaussian:SIGMA)"
                        )))
                    }
                };
            }
            "gru_kernel" => self.gru_kernel = parse(key, value)?,
            "disc_conditioned" => self.disc_conditioned = parse_bool(key, value)?,
            "local_gan_term" => self.local_gan_term = parse_bool(key, value)?,
            "roi_stream" => self.roi_stream = parse_bool(key, value)?,
            "shared_generator_layers" => self.shared_generator_layers = parse_list(key, value)?.into_iter().collect(),
            "shared_discriminator_layers" => {
                self.shared_discriminator_layers = parse_list(key, value)?.into_iter().collect()
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let v = match key {
            "variant" => self.variant.as_str().to_string(),
            "generator" => self.generator.as_str().to_string(),
            "beta" => self.loss.beta.to_string(),
            "lambda" => self.loss.lambda.to_string(),
            "use_l1" => self.loss.use_l1.to_string(),
            "use_gan" => self.loss.use_gan.to_string(),
            "saturating_gan" => self.loss.saturating_gan.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_stacks" => self.batch_stacks.to_string(),
            "seed" => self.seed.to_string(),
            "input_size" => format!("{}x{}", self.input_size.0, self.input_size.1),
            "roi_size" => format!("{}x{}", self.roi_size.0, self.roi_size.1),
            "roi_margin" => self.roi_margin.to_string(),
            "widths" => join(self.widths),
            "disc_widths" => join(self.disc_widths.iter().copied()),
            "noise" => match self.noise {
                Noise::Off => "off".to_string(),
                Noise::Dropout(p) => format!("dropout:{p}"),
                Noise::Gaussian(s) => format!("gaussian:{s}"),
            },
            "gru_kernel" => self.gru_kernel.to_string(),
            "disc_conditioned" => self.disc_conditioned.to_string(),
            "local_gan_term" => self.local_gan_term.to_string(),
            "roi_stream" => self.roi_stream.to_string(),
            "shared_generator_layers" => join(self.shared_generator_layers.iter().copied()),
            "shared_discriminator_layers" => join(self.shared_discriminator_layers.iter().copied()),
            _ => return None,
        };
        Some(v)
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key, in table order, one `key=value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{}={}\n", k.key, self.get(k.key).expect("table keys are known")))
            .collect()
    }

    pub fn sharing(&self) -> SharingSpec {
        SharingSpec {
            generator_shared_layers: self.shared_generator_layers.clone(),
            discriminator_mode: self.variant.discriminator_mode(),
            discriminator_shared_layers: self.shared_discriminator_layers.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("`{k}` must be in [0, 1)")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_stacks == 0 {
            return Err(Error::Config("batch_stacks must be at least 1".into()));
        }
        check_size("input_size", self.input_size)?;
        check_size("roi_size", self.roi_size)?;
        if self.widths.contains(&0) || self.disc_widths.is_empty() || self.disc_widths.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        match self.noise {
            Noise::Dropout(p) if !(0.0..1.0).contains(&p) => {
                return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")))
            }
            Noise::Gaussian(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(Error::Config(format!("noise sigma {s} must be non-negative")))
            }
            _ => {}
        }
        if self.gru_kernel == 0 {
            return Err(Error::Config("gru_kernel must be positive".into()));
        }
        if let Some(&l) = self.shared_generator_layers.iter().find(|&&l| l == 0 || l > DEPTH) {
            return Err(Error::Config(format!("shared generator layer {l} not in 1..={DEPTH}")));
        }
        let nd = self.disc_widths.len();
        if let Some(&l) = self.shared_discriminator_layers.iter().find(|&&l| l == 0 || l > nd) {
            return Err(Error::Config(format!("shared discriminator layer {l} not in 1..={nd}")));
        }
        if self.disc_widths.len() > DEPTH {
            return Err(Error::Config(format!("at most {DEPTH} discriminator blocks")));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
