//! Network blocks and architectures built on the autodiff engine.

mod discriminator;
mod generator;
mod gru;
mod init;
mod layers;
mod sharing;

pub use discriminator::{DiscBlock, Discriminator, DiscriminatorSpec};
pub use generator::{
    DecoderBlock, EncoderBlock, ForwardOptions, Generator, GeneratorSpec, Noise, DEPTH, KERNEL, LEAKY_SLOPE,
    NOISY_DECODER_BLOCKS,
};
pub use gru::{BoundGru, ConvGruCell};
pub use init::{init_param, init_parameters, INIT_STD};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Module, RunningStats, BN_EPS, BN_MOMENTUM};
pub use sharing::{layers_linked, link_layers, link_shared_parameters, DiscriminatorMode, SharedLayers, SharingSpec};
