use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{Element, Param};

use super::{Discriminator, Generator};

/// Discriminator topology of the coupled GANs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorMode {
    /// One discriminator judges both fields of view (ROI-GAN-A).
    Single,
    /// One discriminator per generator, no shared weights (ROI-GAN-B).
    Independent,
    /// One discriminator per generator, sharing their first layers (ROI-GAN-C).
    Shared,
}

/// Which layers the local and global networks hold in common.
#[derive(Clone, Debug, PartialEq)]
pub struct SharingSpec {
    /// Decoder (up-sampling) blocks, 1-based from the bottleneck.
    pub generator_shared_layers: BTreeSet<usize>,
    pub discriminator_mode: DiscriminatorMode,
    /// Discriminator conv blocks, 1-based; used only in [`DiscriminatorMode::Shared`].
    pub discriminator_shared_layers: BTreeSet<usize>,
}

impl Default for SharingSpec {
    fn default() -> Self {
        Self {
            generator_shared_layers: BTreeSet::from([1, 2, 3]),
            discriminator_mode: DiscriminatorMode::Single,
            discriminator_shared_layers: BTreeSet::from([1, 2, 3]),
        }
    }
}

/// Networks whose numbered layers can be linked to another instance.
pub trait SharedLayers<T: Element> {
    fn layer_count(&self) -> usize;

    fn layer_params(&self, layer: usize) -> Vec<Param<T>>;

    fn layer_params_mut(&mut self, layer: usize) -> Vec<&mut Param<T>>;

    fn layer_name(&self, layer: usize) -> String;
}

impl<T: Element> SharedLayers<T> for Generator<T> {
    fn layer_count(&self) -> usize {
        self.decoder.len()
    }

    fn layer_params(&self, layer: usize) -> Vec<Param<T>> {
        self.decoder[layer - 1].params()
    }

    fn layer_params_mut(&mut self, layer: usize) -> Vec<&mut Param<T>> {
        self.decoder[layer - 1].params_mut()
    }

    fn layer_name(&self, layer: usize) -> String {
        format!("{}.dec{layer}", self.name())
    }
}

impl<T: Element> SharedLayers<T> for Discriminator<T> {
    fn layer_count(&self) -> usize {
        self.blocks.len()
    }

    fn layer_params(&self, layer: usize) -> Vec<Param<T>> {
        let mut v = Vec::new();
        let b = &self.blocks[layer - 1];
        b.conv.visit(&mut |p| v.push(p.clone()));
        b.bn.visit(&mut |p| v.push(p.clone()));
        v
    }

    fn layer_params_mut(&mut self, layer: usize) -> Vec<&mut Param<T>> {
        let b = &mut self.blocks[layer - 1];
        let mut v = b.conv.params_mut();
        v.extend(b.bn.params_mut());
        v
    }

    fn layer_name(&self, layer: usize) -> String {
        format!("{}.conv{layer}", self.name())
    }
}

fn check_layers<T: Element, N: SharedLayers<T>>(net: &N, layers: &BTreeSet<usize>) -> Result<()> {
    match layers.iter().find(|&&l| l == 0 || l > net.layer_count()) {
        Some(l) => Err(Error::invalid(
            "link_shared_parameters",
            format!("layer {l} does not exist (1..={})", net.layer_count()),
        )),
        None => Ok(()),
    }
}

/// Points the listed layers of `b` at the parameter storage of `a`.
///
/// Afterwards both networks read and write one value and one gradient
/// accumulator per shared parameter. Shapes are checked for every layer
/// before anything is relinked.
pub fn link_layers<T: Element, N: SharedLayers<T>>(a: &N, b: &mut N, layers: &BTreeSet<usize>) -> Result<()> {
    check_layers(a, layers)?;
    check_layers(b, layers)?;
    for &l in layers {
        let pa = a.layer_params(l);
        let pb = b.layer_params(l);
        let mismatch = pa.len() != pb.len() || pa.iter().zip(&pb).any(|(x, y)| x.shape() != y.shape());
        if mismatch {
            return Err(Error::SharingShape {
                layer: b.layer_name(l),
                lhs: pa.iter().flat_map(|p| p.shape()).collect(),
                rhs: pb.iter().flat_map(|p| p.shape()).collect(),
            });
        }
    }
    for &l in layers {
        let pa = a.layer_params(l);
        for (dst, src) in b.layer_params_mut(l).into_iter().zip(&pa) {
            dst.alias(src);
        }
    }
    Ok(())
}

/// True when every listed layer of `a` and `b` resolves to common storage.
pub fn layers_linked<T: Element, N: SharedLayers<T>>(a: &N, b: &N, layers: &BTreeSet<usize>) -> bool {
    layers.iter().all(|&l| {
        l >= 1
            && l <= a.layer_count()
            && l <= b.layer_count()
            && a.layer_params(l)
                .iter()
                .zip(b.layer_params(l).iter())
                .all(|(x, y)| x.shares_storage_with(y))
    })
}

/// Links the generators' decoder blocks, and in [`DiscriminatorMode::Shared`]
/// the discriminators' conv blocks.
pub fn link_shared_parameters<T: Element>(
    global_gen: &Generator<T>,
    local_gen: &mut Generator<T>,
    discriminators: Option<(&Discriminator<T>, &mut Discriminator<T>)>,
    spec: &SharingSpec,
) -> Result<()> {
    link_layers(global_gen, local_gen, &spec.generator_shared_layers)?;
    if spec.discriminator_mode == DiscriminatorMode::Shared {
        let (da, db) = discriminators.ok_or_else(|| {
            Error::invalid(
                "link_shared_parameters",
                "shared discriminator mode needs two discriminators",
            )
        })?;
        link_layers(da, db, &spec.discriminator_shared_layers)?;
    }
    Ok(())
}
