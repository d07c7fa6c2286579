//! Parameter sharing invariant of the coupled ROI-GAN networks.
//!
//! Each variant trains for a fixed number of steps on one phantom stack.
//! After every step the declared shared layers of the local and global
//! networks must hold bitwise-equal values (read through each network's own
//! handles), and at least one unshared layer must differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{gen_phantom_stack, PhantomConfig};
use crate::error::Result;
use crate::nn::{Noise, SharedLayers};
use crate::tensor::{Element, Param};
use crate::train::{train_step_roigan, Batch, Networks, Optimizers, TrainConfig, Variant};

use super::CheckResult;

pub const SUITE: &str = "sharing";
pub const STEPS: usize = 50;

/// Small networks on 64×64 inputs, enough to exercise every code path.
pub fn check_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        widths: [4, 4, 4, 4, 4, 4],
        disc_widths: vec![4, 4, 4, 4, 4],
        noise: Noise::Dropout(0.5),
        ..TrainConfig::default()
    }
}

fn same_values<T: Element>(a: &[Param<T>], b: &[Param<T>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.value() == y.value())
}

/// Layers `1..=count` of two networks split into (shared equal, unshared differing).
fn compare<T: Element, N: SharedLayers<T>>(a: &N, b: &N, shared: &std::collections::BTreeSet<usize>) -> (bool, bool) {
    let mut shared_equal = true;
    let mut unshared_differ = false;
    for l in 1..=a.layer_count().min(b.layer_count()) {
        let eq = same_values(&a.layer_params(l), &b.layer_params(l));
        if shared.contains(&l) {
            shared_equal &= eq;
        } else {
            unshared_differ |= !eq;
        }
    }
    (shared_equal, unshared_differ)
}

/// Runs `steps` ROI-GAN steps and reports `(all shared equal, first step
/// where every unshared layer set differed)`.
pub fn run_variant(variant: Variant, steps: usize) -> Result<(bool, Option<usize>)> {
    let cfg = check_config(variant);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nets = Networks::<f32>::build(&cfg, &mut rng)?;
    let mut opts = Optimizers::new(&nets, &cfg);
    let phantom = PhantomConfig {
        slices: 8,
        ..PhantomConfig::default()
    };
    let (stack, mask) = gen_phantom_stack(&phantom, 0);
    let pairs = [(&stack, &mask)];
    let full = Batch::from_stacks(&pairs)?;
    let roi = Batch::roi_from_stacks(&pairs, cfg.roi_size, cfg.roi_margin)?;
    let local = nets.local.as_ref().expect("ROI-GAN builds a local generator");
    let mut all_equal = true;
    let mut diverged = None;
    for step in 1..=steps {
        train_step_roigan(&nets, &mut opts, &full, roi.as_ref(), &cfg, &mut rng)?;
        let (eq, differ) = compare(&nets.global, local, &cfg.shared_generator_layers);
        let (mut d_eq, mut d_differ) = (true, true);
        if let [a, b] = nets.discs.as_slice() {
            (d_eq, d_differ) = compare(a, b, &cfg.shared_discriminator_layers);
            if variant != Variant::RoiganC {
                d_eq = true;
            }
        }
        all_equal &= eq && d_eq;
        if diverged.is_none() && differ && d_differ {
            diverged = Some(step);
        }
    }
    Ok((all_equal, diverged))
}

pub fn suite() -> Vec<CheckResult> {
    [Variant::RoiganA, Variant::RoiganB, Variant::RoiganC]
        .into_iter()
        .map(|v| {
            let name = format!("{} shared layers", v.as_str());
            match run_variant(v, STEPS) {
                Ok((equal, diverged)) => CheckResult::new(
                    SUITE,
                    name,
                    equal && diverged.is_some(),
                    format!(
                        "{STEPS} steps: shared layers equal after every step: {equal}; unshared layers differ from step {}",
                        diverged.map_or_else(|| "never".to_string(), |s| s.to_string())
                    ),
                ),
                Err(e) => CheckResult::error(SUITE, name, &e),
            }
        })
        .collect()
}
