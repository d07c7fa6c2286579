use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::stack::{MaskStack, SliceStack};

/// Extents must be divisible by this (six stride-2 stages).
pub const SIZE_MULTIPLE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub n_stacks: usize,
    /// (H, W).
    pub size: (usize, usize),
    pub slices: usize,
    pub seed: u64,
    /// Pixel spacing in mm as (row, column).
    pub spacing: (f32, f32),
    pub noise_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_stacks: 10,
            size: (64, 64),
            slices: 10,
            seed: 0,
            spacing: (2.0, 2.0),
            noise_sigma: 0.05,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::Config(format!(
                "phantom size {h}x{w} must be a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        if !(8..=16).contains(&self.slices) {
            return Err(Error::Config(format!(
                "slices per stack must be in 8..=16, got {}",
                self.slices
            )));
        }
        if self.n_stacks == 0 {
            return Err(Error::Config("at least one stack is required".into()));
        }
        if !(self.spacing.0 > 0.0 && self.spacing.1 > 0.0) {
            return Err(Error::Config("pixel spacing must be positive".into()));
        }
        Ok(())
    }
}

/// Identifier of the `index`-th generated stack.
pub fn stack_id(index: usize) -> String {
    format!("stack_{index:04}")
}

/// Generates `cfg.n_stacks` phantoms; stack `i` is drawn from seed `cfg.seed + i`.
pub fn gen_phantom_dataset(cfg: &PhantomConfig) -> Result<Vec<(SliceStack, MaskStack)>> {
    cfg.validate()?;
    Ok((0..cfg.n_stacks).map(|i| gen_phantom_stack(cfg, i)).collect())
}

struct Anatomy {
    lv: (f64, f64),
    lv_radius: f64,
    wall: f64,
    /// RV centre relative to the LV centre.
    rv_offset: (f64, f64),
    rv_axes: (f64, f64),
    rv_angle: f64,
    apex_scale: f64,
    texture: [f64; 4],
}

/// One base→apex stack: the RV is an ellipse with the LV disk (plus its
/// wall) cut out, which gives a crescent. All geometry shrinks towards the
/// apex, where the ellipse also becomes rounder.
pub fn gen_phantom_stack(cfg: &PhantomConfig, index: usize) -> (SliceStack, MaskStack) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let (h, w) = cfg.size;
    let m = h.min(w) as f64;
    let jitter = |rng: &mut ChaCha8Rng, a: f64| rng.random_range(-a..a);
    let a = Anatomy {
        lv: (
            w as f64 / 2.0 + 0.08 * m + jitter(&mut rng, 0.05) * m,
            h as f64 / 2.0 + jitter(&mut rng, 0.05) * m,
        ),
        lv_radius: 0.14 * m * rng.random_range(0.9..1.1),
        wall: 0.035 * m,
        rv_offset: (-0.17 * m, jitter(&mut rng, 0.03) * m),
        rv_axes: (
            0.26 * m * rng.random_range(0.9..1.1),
            0.20 * m * rng.random_range(0.9..1.1),
        ),
        rv_angle: jitter(&mut rng, 0.3),
        apex_scale: rng.random_range(0.45..0.55),
        texture: [
            rng.random_range(0.15..0.35),
            rng.random_range(0.15..0.35),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        ],
    };
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
    let drift = Normal::new(0.0, 0.01 * m).expect("valid sigma");
    let s_count = cfg.slices;
    let mut images = Vec::with_capacity(s_count * h * w);
    let mut masks = Vec::with_capacity(s_count * h * w);
    let mut shift = (0.0, 0.0);
    for s in 0..s_count {
        let t = s as f64 / (s_count - 1) as f64;
        let scale = 1.0 - (1.0 - a.apex_scale) * t;
        let round = 0.7 * t;
        let g = (a.rv_axes.0 * a.rv_axes.1).sqrt();
        let ax = scale * (a.rv_axes.0 + round * (g - a.rv_axes.0));
        let ay = scale * (a.rv_axes.1 + round * (g - a.rv_axes.1));
        let lv = (a.lv.0 + shift.0, a.lv.1 + shift.1);
        let r_lv = a.lv_radius * scale;
        let r_wall = r_lv + a.wall;
        let rv = (lv.0 + scale * a.rv_offset.0, lv.1 + scale * a.rv_offset.1);
        let (sin, cos) = a.rv_angle.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d_lv = ((px - lv.0).powi(2) + (py - lv.1).powi(2)).sqrt();
                let (dx, dy) = (px - rv.0, py - rv.1);
                let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let in_ellipse = (u / ax).powi(2) + (v / ay).powi(2) <= 1.0;
                let in_rv = in_ellipse && d_lv > r_wall;
                let tex = (a.texture[0] * px + a.texture[2]).sin() * (a.texture[1] * py + a.texture[3]).cos();
                let base = if in_rv {
                    0.75 + 0.05 * tex
                } else if d_lv <= r_lv {
                    0.8
                } else if d_lv <= r_wall {
                    0.35
                } else {
                    0.25 + 0.08 * tex
                };
                let value = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                images.push(value as f32);
                masks.push(u8::from(in_rv));
            }
        }
        shift.0 += drift.sample(&mut rng);
        shift.1 += drift.sample(&mut rng);
    }
    let id = stack_id(index);
    let stack = SliceStack {
        id: id.clone(),
        images: Tensor::new(vec![s_count, 1, h, w], images).expect("sized above"),
        spacing: cfg.spacing,
    };
    let mask = MaskStack {
        id,
        dims: (s_count, h, w),
        data: masks,
    };
    (stack, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        let cfg = PhantomConfig {
            size: (100, 100),
            ..Default::default()
        };
        assert!(gen_phantom_dataset(&cfg).is_err());
        let cfg = PhantomConfig {
            slices: 4,
            ..Default::default()
        };
        assert!(gen_phantom_dataset(&cfg).is_err());
    }

    #[test]
    fn deterministic_and_in_range() {
        let cfg = PhantomConfig {
            n_stacks: 2,
            ..Default::default()
        };
        let a = gen_phantom_dataset(&cfg).unwrap();
        let b = gen_phantom_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        for (s, m) in &a {
            assert!(s.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(m.data.iter().all(|&v| v <= 1));
            assert!((0..m.len()).all(|i| m.area(i) > 0));
        }
    }

    #[test]
    fn area_shrinks_towards_apex() {
        let cfg = PhantomConfig {
            n_stacks: 100,
            seed: 11,
            ..Default::default()
        };
        let data = gen_phantom_dataset(&cfg).unwrap();
        let monotone = data
            .iter()
            .filter(|(_, m)| (1..m.len()).all(|s| m.area(s) < m.area(s - 1)))
            .count();
        assert!(monotone >= 90, "{monotone} of 100 stacks strictly shrink");
    }
}
