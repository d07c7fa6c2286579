use crate::error::{Error, Result};
use crate::tensor::nearest_src;

pub const DEFAULT_ROI_MARGIN: usize = 4;

/// Pixel bounds `[x0, x1) × [y0, y1)`, x along columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RoiBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RoiBox {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..self.y1).contains(&row) && (self.x0..self.x1).contains(&col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interp {
    Nearest,
    Bilinear,
}

/// Tight bounding box of the foreground of an `height × width` mask,
/// grown by `margin` pixels on every side and clamped to the image.
pub fn extract_roi(mask: &[u8], height: usize, width: usize, margin: usize) -> Result<RoiBox> {
    if mask.len() != height * width {
        return Err(Error::invalid("extract_roi", "mask length does not match extent"));
    }
    let mut bounds: Option<RoiBox> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &v)| v != 0) {
        let (r, c) = (i / width, i % width);
        let b = bounds.get_or_insert(RoiBox {
            x0: c,
            y0: r,
            x1: c + 1,
            y1: r + 1,
        });
        b.x0 = b.x0.min(c);
        b.x1 = b.x1.max(c + 1);
        b.y0 = b.y0.min(r);
        b.y1 = b.y1.max(r + 1);
    }
    let b = bounds.ok_or(Error::NoForeground)?;
    Ok(RoiBox {
        x0: b.x0.saturating_sub(margin),
        y0: b.y0.saturating_sub(margin),
        x1: (b.x1 + margin).min(width),
        y1: (b.y1 + margin).min(height),
    })
}

fn check_box(op: &'static str, b: &RoiBox, height: usize, width: usize, target: (usize, usize)) -> Result<()> {
    if b.width() == 0 || b.height() == 0 {
        return Err(Error::invalid(op, format!("degenerate box {b:?}")));
    }
    if b.x1 > width || b.y1 > height {
        return Err(Error::invalid(op, format!("box {b:?} exceeds {height}x{width} image")));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::invalid(op, "target extent must be positive"));
    }
    Ok(())
}

/// Crops `box` out of an `height × width` plane and resamples it to `target`
/// (H, W) with pixel-centre alignment. Bilinear sampling clamps at the crop
/// edges, so it never reads outside the box.
pub fn crop_resize(
    src: &[f32],
    height: usize,
    width: usize,
    b: &RoiBox,
    target: (usize, usize),
    interp: Interp,
) -> Result<Vec<f32>> {
    if src.len() != height * width {
        return Err(Error::invalid("crop_resize", "plane length does not match extent"));
    }
    check_box("crop_resize", b, height, width, target)?;
    let (th, tw) = target;
    let (bh, bw) = (b.height(), b.width());
    let mut out = Vec::with_capacity(th * tw);
    match interp {
        Interp::Nearest => {
            let cols: Vec<usize> = (0..tw).map(|j| b.x0 + nearest_src(j, bw, tw)).collect();
            for i in 0..th {
                let row = b.y0 + nearest_src(i, bh, th);
                out.extend(cols.iter().map(|&c| src[row * width + c]));
            }
        }
        Interp::Bilinear => {
            let axis = |dst: usize, n: usize, len: usize| {
                let pos = ((dst as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                (lo, hi, (pos - lo as f64) as f32)
            };
            let cols: Vec<_> = (0..tw).map(|j| axis(j, bw, tw)).collect();
            for i in 0..th {
                let (r0, r1, fy) = axis(i, bh, th);
                let row0 = &src[(b.y0 + r0) * width..];
                let row1 = &src[(b.y0 + r1) * width..];
                for &(c0, c1, fx) in &cols {
                    let (c0, c1) = (b.x0 + c0, b.x0 + c1);
                    let top = row0[c0] + (row0[c1] - row0[c0]) * fx;
                    let bottom = row1[c0] + (row1[c1] - row1[c0]) * fx;
                    out.push(top + (bottom - top) * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbour crop and resize of a binary mask plane.
pub fn crop_resize_mask(
    src: &[u8],
    height: usize,
    width: usize,
    b: &RoiBox,
    target: (usize, usize),
) -> Result<Vec<u8>> {
    let as_f: Vec<f32> = src.iter().map(|&v| v as f32).collect();
    Ok(crop_resize(&as_f, height, width, b, target, Interp::Nearest)?
        .into_iter()
        .map(|v| v as u8)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_box() {
        let mut m = vec![0u8; 32 * 32];
        m[10 * 32 + 20] = 1;
        let b = extract_roi(&m, 32, 32, 0).unwrap();
        assert_eq!(
            b,
            RoiBox {
                x0: 20,
                y0: 10,
                x1: 21,
                y1: 11
            }
        );
    }

    #[test]
    fn full_foreground_and_empty() {
        let m = vec![1u8; 16];
        assert_eq!(extract_roi(&m, 4, 4, 3).unwrap(), RoiBox::full(4, 4));
        assert!(matches!(extract_roi(&[0u8; 16], 4, 4, 1), Err(Error::NoForeground)));
    }

    #[test]
    fn identity_nearest_is_exact() {
        let img: Vec<f32> = (0..64).map(|i| i as f32 * 0.37).collect();
        let out = crop_resize(&img, 8, 8, &RoiBox::full(8, 8), (8, 8), Interp::Nearest).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = vec![0.3f32; 100];
        let b = RoiBox {
            x0: 2,
            y0: 3,
            x1: 7,
            y1: 9,
        };
        for interp in [Interp::Nearest, Interp::Bilinear] {
            let out = crop_resize(&img, 10, 10, &b, (16, 16), interp).unwrap();
            assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-7));
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let b = RoiBox {
            x0: 2,
            y0: 2,
            x1: 2,
            y1: 5,
        };
        assert!(crop_resize(&[0.0; 25], 5, 5, &b, (4, 4), Interp::Bilinear).is_err());
    }

    #[test]
    fn mask_stays_binary() {
        let m: Vec<u8> = (0..100).map(|i| u8::from(i % 3 == 0)).collect();
        let b = RoiBox {
            x0: 1,
            y0: 1,
            x1: 8,
            y1: 6,
        };
        let out = crop_resize_mask(&m, 10, 10, &b, (64, 64)).unwrap();
        assert!(out.iter().all(|&v| v <= 1));
    }
}
