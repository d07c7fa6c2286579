use crate::error::{Error, Result};

fn check_binary(op: &'static str, a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if let Some(i) = a.iter().chain(b).position(|&v| v > 1) {
        let v = if i < a.len() { a[i] } else { b[i - a.len()] };
        return Err(Error::invalid(op, format!("mask value {v} is not binary")));
    }
    Ok(())
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &[u8], b: &[u8]) -> Result<f64> {
    check_binary("dice", a, b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Squared distance, in mm², from every pixel to the nearest foreground pixel
/// of `mask`; `f64::INFINITY` everywhere when the mask is empty.
///
/// Exact two-pass transform: nearest foreground row per column by two sweeps,
/// then the lower envelope of parabolas along each row.
pub fn squared_distance_map(mask: &[u8], height: usize, width: usize, spacing: (f64, f64)) -> Vec<f64> {
    let (sy, sx) = spacing;
    let mut col = vec![f64::INFINITY; height * width];
    for c in 0..width {
        let mut last: Option<usize> = None;
        let mut up = vec![usize::MAX; height];
        for r in 0..height {
            if mask[r * width + c] != 0 {
                last = Some(r);
            }
            if let Some(q) = last {
                up[r] = r - q;
            }
        }
        last = None;
        for r in (0..height).rev() {
            if mask[r * width + c] != 0 {
                last = Some(r);
            }
            let down = last.map_or(usize::MAX, |q| q - r);
            let d = up[r].min(down);
            if d != usize::MAX {
                let dy = d as f64 * sy;
                col[r * width + c] = dy * dy;
            }
        }
    }
    let sx2 = sx * sx;
    let mut out = vec![f64::INFINITY; height * width];
    let mut verts = Vec::with_capacity(width);
    let mut bounds = Vec::with_capacity(width + 1);
    for r in 0..height {
        let f = &col[r * width..(r + 1) * width];
        verts.clear();
        bounds.clear();
        for q in (0..width).filter(|&q| f[q].is_finite()) {
            let qf = q as f64;
            loop {
                match verts.last() {
                    None => {
                        verts.push(q);
                        bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&v) => {
                        let vf = v as f64;
                        let s = ((f[q] + sx2 * qf * qf) - (f[v] + sx2 * vf * vf)) / (2.0 * sx2 * (qf - vf));
                        if s <= *bounds.last().expect("paired with verts") {
                            verts.pop();
                            bounds.pop();
                        } else {
                            verts.push(q);
                            bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if verts.is_empty() {
            continue;
        }
        let mut k = 0;
        for p in 0..width {
            let pf = p as f64;
            while k + 1 < verts.len() && bounds[k + 1] < pf {
                k += 1;
            }
            let v = verts[k];
            let dx = (pf - v as f64) * sx;
            out[r * width + p] = f[v] + dx * dx;
        }
    }
    out
}

/// Largest distance from a pixel of `from` to the nearest pixel of `to`.
fn directed(from: &[u8], to_map: &[f64]) -> f64 {
    from.iter()
        .zip(to_map)
        .filter(|(&m, _)| m != 0)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance in mm between two `height × width` masks,
/// with `spacing` = (row, column) mm per pixel.
///
/// Both empty gives 0; exactly one empty gives the image diagonal.
pub fn hausdorff(a: &[u8], b: &[u8], height: usize, width: usize, spacing: (f64, f64)) -> Result<f64> {
    check_binary("hausdorff", a, b)?;
    if a.len() != height * width {
        return Err(Error::invalid("hausdorff", "mask length does not match extent"));
    }
    let (ea, eb) = (a.iter().all(|&v| v == 0), b.iter().all(|&v| v == 0));
    match (ea, eb) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(diagonal(height, width, spacing)),
        _ => {}
    }
    let da = directed(a, &squared_distance_map(b, height, width, spacing));
    let db = directed(b, &squared_distance_map(a, height, width, spacing));
    Ok(da.max(db))
}

/// Image diagonal in mm, the value reported when only one mask is empty.
pub fn diagonal(height: usize, width: usize, spacing: (f64, f64)) -> f64 {
    (height as f64 * spacing.0).hypot(width as f64 * spacing.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_hd(a: &[u8], b: &[u8], w: usize, sp: (f64, f64)) -> f64 {
        let pts = |m: &[u8]| -> Vec<(f64, f64)> {
            m.iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(i, _)| ((i / w) as f64 * sp.0, (i % w) as f64 * sp.1))
                .collect()
        };
        let (pa, pb) = (pts(a), pts(b));
        let dir = |x: &[(f64, f64)], y: &[(f64, f64)]| {
            x.iter()
                .map(|p| {
                    y.iter()
                        .map(|q| (p.0 - q.0).hypot(p.1 - q.1))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        dir(&pa, &pb).max(dir(&pb, &pa))
    }

    #[test]
    fn dice_cases() {
        assert_eq!(dice(&[1, 1, 0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(dice(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(dice(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert_eq!(dice(&[1, 1, 1, 1, 0, 0], &[0, 0, 1, 1, 1, 1]).unwrap(), 0.5);
        assert!(dice(&[2, 0], &[0, 1]).is_err());
    }

    #[test]
    fn single_points_three_four_five() {
        let mut a = vec![0u8; 64];
        let mut b = vec![0u8; 64];
        a[0] = 1;
        b[3 * 8 + 4] = 1;
        assert_eq!(hausdorff(&a, &b, 8, 8, (1.0, 1.0)).unwrap(), 5.0);
    }

    #[test]
    fn empties() {
        let a = vec![0u8; 12];
        let mut b = vec![0u8; 12];
        assert_eq!(hausdorff(&a, &b, 3, 4, (1.0, 1.0)).unwrap(), 0.0);
        b[5] = 1;
        assert_eq!(hausdorff(&a, &b, 3, 4, (2.0, 1.0)).unwrap(), (36.0f64 + 16.0).sqrt());
    }

    #[test]
    fn matches_brute_force_anisotropic() {
        let w = 9;
        let a: Vec<u8> = (0..w * 7).map(|i| u8::from(i * 7 % 11 == 0)).collect();
        let b: Vec<u8> = (0..w * 7).map(|i| u8::from(i * 5 % 13 == 1)).collect();
        let sp = (1.3, 0.7);
        let fast = hausdorff(&a, &b, 7, w, sp).unwrap();
        assert!((fast - brute_hd(&a, &b, w, sp)).abs() < 1e-12);
    }
}
