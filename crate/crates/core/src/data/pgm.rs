use std::path::Path;

use crate::bin::write_file;
use crate::error::{Error, Result};

/// Binary 8-bit greyscale PGM (P5).
pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != height * width || height == 0 || width == 0 {
        return Err(Error::invalid("pgm", "pixel count does not match extent"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    write_file(path, &encode_pgm(height, width, pixels)?)
}

/// Intensities in [0, 1] to bytes.
pub fn to_grey(image: &[f32]) -> Vec<u8> {
    image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn mask_to_grey(mask: &[u8]) -> Vec<u8> {
    mask.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect()
}

/// Foreground pixels with a background 4-neighbour or on the image edge.
pub fn boundary(mask: &[u8], height: usize, width: usize) -> Vec<bool> {
    let at = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width && mask[r as usize * width + c as usize] != 0
    };
    (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as isize, (i % width) as isize);
            at(r, c) && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1))
        })
        .collect()
}

/// The image darkened to half brightness with the mask outline drawn white.
pub fn overlay(image: &[f32], mask: &[u8], height: usize, width: usize) -> Vec<u8> {
    let edge = boundary(mask, height, width);
    to_grey(image)
        .into_iter()
        .zip(edge)
        .map(|(v, e)| if e { 255 } else { v / 2 })
        .collect()
}
