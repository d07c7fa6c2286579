use std::path::Path;

use crate::bin::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const STACK_MAGIC: &[u8; 8] = b"RVSTACK1";
pub const STACK_VERSION: u32 = 1;

/// Short-axis slices ordered base→apex, intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack {
    pub id: String,
    /// `[S, 1, H, W]`.
    pub images: Tensor<f32>,
    /// Pixel spacing in mm as (row, column).
    pub spacing: (f32, f32),
}

/// Binary ground truth (or prediction) for a [`SliceStack`].
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    pub id: String,
    /// `(S, H, W)`.
    pub dims: (usize, usize, usize),
    /// Row-major, one byte per pixel, values 0 or 1.
    pub data: Vec<u8>,
}

impl SliceStack {
    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn slice(&self, s: usize) -> &[f32] {
        let n = self.height() * self.width();
        &self.images.data()[s * n..(s + 1) * n]
    }

    pub fn images_as<T: Element>(&self) -> Tensor<T> {
        self.images.cast()
    }
}

impl MaskStack {
    pub fn new(id: impl Into<String>, dims: (usize, usize, usize), data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::invalid("mask_stack", "data length does not match dims"));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::invalid(
                "mask_stack",
                format!("value {} at {i} is not binary", data[i]),
            ));
        }
        Ok(Self {
            id: id.into(),
            dims,
            data,
        })
    }

    /// Thresholds probabilities `[S, 1, H, W]` at 0.5.
    pub fn from_probabilities<T: Element>(id: impl Into<String>, p: &Tensor<T>) -> Result<Self> {
        let [s, _, h, w] = p.dims4("mask_stack")?;
        let half = T::lit(0.5);
        let data = p.data().iter().map(|&v| u8::from(v >= half)).collect();
        Self::new(id, (s, h, w), data)
    }

    pub fn len(&self) -> usize {
        self.dims.0
    }

    pub fn is_empty(&self) -> bool {
        self.dims.0 == 0
    }

    pub fn slice(&self, s: usize) -> &[u8] {
        let n = self.dims.1 * self.dims.2;
        &self.data[s * n..(s + 1) * n]
    }

    pub fn area(&self, s: usize) -> usize {
        self.slice(s).iter().map(|&v| v as usize).sum()
    }

    /// `[S, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let (s, h, w) = self.dims;
        Tensor::new(
            vec![s, 1, h, w],
            self.data
                .iter()
                .map(|&v| if v == 1 { T::one() } else { T::zero() })
                .collect(),
        )
        .expect("dims match data")
    }
}

pub fn encode_stack(stack: &SliceStack, mask: &MaskStack) -> Result<Vec<u8>> {
    let (s, h, w) = (stack.len(), stack.height(), stack.width());
    if mask.dims != (s, h, w) || stack.images.shape()[1] != 1 {
        return Err(Error::ShapeMismatch {
            op: "encode_stack",
            lhs: stack.images.shape().to_vec(),
            rhs: vec![mask.dims.0, 1, mask.dims.1, mask.dims.2],
        });
    }
    let mut out = Writer::new();
    out.bytes(STACK_MAGIC);
    out.u32(STACK_VERSION);
    for d in [s, h, w] {
        out.u32(d as u32);
    }
    out.f32(stack.spacing.0);
    out.f32(stack.spacing.1);
    for &v in stack.images.data() {
        out.f32(v);
    }
    out.bytes(&mask.data);
    Ok(out.buf)
}

/// Parses a `.rvs` byte stream; `id` becomes the id of both halves.
pub fn decode_stack(bytes: &[u8], id: &str) -> Result<(SliceStack, MaskStack)> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != STACK_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, not an RVSTACK1 file".into(),
        });
    }
    let at = r.offset();
    let version = r.u32()?;
    if version != STACK_VERSION {
        return Err(Error::Format {
            offset: at,
            msg: format!("unsupported version {version}"),
        });
    }
    let at = r.offset();
    let (s, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if s == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            offset: at,
            msg: format!("empty extent {s}x{h}x{w}"),
        });
    }
    let spacing = (r.f32()?, r.f32()?);
    let n = s
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| r.error("extent overflows"))?;
    let raw = r.take(n.checked_mul(4).ok_or_else(|| r.error("extent overflows"))?)?;
    let images: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let mask_at = r.offset();
    let data = r.take(n)?.to_vec();
    if let Some(i) = data.iter().position(|&v| v > 1) {
        return Err(Error::Format {
            offset: mask_at + i as u64,
            msg: format!("mask byte {} is not 0 or 1", data[i]),
        });
    }
    r.finish()?;
    let stack = SliceStack {
        id: id.to_string(),
        images: Tensor::new(vec![s, 1, h, w], images)?,
        spacing,
    };
    let mask = MaskStack {
        id: id.to_string(),
        dims: (s, h, w),
        data,
    };
    Ok((stack, mask))
}

pub fn save_stack(path: &Path, stack: &SliceStack, mask: &MaskStack) -> Result<()> {
    write_file(path, &encode_stack(stack, mask)?)
}

/// Loads a `.rvs` file; the id is the file stem.
pub fn load_stack(path: &Path) -> Result<(SliceStack, MaskStack)> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    decode_stack(&read_file(path)?, &id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (SliceStack, MaskStack) {
        let images = Tensor::from_fn([3, 1, 2, 2], |i| i as f32 / 12.0);
        let stack = SliceStack {
            id: "s".into(),
            images,
            spacing: (1.5, 2.0),
        };
        let mask = MaskStack::new("s", (3, 2, 2), vec![0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0]).unwrap();
        (stack, mask)
    }

    #[test]
    fn bytes_round_trip() {
        let (s, m) = sample();
        let b = encode_stack(&s, &m).unwrap();
        assert_eq!(b.len(), 8 + 4 + 12 + 8 + 12 * 4 + 12);
        let (s2, m2) = decode_stack(&b, "s").unwrap();
        assert_eq!(s, s2);
        assert_eq!(m, m2);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (s, m) = sample();
        let mut b = encode_stack(&s, &m).unwrap();
        assert!(matches!(
            decode_stack(&b[..b.len() - 1], "s"),
            Err(Error::Format { .. })
        ));
        b[0] = b'X';
        assert!(matches!(decode_stack(&b, "s"), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn non_binary_mask_byte_located() {
        let (s, m) = sample();
        let mut b = encode_stack(&s, &m).unwrap();
        let last = b.len() - 1;
        b[last] = 7;
        match decode_stack(&b, "s") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, last as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn threshold_probabilities() {
        let p = Tensor::new([1, 1, 1, 3], vec![0.2f32, 0.5, 0.9]).unwrap();
        let m = MaskStack::from_probabilities("p", &p).unwrap();
        assert_eq!(m.data, vec![0, 1, 1]);
    }
}
