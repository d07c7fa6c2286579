use crate::data::{crop_resize, crop_resize_mask, extract_roi, Interp, MaskStack, SliceStack};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Slices of one or more whole stacks, packed base→apex along the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[N, 1, H, W]`.
    pub images: Tensor<T>,
    /// `[N, 1, H, W]` of zeros and ones.
    pub masks: Tensor<T>,
    /// Slice count of each packed stack, in order.
    pub lengths: Vec<usize>,
}

impl<T: Element> Batch<T> {
    pub fn from_stacks(stacks: &[(&SliceStack, &MaskStack)]) -> Result<Self> {
        if stacks.is_empty() {
            return Err(Error::invalid("batch", "no stacks given"));
        }
        let images: Vec<Tensor<T>> = stacks.iter().map(|(s, _)| s.images_as()).collect();
        let masks: Vec<Tensor<T>> = stacks.iter().map(|(_, m)| m.to_tensor()).collect();
        Ok(Self {
            images: Tensor::cat_batch(&images.iter().collect::<Vec<_>>())?,
            masks: Tensor::cat_batch(&masks.iter().collect::<Vec<_>>())?,
            lengths: stacks.iter().map(|(s, _)| s.len()).collect(),
        })
    }

    /// Ground-truth ROI crops of every slice with foreground, resampled to
    /// `size` (bilinear images, nearest masks). Slices without foreground are
    /// left out and the remaining ones keep their base→apex order. `None`
    /// when no slice has foreground.
    pub fn roi_from_stacks(
        stacks: &[(&SliceStack, &MaskStack)],
        size: (usize, usize),
        margin: usize,
    ) -> Result<Option<Self>> {
        let (th, tw) = size;
        let mut images = Vec::new();
        let mut masks = Vec::new();
        let mut lengths = Vec::new();
        for (s, m) in stacks {
            let (h, w) = (s.height(), s.width());
            let mut len = 0;
            for i in 0..s.len() {
                let b = match extract_roi(m.slice(i), h, w, margin) {
                    Ok(b) => b,
                    Err(Error::NoForeground) => continue,
                    Err(e) => return Err(e),
                };
                images.extend(
                    crop_resize(s.slice(i), h, w, &b, size, Interp::Bilinear)?
                        .into_iter()
                        .map(|v| T::lit(v as f64)),
                );
                masks.extend(crop_resize_mask(m.slice(i), h, w, &b, size)?.into_iter().map(|v| {
                    if v == 1 {
                        T::one()
                    } else {
                        T::zero()
                    }
                }));
                len += 1;
            }
            if len > 0 {
                lengths.push(len);
            }
        }
        let n: usize = lengths.iter().sum();
        if n == 0 {
            return Ok(None);
        }
        Ok(Some(Self {
            images: Tensor::new(vec![n, 1, th, tw], images)?,
            masks: Tensor::new(vec![n, 1, th, tw], masks)?,
            lengths,
        }))
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
