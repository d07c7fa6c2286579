//! Synthetic short-axis phantoms, ROI handling, splits and on-disk formats.

mod dataset;
pub mod pgm;
mod phantom;
mod roi;
mod split;
mod stack;

pub use dataset::{load_dataset, write_dataset, Dataset, StackPair, MANIFEST_FILE, STACK_EXT};
pub use phantom::{gen_phantom_dataset, gen_phantom_stack, stack_id, PhantomConfig, SIZE_MULTIPLE};
pub use roi::{crop_resize, crop_resize_mask, extract_roi, Interp, RoiBox, DEFAULT_ROI_MARGIN};
pub use split::{split_dataset, DatasetManifest, Split, DEFAULT_FRACTIONS};
pub use stack::{
    decode_stack, encode_stack, load_stack, save_stack, MaskStack, SliceStack, STACK_MAGIC, STACK_VERSION,
};
