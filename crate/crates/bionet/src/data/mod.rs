//! Dataset loading: manifests, PNG samples, patches, and synthetic data.

mod manifest;
mod patches;
mod sample;
mod synth;

pub use manifest::{Entry, Manifest, Task};
pub use patches::{
    box_downsample, crop, crop_mask, extract_corner_patches, make_sr_pair, upsample_nearest,
};
pub use sample::{
    load_image, load_mask, load_sample, save_gray_png, save_mask_png, Mask, Sample, Target,
};
pub use synth::{materialize, synth_blobs};
