//! Samples, masks, and PNG round trips.

use std::path::Path;

use crate::data::manifest::Task;
use crate::data::patches::upsample_nearest;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// A binary label image: one byte per pixel, 0 background, 1 foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Mask> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask buffer of {} values cannot form {}x{}",
                data.len(),
                h,
                w
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask values must be 0 or 1, got {}", bad)));
        }
        Ok(Mask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Mask {
        Mask { h, w, data: vec![0; h * w] }
    }

    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.w + c]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Foreground as an `f32` tensor in `1x1xHxW` (for PSNR-style metrics).
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f32).collect();
        Tensor::from_vec(Shape::new(1, 1, self.h, self.w), data)
            .expect("mask buffer matches its shape")
    }
}

/// Ground truth attached to a sample.
#[derive(Clone, Debug)]
pub enum Target {
    Mask(Mask),
    Image(Tensor),
}

/// One dataset element: an input image plus its target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// Input in `1xCxHxW`, values in `[0, 1]`.
    pub image: Tensor,
    pub target: Target,
}

/// Loads a PNG as a `1xCxHxW` tensor scaled to `[0, 1]`.
///
/// Grayscale files become one channel; everything else becomes RGB.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Data(format!("{} is an empty image", path.display())));
    }
    use image::DynamicImage::*;
    let grayscale = matches!(img, ImageLuma8(_) | ImageLuma16(_) | ImageLumaA8(_) | ImageLumaA16(_));
    if grayscale {
        let g = img.to_luma8();
        let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Tensor::from_vec(Shape::new(1, 1, h, w), data)
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        let mut data = vec![0.0f32; 3 * h * w];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            data[i] = px[0] as f32 / 255.0;
            data[h * w + i] = px[1] as f32 / 255.0;
            data[2 * h * w + i] = px[2] as f32 / 255.0;
        }
        Tensor::from_vec(Shape::new(1, 3, h, w), data)
    }
}

/// Loads a PNG as a binary mask. Every pixel must be exactly 0 or 255.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)?;
    let g = img.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for &v in g.as_raw() {
        match v {
            0 => data.push(0u8),
            255 => data.push(1u8),
            other => {
                return Err(Error::Data(format!(
                    "{} is not a binary mask: pixel value {} (expected 0 or 255)",
                    path.display(),
                    other
                )))
            }
        }
    }
    Mask::new(h, w, data)
}

/// Writes a single-channel tensor plane as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, values: &[f32], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::Shape(format!(
            "{} values cannot fill a {}x{} image",
            values.len(),
            h,
            w
        )));
    }
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer length checked above");
    img.save(path)?;
    Ok(())
}

/// Writes a mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let bytes: Vec<u8> = mask.data.iter().map(|&v| v * 255).collect();
    let img = image::GrayImage::from_raw(mask.w as u32, mask.h as u32, bytes)
        .expect("mask buffer matches its dimensions");
    img.save(path)?;
    Ok(())
}

/// Loads an image/target pair for the given task.
///
/// Segmentation targets must match the image size exactly. Regression
/// targets may be an integer multiple of the input size, in which case the
/// input is nearest-upsampled to match.
pub fn load_sample(id: &str, image_path: &Path, target_path: &Path, task: Task) -> Result<Sample> {
    let image = load_image(image_path)?;
    let s = image.shape();
    match task {
        Task::Segmentation => {
            let mask = load_mask(target_path)?;
            if mask.h != s.h || mask.w != s.w {
                return Err(Error::Data(format!(
                    "mask {} is {}x{} but image {} is {}x{}",
                    target_path.display(),
                    mask.h,
                    mask.w,
                    image_path.display(),
                    s.h,
                    s.w
                )));
            }
            Ok(Sample { id: id.to_string(), image, target: Target::Mask(mask) })
        }
        Task::SuperResolution => {
            let target = load_image(target_path)?;
            let ts = target.shape();
            if ts.c != s.c {
                return Err(Error::Data(format!(
                    "target {} has {} channels but input has {}",
                    target_path.display(),
                    ts.c,
                    s.c
                )));
            }
            let image = if ts.h == s.h && ts.w == s.w {
                image
            } else if ts.h % s.h == 0 && ts.w % s.w == 0 && ts.h / s.h == ts.w / s.w {
                upsample_nearest(&image, ts.h / s.h)?
            } else {
                return Err(Error::Data(format!(
                    "target {} is {}x{}, not an integer multiple of input {}x{}",
                    target_path.display(),
                    ts.h,
                    ts.w,
                    s.h,
                    s.w
                )));
            };
            Ok(Sample { id: id.to_string(), image, target: Target::Image(target) })
        }
    }
}
