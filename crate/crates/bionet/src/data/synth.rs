//! Synthetic blob images for smoke tests and demos.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::manifest::{Entry, Manifest, Task};
use crate::data::sample::{save_gray_png, save_mask_png, Mask, Sample, Target};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Generates grayscale images of bright elliptical blobs on a dark
/// background, paired with exact foreground masks.
///
/// Blob interiors have intensity at least 0.6 and the background sits at
/// 0.15, so with `noise == 0` thresholding the image at 0.5 recovers the
/// mask exactly. `noise` is the standard deviation of additive Gaussian
/// noise; output stays clamped to `[0, 1]`.
pub fn synth_blobs(count: usize, size: usize, seed: u64, noise: f64) -> Result<Vec<Sample>> {
    if count == 0 || size == 0 {
        return Err(Error::Config("blob dataset needs a positive count and size".into()));
    }
    if noise < 0.0 {
        return Err(Error::Config("noise standard deviation cannot be negative".into()));
    }
    let mut rng = rng::stream(seed, "synth");
    let normal = if noise > 0.0 {
        Some(Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let side = size as f64;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let mut image = vec![0.15f32; size * size];
        let mut mask = vec![0u8; size * size];
        let blobs = rng.gen_range(3..=8);
        for _ in 0..blobs {
            let cy = rng.gen_range(0.25..0.75) * side;
            let cx = rng.gen_range(0.25..0.75) * side;
            let a = rng.gen_range(0.04..0.14) * side;
            let b = rng.gen_range(0.04..0.14) * side;
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let intensity = rng.gen_range(0.6..0.95) as f32;
            let (sin, cos) = theta.sin_cos();
            for r in 0..size {
                for c in 0..size {
                    let dy = r as f64 - cy;
                    let dx = c as f64 - cx;
                    let u = (dx * cos + dy * sin) / a;
                    let v = (-dx * sin + dy * cos) / b;
                    if u * u + v * v <= 1.0 {
                        let idx = r * size + c;
                        image[idx] = image[idx].max(intensity);
                        mask[idx] = 1;
                    }
                }
            }
        }
        if let Some(n) = &normal {
            for v in image.iter_mut() {
                *v = (*v + n.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
        samples.push(Sample {
            id: format!("blob_{:03}", i),
            image: Tensor::from_vec(Shape::new(1, 1, size, size), image)?,
            target: Target::Mask(Mask::new(size, size, mask)?),
        });
    }
    Ok(samples)
}

/// Writes samples to disk as a self-contained dataset directory:
/// `images/{id}.png`, `masks/{id}.png` (or `targets/{id}.png` for image
/// targets), and a `manifest.tsv` with paths relative to the directory.
///
/// The trailing `val_fraction` of the samples goes to the `val` split, the
/// rest to `train`. Returns the manifest path.
pub fn materialize(samples: &[Sample], dir: &Path, val_fraction: f64) -> Result<PathBuf> {
    if samples.is_empty() {
        return Err(Error::Data("cannot materialize an empty dataset".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val fraction must be in [0, 1), got {}",
            val_fraction
        )));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    let n_val = (samples.len() as f64 * val_fraction).round() as usize;
    let first_val = samples.len() - n_val;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let s = sample.image.shape();
        if s.c != 1 {
            return Err(Error::Data(format!(
                "sample '{}' has {} channels; only single-channel samples can be materialized",
                sample.id, s.c
            )));
        }
        let image_path = format!("images/{}.png", sample.id);
        save_gray_png(&dir.join(&image_path), sample.image.data(), s.h, s.w)?;
        let (target_path, task) = match &sample.target {
            Target::Mask(m) => {
                std::fs::create_dir_all(dir.join("masks"))?;
                let p = format!("masks/{}.png", sample.id);
                save_mask_png(&dir.join(&p), m)?;
                (p, Task::Segmentation)
            }
            Target::Image(t) => {
                let ts = t.shape();
                if ts.c != 1 {
                    return Err(Error::Data(format!(
                        "target of '{}' has {} channels; expected 1",
                        sample.id, ts.c
                    )));
                }
                std::fs::create_dir_all(dir.join("targets"))?;
                let p = format!("targets/{}.png", sample.id);
                save_gray_png(&dir.join(&p), t.data(), ts.h, ts.w)?;
                (p, Task::SuperResolution)
            }
        };
        entries.push(Entry {
            id: sample.id.clone(),
            image_path,
            target_path,
            split: if i < first_val { "train".into() } else { "val".into() },
            task,
        });
    }
    let manifest_path = dir.join("manifest.tsv");
    Manifest::write(&manifest_path, &entries)?;
    Ok(manifest_path)
}
