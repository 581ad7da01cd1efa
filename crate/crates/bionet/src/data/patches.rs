//! Patch extraction and resolution changes.

use crate::data::sample::{Mask, Sample, Target};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Crops `x` to a `ph`x`pw` window whose top-left corner is `(top, left)`.
pub fn crop(x: &Tensor, top: usize, left: usize, ph: usize, pw: usize) -> Result<Tensor> {
    let s = x.shape();
    if top + ph > s.h || left + pw > s.w {
        return Err(Error::Shape(format!(
            "crop {}x{} at ({}, {}) exceeds {}x{}",
            ph, pw, top, left, s.h, s.w
        )));
    }
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, ph, pw));
    for n in 0..s.n {
        for c in 0..s.c {
            for r in 0..ph {
                let src = s.index(n, c, top + r, left);
                let dst = out.shape().index(n, c, r, 0);
                out.data_mut()[dst..dst + pw].copy_from_slice(&x.data()[src..src + pw]);
            }
        }
    }
    Ok(out)
}

/// Crops a mask the same way.
pub fn crop_mask(m: &Mask, top: usize, left: usize, ph: usize, pw: usize) -> Result<Mask> {
    if top + ph > m.h || left + pw > m.w {
        return Err(Error::Shape(format!(
            "crop {}x{} at ({}, {}) exceeds {}x{}",
            ph, pw, top, left, m.h, m.w
        )));
    }
    let mut data = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        let src = (top + r) * m.w + left;
        data.extend_from_slice(&m.data[src..src + pw]);
    }
    Mask::new(ph, pw, data)
}

/// Cuts the four corner patches out of a sample.
///
/// Useful when the source images are not a multiple of the network's
/// downsampling factor: corners jointly cover the image while every patch
/// keeps the requested size. Patch ids are the sample id plus a corner
/// suffix (`:tl`, `:tr`, `:bl`, `:br`).
pub fn extract_corner_patches(sample: &Sample, ph: usize, pw: usize) -> Result<Vec<Sample>> {
    let s = sample.image.shape();
    if ph > s.h || pw > s.w {
        return Err(Error::Data(format!(
            "patch {}x{} does not fit sample '{}' of {}x{}",
            ph, pw, sample.id, s.h, s.w
        )));
    }
    let corners = [
        ("tl", 0, 0),
        ("tr", 0, s.w - pw),
        ("bl", s.h - ph, 0),
        ("br", s.h - ph, s.w - pw),
    ];
    let mut out = Vec::with_capacity(4);
    for (tag, top, left) in corners {
        let image = crop(&sample.image, top, left, ph, pw)?;
        let target = match &sample.target {
            Target::Mask(m) => Target::Mask(crop_mask(m, top, left, ph, pw)?),
            Target::Image(t) => Target::Image(crop(t, top, left, ph, pw)?),
        };
        out.push(Sample { id: format!("{}:{}", sample.id, tag), image, target });
    }
    Ok(out)
}

/// Downsamples by averaging non-overlapping `factor`x`factor` blocks.
pub fn box_downsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    let s = x.shape();
    if factor == 0 {
        return Err(Error::Config("downsample factor must be positive".into()));
    }
    if s.h % factor != 0 || s.w % factor != 0 {
        return Err(Error::Shape(format!(
            "{}x{} is not divisible by downsample factor {}",
            s.h, s.w, factor
        )));
    }
    let (oh, ow) = (s.h / factor, s.w / factor);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let inv = 1.0 / (factor * factor) as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = 0.0f64;
                    for dr in 0..factor {
                        let base = s.index(n, c, r * factor + dr, q * factor);
                        for v in &x.data()[base..base + factor] {
                            acc += *v as f64;
                        }
                    }
                    let idx = out.shape().index(n, c, r, q);
                    out.data_mut()[idx] = (acc * inv) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// Upsamples by repeating each pixel `factor` times along both axes.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::Config("upsample factor must be positive".into()));
    }
    let s = x.shape();
    let (oh, ow) = (s.h * factor, s.w * factor);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            for r in 0..oh {
                for q in 0..ow {
                    let v = x.at(n, c, r / factor, q / factor);
                    let idx = out.shape().index(n, c, r, q);
                    out.data_mut()[idx] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Builds a restoration pair from a clean image: the input is the image
/// degraded by box downsampling and brought back to size with nearest
/// upsampling, the target is the original.
pub fn make_sr_pair(hr: &Tensor, factor: usize) -> Result<(Tensor, Tensor)> {
    let lr = box_downsample(hr, factor)?;
    Ok((upsample_nearest(&lr, factor)?, hr.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        let shape = Shape::new(n, c, h, w);
        let data = (0..shape.numel()).map(|i| i as f32).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let x = ramp(1, 1, 3, 4);
        let c = crop(&x, 1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(crop(&x, 2, 0, 2, 2).is_err());
    }

    #[test]
    fn corner_patches_cover_the_image() {
        let sample = Sample {
            id: "s".into(),
            image: ramp(1, 1, 3, 3),
            target: Target::Mask(Mask::new(3, 3, vec![0, 0, 1, 0, 1, 0, 1, 0, 0]).unwrap()),
        };
        let patches = extract_corner_patches(&sample, 2, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[0].id, "s:tl");
        assert_eq!(patches[0].image.data(), &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(patches[3].id, "s:br");
        assert_eq!(patches[3].image.data(), &[4.0, 5.0, 7.0, 8.0]);
        match &patches[1].target {
            Target::Mask(m) => assert_eq!(m.data, vec![0, 1, 1, 0]),
            _ => panic!("expected mask target"),
        }
        assert!(extract_corner_patches(&sample, 4, 2).is_err());
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let x = ramp(1, 1, 2, 4);
        let d = box_downsample(&x, 2).unwrap();
        assert_eq!(d.shape(), Shape::new(1, 1, 1, 2));
        assert_eq!(d.data(), &[2.5, 4.5]);
        assert!(box_downsample(&ramp(1, 1, 3, 4), 2).is_err());
    }

    #[test]
    fn upsample_nearest_repeats_pixels() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let u = upsample_nearest(&x, 2).unwrap();
        assert_eq!(u.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(u.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn sr_pair_keeps_target_and_blurs_input() {
        let hr = ramp(1, 1, 2, 2);
        let (lr_up, target) = make_sr_pair(&hr, 2).unwrap();
        assert_eq!(target.data(), hr.data());
        assert_eq!(lr_up.shape(), hr.shape());
        assert_eq!(lr_up.data(), &[1.5; 4]);
    }
}
