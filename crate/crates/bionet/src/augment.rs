//! Random affine augmentation: rotation, shift, shear, zoom, and flips.
//!
//! A drawn [`AffineSample`] is applied to the image and its target with the
//! same parameters so the pair stays aligned. Images are resampled
//! bilinearly, masks with nearest neighbor; out-of-bounds reads clamp to the
//! nearest edge pixel.

use rand::Rng;

use crate::data::{Mask, Sample, Target};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ranges the augmentation sampler draws from.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    /// Rotation angle range in degrees, drawn from `[-rotation_deg, rotation_deg)`.
    pub rotation_deg: f64,
    /// Shift range as a fraction of the image side, per axis.
    pub shift_frac: f64,
    /// Horizontal shear angle range in degrees.
    pub shear_deg: f64,
    /// Zoom factors drawn from `[1 - zoom, 1 + zoom)` independently per axis.
    pub zoom: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> AugmentConfig {
        AugmentConfig {
            rotation_deg: 15.0,
            shift_frac: 0.05,
            shear_deg: 5.0,
            zoom: 0.2,
            hflip: true,
            vflip: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rotation_deg", self.rotation_deg),
            ("shift_frac", self.shift_frac),
            ("shear_deg", self.shear_deg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{} must be a nonnegative number, got {}", name, v)));
            }
        }
        if !self.zoom.is_finite() || !(0.0..1.0).contains(&self.zoom) {
            return Err(Error::Config(format!("zoom must be in [0, 1), got {}", self.zoom)));
        }
        Ok(())
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineSample {
    pub angle_deg: f64,
    /// Shift as a fraction of width (x) and height (y).
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear_deg: f64,
    pub zoom_x: f64,
    pub zoom_y: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AffineSample {
    /// Parameters that leave the input untouched.
    pub fn identity() -> AffineSample {
        AffineSample {
            angle_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            shear_deg: 0.0,
            zoom_x: 1.0,
            zoom_y: 1.0,
            hflip: false,
            vflip: false,
        }
    }
}

/// Draws one parameter set. The draw order is fixed (angle, shift x, shift
/// y, shear, zoom x, zoom y, hflip, vflip) so a seeded stream reproduces the
/// same sequence; zero-width ranges and disabled flips consume no draws.
pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> AffineSample {
    let sym = |rng: &mut R, a: f64| if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
    let angle_deg = sym(rng, cfg.rotation_deg);
    let shift_x = sym(rng, cfg.shift_frac);
    let shift_y = sym(rng, cfg.shift_frac);
    let shear_deg = sym(rng, cfg.shear_deg);
    let zoom = |rng: &mut R| {
        if cfg.zoom > 0.0 {
            rng.gen_range(1.0 - cfg.zoom..1.0 + cfg.zoom)
        } else {
            1.0
        }
    };
    let zoom_x = zoom(rng);
    let zoom_y = zoom(rng);
    let hflip = cfg.hflip && rng.gen_bool(0.5);
    let vflip = cfg.vflip && rng.gen_bool(0.5);
    AffineSample { angle_deg, shift_x, shift_y, shear_deg, zoom_x, zoom_y, hflip, vflip }
}

/// Forward map `dst = A * src + t` in (x, y) coordinates, built as
/// rotation * shear * zoom * flip about the image center, then shifted.
struct AffineMap {
    /// Inverse matrix, row major: maps destination back to source.
    inv: [f64; 4],
    tx: f64,
    ty: f64,
}

impl AffineMap {
    fn new(p: &AffineSample, h: usize, w: usize) -> AffineMap {
        let theta = p.angle_deg.to_radians();
        let phi = p.shear_deg.to_radians();
        let (st, ct) = theta.sin_cos();
        let shear = phi.tan();
        let fx = if p.hflip { -1.0 } else { 1.0 };
        let fy = if p.vflip { -1.0 } else { 1.0 };
        // A = R(theta) * Shear(phi) * diag(zx, zy) * diag(fx, fy)
        let zx = p.zoom_x * fx;
        let zy = p.zoom_y * fy;
        let a00 = ct * zx;
        let a01 = (ct * shear - st) * zy;
        let a10 = st * zx;
        let a11 = (st * shear + ct) * zy;
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let tx = cx + p.shift_x * w as f64 - (a00 * cx + a01 * cy);
        let ty = cy + p.shift_y * h as f64 - (a10 * cx + a11 * cy);
        let det = a00 * a11 - a01 * a10;
        // Degenerate maps cannot happen for validated configs (zoom < 1).
        let inv_det = 1.0 / det;
        let inv = [a11 * inv_det, -a01 * inv_det, -a10 * inv_det, a00 * inv_det];
        AffineMap { inv, tx, ty }
    }

    /// Source coordinates that land on destination pixel (x, y).
    fn source(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.tx;
        let dy = y - self.ty;
        (self.inv[0] * dx + self.inv[1] * dy, self.inv[2] * dx + self.inv[3] * dy)
    }
}

/// Warps every plane of a tensor with bilinear resampling.
pub fn warp_tensor(x: &Tensor, p: &AffineSample) -> Tensor {
    let s = x.shape();
    let map = AffineMap::new(p, s.h, s.w);
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    let last_x = s.w as f64 - 1.0;
    let last_y = s.h as f64 - 1.0;
    for (pi, dst) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let src = &x.data()[pi * plane..(pi + 1) * plane];
        for r in 0..s.h {
            for c in 0..s.w {
                let (xs, ys) = map.source(c as f64, r as f64);
                let xs = xs.clamp(0.0, last_x);
                let ys = ys.clamp(0.0, last_y);
                let x0 = xs.floor();
                let y0 = ys.floor();
                let fx = xs - x0;
                let fy = ys - y0;
                let x0 = x0 as usize;
                let y0 = y0 as usize;
                let x1 = (x0 + 1).min(s.w - 1);
                let y1 = (y0 + 1).min(s.h - 1);
                let v00 = src[y0 * s.w + x0] as f64;
                let v01 = src[y0 * s.w + x1] as f64;
                let v10 = src[y1 * s.w + x0] as f64;
                let v11 = src[y1 * s.w + x1] as f64;
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                dst[r * s.w + c] = (top + (bot - top) * fy) as f32;
            }
        }
    }
    out
}

/// Warps a mask with nearest-neighbor resampling so labels stay binary.
pub fn warp_mask(m: &Mask, p: &AffineSample) -> Mask {
    let map = AffineMap::new(p, m.h, m.w);
    let mut data = vec![0u8; m.h * m.w];
    let last_x = m.w as f64 - 1.0;
    let last_y = m.h as f64 - 1.0;
    for r in 0..m.h {
        for c in 0..m.w {
            let (xs, ys) = map.source(c as f64, r as f64);
            let xi = xs.round().clamp(0.0, last_x) as usize;
            let yi = ys.round().clamp(0.0, last_y) as usize;
            data[r * m.w + c] = m.data[yi * m.w + xi];
        }
    }
    Mask { h: m.h, w: m.w, data }
}

/// Applies one parameter draw to an image/target pair.
pub fn augment_sample(sample: &Sample, p: &AffineSample) -> Sample {
    let image = warp_tensor(&sample.image, p);
    let target = match &sample.target {
        Target::Mask(m) => Target::Mask(warp_mask(m, p)),
        Target::Image(t) => Target::Image(warp_tensor(t, p)),
    };
    Sample { id: sample.id.clone(), image, target }
}
