//! Helpers shared by the integration test targets: deterministic tensor
//! data, finite-difference drivers, and reference kernels written as the
//! plainest possible loops, independent of the library internals.

#![allow(dead_code)]

use bionet::rng::stream;
use bionet::{Shape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

/// Deterministic pseudo-random tensor with entries in [-1, 1).
pub fn fill(shape: Shape, seed: u64) -> Tensor {
    let mut rng = stream(seed, "test");
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("data length matches shape")
}

/// Deterministic tensor whose entries are pairwise at least `gap` apart,
/// for pooling checks where a finite-difference step must never change
/// which element is the maximum.
pub fn fill_spread(shape: Shape, seed: u64, gap: f32) -> Tensor {
    let mut rng = stream(seed, "test");
    let n = shape.numel();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mid = n as f32 / 2.0;
    let data = order.iter().map(|&r| (r as f32 - mid) * gap).collect();
    Tensor::from_vec(shape, data).expect("data length matches shape")
}

/// Relative error with a unit floor, the usual gradient-check metric:
/// errors on gradients much smaller than 1 are measured absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// f64 dot product of values against fixed readout weights.
pub fn weighted_sum(y: &[f32], u: &[f32]) -> f64 {
    assert_eq!(y.len(), u.len(), "readout length mismatch");
    y.iter().zip(u).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Worst relative error between `analytic` and the central finite
/// difference of `loss` over every element of `x`, at step `h`. The
/// divisor uses the perturbed values actually realized in f32.
pub fn fd_check(
    x: &Tensor,
    analytic: &[f32],
    h: f32,
    mut loss: impl FnMut(&Tensor) -> f64,
) -> f64 {
    assert_eq!(analytic.len(), x.numel(), "gradient length mismatch");
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for k in 0..probe.numel() {
        let old = x.data()[k];
        let (hi, lo) = (old + h, old - h);
        probe.data_mut()[k] = hi;
        let up = loss(&probe);
        probe.data_mut()[k] = lo;
        let down = loss(&probe);
        probe.data_mut()[k] = old;
        let numeric = (up - down) / (hi as f64 - lo as f64);
        worst = worst.max(rel_err(analytic[k] as f64, numeric));
    }
    worst
}

/// Direct nested-loop convolution, accumulating in f64. Zero padding,
/// kernel layout (out, in, k, k).
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &[f32], stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.c, ws.c, "channel mismatch");
    let k = ws.h;
    let ho = (xs.h + 2 * pad - k) / stride + 1;
    let wo = (xs.w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros(Shape::new(xs.n, ws.n, ho, wo));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co] as f64;
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0
                                    && (iy as usize) < xs.h
                                    && ix >= 0
                                    && (ix as usize) < xs.w
                                {
                                    acc += x.at(n, ci, iy as usize, ix as usize) as f64
                                        * w.at(co, ci, ky, kx) as f64;
                                }
                            }
                        }
                    }
                    y.set(n, co, oy, ox, acc as f32);
                }
            }
        }
    }
    y
}

/// Direct scatter-loop transposed convolution, accumulating in f64.
/// Kernel layout (in, out, k, k).
pub fn naive_conv_transpose2d(x: &Tensor, w: &Tensor, b: &[f32], stride: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.c, ws.n, "channel mismatch");
    let k = ws.h;
    let oh = (xs.h - 1) * stride + k;
    let ow = (xs.w - 1) * stride + k;
    let mut acc = vec![0.0f64; xs.n * ws.c * oh * ow];
    let idx = |n: usize, c: usize, y: usize, x: usize| ((n * ws.c + c) * oh + y) * ow + x;
    for n in 0..xs.n {
        for co in 0..ws.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    acc[idx(n, co, oy, ox)] = b[co] as f64;
                }
            }
        }
        for ci in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = x.at(n, ci, iy, ix) as f64;
                    for co in 0..ws.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc[idx(n, co, iy * stride + ky, ix * stride + kx)] +=
                                    v * w.at(ci, co, ky, kx) as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    let data = acc.into_iter().map(|v| v as f32).collect();
    Tensor::from_vec(Shape::new(xs.n, ws.c, oh, ow), data).expect("consistent dims")
}

/// Window-scan max pooling reference.
pub fn naive_maxpool2d(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let s = x.shape();
    let ho = (s.h - k) / stride + 1;
    let wo = (s.w - k) / stride + 1;
    let mut y = Tensor::zeros(Shape::new(s.n, s.c, ho, wo));
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            best = best.max(x.at(n, c, oy * stride + ky, ox * stride + kx));
                        }
                    }
                    y.set(n, c, oy, ox, best);
                }
            }
        }
    }
    y
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// True when every element is bitwise identical (distinguishes 0.0/-0.0
/// and compares NaN payloads, which a float compare would not).
pub fn bit_equal(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(&x, &y)| x.to_bits() == y.to_bits())
}
