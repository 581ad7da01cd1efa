//! Max pooling with saved argmax indices for the backward pass.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Shape, Tensor};

/// Non-overlapping-friendly max pooling.
///
/// Requires the spatial dims to tile exactly: `(H - k) % stride == 0` and
/// likewise for width. Returns the pooled tensor and, per output element,
/// the plane-local flat index (`ih * W + iw`) of the selected input. Ties
/// go to the first element in row-major window order.
pub fn maxpool2d(x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    let xs = x.shape();
    if k == 0 || stride == 0 {
        return Err(Error::Config("pool kernel and stride must be at least 1".into()));
    }
    if xs.numel() == 0 {
        return Err(Error::Shape(format!("pool input must be non-empty, got {}", xs)));
    }
    if xs.h < k || xs.w < k || (xs.h - k) % stride != 0 || (xs.w - k) % stride != 0 {
        return Err(Error::Shape(format!(
            "spatial size {}x{} does not tile with pool kernel {} stride {}",
            xs.h, xs.w, k, stride
        )));
    }
    if xs.plane() > u32::MAX as usize {
        return Err(Error::Shape(format!("plane of {} is too large to index", xs)));
    }
    let ho = (xs.h - k) / stride + 1;
    let wo = (xs.w - k) / stride + 1;

    let (xplane, oplane) = (xs.plane(), ho * wo);
    let xd = x.data();
    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, ho, wo));
    let mut indices = vec![0u32; out.numel()];

    parallel::for_each_plane(&mut indices, oplane, |pi, ip| {
        let xp = &xd[pi * xplane..][..xplane];
        for oh in 0..ho {
            for ow in 0..wo {
                let (r0, c0) = (oh * stride, ow * stride);
                let mut best = xp[r0 * xs.w + c0];
                let mut best_at = (r0 * xs.w + c0) as u32;
                for kh in 0..k {
                    let row = (r0 + kh) * xs.w;
                    for kw in 0..k {
                        let v = xp[row + c0 + kw];
                        if v > best {
                            best = v;
                            best_at = (row + c0 + kw) as u32;
                        }
                    }
                }
                ip[oh * wo + ow] = best_at;
            }
        }
    });
    parallel::for_each_plane(out.data_mut(), oplane, |pi, plane| {
        let xp = &xd[pi * xplane..][..xplane];
        let ip = &indices[pi * oplane..][..oplane];
        for (o, &at) in plane.iter_mut().zip(ip) {
            *o = xp[at as usize];
        }
    });
    Ok((out, indices))
}

/// Routes `dy` back to the argmax positions recorded by [`maxpool2d`].
pub fn maxpool2d_backward(
    input_shape: Shape,
    indices: &[u32],
    dy: &Tensor,
    k: usize,
    stride: usize,
) -> Result<Tensor> {
    if k == 0 || stride == 0 || input_shape.h < k || input_shape.w < k {
        return Err(Error::Shape("pool geometry invalid for backward".into()));
    }
    let ho = (input_shape.h - k) / stride + 1;
    let wo = (input_shape.w - k) / stride + 1;
    let ys = dy.shape();
    if ys != Shape::new(input_shape.n, input_shape.c, ho, wo) {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match pool output {}",
            ys,
            Shape::new(input_shape.n, input_shape.c, ho, wo)
        )));
    }
    if indices.len() != dy.numel() {
        return Err(Error::Shape(format!(
            "{} pool indices for {} outputs",
            indices.len(),
            dy.numel()
        )));
    }

    let (xplane, oplane) = (input_shape.plane(), ho * wo);
    let gd = dy.data();
    let mut dx = Tensor::zeros(input_shape);
    parallel::for_each_plane(dx.data_mut(), xplane, |pi, plane| {
        let gp = &gd[pi * oplane..][..oplane];
        let ip = &indices[pi * oplane..][..oplane];
        for (&g, &at) in gp.iter().zip(ip) {
            plane[at as usize] += g;
        }
    });
    Ok(dx)
}
