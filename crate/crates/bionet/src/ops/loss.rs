//! Mean losses over all batch pixels.
//!
//! Both losses return the mean per element in `f64` accumulation and scale
//! their gradients by `1 / count`, so loss magnitudes are comparable across
//! image sizes. Accumulation is a single sequential pass, identical in
//! parallel and sequential execution modes.

use crate::error::{Error, Result};
use crate::ops::elementwise::stable_sigmoid;
use crate::tensor::Tensor;

fn check_classes(logits: &Tensor, classes: &[u32]) -> Result<usize> {
    let s = logits.shape();
    let pixels = s.n * s.plane();
    if classes.len() != pixels {
        return Err(Error::Shape(format!(
            "{} class labels for {} pixels of {}",
            classes.len(),
            pixels,
            s
        )));
    }
    if pixels == 0 {
        return Err(Error::Shape("cross entropy over an empty batch".into()));
    }
    // A single-logit map is treated as the two-class case with the other
    // logit fixed at zero, so labels 0 and 1 are both valid.
    let n_classes = s.c.max(2);
    if let Some(&bad) = classes.iter().find(|&&c| (c as usize) >= n_classes) {
        return Err(Error::Data(format!(
            "class label {} out of range for {} classes",
            bad, n_classes
        )));
    }
    Ok(pixels)
}

/// Mean softmax cross-entropy against per-pixel integer labels.
///
/// `classes` is laid out `(n, h, w)` row-major. With a single logit channel
/// the loss is the stable binary form `softplus(z) - y * z`.
pub fn softmax_cross_entropy(logits: &Tensor, classes: &[u32]) -> Result<f32> {
    let pixels = check_classes(logits, classes)?;
    let s = logits.shape();
    let plane = s.plane();
    let xd = logits.data();
    let mut total = 0.0f64;
    if s.c == 1 {
        for (i, &y) in classes.iter().enumerate() {
            let z = xd[i] as f64;
            total += softplus(z) - (y as f64) * z;
        }
    } else {
        for n in 0..s.n {
            for p in 0..plane {
                let base = n * s.c * plane + p;
                let mut maxv = f64::NEG_INFINITY;
                for c in 0..s.c {
                    maxv = maxv.max(xd[base + c * plane] as f64);
                }
                let mut lse = 0.0f64;
                for c in 0..s.c {
                    lse += ((xd[base + c * plane] as f64) - maxv).exp();
                }
                let y = classes[n * plane + p] as usize;
                total += maxv + lse.ln() - xd[base + y * plane] as f64;
            }
        }
    }
    Ok((total / pixels as f64) as f32)
}

/// Gradient of [`softmax_cross_entropy`] with respect to the logits.
pub fn softmax_cross_entropy_backward(
    logits: &Tensor,
    classes: &[u32],
    upstream: f32,
) -> Result<Tensor> {
    let pixels = check_classes(logits, classes)?;
    let s = logits.shape();
    let plane = s.plane();
    let xd = logits.data();
    let scale = upstream / pixels as f32;
    let mut dx = Tensor::zeros(s);
    let dd = dx.data_mut();
    if s.c == 1 {
        for (i, &y) in classes.iter().enumerate() {
            dd[i] = (stable_sigmoid(xd[i]) - y as f32) * scale;
        }
    } else {
        let mut probs = vec![0.0f64; s.c];
        for n in 0..s.n {
            for p in 0..plane {
                let base = n * s.c * plane + p;
                let mut maxv = f64::NEG_INFINITY;
                for c in 0..s.c {
                    maxv = maxv.max(xd[base + c * plane] as f64);
                }
                let mut lse = 0.0f64;
                for c in 0..s.c {
                    let e = ((xd[base + c * plane] as f64) - maxv).exp();
                    probs[c] = e;
                    lse += e;
                }
                let y = classes[n * plane + p] as usize;
                for c in 0..s.c {
                    let indicator = if c == y { 1.0 } else { 0.0 };
                    dd[base + c * plane] = ((probs[c] / lse - indicator) as f32) * scale;
                }
            }
        }
    }
    Ok(dx)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean squared error between prediction and target.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f32> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {} and target {} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.numel() == 0 {
        return Err(Error::Shape("mean squared error over an empty batch".into()));
    }
    let mut total = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p - t) as f64;
        total += d * d;
    }
    Ok((total / pred.numel() as f64) as f32)
}

/// Gradient of [`mse`] with respect to the prediction.
pub fn mse_backward(pred: &Tensor, target: &Tensor, upstream: f32) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {} and target {} differ",
            pred.shape(),
            target.shape()
        )));
    }
    let scale = 2.0 * upstream / pred.numel() as f32;
    let mut dx = pred.clone();
    for (d, &t) in dx.data_mut().iter_mut().zip(target.data()) {
        *d = (*d - t) * scale;
    }
    Ok(dx)
}
