//! ReLU, channel concatenation, elementwise addition, and small helpers.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Shape, Tensor};

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    parallel::for_each_plane(y.data_mut(), x.shape().plane().max(1), |_, plane| {
        for v in plane.iter_mut() {
            *v = v.max(0.0);
        }
    });
    y
}

/// `dy` masked by where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if x.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match relu input {}",
            dy.shape(),
            x.shape()
        )));
    }
    let xd = x.data();
    let mut dx = dy.clone();
    let plane = x.shape().plane().max(1);
    parallel::for_each_plane(dx.data_mut(), plane, |pi, out| {
        let xp = &xd[pi * plane..][..plane];
        for (g, &v) in out.iter_mut().zip(xp) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
    });
    Ok(dx)
}

/// Stacks tensors along the channel axis, preserving argument order.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat needs at least one input".into()))?;
    let s0 = first.shape();
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        if s.n != s0.n || s.h != s0.h || s.w != s0.w {
            return Err(Error::Shape(format!(
                "concat inputs disagree outside the channel axis: {} vs {}",
                s0, s
            )));
        }
        c_total += s.c;
    }
    let out_shape = Shape::new(s0.n, c_total, s0.h, s0.w);
    let mut out = Tensor::zeros(out_shape);
    let plane = s0.plane();
    let od = out.data_mut();
    let mut c_base = 0;
    for t in inputs {
        let s = t.shape();
        let td = t.data();
        for n in 0..s.n {
            let src = &td[n * s.c * plane..][..s.c * plane];
            let dst = &mut od[(n * c_total + c_base) * plane..][..s.c * plane];
            dst.copy_from_slice(src);
        }
        c_base += s.c;
    }
    Ok(out)
}

/// Splits `dy` back into per-input gradients for [`concat_channels`].
pub fn concat_channels_backward(dy: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let s = dy.shape();
    let total: usize = channels.iter().sum();
    if total != s.c {
        return Err(Error::Shape(format!(
            "concat backward over {} channels got pieces summing to {}",
            s.c, total
        )));
    }
    let plane = s.plane();
    let dyd = dy.data();
    let mut outs = Vec::with_capacity(channels.len());
    let mut c_base = 0;
    for &c in channels {
        let mut piece = Tensor::zeros(Shape::new(s.n, c, s.h, s.w));
        let pd = piece.data_mut();
        for n in 0..s.n {
            let src = &dyd[(n * s.c + c_base) * plane..][..c * plane];
            pd[n * c * plane..][..c * plane].copy_from_slice(src);
        }
        c_base += c;
        outs.push(piece);
    }
    Ok(outs)
}

/// Copies a contiguous channel range `[from, to)` out of `x`.
pub fn slice_channels(x: &Tensor, from: usize, to: usize) -> Result<Tensor> {
    let s = x.shape();
    if from >= to || to > s.c {
        return Err(Error::Shape(format!(
            "channel slice {}..{} out of range for {}",
            from, to, s
        )));
    }
    let c = to - from;
    let plane = s.plane();
    let mut out = Tensor::zeros(Shape::new(s.n, c, s.h, s.w));
    let od = out.data_mut();
    let xd = x.data();
    for n in 0..s.n {
        let src = &xd[(n * s.c + from) * plane..][..c * plane];
        od[n * c * plane..][..c * plane].copy_from_slice(src);
    }
    Ok(out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "cannot add tensors of {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let bd = b.data();
    let mut y = a.clone();
    let plane = a.shape().plane().max(1);
    parallel::for_each_plane(y.data_mut(), plane, |pi, out| {
        let bp = &bd[pi * plane..][..plane];
        for (o, &v) in out.iter_mut().zip(bp) {
            *o += v;
        }
    });
    Ok(y)
}

/// Elementwise logistic function (inference helper, not a tape op).
pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = stable_sigmoid(*v);
    }
    y
}

pub(crate) fn stable_sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
