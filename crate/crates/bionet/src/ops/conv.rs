//! 2D convolution (cross-correlation) and transposed convolution.
//!
//! `conv2d` slides the kernel without flipping it. `conv_transpose2d` is
//! its exact adjoint: for matching geometry,
//! `<conv_transpose2d(x, w), y> == <x, conv2d(y, w'), >` where `w'` is the
//! same buffer with input/output channel roles swapped.
//!
//! Both kernels parallelize over output planes `(batch, out_channel)`; the
//! arithmetic within a plane is sequential and identical in parallel and
//! sequential modes.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Shape, Tensor};

fn check_nonempty(t: &Tensor, what: &str) -> Result<()> {
    if t.numel() == 0 {
        return Err(Error::Shape(format!("{} must be non-empty, got {}", what, t.shape())));
    }
    Ok(())
}

fn check_kernel(w: &Tensor) -> Result<usize> {
    let ws = w.shape();
    if ws.h != ws.w || ws.h == 0 {
        return Err(Error::Shape(format!("kernel must be square and non-empty, got {}", ws)));
    }
    Ok(ws.h)
}

fn conv_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let (he, we) = (h + 2 * pad, w + 2 * pad);
    if he < k || we < k {
        return Err(Error::Shape(format!(
            "input {}x{} with padding {} is smaller than kernel size {}",
            h, w, pad, k
        )));
    }
    Ok(((he - k) / stride + 1, (we - k) / stride + 1))
}

/// Cross-correlation of `x (N,Cin,H,W)` with `w (Cout,Cin,K,K)` plus bias.
///
/// Output spatial size is `(H + 2·pad - K) / stride + 1` per dimension.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    check_nonempty(x, "conv input")?;
    let k = check_kernel(w)?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs.c != ws.c {
        return Err(Error::Config(format!(
            "conv input has {} channels but kernel expects {}",
            xs.c, ws.c
        )));
    }
    if b.numel() != ws.n {
        return Err(Error::Shape(format!(
            "bias has {} values for {} output channels",
            b.numel(),
            ws.n
        )));
    }
    let (ho, wo) = conv_out_dims(xs.h, xs.w, k, stride, pad)?;

    let (n, cin, cout) = (xs.n, xs.c, ws.n);
    let (h, wi) = (xs.h, xs.w);
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let (xplane, oplane, kk) = (h * wi, ho * wo, k * k);

    let mut out = Tensor::zeros(Shape::new(n, cout, ho, wo));
    parallel::for_each_plane(out.data_mut(), oplane, |pi, plane| {
        let (ni, co) = (pi / cout, pi % cout);
        plane.fill(bd[co]);
        for ci in 0..cin {
            let xp = &xd[(ni * cin + ci) * xplane..][..xplane];
            let wk = &wd[(co * cin + ci) * kk..][..kk];
            if stride == 1 {
                corr_accum_s1(plane, ho, wo, xp, h, wi, wk, k, pad);
            } else {
                corr_accum(plane, ho, wo, xp, h, wi, wk, k, stride, pad);
            }
        }
    });
    Ok(out)
}

/// Stride-1 accumulation: one contiguous saxpy per (kernel tap, output row).
#[allow(clippy::too_many_arguments)]
fn corr_accum_s1(
    out: &mut [f32],
    ho: usize,
    wo: usize,
    xp: &[f32],
    h: usize,
    wi: usize,
    wk: &[f32],
    k: usize,
    pad: usize,
) {
    for kh in 0..k {
        let dh = kh as isize - pad as isize; // ih = oh + dh
        let oh_lo = (-dh).max(0) as usize;
        let oh_hi = ho.min((h as isize - dh).max(0) as usize);
        for kw in 0..k {
            let wv = wk[kh * k + kw];
            let dw = kw as isize - pad as isize; // iw = ow + dw
            let ow_lo = (-dw).max(0) as usize;
            let ow_hi = wo.min((wi as isize - dw).max(0) as usize);
            if ow_lo >= ow_hi {
                continue;
            }
            for oh in oh_lo..oh_hi {
                let ih = (oh as isize + dh) as usize;
                let orow = &mut out[oh * wo + ow_lo..oh * wo + ow_hi];
                let xrow = &xp[ih * wi + (ow_lo as isize + dw) as usize..][..ow_hi - ow_lo];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += wv * xv;
                }
            }
        }
    }
}

/// General-stride accumulation, one output pixel at a time.
#[allow(clippy::too_many_arguments)]
fn corr_accum(
    out: &mut [f32],
    ho: usize,
    wo: usize,
    xp: &[f32],
    h: usize,
    wi: usize,
    wk: &[f32],
    k: usize,
    stride: usize,
    pad: usize,
) {
    for oh in 0..ho {
        for ow in 0..wo {
            let mut acc = 0.0f32;
            for kh in 0..k {
                let ih = oh * stride + kh;
                if ih < pad || ih - pad >= h {
                    continue;
                }
                let row = (ih - pad) * wi;
                for kw in 0..k {
                    let iw = ow * stride + kw;
                    if iw < pad || iw - pad >= wi {
                        continue;
                    }
                    acc += wk[kh * k + kw] * xp[row + iw - pad];
                }
            }
            out[oh * wo + ow] += acc;
        }
    }
}

/// Gradients of [`conv2d`] with respect to its input, kernel, and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let k = check_kernel(w)?;
    let (xs, ws, ys) = (x.shape(), w.shape(), dy.shape());
    if xs.c != ws.c {
        return Err(Error::Config(format!(
            "conv input has {} channels but kernel expects {}",
            xs.c, ws.c
        )));
    }
    let (ho, wo) = conv_out_dims(xs.h, xs.w, k, stride, pad)?;
    if ys != Shape::new(xs.n, ws.n, ho, wo) {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match conv output {}",
            ys,
            Shape::new(xs.n, ws.n, ho, wo)
        )));
    }

    let (n, cin, cout) = (xs.n, xs.c, ws.n);
    let (h, wi) = (xs.h, xs.w);
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let (xplane, oplane, kk) = (h * wi, ho * wo, k * k);

    let db_vals = parallel::map_indexed(cout, |co| {
        let mut s = 0.0f64;
        for ni in 0..n {
            let gp = &gd[(ni * cout + co) * oplane..][..oplane];
            s += gp.iter().map(|&v| v as f64).sum::<f64>();
        }
        s as f32
    });
    let db = Tensor::from_vec(Shape::new(1, cout, 1, 1), db_vals)?;

    let mut dw = Tensor::zeros(ws);
    parallel::for_each_plane(dw.data_mut(), kk, |pi, wplane| {
        let (co, ci) = (pi / cin, pi % cin);
        for kh in 0..k {
            let dh = kh as isize - pad as isize;
            let oh_lo = (-dh).max(0) as usize;
            let oh_hi = ho.min((h as isize - dh).max(0) as usize);
            for kw in 0..k {
                let dwo = kw as isize - pad as isize;
                let ow_lo = (-dwo).max(0) as usize;
                let ow_hi = wo.min((wi as isize - dwo).max(0) as usize);
                let mut acc = 0.0f64;
                for ni in 0..n {
                    let xp = &xd[(ni * cin + ci) * xplane..][..xplane];
                    let gp = &gd[(ni * cout + co) * oplane..][..oplane];
                    if stride == 1 {
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = (oh as isize + dh) as usize;
                            let grow = &gp[oh * wo + ow_lo..oh * wo + ow_hi];
                            let xrow =
                                &xp[ih * wi + (ow_lo as isize + dwo) as usize..][..ow_hi - ow_lo];
                            let mut dot = 0.0f32;
                            for (&g, &xv) in grow.iter().zip(xrow) {
                                dot += g * xv;
                            }
                            acc += dot as f64;
                        }
                    } else {
                        for oh in 0..ho {
                            let ih = oh * stride + kh;
                            if ih < pad || ih - pad >= h {
                                continue;
                            }
                            let row = (ih - pad) * wi;
                            for ow in 0..wo {
                                let iw = ow * stride + kw;
                                if iw < pad || iw - pad >= wi {
                                    continue;
                                }
                                acc += (gp[oh * wo + ow] * xp[row + iw - pad]) as f64;
                            }
                        }
                    }
                }
                wplane[kh * k + kw] = acc as f32;
            }
        }
    });

    let mut dx = Tensor::zeros(xs);
    parallel::for_each_plane(dx.data_mut(), xplane, |pi, xg| {
        let (ni, ci) = (pi / cin, pi % cin);
        for co in 0..cout {
            let gp = &gd[(ni * cout + co) * oplane..][..oplane];
            let wk = &wd[(co * cin + ci) * kk..][..kk];
            if stride == 1 {
                for kh in 0..k {
                    let dh = pad as isize - kh as isize; // oh = ih + dh
                    let ih_lo = (-dh).max(0) as usize;
                    let ih_hi = h.min((ho as isize - dh).max(0) as usize);
                    for kw in 0..k {
                        let wv = wk[kh * k + kw];
                        let dwo = pad as isize - kw as isize;
                        let iw_lo = (-dwo).max(0) as usize;
                        let iw_hi = wi.min((wo as isize - dwo).max(0) as usize);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        for ih in ih_lo..ih_hi {
                            let oh = (ih as isize + dh) as usize;
                            let xrow = &mut xg[ih * wi + iw_lo..ih * wi + iw_hi];
                            let grow =
                                &gp[oh * wo + (iw_lo as isize + dwo) as usize..][..iw_hi - iw_lo];
                            for (o, &gv) in xrow.iter_mut().zip(grow) {
                                *o += wv * gv;
                            }
                        }
                    }
                }
            } else {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let gv = gp[oh * wo + ow];
                        for kh in 0..k {
                            let ih = oh * stride + kh;
                            if ih < pad || ih - pad >= h {
                                continue;
                            }
                            let row = (ih - pad) * wi;
                            for kw in 0..k {
                                let iw = ow * stride + kw;
                                if iw < pad || iw - pad >= wi {
                                    continue;
                                }
                                xg[row + iw - pad] += wk[kh * k + kw] * gv;
                            }
                        }
                    }
                }
            }
        }
    });

    Ok((dx, dw, db))
}

/// Transposed convolution of `x (N,Cin,H,W)` with `w (Cin,Cout,K,K)`.
///
/// Each input pixel stamps a `K x K` kernel copy into the output at
/// `stride` spacing; output spatial size is `(H - 1)·stride + K`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    check_nonempty(x, "transposed conv input")?;
    let k = check_kernel(w)?;
    let (xs, ws) = (x.shape(), w.shape());
    if xs.c != ws.n {
        return Err(Error::Config(format!(
            "transposed conv input has {} channels but kernel expects {}",
            xs.c, ws.n
        )));
    }
    if b.numel() != ws.c {
        return Err(Error::Shape(format!(
            "bias has {} values for {} output channels",
            b.numel(),
            ws.c
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }

    let (n, cin, cout) = (xs.n, xs.c, ws.c);
    let (h, wi) = (xs.h, xs.w);
    let (oh, ow) = ((h - 1) * stride + k, (wi - 1) * stride + k);
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let (xplane, oplane, kk) = (h * wi, oh * ow, k * k);

    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    parallel::for_each_plane(out.data_mut(), oplane, |pi, plane| {
        let (ni, co) = (pi / cout, pi % cout);
        plane.fill(bd[co]);
        for ci in 0..cin {
            let xp = &xd[(ni * cin + ci) * xplane..][..xplane];
            let wk = &wd[(ci * cout + co) * kk..][..kk];
            if k == stride {
                // Each output pixel is covered by exactly one kernel tap.
                for r in 0..oh {
                    let (ih, kh) = (r / k, r % k);
                    let xrow = &xp[ih * wi..][..wi];
                    let orow = &mut plane[r * ow..][..ow];
                    for (iw, &xv) in xrow.iter().enumerate() {
                        let base = iw * k;
                        for kw in 0..k {
                            orow[base + kw] += wk[kh * k + kw] * xv;
                        }
                    }
                }
            } else {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut acc = 0.0f32;
                        for kh in 0..=r.min(k - 1) {
                            let rr = r - kh;
                            if rr % stride != 0 || rr / stride >= h {
                                continue;
                            }
                            let ih = rr / stride;
                            for kw in 0..=c.min(k - 1) {
                                let cc = c - kw;
                                if cc % stride != 0 || cc / stride >= wi {
                                    continue;
                                }
                                acc += wk[kh * k + kw] * xp[ih * wi + cc / stride];
                            }
                        }
                        plane[r * ow + c] += acc;
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, kernel, and bias.
pub fn conv_transpose2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let k = check_kernel(w)?;
    let (xs, ws, ys) = (x.shape(), w.shape(), dy.shape());
    if xs.c != ws.n {
        return Err(Error::Config(format!(
            "transposed conv input has {} channels but kernel expects {}",
            xs.c, ws.n
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let (oh, ow) = ((xs.h - 1) * stride + k, (xs.w - 1) * stride + k);
    if ys != Shape::new(xs.n, ws.c, oh, ow) {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match transposed conv output {}",
            ys,
            Shape::new(xs.n, ws.c, oh, ow)
        )));
    }

    let (n, cin, cout) = (xs.n, xs.c, ws.c);
    let (h, wi) = (xs.h, xs.w);
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let (xplane, oplane, kk) = (h * wi, oh * ow, k * k);

    let db_vals = parallel::map_indexed(cout, |co| {
        let mut s = 0.0f64;
        for ni in 0..n {
            let gp = &gd[(ni * cout + co) * oplane..][..oplane];
            s += gp.iter().map(|&v| v as f64).sum::<f64>();
        }
        s as f32
    });
    let db = Tensor::from_vec(Shape::new(1, cout, 1, 1), db_vals)?;

    let mut dx = Tensor::zeros(xs);
    parallel::for_each_plane(dx.data_mut(), xplane, |pi, xg| {
        let (ni, ci) = (pi / cin, pi % cin);
        for co in 0..cout {
            let gp = &gd[(ni * cout + co) * oplane..][..oplane];
            let wk = &wd[(ci * cout + co) * kk..][..kk];
            for ih in 0..h {
                let xrow = &mut xg[ih * wi..][..wi];
                for kh in 0..k {
                    let grow = &gp[(ih * stride + kh) * ow..][..ow];
                    for kw in 0..k {
                        let wv = wk[kh * k + kw];
                        for (iw, o) in xrow.iter_mut().enumerate() {
                            *o += wv * grow[iw * stride + kw];
                        }
                    }
                }
            }
        }
    });

    let mut dw = Tensor::zeros(ws);
    parallel::for_each_plane(dw.data_mut(), kk, |pi, wplane| {
        let (ci, co) = (pi / cout, pi % cout);
        for kh in 0..k {
            for kw in 0..k {
                let mut acc = 0.0f64;
                for ni in 0..n {
                    let xp = &xd[(ni * cin + ci) * xplane..][..xplane];
                    let gp = &gd[(ni * cout + co) * oplane..][..oplane];
                    for ih in 0..h {
                        let xrow = &xp[ih * wi..][..wi];
                        let grow = &gp[(ih * stride + kh) * ow..][..ow];
                        let mut dot = 0.0f32;
                        for (iw, &xv) in xrow.iter().enumerate() {
                            dot += xv * grow[iw * stride + kw];
                        }
                        acc += dot as f64;
                    }
                }
                wplane[kh * k + kw] = acc as f32;
            }
        }
    });

    Ok((dx, dw, db))
}
