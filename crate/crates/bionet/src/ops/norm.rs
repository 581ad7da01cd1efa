//! Per-channel batch normalization.
//!
//! Training mode normalizes with batch statistics over `(N, H, W)` using
//! the biased variance (divide by the element count, not count minus one).
//! Evaluation mode normalizes with caller-supplied running statistics.
//! Running updates use `running = momentum * running + (1 - momentum) * batch`.
//!
//! Statistics are accumulated in `f64` with a fixed association, so results
//! do not depend on the execution mode.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// Training-mode output plus the saved statistics the backward pass needs.
pub struct BatchNormOut {
    pub y: Tensor,
    /// Batch mean per channel.
    pub mean: Vec<f32>,
    /// Biased batch variance per channel (for running-stat updates).
    pub var: Vec<f32>,
    /// `1 / sqrt(var + eps)` per channel.
    pub inv_std: Vec<f32>,
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    let c = x.shape().c;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Config(format!(
            "batch norm over {} channels got scale of {} and shift of {}",
            c,
            gamma.numel(),
            beta.numel()
        )));
    }
    if x.shape().n == 0 || x.shape().plane() == 0 {
        return Err(Error::Shape(format!(
            "batch norm needs a non-empty batch, got {}",
            x.shape()
        )));
    }
    Ok(())
}

/// Per-channel sums of `x` and `x^2` over `(N, H, W)`, in `f64`.
fn channel_moments(x: &Tensor) -> Vec<(f64, f64)> {
    let s = x.shape();
    let (plane, cplanes) = (s.plane(), s.c);
    let xd = x.data();
    parallel::map_indexed(s.c, |c| {
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            let p = &xd[(n * cplanes + c) * plane..][..plane];
            for &v in p {
                let v = v as f64;
                sum += v;
                sq += v * v;
            }
        }
        (sum, sq)
    })
}

/// Normalizes with batch statistics; returns the output and saved stats.
pub fn batchnorm2d_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<BatchNormOut> {
    check_affine(x, gamma, beta)?;
    let s = x.shape();
    let m = (s.n * s.plane()) as f64;

    let moments = channel_moments(x);
    let mut mean = Vec::with_capacity(s.c);
    let mut var = Vec::with_capacity(s.c);
    let mut inv_std = Vec::with_capacity(s.c);
    for &(sum, sq) in &moments {
        let mu = sum / m;
        let v = (sq / m - mu * mu).max(0.0);
        mean.push(mu as f32);
        var.push(v as f32);
        inv_std.push((1.0 / (v + eps as f64).sqrt()) as f32);
    }

    let y = normalize(x, gamma, beta, &mean, &inv_std);
    Ok(BatchNormOut { y, mean, var, inv_std })
}

/// Biased per-channel batch variance, exposed for running-stat updates.
pub fn batch_stats(x: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
    if x.shape().n == 0 || x.shape().plane() == 0 {
        return Err(Error::Shape(format!(
            "batch norm needs a non-empty batch, got {}",
            x.shape()
        )));
    }
    let m = (x.shape().n * x.shape().plane()) as f64;
    let moments = channel_moments(x);
    let mean = moments.iter().map(|&(s, _)| (s / m) as f32).collect();
    let var = moments
        .iter()
        .map(|&(s, q)| {
            let mu = s / m;
            (q / m - mu * mu).max(0.0) as f32
        })
        .collect();
    Ok((mean, var))
}

/// Normalizes with fixed (running) statistics.
pub fn batchnorm2d_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
) -> Result<Tensor> {
    check_affine(x, gamma, beta)?;
    let c = x.shape().c;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::Config(format!(
            "batch norm over {} channels got running stats of {} and {}",
            c,
            running_mean.len(),
            running_var.len()
        )));
    }
    let inv_std: Vec<f32> = running_var
        .iter()
        .map(|&v| (1.0 / ((v as f64) + eps as f64).sqrt()) as f32)
        .collect();
    Ok(normalize(x, gamma, beta, running_mean, &inv_std))
}

fn normalize(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f32], inv_std: &[f32]) -> Tensor {
    let s = x.shape();
    let plane = s.plane();
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let mut y = Tensor::zeros(s);
    parallel::for_each_plane(y.data_mut(), plane, |pi, out| {
        let c = pi % s.c;
        let (mu, istd) = (mean[c], inv_std[c]);
        let (scale, shift) = (gd[c] * istd, bd[c] - gd[c] * istd * mu);
        let xp = &xd[pi * plane..][..plane];
        for (o, &v) in out.iter_mut().zip(xp) {
            *o = v * scale + shift;
        }
    });
    y
}

/// Gradients of [`batchnorm2d_train`] using the saved batch statistics.
pub fn batchnorm2d_backward_train(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f32],
    inv_std: &[f32],
    dy: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let s = x.shape();
    if dy.shape() != s {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match batch norm input {}",
            dy.shape(),
            s
        )));
    }
    let plane = s.plane();
    let m = (s.n * plane) as f64;
    let (xd, gd, dyd) = (x.data(), gamma.data(), dy.data());

    // Per channel: S1 = sum(dy), S2 = sum(dy * xhat).
    let sums = parallel::map_indexed(s.c, |c| {
        let (mu, istd) = (mean[c] as f64, inv_std[c] as f64);
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            let xp = &xd[base..][..plane];
            let gp = &dyd[base..][..plane];
            for (&xv, &g) in xp.iter().zip(gp) {
                let xhat = (xv as f64 - mu) * istd;
                s1 += g as f64;
                s2 += g as f64 * xhat;
            }
        }
        (s1, s2)
    });

    let dgamma: Vec<f32> = sums.iter().map(|&(_, s2)| s2 as f32).collect();
    let dbeta: Vec<f32> = sums.iter().map(|&(s1, _)| s1 as f32).collect();

    let mut dx = Tensor::zeros(s);
    parallel::for_each_plane(dx.data_mut(), plane, |pi, out| {
        let c = pi % s.c;
        let (mu, istd) = (mean[c] as f64, inv_std[c] as f64);
        let (s1, s2) = sums[c];
        let scale = gd[c] as f64 * istd;
        let (m1, m2) = (s1 / m, s2 / m);
        let xp = &xd[pi * plane..][..plane];
        let gp = &dyd[pi * plane..][..plane];
        for ((o, &xv), &g) in out.iter_mut().zip(xp).zip(gp) {
            let xhat = (xv as f64 - mu) * istd;
            *o = (scale * (g as f64 - m1 - xhat * m2)) as f32;
        }
    });
    Ok((dx, dgamma, dbeta))
}

/// Gradients of [`batchnorm2d_eval`]: statistics are constants here.
pub fn batchnorm2d_backward_eval(
    x: &Tensor,
    gamma: &Tensor,
    running_mean: &[f32],
    running_var: &[f32],
    eps: f32,
    dy: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let s = x.shape();
    if dy.shape() != s {
        return Err(Error::Shape(format!(
            "upstream gradient {} does not match batch norm input {}",
            dy.shape(),
            s
        )));
    }
    let plane = s.plane();
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|&v| 1.0 / ((v as f64) + eps as f64).sqrt())
        .collect();
    let (xd, gd, dyd) = (x.data(), gamma.data(), dy.data());

    let sums = parallel::map_indexed(s.c, |c| {
        let (mu, istd) = (running_mean[c] as f64, inv_std[c]);
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for n in 0..s.n {
            let base = (n * s.c + c) * plane;
            let xp = &xd[base..][..plane];
            let gp = &dyd[base..][..plane];
            for (&xv, &g) in xp.iter().zip(gp) {
                s1 += g as f64;
                s2 += g as f64 * (xv as f64 - mu) * istd;
            }
        }
        (s1, s2)
    });
    let dgamma: Vec<f32> = sums.iter().map(|&(_, s2)| s2 as f32).collect();
    let dbeta: Vec<f32> = sums.iter().map(|&(s1, _)| s1 as f32).collect();

    let mut dx = Tensor::zeros(s);
    parallel::for_each_plane(dx.data_mut(), plane, |pi, out| {
        let c = pi % s.c;
        let scale = (gd[c] as f64 * inv_std[c]) as f32;
        let gp = &dyd[pi * plane..][..plane];
        for (o, &g) in out.iter_mut().zip(gp) {
            *o = scale * g;
        }
    });
    Ok((dx, dgamma, dbeta))
}

/// In-place exponential moving average update of running statistics.
pub fn update_running(running: &mut [f32], batch: &[f32], momentum: f32) {
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
}
