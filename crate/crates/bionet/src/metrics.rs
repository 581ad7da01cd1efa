//! Evaluation metrics for segmentation and restoration outputs.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::ops::elementwise::stable_sigmoid;
use crate::tensor::{Shape, Tensor};

/// Metric names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Dice,
    Iou,
    Psnr,
    RandF,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Dice => write!(f, "dice"),
            Metric::Iou => write!(f, "iou"),
            Metric::Psnr => write!(f, "psnr"),
            Metric::RandF => write!(f, "rand-f"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Metric> {
        match s {
            "dice" => Ok(Metric::Dice),
            "iou" => Ok(Metric::Iou),
            "psnr" => Ok(Metric::Psnr),
            "rand-f" => Ok(Metric::RandF),
            other => Err(Error::Config(format!(
                "unknown metric '{}' (expected dice, iou, psnr, or rand-f)",
                other
            ))),
        }
    }
}

fn check_same_size(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::Shape(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    Ok(())
}

fn overlap_counts(pred: &Mask, gt: &Mask) -> (u64, u64, u64) {
    let mut inter = 0u64;
    let mut np = 0u64;
    let mut ng = 0u64;
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p & g) as u64;
        np += p as u64;
        ng += g as u64;
    }
    (inter, np, ng)
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)`. Two empty masks score 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f32> {
    check_same_size(pred, gt)?;
    let (inter, np, ng) = overlap_counts(pred, gt);
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok((2.0 * inter as f64 / (np + ng) as f64) as f32)
}

/// Intersection over union `|A∩B| / |A∪B|`. Two empty masks score 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f32> {
    check_same_size(pred, gt)?;
    let (inter, np, ng) = overlap_counts(pred, gt);
    let union = np + ng - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok((inter as f64 / union as f64) as f32)
}

/// Peak signal-to-noise ratio in decibels; infinite for identical inputs.
pub fn psnr(pred: &Tensor, gt: &Tensor, peak: f32) -> Result<f32> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "psnr inputs differ in shape: {} vs {}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let d = (p - g) as f64;
        acc += d * d;
    }
    let mse = acc / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(f32::INFINITY);
    }
    Ok((10.0 * ((peak as f64).powi(2) / mse).log10()) as f32)
}

/// Labels 4-connected foreground components, 1-based in scan order;
/// background pixels stay 0.
pub fn label_components_4(mask: &Mask) -> Vec<u32> {
    let (h, w) = (mask.h, mask.w);
    let mut labels = vec![0u32; h * w];
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (r, c) = (idx / w, idx % w);
            let mut visit = |nidx: usize| {
                if mask.data[nidx] == 1 && labels[nidx] == 0 {
                    labels[nidx] = next;
                    stack.push(nidx);
                }
            };
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
        }
        next += 1;
    }
    labels
}

/// Pairwise object-level agreement between two segmentations.
#[derive(Clone, Copy, Debug)]
pub struct RandScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn same_component_pairs<I: Iterator<Item = u64>>(sizes: I) -> u64 {
    sizes.map(|n| n * n.saturating_sub(1) / 2).sum()
}

/// Rand F-score over connected components of the foreground.
///
/// Both masks are split into 4-connected components. Counting pixel pairs
/// that share a component, precision is the fraction of predicted pairs
/// that also share a ground-truth component and recall the converse; the
/// score is their harmonic mean. A side with no pairs at all scores 1 on
/// its own ratio. Ground truth must contain foreground.
pub fn rand_f(pred: &Mask, gt: &Mask) -> Result<RandScore> {
    check_same_size(pred, gt)?;
    if gt.foreground_count() == 0 {
        return Err(Error::Data("rand-f needs ground truth with foreground".into()));
    }
    let pl = label_components_4(pred);
    let gl = label_components_4(gt);
    // Labels are consecutive 1..=k, so sizes fit in dense tables. Slot 0
    // collects background and is excluded from the pair counts.
    let np = pl.iter().copied().max().unwrap_or(0) as usize;
    let ng = gl.iter().copied().max().unwrap_or(0) as usize;
    let mut pred_sizes = vec![0u64; np + 1];
    let mut gt_sizes = vec![0u64; ng + 1];
    for (&p, &g) in pl.iter().zip(&gl) {
        pred_sizes[p as usize] += 1;
        gt_sizes[g as usize] += 1;
    }
    // The joint table can reach np*ng cells; fall back to a map when a
    // dense table would be larger than the mask itself.
    let joint_pairs = if np * ng <= pl.len().max(4096) {
        let mut joint = vec![0u64; np * ng];
        for (&p, &g) in pl.iter().zip(&gl) {
            if p != 0 && g != 0 {
                joint[(p as usize - 1) * ng + (g as usize - 1)] += 1;
            }
        }
        same_component_pairs(joint.into_iter())
    } else {
        let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
        for (&p, &g) in pl.iter().zip(&gl) {
            if p != 0 && g != 0 {
                *joint.entry((p, g)).or_insert(0) += 1;
            }
        }
        same_component_pairs(joint.values().copied())
    };
    let pred_pairs = same_component_pairs(pred_sizes[1..].iter().copied());
    let gt_pairs = same_component_pairs(gt_sizes[1..].iter().copied());
    let precision = if pred_pairs == 0 { 1.0 } else { joint_pairs as f64 / pred_pairs as f64 };
    let recall = if gt_pairs == 0 { 1.0 } else { joint_pairs as f64 / gt_pairs as f64 };
    let f_score =
        if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(RandScore { precision, recall, f_score })
}

/// Foreground probability map from raw network output.
///
/// A single-channel output is passed through a sigmoid; a two-channel
/// output through a softmax, keeping channel 1. Wider outputs have no
/// single foreground class to extract.
pub fn foreground_probability(output: &Tensor) -> Result<Tensor> {
    let s = output.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
    match s.c {
        1 => {
            for (o, &z) in out.data_mut().iter_mut().zip(output.data()) {
                *o = stable_sigmoid(z);
            }
        }
        2 => {
            let plane = s.plane();
            for n in 0..s.n {
                let z0 = s.index(n, 0, 0, 0);
                let z1 = s.index(n, 1, 0, 0);
                let dst = n * plane;
                for i in 0..plane {
                    // softmax over two channels reduces to a sigmoid of the
                    // logit difference
                    out.data_mut()[dst + i] =
                        stable_sigmoid(output.data()[z1 + i] - output.data()[z0 + i]);
                }
            }
        }
        c => {
            return Err(Error::Config(format!(
                "foreground probability needs 1 or 2 output channels, got {}",
                c
            )))
        }
    }
    Ok(out)
}

/// Thresholds a single-plane probability map into a mask (strictly greater).
pub fn mask_from_probability(prob: &Tensor, threshold: f32) -> Result<Mask> {
    let s = prob.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::Shape(format!(
            "expected a 1x1xHxW probability map, got {}",
            s
        )));
    }
    let data = prob.data().iter().map(|&p| (p > threshold) as u8).collect();
    Mask::new(s.h, s.w, data)
}

/// Per-sample metric values plus their means, with a fixed text rendering.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub ids: Vec<String>,
    /// One row per sample, one column per metric.
    pub per_sample: Vec<Vec<f32>>,
    pub means: Vec<f32>,
}

impl MetricReport {
    pub fn new(metrics: Vec<Metric>, ids: Vec<String>, per_sample: Vec<Vec<f32>>) -> MetricReport {
        let mut means = vec![0.0f32; metrics.len()];
        for row in &per_sample {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v / per_sample.len() as f32;
            }
        }
        MetricReport { metrics, ids, per_sample, means }
    }

    pub fn mean_of(&self, metric: Metric) -> Option<f32> {
        self.metrics.iter().position(|&m| m == metric).map(|i| self.means[i])
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id_width = self
            .ids
            .iter()
            .map(|s| s.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap_or(4);
        write!(f, "{:<width$}", "id", width = id_width)?;
        for m in &self.metrics {
            write!(f, "  {:>8}", m.to_string())?;
        }
        writeln!(f)?;
        for (id, row) in self.ids.iter().zip(&self.per_sample) {
            write!(f, "{:<width$}", id, width = id_width)?;
            for v in row {
                write!(f, "  {:>8.4}", v)?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<width$}", "mean", width = id_width)?;
        for v in &self.means {
            write!(f, "  {:>8.4}", v)?;
        }
        writeln!(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, data: Vec<u8>) -> Mask {
        Mask::new(h, w, data).unwrap()
    }

    #[test]
    fn dice_and_iou_hand_values() {
        let pred = mask(2, 2, vec![1, 1, 0, 0]);
        let gt = mask(2, 2, vec![1, 0, 1, 0]);
        assert_eq!(dice(&pred, &gt).unwrap(), 0.5);
        assert!((iou(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn empty_masks_agree_perfectly() {
        let a = Mask::zeros(3, 3);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_masks_are_rejected() {
        let a = Mask::zeros(2, 2);
        let b = Mask::zeros(2, 3);
        assert!(dice(&a, &b).is_err());
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn psnr_hand_values() {
        let a = Tensor::full(Shape::new(1, 1, 2, 2), 0.5);
        let b = Tensor::full(Shape::new(1, 1, 2, 2), 0.6);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-3, "{}", p);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f32::INFINITY);
    }

    #[test]
    fn components_respect_4_connectivity() {
        // Two diagonal pixels touch only at a corner and stay separate.
        let m = mask(2, 2, vec![1, 0, 0, 1]);
        let labels = label_components_4(&m);
        assert_eq!(labels, vec![1, 0, 0, 2]);

        let m = mask(2, 3, vec![1, 1, 0, 0, 1, 0]);
        let labels = label_components_4(&m);
        assert_eq!(labels, vec![1, 1, 0, 0, 1, 0]);
    }

    #[test]
    fn rand_f_frozen_example() {
        // Ground truth has two 2-pixel objects; the prediction merges them
        // and an extra background pixel into one 5-pixel object.
        let gt = mask(1, 6, vec![1, 1, 0, 1, 1, 0]);
        let pred = mask(1, 6, vec![1, 1, 1, 1, 1, 0]);
        let s = rand_f(&pred, &gt).unwrap();
        assert!((s.precision - 0.2).abs() < 1e-12, "{}", s.precision);
        assert!((s.recall - 1.0).abs() < 1e-12, "{}", s.recall);
        assert!((s.f_score - 1.0 / 3.0).abs() < 1e-12, "{}", s.f_score);
    }

    #[test]
    fn rand_f_perfect_and_vacuous_cases() {
        let gt = mask(1, 5, vec![1, 1, 0, 1, 1]);
        let s = rand_f(&gt, &gt).unwrap();
        assert_eq!(s.f_score, 1.0);

        // Prediction of isolated single pixels has no same-object pairs, so
        // precision is vacuously perfect but recall is zero.
        let pred = mask(1, 5, vec![1, 0, 0, 0, 1]);
        let s = rand_f(&pred, &gt).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.f_score, 0.0);

        assert!(rand_f(&gt, &Mask::zeros(1, 5)).is_err());
    }

    #[test]
    fn foreground_probability_matches_sigmoid_and_softmax() {
        let one = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 2.0]).unwrap();
        let p = foreground_probability(&one).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-7);
        assert!((p.data()[1] - 1.0 / (1.0 + (-2.0f32).exp())).abs() < 1e-6);

        let two = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 3.0]).unwrap();
        let p = foreground_probability(&two).unwrap();
        let expect = (3.0f64.exp() / (1.0f64.exp() + 3.0f64.exp())) as f32;
        assert!((p.data()[0] - expect).abs() < 1e-6);

        let three = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(foreground_probability(&three).is_err());
    }

    #[test]
    fn threshold_is_strictly_greater() {
        let p = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.4, 0.5, 0.6]).unwrap();
        let m = mask_from_probability(&p, 0.5).unwrap();
        assert_eq!(m.data, vec![0, 0, 1]);
    }

    #[test]
    fn report_renders_deterministically() {
        let r = MetricReport::new(
            vec![Metric::Dice, Metric::Iou],
            vec!["a".into(), "long_name".into()],
            vec![vec![1.0, 0.5], vec![0.0, 0.25]],
        );
        assert_eq!(r.means, vec![0.5, 0.375]);
        assert_eq!(r.mean_of(Metric::Iou), Some(0.375));
        assert_eq!(r.mean_of(Metric::Psnr), None);
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("id"));
        assert!(lines[0].contains("dice"));
        assert!(lines[3].starts_with("mean"));
        assert!(lines[3].contains("0.3750"));
    }
}
