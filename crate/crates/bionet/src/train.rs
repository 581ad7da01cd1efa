//! Training loop and dataset evaluation.

use rand::seq::SliceRandom;

use crate::augment::{augment_sample, sample as draw_affine, AugmentConfig};
use crate::data::{Sample, Target};
use crate::error::{Error, Result};
use crate::metrics::{
    dice, foreground_probability, iou, mask_from_probability, psnr, rand_f, Metric, MetricReport,
};
use crate::net::{BioNet, Head};
use crate::opt::{lr_at, Adam, LossKind, TrainConfig};
use crate::params::ParamKind;
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// What a finished training run produced.
#[derive(Debug)]
pub struct TrainReport {
    /// One line per optimizer step plus per-epoch summaries, in a fixed
    /// format so identical runs produce identical text.
    pub log: String,
    pub final_loss: f32,
    pub steps: usize,
}

enum BatchTarget {
    Classes(Vec<u32>),
    Values(Tensor),
}

fn stack_inputs(batch: &[&Sample]) -> Tensor {
    let s = batch[0].image.shape();
    let shape = Shape::new(batch.len(), s.c, s.h, s.w);
    let mut data = Vec::with_capacity(shape.numel());
    for sample in batch {
        data.extend_from_slice(sample.image.data());
    }
    Tensor::from_vec(shape, data).expect("stacked batch matches its shape")
}

fn stack_targets(batch: &[&Sample], loss: LossKind) -> Result<BatchTarget> {
    match loss {
        LossKind::CrossEntropy => {
            let mut classes = Vec::new();
            for sample in batch {
                match &sample.target {
                    Target::Mask(m) => classes.extend(m.data.iter().map(|&v| v as u32)),
                    Target::Image(_) => {
                        return Err(Error::Data(format!(
                            "sample '{}' has an image target; cross-entropy needs masks",
                            sample.id
                        )))
                    }
                }
            }
            Ok(BatchTarget::Classes(classes))
        }
        LossKind::SquaredError => {
            let first = match &batch[0].target {
                Target::Image(t) => t.shape(),
                Target::Mask(_) => {
                    return Err(Error::Data(format!(
                        "sample '{}' has a mask target; squared error needs images",
                        batch[0].id
                    )))
                }
            };
            let shape = Shape::new(batch.len(), first.c, first.h, first.w);
            let mut data = Vec::with_capacity(shape.numel());
            for sample in batch {
                match &sample.target {
                    Target::Image(t) => data.extend_from_slice(t.data()),
                    Target::Mask(_) => {
                        return Err(Error::Data(format!(
                            "sample '{}' has a mask target; squared error needs images",
                            sample.id
                        )))
                    }
                }
            }
            Ok(BatchTarget::Values(Tensor::from_vec(shape, data)?))
        }
    }
}

fn check_dataset(net: &BioNet, samples: &[Sample], loss: LossKind) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Data("training needs at least one sample".into()));
    }
    match (loss, net.config().head) {
        (LossKind::CrossEntropy, Head::Segmentation) => {}
        (LossKind::SquaredError, Head::Regression) => {}
        (l, h) => {
            return Err(Error::Config(format!(
                "loss {} does not match the network's {} head",
                l, h
            )))
        }
    }
    let s0 = samples[0].image.shape();
    for sample in samples {
        let s = sample.image.shape();
        if s != s0 {
            return Err(Error::Data(format!(
                "sample '{}' is {} but '{}' is {}; batches need uniform shapes",
                sample.id, s, samples[0].id, s0
            )));
        }
        match &sample.target {
            Target::Mask(m) => {
                if m.h != s.h || m.w != s.w {
                    return Err(Error::Data(format!(
                        "sample '{}' mask is {}x{} but its image is {}x{}",
                        sample.id, m.h, m.w, s.h, s.w
                    )));
                }
            }
            Target::Image(t) => {
                let ts = t.shape();
                let want = Shape::new(1, net.config().out_channels, s.h, s.w);
                if ts != want {
                    return Err(Error::Data(format!(
                        "sample '{}' target is {} but the network produces {}",
                        sample.id, ts, want
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Trains the network in place and returns the loss log.
///
/// Data order is shuffled per epoch from the seed's "data" stream;
/// augmentation, when enabled in `cfg`, draws from the "augment" stream so
/// the two never interact. A non-finite loss aborts with
/// [`Error::Divergence`].
pub fn train(
    net: &mut BioNet,
    samples: &[Sample],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.augment {
        aug.validate()?;
    }
    check_dataset(net, samples, cfg.loss)?;

    let conv_numel = net.params().numel_of_kind(ParamKind::Conv);
    let mut data_rng = rng::stream(cfg.seed, "data");
    let mut aug_rng = rng::stream(cfg.seed, "augment");
    let mut adam = Adam::new(net.params());
    let mut log = String::new();
    let mut global_step = 0usize;
    let mut final_loss = f32::NAN;

    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        // Shared conv weights must not grow or shrink across iterations.
        debug_assert_eq!(net.params().numel_of_kind(ParamKind::Conv), conv_numel);
        indices.shuffle(&mut data_rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if cfg.augment {
                augmented = chunk
                    .iter()
                    .map(|&i| augment_sample(&samples[i], &draw_affine(aug, &mut aug_rng)))
                    .collect();
                augmented.iter().collect()
            } else {
                chunk.iter().map(|&i| &samples[i]).collect()
            };
            let input = stack_inputs(&batch);
            let target = stack_targets(&batch, cfg.loss)?;

            let mut pass = net.forward_train(&input)?;
            let loss_id = match target {
                BatchTarget::Classes(classes) => {
                    pass.tape.softmax_cross_entropy(pass.output, classes)?
                }
                BatchTarget::Values(t) => pass.tape.mse(pass.output, &t)?,
            };
            let loss = pass.tape.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step: global_step });
            }
            let lr = lr_at(cfg.initial_lr, cfg.lr_decay, global_step);
            let grads = pass.tape.backward(net.params(), loss_id)?;
            net.params_mut().zero_grads();
            net.params_mut().accumulate(&grads)?;
            adam.step(net.params_mut(), lr)?;

            log.push_str(&format!(
                "epoch={} step={} lr={} loss={}\n",
                epoch, global_step, lr, loss
            ));
            epoch_loss += loss as f64;
            final_loss = loss;
            global_step += 1;
            batches += 1;
        }
        log.push_str(&format!(
            "epoch={} mean_loss={}\n",
            epoch,
            (epoch_loss / batches as f64) as f32
        ));
        if cfg.metrics_every > 0 && (epoch + 1) % cfg.metrics_every == 0 {
            let metric = match cfg.loss {
                LossKind::CrossEntropy => Metric::Dice,
                LossKind::SquaredError => Metric::Psnr,
            };
            let report = evaluate(net, samples, &[metric])?;
            log.push_str(&format!("epoch={} {}={}\n", epoch, metric, report.means[0]));
        }
    }
    Ok(TrainReport { log, final_loss, steps: global_step })
}

/// Runs the network over samples one at a time and scores the outputs.
///
/// Mask targets support every metric (PSNR compares the probability map
/// against the 0/1 mask); image targets support PSNR only.
pub fn evaluate(net: &BioNet, samples: &[Sample], metrics: &[Metric]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation needs at least one sample".into()));
    }
    if metrics.is_empty() {
        return Err(Error::Config("evaluation needs at least one metric".into()));
    }
    let mut ids = Vec::with_capacity(samples.len());
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        let pass = net.forward(&sample.image)?;
        let output = pass.output_tensor();
        let row = match &sample.target {
            Target::Mask(gt) => {
                let prob = foreground_probability(output)?;
                let pred = mask_from_probability(&prob, 0.5)?;
                metrics
                    .iter()
                    .map(|m| match m {
                        Metric::Dice => dice(&pred, gt),
                        Metric::Iou => iou(&pred, gt),
                        Metric::RandF => rand_f(&pred, gt).map(|s| s.f_score as f32),
                        Metric::Psnr => psnr(&prob, &gt.to_tensor(), 1.0),
                    })
                    .collect::<Result<Vec<f32>>>()?
            }
            Target::Image(gt) => metrics
                .iter()
                .map(|m| match m {
                    Metric::Psnr => psnr(output, gt, 1.0),
                    other => Err(Error::Data(format!(
                        "metric {} needs mask targets, but sample '{}' has an image target",
                        other, sample.id
                    ))),
                })
                .collect::<Result<Vec<f32>>>()?,
        };
        ids.push(sample.id.clone());
        rows.push(row);
    }
    Ok(MetricReport::new(metrics.to_vec(), ids, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, Mask};
    use crate::net::{BioNetConfig, Fusion};

    fn tiny_config() -> BioNetConfig {
        let mut cfg = BioNetConfig::default();
        cfg.depth = 1;
        cfg.base_channels = 2;
        cfg.convs_per_block = 1;
        cfg.iterations = 1;
        cfg.backward_skips = 1;
        cfg.in_channels = 1;
        cfg.out_channels = 1;
        cfg.fusion = Fusion::Concat;
        cfg
    }

    fn tiny_train_config(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.epochs = epochs;
        cfg.batch_size = 2;
        cfg
    }

    #[test]
    fn log_has_one_line_per_step_and_epoch() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = synth_blobs(3, 8, 0, 0.0).unwrap();
        let report = train(&mut net, &samples, &tiny_train_config(2), &AugmentConfig::default())
            .unwrap();
        // 3 samples in batches of 2 means 2 steps per epoch.
        assert_eq!(report.steps, 4);
        let lines: Vec<&str> = report.log.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("epoch=0 step=0 lr=0.01 loss="));
        assert!(lines[2].starts_with("epoch=0 mean_loss="));
        assert!(lines[5].starts_with("epoch=1 mean_loss="));
        assert!(report.final_loss.is_finite());
    }

    #[test]
    fn same_seed_trains_identically() {
        let samples = synth_blobs(4, 8, 1, 0.02).unwrap();
        let mut cfg = tiny_train_config(2);
        cfg.augment = true;
        let mut a = BioNet::build(&tiny_config(), 3).unwrap();
        let mut b = BioNet::build(&tiny_config(), 3).unwrap();
        let ra = train(&mut a, &samples, &cfg, &AugmentConfig::default()).unwrap();
        let rb = train(&mut b, &samples, &cfg, &AugmentConfig::default()).unwrap();
        assert_eq!(ra.log, rb.log);
        for ((_, pa), (_, pb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data());
        }
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = synth_blobs(2, 8, 0, 0.0).unwrap();
        // Poison the output head; earlier layers cannot leak NaN through
        // relu, whose max() drops it.
        for (_, p) in net.params_mut().iter_mut() {
            if p.name == "head.bias" {
                let shape = p.tensor.shape();
                p.tensor = Tensor::full(shape, f32::NAN);
            }
        }
        let err = train(&mut net, &samples, &tiny_train_config(1), &AugmentConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, step: 0 }));
    }

    #[test]
    fn loss_must_match_head_and_targets() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = synth_blobs(2, 8, 0, 0.0).unwrap();
        let mut cfg = tiny_train_config(1);
        cfg.loss = LossKind::SquaredError;
        let err = train(&mut net, &samples, &cfg, &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let mut reg_cfg = tiny_config();
        reg_cfg.head = Head::Regression;
        let mut reg_net = BioNet::build(&reg_cfg, 0).unwrap();
        let err =
            train(&mut reg_net, &samples, &cfg, &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn mixed_shapes_are_rejected() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let mut samples = synth_blobs(2, 8, 0, 0.0).unwrap();
        let mut other = synth_blobs(1, 16, 0, 0.0).unwrap();
        samples.append(&mut other);
        let err = train(&mut net, &samples, &tiny_train_config(1), &AugmentConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("uniform shapes"));
    }

    #[test]
    fn evaluate_scores_every_sample() {
        let net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = synth_blobs(3, 8, 0, 0.0).unwrap();
        let report =
            evaluate(&net, &samples, &[Metric::Dice, Metric::Iou, Metric::Psnr]).unwrap();
        assert_eq!(report.ids.len(), 3);
        assert_eq!(report.per_sample.len(), 3);
        for row in &report.per_sample {
            assert_eq!(row.len(), 3);
            assert!((0.0..=1.0).contains(&row[0]), "dice in range");
            assert!(row[2].is_finite() || row[2] == f32::INFINITY);
        }
    }

    #[test]
    fn image_targets_only_support_psnr() {
        let mut cfg = tiny_config();
        cfg.head = Head::Regression;
        let net = BioNet::build(&cfg, 0).unwrap();
        let image = Tensor::full(Shape::new(1, 1, 8, 8), 0.5);
        let sample = Sample {
            id: "s".into(),
            image: image.clone(),
            target: Target::Image(image),
        };
        let report = evaluate(&net, std::slice::from_ref(&sample), &[Metric::Psnr]).unwrap();
        assert_eq!(report.per_sample[0].len(), 1);
        let err = evaluate(&net, std::slice::from_ref(&sample), &[Metric::Dice]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn metric_lines_appear_when_requested() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = synth_blobs(2, 8, 0, 0.0).unwrap();
        let mut cfg = tiny_train_config(2);
        cfg.metrics_every = 2;
        let report = train(&mut net, &samples, &cfg, &AugmentConfig::default()).unwrap();
        assert_eq!(report.log.matches(" dice=").count(), 1);
        assert!(report.log.contains("epoch=1 dice="));
    }

    #[test]
    fn training_rejects_target_mask_size_mismatch() {
        let mut net = BioNet::build(&tiny_config(), 0).unwrap();
        let samples = vec![Sample {
            id: "bad".into(),
            image: Tensor::full(Shape::new(1, 1, 8, 8), 0.5),
            target: Target::Mask(Mask::zeros(4, 4)),
        }];
        let err = train(&mut net, &samples, &tiny_train_config(1), &AugmentConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("mask is 4x4"));
    }
}
