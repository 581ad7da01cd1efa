//! Reverse-mode autodiff over a linear operation tape.
//!
//! Each recorded operation stores the value ids it read, the parameter ids
//! it used, and whatever forward context its backward rule needs (pool
//! argmax indices, batch norm statistics, loss targets). [`Tape::backward`]
//! replays the tape in reverse, summing gradients into per-value and
//! per-parameter accumulators, so a parameter used by several operations
//! (a shared weight applied at every recurrence iteration) receives the sum
//! of all path gradients.

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, Params};
use crate::tensor::{Shape, Tensor};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub(crate) usize);

enum NormStats {
    /// Saved batch statistics (training mode).
    Batch { mean: Vec<f32>, inv_std: Vec<f32> },
    /// Snapshot of the running statistics used (evaluation mode).
    Running { mean: Vec<f32>, var: Vec<f32>, eps: f32 },
}

enum Node {
    Conv2d { x: ValueId, w: ParamId, b: ParamId, stride: usize, pad: usize, out: ValueId },
    ConvTranspose2d { x: ValueId, w: ParamId, b: ParamId, stride: usize, out: ValueId },
    MaxPool2d { x: ValueId, k: usize, stride: usize, indices: Vec<u32>, out: ValueId },
    BatchNorm { x: ValueId, gamma: ParamId, beta: ParamId, stats: NormStats, out: ValueId },
    Relu { x: ValueId, out: ValueId },
    ConcatChannels { inputs: Vec<ValueId>, out: ValueId },
    Add { a: ValueId, b: ValueId, out: ValueId },
    SoftmaxCrossEntropy { logits: ValueId, classes: Vec<u32>, out: ValueId },
    Mse { pred: ValueId, target: Tensor, out: ValueId },
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    slots: Vec<Option<Vec<f32>>>,
    params: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    /// Gradient with respect to a recorded value (inputs included).
    pub fn slot(&self, id: ValueId) -> Option<&[f32]> {
        self.slots.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to a parameter, if it participated.
    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Linear record of one forward pass.
#[derive(Default)]
pub struct Tape {
    slots: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    /// Registers an external value (network input or injected constant).
    pub fn input(&mut self, x: &Tensor) -> ValueId {
        self.push(x.clone())
    }

    /// The tensor held by a value slot.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.slots[id.0]
    }

    pub fn num_values(&self) -> usize {
        self.slots.len()
    }

    pub fn num_ops(&self) -> usize {
        self.nodes.len()
    }

    /// How many recorded operations read the given parameter.
    pub fn param_uses(&self, id: ParamId) -> usize {
        self.nodes
            .iter()
            .filter(|n| match n {
                Node::Conv2d { w, b, .. } | Node::ConvTranspose2d { w, b, .. } => {
                    *w == id || *b == id
                }
                Node::BatchNorm { gamma, beta, .. } => *gamma == id || *beta == id,
                _ => false,
            })
            .count()
    }

    fn push(&mut self, t: Tensor) -> ValueId {
        self.slots.push(t);
        ValueId(self.slots.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        params: &Params,
        x: ValueId,
        w: ParamId,
        b: ParamId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let y = ops::conv2d(
            self.value(x),
            &params.get(w).tensor,
            &params.get(b).tensor,
            stride,
            pad,
        )?;
        let out = self.push(y);
        self.nodes.push(Node::Conv2d { x, w, b, stride, pad, out });
        Ok(out)
    }

    pub fn conv_transpose2d(
        &mut self,
        params: &Params,
        x: ValueId,
        w: ParamId,
        b: ParamId,
        stride: usize,
    ) -> Result<ValueId> {
        let y = ops::conv_transpose2d(
            self.value(x),
            &params.get(w).tensor,
            &params.get(b).tensor,
            stride,
        )?;
        let out = self.push(y);
        self.nodes.push(Node::ConvTranspose2d { x, w, b, stride, out });
        Ok(out)
    }

    pub fn maxpool2d(&mut self, x: ValueId, k: usize, stride: usize) -> Result<ValueId> {
        let (y, indices) = ops::maxpool2d(self.value(x), k, stride)?;
        let out = self.push(y);
        self.nodes.push(Node::MaxPool2d { x, k, stride, indices, out });
        Ok(out)
    }

    /// Training-mode batch norm. Returns the output id plus the batch mean
    /// and biased variance so the caller can update running statistics.
    #[allow(clippy::type_complexity)]
    pub fn batchnorm_train(
        &mut self,
        params: &Params,
        x: ValueId,
        gamma: ParamId,
        beta: ParamId,
        eps: f32,
    ) -> Result<(ValueId, Vec<f32>, Vec<f32>)> {
        let r = ops::batchnorm2d_train(
            self.value(x),
            &params.get(gamma).tensor,
            &params.get(beta).tensor,
            eps,
        )?;
        let out = self.push(r.y);
        self.nodes.push(Node::BatchNorm {
            x,
            gamma,
            beta,
            stats: NormStats::Batch { mean: r.mean.clone(), inv_std: r.inv_std },
            out,
        });
        Ok((out, r.mean, r.var))
    }

    /// Evaluation-mode batch norm with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        params: &Params,
        x: ValueId,
        gamma: ParamId,
        beta: ParamId,
        eps: f32,
        running_mean: &[f32],
        running_var: &[f32],
    ) -> Result<ValueId> {
        let y = ops::batchnorm2d_eval(
            self.value(x),
            &params.get(gamma).tensor,
            &params.get(beta).tensor,
            running_mean,
            running_var,
            eps,
        )?;
        let out = self.push(y);
        self.nodes.push(Node::BatchNorm {
            x,
            gamma,
            beta,
            stats: NormStats::Running {
                mean: running_mean.to_vec(),
                var: running_var.to_vec(),
                eps,
            },
            out,
        });
        Ok(out)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = ops::relu(self.value(x));
        let out = self.push(y);
        self.nodes.push(Node::Relu { x, out });
        out
    }

    pub fn concat_channels(&mut self, inputs: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|&id| self.value(id)).collect();
        let y = ops::concat_channels(&tensors)?;
        let out = self.push(y);
        self.nodes.push(Node::ConcatChannels { inputs: inputs.to_vec(), out });
        Ok(out)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let y = ops::add(self.value(a), self.value(b))?;
        let out = self.push(y);
        self.nodes.push(Node::Add { a, b, out });
        Ok(out)
    }

    /// Scalar mean cross-entropy of logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: ValueId, classes: Vec<u32>) -> Result<ValueId> {
        let loss = ops::softmax_cross_entropy(self.value(logits), &classes)?;
        let out = self.push(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![loss])?);
        self.nodes.push(Node::SoftmaxCrossEntropy { logits, classes, out });
        Ok(out)
    }

    /// Scalar mean squared error against a fixed target.
    pub fn mse(&mut self, pred: ValueId, target: &Tensor) -> Result<ValueId> {
        let loss = ops::mse(self.value(pred), target)?;
        let out = self.push(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![loss])?);
        self.nodes.push(Node::Mse { pred, target: target.clone(), out });
        Ok(out)
    }

    /// Reverse pass seeded with `d(loss)/d(loss) = 1`.
    pub fn backward(&self, params: &Params, loss: ValueId) -> Result<Gradients> {
        self.backward_seeded(params, loss, 1.0)
    }

    /// Reverse pass from `loss` seeded with an arbitrary upstream scalar.
    pub fn backward_seeded(&self, params: &Params, loss: ValueId, seed: f32) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward on a tape with no operations".into()));
        }
        let target = self
            .slots
            .get(loss.0)
            .ok_or_else(|| Error::State(format!("value {} is not on this tape", loss.0)))?;
        if target.numel() != 1 {
            return Err(Error::State(format!(
                "backward target must be scalar, got {}",
                target.shape()
            )));
        }

        let mut slots: Vec<Option<Vec<f32>>> = vec![None; self.slots.len()];
        let mut pgrads: Vec<Option<Vec<f32>>> = vec![None; params.len()];
        slots[loss.0] = Some(vec![seed]);

        for node in self.nodes.iter().rev() {
            match node {
                Node::Conv2d { x, w, b, stride, pad, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let (dx, dw, db) = ops::conv2d_backward(
                        &self.slots[x.0],
                        &params.get(*w).tensor,
                        &dy,
                        *stride,
                        *pad,
                    )?;
                    accumulate(&mut slots, x.0, dx.into_data());
                    accumulate(&mut pgrads, w.0, dw.into_data());
                    accumulate(&mut pgrads, b.0, db.into_data());
                }
                Node::ConvTranspose2d { x, w, b, stride, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let (dx, dw, db) = ops::conv_transpose2d_backward(
                        &self.slots[x.0],
                        &params.get(*w).tensor,
                        &dy,
                        *stride,
                    )?;
                    accumulate(&mut slots, x.0, dx.into_data());
                    accumulate(&mut pgrads, w.0, dw.into_data());
                    accumulate(&mut pgrads, b.0, db.into_data());
                }
                Node::MaxPool2d { x, k, stride, indices, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let dx = ops::maxpool2d_backward(
                        self.slots[x.0].shape(),
                        indices,
                        &dy,
                        *k,
                        *stride,
                    )?;
                    accumulate(&mut slots, x.0, dx.into_data());
                }
                Node::BatchNorm { x, gamma, beta, stats, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let (dx, dgamma, dbeta) = match stats {
                        NormStats::Batch { mean, inv_std } => ops::batchnorm2d_backward_train(
                            &self.slots[x.0],
                            &params.get(*gamma).tensor,
                            mean,
                            inv_std,
                            &dy,
                        )?,
                        NormStats::Running { mean, var, eps } => ops::batchnorm2d_backward_eval(
                            &self.slots[x.0],
                            &params.get(*gamma).tensor,
                            mean,
                            var,
                            *eps,
                            &dy,
                        )?,
                    };
                    accumulate(&mut slots, x.0, dx.into_data());
                    accumulate(&mut pgrads, gamma.0, dgamma);
                    accumulate(&mut pgrads, beta.0, dbeta);
                }
                Node::Relu { x, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let dx = ops::relu_backward(&self.slots[x.0], &dy)?;
                    accumulate(&mut slots, x.0, dx.into_data());
                }
                Node::ConcatChannels { inputs, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dy = Tensor::from_vec(self.slots[out.0].shape(), dy)?;
                    let channels: Vec<usize> =
                        inputs.iter().map(|&id| self.slots[id.0].shape().c).collect();
                    let pieces = ops::concat_channels_backward(&dy, &channels)?;
                    for (id, piece) in inputs.iter().zip(pieces) {
                        accumulate(&mut slots, id.0, piece.into_data());
                    }
                }
                Node::Add { a, b, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    accumulate(&mut slots, a.0, dy.clone());
                    accumulate(&mut slots, b.0, dy);
                }
                Node::SoftmaxCrossEntropy { logits, classes, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dx = ops::softmax_cross_entropy_backward(
                        &self.slots[logits.0],
                        classes,
                        dy[0],
                    )?;
                    accumulate(&mut slots, logits.0, dx.into_data());
                }
                Node::Mse { pred, target, out } => {
                    let Some(dy) = slots[out.0].take() else { continue };
                    let dx = ops::mse_backward(&self.slots[pred.0], target, dy[0])?;
                    accumulate(&mut slots, pred.0, dx.into_data());
                }
            }
        }
        Ok(Gradients { slots, params: pgrads })
    }
}

fn accumulate(store: &mut [Option<Vec<f32>>], idx: usize, g: Vec<f32>) {
    match &mut store[idx] {
        Some(acc) => {
            debug_assert_eq!(acc.len(), g.len());
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        slot => *slot = Some(g),
    }
}
