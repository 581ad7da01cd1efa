//! Composable stages: convolution units, encoder and decoder levels.
//!
//! A convolution unit is `conv -> nonlinearity -> batch norm` (order
//! configurable). Its convolution weights are shared across recurrence
//! iterations, but each iteration owns a private batch-norm parameter set
//! and running statistics; `iter` selects the set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::config::{ConvOrder, Fusion, Phase};
use crate::ops::update_running;
use crate::params::{BufferId, Buffers, ParamId, ParamKind, Params};
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

/// Shared references every stage needs while recording a forward pass.
///
/// Running-statistic updates computed in training mode are queued in
/// `pending` rather than applied, keeping the pass itself read-only; the
/// caller applies them once the pass succeeds.
pub struct ExecCtx<'a> {
    pub params: &'a Params,
    pub buffers: &'a Buffers,
    pub phase: Phase,
    pub fusion: Fusion,
    pub order: ConvOrder,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    pub pending: &'a mut Vec<(BufferId, Vec<f32>)>,
}

/// Fuses a skip pair: the carried feature first, the local feature second.
pub fn fuse(tape: &mut Tape, ctx: &mut ExecCtx, first: ValueId, second: ValueId) -> Result<ValueId> {
    match ctx.fusion {
        Fusion::Concat => tape.concat_channels(&[first, second]),
        Fusion::Add => tape.add(first, second),
    }
}

/// Batch-norm parameters and running stats, one set per recurrence iteration.
#[derive(Clone, Debug)]
pub struct NormSite {
    pub gamma: Vec<ParamId>,
    pub beta: Vec<ParamId>,
    pub running_mean: Vec<BufferId>,
    pub running_var: Vec<BufferId>,
}

impl NormSite {
    pub fn sets(&self) -> usize {
        self.gamma.len()
    }
}

/// One convolution followed by nonlinearity and batch norm.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pad: usize,
    /// Whether this unit runs once per iteration (true) or once per pass.
    pub recursed: bool,
    pub norm: NormSite,
}

impl ConvUnit {
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ExecCtx,
        x: ValueId,
        iter: usize,
    ) -> Result<ValueId> {
        let v = tape.conv2d(ctx.params, x, self.weight, self.bias, 1, self.pad)?;
        match ctx.order {
            ConvOrder::ConvReluNorm => {
                let v = tape.relu(v);
                self.norm_forward(tape, ctx, v, iter)
            }
            ConvOrder::ConvNormRelu => {
                let v = self.norm_forward(tape, ctx, v, iter)?;
                Ok(tape.relu(v))
            }
        }
    }

    fn norm_forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ExecCtx,
        x: ValueId,
        iter: usize,
    ) -> Result<ValueId> {
        if iter >= self.norm.sets() {
            return Err(Error::State(format!(
                "{} has {} norm sets but was run at iteration {}",
                self.name,
                self.norm.sets(),
                iter
            )));
        }
        let (gamma, beta) = (self.norm.gamma[iter], self.norm.beta[iter]);
        match ctx.phase {
            Phase::Train => {
                let (out, mean, var) =
                    tape.batchnorm_train(ctx.params, x, gamma, beta, ctx.bn_eps)?;
                let mut new_mean = ctx.buffers.get(self.norm.running_mean[iter]).to_vec();
                let mut new_var = ctx.buffers.get(self.norm.running_var[iter]).to_vec();
                update_running(&mut new_mean, &mean, ctx.bn_momentum);
                update_running(&mut new_var, &var, ctx.bn_momentum);
                ctx.pending.push((self.norm.running_mean[iter], new_mean));
                ctx.pending.push((self.norm.running_var[iter], new_var));
                Ok(out)
            }
            Phase::Eval => tape.batchnorm_eval(
                ctx.params,
                x,
                gamma,
                beta,
                ctx.bn_eps,
                ctx.buffers.get(self.norm.running_mean[iter]),
                ctx.buffers.get(self.norm.running_var[iter]),
            ),
        }
    }
}

/// A sequence of convolution units applied back to back.
#[derive(Clone, Debug)]
pub struct ConvChain {
    pub units: Vec<ConvUnit>,
}

impl ConvChain {
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ExecCtx,
        mut x: ValueId,
        iter: usize,
    ) -> Result<ValueId> {
        for unit in &self.units {
            x = unit.forward(tape, ctx, x, iter)?;
        }
        Ok(x)
    }
}

/// Learned upsampling: a stride-2 transposed convolution, no norm or
/// nonlinearity.
#[derive(Clone, Debug)]
pub struct UpUnit {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl UpUnit {
    pub fn forward(&self, tape: &mut Tape, ctx: &mut ExecCtx, x: ValueId) -> Result<ValueId> {
        tape.conv_transpose2d(ctx.params, x, self.weight, self.bias, self.stride)
    }
}

/// Final 1x1 projection to the output channel count. Raw logits or
/// regression values: no norm, no nonlinearity.
#[derive(Clone, Debug)]
pub struct HeadUnit {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl HeadUnit {
    pub fn forward(&self, tape: &mut Tape, ctx: &mut ExecCtx, x: ValueId) -> Result<ValueId> {
        tape.conv2d(ctx.params, x, self.weight, self.bias, 1, 0)
    }
}

/// One encoder level: optional backward-skip fusion, convolutions, pooling.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    /// 1-based level, 1 at full resolution.
    pub level: usize,
    pub convs: ConvChain,
    /// Channel width of the decoder feature fused in, when connected.
    pub backward_skip: Option<usize>,
    pub pool_kernel: usize,
    pub pool_stride: usize,
}

impl EncoderStage {
    /// Returns `(features before pooling, pooled output)`.
    ///
    /// When the level is connected, `f_dec` must carry the decoder feature
    /// from the previous iteration (or injected zeros on the first); it is
    /// fused in front of the contracting-path input.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ExecCtx,
        x_in: ValueId,
        f_dec: Option<ValueId>,
        iter: usize,
    ) -> Result<(ValueId, ValueId)> {
        let fused = match (self.backward_skip, f_dec) {
            (Some(_), Some(d)) => fuse(tape, ctx, d, x_in)?,
            (None, None) => x_in,
            (Some(_), None) => {
                return Err(Error::State(format!(
                    "encoder level {} is connected but received no decoder feature",
                    self.level
                )))
            }
            (None, Some(_)) => {
                return Err(Error::State(format!(
                    "encoder level {} has no backward skip but received a decoder feature",
                    self.level
                )))
            }
        };
        let f_enc = self.convs.forward(tape, ctx, fused, iter)?;
        let pooled = tape.maxpool2d(f_enc, self.pool_kernel, self.pool_stride)?;
        Ok((f_enc, pooled))
    }
}

/// One decoder level: upsample, fuse the encoder feature, convolve.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    /// 1-based level, matching the encoder level it pairs with.
    pub level: usize,
    pub up: UpUnit,
    pub convs: ConvChain,
}

impl DecoderStage {
    pub fn forward(
        &self,
        tape: &mut Tape,
        ctx: &mut ExecCtx,
        from_below: ValueId,
        f_enc: ValueId,
        iter: usize,
    ) -> Result<ValueId> {
        let up = self.up.forward(tape, ctx, from_below)?;
        let fused = fuse(tape, ctx, f_enc, up)?;
        self.convs.forward(tape, ctx, fused, iter)
    }
}

/// Allocates parameters and buffers with Glorot-uniform weight init.
pub(crate) struct NetBuilder<'a> {
    pub params: Params,
    pub buffers: Buffers,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> NetBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> NetBuilder<'a> {
        NetBuilder { params: Params::new(), buffers: Buffers::new(), rng }
    }

    fn glorot(&mut self, shape: Shape, fan_in: usize, fan_out: usize) -> Tensor {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.numel())
            .map(|_| self.rng.gen_range(-limit..limit) as f32)
            .collect();
        Tensor::from_vec(shape, data).expect("sampled buffer matches shape")
    }

    fn norm_site(&mut self, name: &str, channels: usize, sets: usize) -> NormSite {
        let mut site = NormSite {
            gamma: Vec::with_capacity(sets),
            beta: Vec::with_capacity(sets),
            running_mean: Vec::with_capacity(sets),
            running_var: Vec::with_capacity(sets),
        };
        for s in 0..sets {
            let ones = Tensor::full(Shape::new(1, channels, 1, 1), 1.0);
            let zeros = Tensor::zeros(Shape::new(1, channels, 1, 1));
            site.gamma
                .push(self.params.add(format!("{name}.norm{s}.gamma"), ParamKind::Norm, ones));
            site.beta
                .push(self.params.add(format!("{name}.norm{s}.beta"), ParamKind::Norm, zeros));
            site.running_mean
                .push(self.buffers.add(format!("{name}.norm{s}.running_mean"), vec![0.0; channels]));
            site.running_var
                .push(self.buffers.add(format!("{name}.norm{s}.running_var"), vec![1.0; channels]));
        }
        site
    }

    pub fn conv_unit(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        sets: usize,
        recursed: bool,
    ) -> ConvUnit {
        let w = self.glorot(
            Shape::new(cout, cin, kernel, kernel),
            cin * kernel * kernel,
            cout * kernel * kernel,
        );
        let weight = self.params.add(format!("{name}.weight"), ParamKind::Conv, w);
        let bias = self.params.add(
            format!("{name}.bias"),
            ParamKind::Conv,
            Tensor::zeros(Shape::new(1, cout, 1, 1)),
        );
        let norm = self.norm_site(name, cout, sets);
        ConvUnit {
            name: name.to_string(),
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            pad: kernel / 2,
            recursed,
            norm,
        }
    }

    pub fn up_unit(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> UpUnit {
        let w = self.glorot(
            Shape::new(cin, cout, kernel, kernel),
            cin * kernel * kernel,
            cout * kernel * kernel,
        );
        let weight = self.params.add(format!("{name}.weight"), ParamKind::Conv, w);
        let bias = self.params.add(
            format!("{name}.bias"),
            ParamKind::Conv,
            Tensor::zeros(Shape::new(1, cout, 1, 1)),
        );
        UpUnit {
            name: name.to_string(),
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride: kernel,
        }
    }

    pub fn head_unit(&mut self, name: &str, cin: usize, cout: usize) -> HeadUnit {
        let w = self.glorot(Shape::new(cout, cin, 1, 1), cin, cout);
        let weight = self.params.add(format!("{name}.weight"), ParamKind::Conv, w);
        let bias = self.params.add(
            format!("{name}.bias"),
            ParamKind::Conv,
            Tensor::zeros(Shape::new(1, cout, 1, 1)),
        );
        HeadUnit { name: name.to_string(), weight, bias, in_channels: cin, out_channels: cout }
    }
}
