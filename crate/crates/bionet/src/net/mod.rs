//! The recurrent bi-directional encoder-decoder network.
//!
//! Shape of one forward pass (`t` = iterations, `l` = depth):
//!
//! 1. An input stage of three convolution units runs once.
//! 2. The encoder-decoder loop runs `t` times with shared convolution
//!    weights. Connected encoder levels fuse the decoder feature produced
//!    at the same level by the previous iteration (zeros on the first);
//!    every decoder level fuses the encoder feature of the current
//!    iteration. Each iteration re-enters at the top decoder output.
//! 3. An output stage of three convolution units plus a 1x1 head runs
//!    once, consuming either the final iteration's decoded feature or, in
//!    integrate mode, the stack of all iterations' decoded features.
//!
//! Batch-norm parameter sets are never shared across iterations: each
//! recursed unit owns `t` independent sets of scale/shift and running
//! statistics.

mod blocks;
mod checkpoint;
mod config;
mod describe;
mod plan;

pub use blocks::{
    ConvChain, ConvUnit, DecoderStage, EncoderStage, ExecCtx, HeadUnit, NormSite, UpUnit, fuse,
};
pub use config::{BioNetConfig, ConvOrder, Fusion, Head, Phase};
pub use describe::ParamCount;
pub use plan::ChannelPlan;

use crate::error::{Error, Result};
use crate::params::{BufferId, Buffers, Params};
use crate::rng;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

use blocks::NetBuilder;

/// A recorded forward pass: the tape plus the ids of the network input
/// and output values.
pub struct ForwardPass {
    pub tape: Tape,
    pub input: ValueId,
    pub output: ValueId,
}

impl ForwardPass {
    pub fn output_tensor(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

/// The network: configuration, stages, parameters, and running buffers.
#[derive(Clone, Debug)]
pub struct BioNet {
    config: BioNetConfig,
    plan: ChannelPlan,
    params: Params,
    buffers: Buffers,
    pub first_stage: ConvChain,
    pub encoders: Vec<EncoderStage>,
    pub middle: ConvChain,
    /// Deepest level first, matching execution order.
    pub decoders: Vec<DecoderStage>,
    pub last_stage: ConvChain,
    pub head: HeadUnit,
}

impl BioNet {
    /// Builds the network with Glorot-uniform weights drawn from `seed`.
    pub fn build(config: &BioNetConfig, seed: u64) -> Result<BioNet> {
        let plan = ChannelPlan::new(config)?;
        let (t, l) = (config.iterations, config.depth);
        let mut init_rng = rng::stream(seed, "init");
        let mut b = NetBuilder::new(&mut init_rng);

        let first_stage = ConvChain {
            units: vec![
                b.conv_unit("first.conv1", config.in_channels, plan.stem, 3, 1, false),
                b.conv_unit("first.conv2", plan.stem, plan.stem, 3, 1, false),
                b.conv_unit("first.conv3", plan.stem, plan.stem, 3, 1, false),
            ],
        };

        let mut encoders = Vec::with_capacity(l);
        for k in 1..=l {
            // Backward skips are counted from the deepest level up.
            let connected = k > l - config.backward_skips;
            let path_in = plan.into_encoder(k);
            let fused_in = if connected && config.fusion == Fusion::Concat {
                path_in + plan.decoder[k - 1]
            } else {
                path_in
            };
            let e_out = plan.encoder[k - 1];
            let mut units =
                vec![b.conv_unit(&format!("enc{k}.conv1"), fused_in, e_out, 3, t, true)];
            for j in 2..=config.convs_per_block {
                units.push(b.conv_unit(&format!("enc{k}.conv{j}"), e_out, e_out, 3, t, true));
            }
            encoders.push(EncoderStage {
                level: k,
                convs: ConvChain { units },
                backward_skip: connected.then_some(plan.decoder[k - 1]),
                pool_kernel: 2,
                pool_stride: 2,
            });
        }

        let middle = ConvChain {
            units: vec![
                b.conv_unit("mid.conv1", plan.middle, plan.middle, 3, t, true),
                b.conv_unit("mid.conv2", plan.middle, plan.middle, 3, t, true),
            ],
        };

        let mut decoders = Vec::with_capacity(l);
        for k in (1..=l).rev() {
            let from_below = if k == l { plan.middle } else { plan.decoder[k] };
            let up = b.up_unit(&format!("dec{k}.up"), from_below, plan.up[k - 1], 2);
            let d_out = plan.decoder[k - 1];
            let fused_in = match config.fusion {
                Fusion::Concat => plan.encoder[k - 1] + plan.up[k - 1],
                Fusion::Add => plan.encoder[k - 1],
            };
            let mut units =
                vec![b.conv_unit(&format!("dec{k}.conv1"), fused_in, d_out, 3, t, true)];
            for j in 2..=config.convs_per_block {
                units.push(b.conv_unit(&format!("dec{k}.conv{j}"), d_out, d_out, 3, t, true));
            }
            decoders.push(DecoderStage { level: k, up, convs: ConvChain { units } });
        }

        let last_in = if config.integrate { t * plan.stem } else { plan.stem };
        let last_stage = ConvChain {
            units: vec![
                b.conv_unit("last.conv1", last_in, plan.stem, 3, 1, false),
                b.conv_unit("last.conv2", plan.stem, plan.stem, 3, 1, false),
                b.conv_unit("last.conv3", plan.stem, plan.stem, 3, 1, false),
            ],
        };
        let head = b.head_unit("head", plan.stem, config.out_channels);

        Ok(BioNet {
            config: config.clone(),
            plan,
            params: b.params,
            buffers: b.buffers,
            first_stage,
            encoders,
            middle,
            decoders,
            last_stage,
            head,
        })
    }

    pub fn config(&self) -> &BioNetConfig {
        &self.config
    }

    pub fn plan(&self) -> &ChannelPlan {
        &self.plan
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn buffers(&self) -> &Buffers {
        &self.buffers
    }

    pub(crate) fn buffers_mut(&mut self) -> &mut Buffers {
        &mut self.buffers
    }

    /// Execution context for driving stages directly (tests, composition).
    pub fn exec_ctx<'a>(
        &'a self,
        phase: Phase,
        pending: &'a mut Vec<(BufferId, Vec<f32>)>,
    ) -> ExecCtx<'a> {
        ExecCtx {
            params: &self.params,
            buffers: &self.buffers,
            phase,
            fusion: self.config.fusion,
            order: self.config.conv_order,
            bn_eps: self.config.bn_eps,
            bn_momentum: self.config.bn_momentum,
            pending,
        }
    }

    /// Evaluation-mode forward pass using running statistics.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        let (pass, _) = self.run(x, Phase::Eval)?;
        Ok(pass)
    }

    /// Training-mode forward pass; applies running-statistic updates.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<ForwardPass> {
        let (pass, pending) = self.run(x, Phase::Train)?;
        for (id, values) in pending {
            self.buffers.set(id, values)?;
        }
        Ok(pass)
    }

    /// Records one forward pass without mutating any state.
    #[allow(clippy::type_complexity)]
    pub fn run(&self, x: &Tensor, phase: Phase) -> Result<(ForwardPass, Vec<(BufferId, Vec<f32>)>)> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::Config(format!(
                "network expects {} input channels, got {}",
                self.config.in_channels, s.c
            )));
        }
        if s.n == 0 {
            return Err(Error::Shape("forward pass needs a non-empty batch".into()));
        }
        let down = 1usize << self.config.depth;
        if s.h == 0 || s.w == 0 || s.h % down != 0 || s.w % down != 0 {
            return Err(Error::Shape(format!(
                "input size {}x{} must be a positive multiple of {} at depth {}",
                s.h, s.w, down, self.config.depth
            )));
        }

        let (t, l) = (self.config.iterations, self.config.depth);
        let mut pending = Vec::new();
        let mut ctx = self.exec_ctx(phase, &mut pending);
        let mut tape = Tape::new();

        let x0 = tape.input(x);
        let stem = self.first_stage.forward(&mut tape, &mut ctx, x0, 0)?;

        let mut prev_dec: Vec<Option<ValueId>> = vec![None; l];
        let mut top_outputs = Vec::with_capacity(t);
        let mut entry = stem;
        for iter in 0..t {
            let mut cur = entry;
            let mut f_encs: Vec<ValueId> = vec![entry; l];
            for stage in &self.encoders {
                let k = stage.level;
                let f_dec = match stage.backward_skip {
                    Some(width) => Some(match prev_dec[k - 1] {
                        Some(id) => id,
                        // First iteration: no decoder feature exists yet,
                        // inject zeros of the expected shape.
                        None => {
                            let here = tape.value(cur).shape();
                            tape.input(&Tensor::zeros(Shape::new(
                                here.n, width, here.h, here.w,
                            )))
                        }
                    }),
                    None => None,
                };
                let (f_enc, pooled) = stage.forward(&mut tape, &mut ctx, cur, f_dec, iter)?;
                f_encs[k - 1] = f_enc;
                cur = pooled;
            }
            cur = self.middle.forward(&mut tape, &mut ctx, cur, iter)?;
            for stage in &self.decoders {
                let k = stage.level;
                cur = stage.forward(&mut tape, &mut ctx, cur, f_encs[k - 1], iter)?;
                prev_dec[k - 1] = Some(cur);
            }
            top_outputs.push(cur);
            entry = cur;
        }

        let last_in = if self.config.integrate {
            tape.concat_channels(&top_outputs)?
        } else {
            *top_outputs.last().expect("at least one iteration")
        };
        let features = self.last_stage.forward(&mut tape, &mut ctx, last_in, 0)?;
        let output = self.head.forward(&mut tape, &mut ctx, features)?;
        Ok((ForwardPass { tape, input: x0, output }, pending))
    }

    /// All convolution units in architectural order (head excluded).
    pub fn conv_units(&self) -> impl Iterator<Item = &ConvUnit> {
        self.first_stage
            .units
            .iter()
            .chain(self.encoders.iter().flat_map(|e| e.convs.units.iter()))
            .chain(self.middle.units.iter())
            .chain(self.decoders.iter().flat_map(|d| d.convs.units.iter()))
            .chain(self.last_stage.units.iter())
    }

    /// All upsampling units in execution order.
    pub fn up_units(&self) -> impl Iterator<Item = &UpUnit> {
        self.decoders.iter().map(|d| &d.up)
    }
}
