//! Network hyperparameters and their validation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How decoder and encoder features are fused at skip connections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Channel concatenation (default).
    Concat,
    /// Elementwise addition; requires the paired widths to be equal.
    Add,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Concat => "concat",
            Fusion::Add => "add",
        })
    }
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Fusion> {
        match s {
            "concat" => Ok(Fusion::Concat),
            "add" => Ok(Fusion::Add),
            other => Err(Error::Config(format!(
                "unknown fusion '{}', expected concat or add",
                other
            ))),
        }
    }
}

/// Task head: per-pixel classification logits or direct regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Segmentation,
    Regression,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::Segmentation => "segmentation",
            Head::Regression => "regression",
        })
    }
}

impl FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Head> {
        match s {
            "segmentation" => Ok(Head::Segmentation),
            "regression" => Ok(Head::Regression),
            other => Err(Error::Config(format!(
                "unknown head '{}', expected segmentation or regression",
                other
            ))),
        }
    }
}

/// Order of the pieces inside one convolution unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvOrder {
    /// convolution, then nonlinearity, then batch norm (default).
    ConvReluNorm,
    /// convolution, then batch norm, then nonlinearity.
    ConvNormRelu,
}

impl fmt::Display for ConvOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvOrder::ConvReluNorm => "conv-relu-norm",
            ConvOrder::ConvNormRelu => "conv-norm-relu",
        })
    }
}

impl FromStr for ConvOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<ConvOrder> {
        match s {
            "conv-relu-norm" => Ok(ConvOrder::ConvReluNorm),
            "conv-norm-relu" => Ok(ConvOrder::ConvNormRelu),
            other => Err(Error::Config(format!(
                "unknown conv order '{}', expected conv-relu-norm or conv-norm-relu",
                other
            ))),
        }
    }
}

/// Whether batch statistics are computed fresh or running stats are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Full architectural configuration.
///
/// `iterations` is the number of times the encoder-decoder loop is
/// unrolled (`t`); convolution weights are shared across iterations while
/// each iteration owns a private set of batch-norm parameters.
/// `backward_skips` counts connected encoder levels from the deepest level
/// upward (`w`); `integrate` stacks the decoded features of every
/// iteration into the output stage instead of only the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct BioNetConfig {
    /// Recurrence count `t` (at least 1; 1 disables recursion).
    pub iterations: usize,
    /// Width multiplier applied to every stage.
    pub multiplier: f64,
    /// Number of backward skip connections, counted from the deepest level.
    pub backward_skips: usize,
    /// Stack decoded features from all iterations into the output stage.
    pub integrate: bool,
    /// Number of encoder (and decoder) levels below the stem.
    pub depth: usize,
    pub fusion: Fusion,
    /// Stem width before the multiplier (level widths double per level).
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Convolution units per encoder/decoder block.
    pub convs_per_block: usize,
    pub head: Head,
    pub conv_order: ConvOrder,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

impl Default for BioNetConfig {
    fn default() -> BioNetConfig {
        BioNetConfig {
            iterations: 3,
            multiplier: 1.0,
            backward_skips: 4,
            integrate: false,
            depth: 4,
            fusion: Fusion::Concat,
            base_channels: 32,
            in_channels: 3,
            out_channels: 1,
            convs_per_block: 2,
            head: Head::Segmentation,
            conv_order: ConvOrder::ConvReluNorm,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl BioNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.backward_skips > self.depth {
            return Err(Error::Config(format!(
                "backward skips ({}) cannot exceed depth ({})",
                self.backward_skips, self.depth
            )));
        }
        if !(self.multiplier > 0.0) || !self.multiplier.is_finite() {
            return Err(Error::Config(format!(
                "multiplier must be positive and finite, got {}",
                self.multiplier
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base channels must be at least 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("input and output channels must be at least 1".into()));
        }
        if self.convs_per_block == 0 {
            return Err(Error::Config("convs per block must be at least 1".into()));
        }
        if !(self.bn_eps > 0.0) {
            return Err(Error::Config(format!(
                "batch norm epsilon must be positive, got {}",
                self.bn_eps
            )));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config(format!(
                "batch norm momentum must be in [0, 1), got {}",
                self.bn_momentum
            )));
        }
        Ok(())
    }

    /// Stable key-value form used for checkpoints and the CLI echo.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("t".into(), self.iterations.to_string()),
            ("mult".into(), format!("{}", self.multiplier)),
            ("w".into(), self.backward_skips.to_string()),
            ("int_stack".into(), self.integrate.to_string()),
            ("depth".into(), self.depth.to_string()),
            ("fusion".into(), self.fusion.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
            ("in_channels".into(), self.in_channels.to_string()),
            ("out_channels".into(), self.out_channels.to_string()),
            ("convs_per_block".into(), self.convs_per_block.to_string()),
            ("head".into(), self.head.to_string()),
            ("conv_order".into(), self.conv_order.to_string()),
            ("bn_eps".into(), format!("{}", self.bn_eps)),
            ("bn_momentum".into(), format!("{}", self.bn_momentum)),
        ]
    }

    /// Applies one key-value pair; unknown keys are a `Config` error.
    pub fn set_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| {
                Error::Config(format!("bad value '{}' for {}: {}", value, key, e))
            })
        }
        match key {
            "t" => self.iterations = parse(key, value)?,
            "mult" => self.multiplier = parse(key, value)?,
            "w" => self.backward_skips = parse(key, value)?,
            "int_stack" => self.integrate = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "in_channels" => self.in_channels = parse(key, value)?,
            "out_channels" => self.out_channels = parse(key, value)?,
            "convs_per_block" => self.convs_per_block = parse(key, value)?,
            "head" => self.head = value.parse()?,
            "conv_order" => self.conv_order = value.parse()?,
            "bn_eps" => self.bn_eps = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown network option '{}'", other)));
            }
        }
        Ok(())
    }
}
