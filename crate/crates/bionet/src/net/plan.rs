//! Channel arithmetic: the width of every stage as a function of the
//! configuration. All structural invariants about widths are decided here,
//! before any parameter is allocated.

use crate::error::{Error, Result};
use crate::net::config::{BioNetConfig, Fusion};

/// Resolved channel widths for every stage of the network.
///
/// Levels are numbered 1 (shallowest, full resolution) to `depth`.
/// Width at level `k` is `round(base * multiplier * 2^k)`; the stem
/// (level 0) is `round(base * multiplier)`. Decoder output at level `k`
/// equals the width one level shallower, so the top decoder output matches
/// the stem and can re-enter the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelPlan {
    /// Output width of the input stage and the output stage.
    pub stem: usize,
    /// Encoder output width per level, index `k - 1`.
    pub encoder: Vec<usize>,
    /// Width of the bottom stage between encoder and decoder.
    pub middle: usize,
    /// Decoder output width per level, index `k - 1`.
    pub decoder: Vec<usize>,
    /// Output width of the upsampling unit entering each decoder level.
    pub up: Vec<usize>,
}

impl ChannelPlan {
    pub fn new(cfg: &BioNetConfig) -> Result<ChannelPlan> {
        cfg.validate()?;
        let width = |level: u32| -> usize {
            (cfg.base_channels as f64 * cfg.multiplier * f64::powi(2.0, level as i32)).round()
                as usize
        };
        let stem = width(0);
        let encoder: Vec<usize> = (1..=cfg.depth as u32).map(width).collect();
        let middle = encoder[cfg.depth - 1];
        // Decoder at level k outputs the width of level k-1.
        let mut decoder = vec![stem];
        decoder.extend_from_slice(&encoder[..cfg.depth - 1]);
        // Upsampling into level k matches the decoder width under concat
        // fusion and the encoder width under add fusion.
        let up = match cfg.fusion {
            Fusion::Concat => decoder.clone(),
            Fusion::Add => encoder.clone(),
        };

        // Widths double per level, so the stem is the narrowest stage.
        if stem == 0 {
            return Err(Error::Config(format!(
                "multiplier {} rounds the stem width to zero",
                cfg.multiplier
            )));
        }
        Ok(ChannelPlan { stem, encoder, middle, decoder, up })
    }

    /// Width of the feature entering the encoder at level `k` (1-based)
    /// along the contracting path, before any backward-skip fusion.
    pub fn into_encoder(&self, level: usize) -> usize {
        if level == 1 {
            self.stem
        } else {
            self.encoder[level - 2]
        }
    }
}
