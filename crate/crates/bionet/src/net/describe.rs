//! Parameter accounting and the human-readable layer table.

use std::fmt::Write as _;

use crate::net::BioNet;
use crate::params::ParamKind;

/// Breakdown of trainable parameters.
///
/// `total = conv + norm_once + iterations * norm_per_iteration`; the conv
/// share is independent of the iteration count because convolution weights
/// are shared across iterations, while each iteration owns its own
/// batch-norm sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// Convolution weights and biases (shared across iterations).
    pub conv: usize,
    /// Norm parameters of stages that run once per pass.
    pub norm_once: usize,
    /// Norm parameters added by each recurrence iteration.
    pub norm_per_iteration: usize,
    pub iterations: usize,
    pub total: usize,
    /// Four bytes per `f32` parameter.
    pub model_bytes: usize,
}

impl BioNet {
    pub fn param_count(&self) -> ParamCount {
        let conv = self.params().numel_of_kind(ParamKind::Conv);
        let mut norm_once = 0;
        let mut norm_per_iteration = 0;
        for unit in self.conv_units() {
            let per_set = 2 * unit.out_channels;
            if unit.recursed {
                norm_per_iteration += per_set;
            } else {
                norm_once += per_set;
            }
        }
        let iterations = self.config().iterations;
        let total = self.params().numel();
        debug_assert_eq!(conv + norm_once + iterations * norm_per_iteration, total);
        ParamCount {
            conv,
            norm_once,
            norm_per_iteration,
            iterations,
            total,
            model_bytes: 4 * total,
        }
    }

    /// Deterministic per-layer table plus totals.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>18} {:>10}  {}",
            "layer", "shape", "params", "sharing"
        );

        let conv_row = |out: &mut String, name: &str, cin: usize, cout: usize, k: usize,
                        params: usize, sharing: &str| {
            let _ = writeln!(
                out,
                "{:<14} {:>18} {:>10}  {}",
                name,
                format!("{}->{} {}x{}", cin, cout, k, k),
                params,
                sharing
            );
        };

        let emit_unit = |out: &mut String, unit: &crate::net::ConvUnit| {
            let wcount = cout_weights(unit.in_channels, unit.out_channels, unit.kernel);
            let sharing = if unit.recursed { "shared across iterations" } else { "once" };
            conv_row(out, &unit.name, unit.in_channels, unit.out_channels, unit.kernel, wcount, sharing);
            let sets = unit.norm.sets();
            let norm_params = 2 * unit.out_channels * sets;
            let norm_sharing =
                if unit.recursed { "one set per iteration" } else { "once" };
            let _ = writeln!(
                out,
                "{:<14} {:>18} {:>10}  {}",
                format!("{}.norm", unit.name),
                format!("{} ch x{} sets", unit.out_channels, sets),
                norm_params,
                norm_sharing
            );
        };

        for unit in self.first_stage.units.iter() {
            emit_unit(&mut out, unit);
        }
        for enc in &self.encoders {
            for unit in &enc.convs.units {
                emit_unit(&mut out, unit);
            }
        }
        for unit in self.middle.units.iter() {
            emit_unit(&mut out, unit);
        }
        for dec in &self.decoders {
            let up = &dec.up;
            conv_row(
                &mut out,
                &up.name,
                up.in_channels,
                up.out_channels,
                up.kernel,
                cout_weights(up.in_channels, up.out_channels, up.kernel),
                "shared across iterations",
            );
            for unit in &dec.convs.units {
                emit_unit(&mut out, unit);
            }
        }
        for unit in self.last_stage.units.iter() {
            emit_unit(&mut out, unit);
        }
        let head = &self.head;
        conv_row(
            &mut out,
            &head.name,
            head.in_channels,
            head.out_channels,
            1,
            cout_weights(head.in_channels, head.out_channels, 1),
            "once",
        );

        let c = self.param_count();
        let _ = writeln!(out);
        let _ = writeln!(out, "iterations (t):          {}", c.iterations);
        let _ = writeln!(out, "convolution parameters:  {}", c.conv);
        let _ = writeln!(
            out,
            "norm parameters:         {} fixed + {} x {} per iteration",
            c.norm_once, c.iterations, c.norm_per_iteration
        );
        let _ = writeln!(out, "total parameters:        {}", c.total);
        let _ = writeln!(
            out,
            "model bytes:             {} ({:.1} MB)",
            c.model_bytes,
            c.model_bytes as f64 / 1e6
        );
        out
    }
}

fn cout_weights(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}
