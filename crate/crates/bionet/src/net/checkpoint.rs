//! Checkpoint serialization.
//!
//! Layout: a UTF-8 header (magic line, embedded configuration, array
//! directory) followed by all parameter and buffer values as little-endian
//! `f32`. The embedded configuration lets [`BioNet::load`] rebuild the
//! exact architecture without external information.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{BioNet, BioNetConfig};
use crate::tensor::Shape;

const MAGIC: &str = "bionet-checkpoint v1";

struct ArrayEntry {
    is_param: bool,
    name: String,
    shape: Shape,
    offset: usize,
}

impl BioNet {
    /// Writes parameters, running buffers, and the configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = String::new();
        let _ = writeln!(header, "{}", MAGIC);
        for (k, v) in self.config().to_kv() {
            let _ = writeln!(header, "config.{} = {}", k, v);
        }
        let _ = writeln!(header, "arrays {}", self.params().len() + self.buffers().len());
        let mut offset = 0usize;
        for (_, p) in self.params().iter() {
            let s = p.tensor.shape();
            let _ = writeln!(header, "param {} {} {} {} {} {}", p.name, s.n, s.c, s.h, s.w, offset);
            offset += p.tensor.numel();
        }
        for (_, name, values) in self.buffers().iter() {
            let _ = writeln!(header, "buffer {} {} {}", name, values.len(), offset);
            offset += values.len();
        }
        let _ = writeln!(header, "data {}", offset);

        let mut bytes = Vec::with_capacity(header.len() + offset * 4);
        bytes.extend_from_slice(header.as_bytes());
        for (_, p) in self.params().iter() {
            for v in p.tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (_, _, values) in self.buffers().iter() {
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    /// Rebuilds a network from a checkpoint, including its configuration.
    pub fn load(path: &Path) -> Result<BioNet> {
        let bytes = fs::read(path)?;
        let mut pos = 0usize;

        if take_line(&bytes, &mut pos)? != MAGIC {
            return Err(Error::Format(format!(
                "{} is not a bionet checkpoint (bad magic line)",
                path.display()
            )));
        }

        // Configuration block.
        let mut kv = BTreeMap::new();
        let arrays_line;
        loop {
            let line = take_line(&bytes, &mut pos)?;
            if let Some(rest) = line.strip_prefix("config.") {
                let (k, v) = rest.split_once(" = ").ok_or_else(|| {
                    Error::Format(format!("malformed config line '{}'", line))
                })?;
                kv.insert(k.to_string(), v.to_string());
            } else {
                arrays_line = line.to_string();
                break;
            }
        }
        let mut config = BioNetConfig::default();
        for (k, _) in config.to_kv() {
            let v = kv
                .get(&k)
                .ok_or_else(|| Error::Format(format!("checkpoint config is missing '{}'", k)))?;
            config.set_kv(&k, v)?;
        }

        // Array directory.
        let n_arrays: usize = arrays_line
            .strip_prefix("arrays ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("expected array count, got '{}'", arrays_line)))?;
        let mut entries = Vec::with_capacity(n_arrays);
        for _ in 0..n_arrays {
            entries.push(parse_entry(take_line(&bytes, &mut pos)?)?);
        }
        let data_line = take_line(&bytes, &mut pos)?;
        let n_values: usize = data_line
            .strip_prefix("data ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("expected data count, got '{}'", data_line)))?;
        let payload = &bytes[pos..];
        if payload.len() != n_values * 4 {
            return Err(Error::Format(format!(
                "checkpoint payload holds {} bytes, expected {}",
                payload.len(),
                n_values * 4
            )));
        }

        // Rebuild and overwrite. The seed is irrelevant: every value is
        // replaced below.
        let mut net = BioNet::build(&config, 0)?;
        if entries.len() != net.params().len() + net.buffers().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} arrays, the configuration implies {}",
                entries.len(),
                net.params().len() + net.buffers().len()
            )));
        }

        let mut cursor = 0usize;
        let mut it = entries.iter();
        for i in 0..net.params().len() {
            let entry = it.next().expect("length checked above");
            let p = net.params_mut().get_mut(crate::params::ParamId(i));
            if !entry.is_param || entry.name != p.name {
                return Err(Error::Checkpoint(format!(
                    "array '{}' does not match expected parameter '{}'",
                    entry.name, p.name
                )));
            }
            if entry.shape != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {} in the checkpoint, expected {}",
                    entry.name,
                    entry.shape,
                    p.tensor.shape()
                )));
            }
            if entry.offset != cursor {
                return Err(Error::Format(format!(
                    "array '{}' offset {} is inconsistent, expected {}",
                    entry.name, entry.offset, cursor
                )));
            }
            read_f32s(payload, cursor, p.tensor.data_mut());
            cursor += p.tensor.numel();
        }
        let buffer_ids: Vec<_> = net.buffers().iter().map(|(id, _, _)| id).collect();
        for id in buffer_ids {
            let entry = it.next().expect("length checked above");
            let name = net.buffers().name(id).to_string();
            let len = net.buffers().get(id).len();
            if entry.is_param || entry.name != name {
                return Err(Error::Checkpoint(format!(
                    "array '{}' does not match expected buffer '{}'",
                    entry.name, name
                )));
            }
            if entry.shape.numel() != len {
                return Err(Error::Checkpoint(format!(
                    "buffer '{}' holds {} values in the checkpoint, expected {}",
                    name,
                    entry.shape.numel(),
                    len
                )));
            }
            if entry.offset != cursor {
                return Err(Error::Format(format!(
                    "array '{}' offset {} is inconsistent, expected {}",
                    entry.name, entry.offset, cursor
                )));
            }
            let mut values = vec![0.0f32; len];
            read_f32s(payload, cursor, &mut values);
            net.buffers_mut().set(id, values)?;
            cursor += len;
        }
        Ok(net)
    }

    /// Loads a checkpoint and verifies it matches `expected`.
    pub fn load_expecting(path: &Path, expected: &BioNetConfig) -> Result<BioNet> {
        let net = BioNet::load(path)?;
        for ((k, have), (_, want)) in net.config().to_kv().iter().zip(expected.to_kv()) {
            if *have != want {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was built with {} = {}, requested {} = {}",
                    k, have, k, want
                )));
            }
        }
        Ok(net)
    }
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header ended unexpectedly".into()))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    *pos += nl + 1;
    Ok(line)
}

fn parse_entry(line: &str) -> Result<ArrayEntry> {
    let fields: Vec<&str> = line.split(' ').collect();
    let bad = || Error::Format(format!("malformed array line '{}'", line));
    match fields.as_slice() {
        ["param", name, n, c, h, w, offset] => Ok(ArrayEntry {
            is_param: true,
            name: name.to_string(),
            shape: Shape::new(
                n.parse().map_err(|_| bad())?,
                c.parse().map_err(|_| bad())?,
                h.parse().map_err(|_| bad())?,
                w.parse().map_err(|_| bad())?,
            ),
            offset: offset.parse().map_err(|_| bad())?,
        }),
        ["buffer", name, len, offset] => Ok(ArrayEntry {
            is_param: false,
            name: name.to_string(),
            shape: Shape::new(1, len.parse().map_err(|_| bad())?, 1, 1),
            offset: offset.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn read_f32s(payload: &[u8], offset_values: usize, out: &mut [f32]) {
    let start = offset_values * 4;
    for (i, v) in out.iter_mut().enumerate() {
        let b = &payload[start + i * 4..start + i * 4 + 4];
        *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{BioNetConfig, Fusion};
    use crate::tensor::Tensor;

    fn small_config() -> BioNetConfig {
        BioNetConfig {
            iterations: 2,
            depth: 2,
            backward_skips: 1,
            base_channels: 4,
            in_channels: 1,
            out_channels: 2,
            integrate: true,
            ..BioNetConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = BioNet::build(&small_config(), 5).unwrap();
        // Touch the running stats so they are not all at init values.
        let x = Tensor::full(crate::tensor::Shape::new(1, 1, 8, 8), 0.7);
        net.forward_train(&x).unwrap();
        net.save(&path).unwrap();

        let loaded = BioNet::load(&path).unwrap();
        assert_eq!(loaded.config(), net.config());
        for ((_, a), (_, b)) in net.params().iter().zip(loaded.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data(), "{} differs", a.name);
        }
        for ((_, na, va), (_, nb, vb)) in net.buffers().iter().zip(loaded.buffers().iter()) {
            assert_eq!(na, nb);
            assert_eq!(va, vb, "{} differs", na);
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"something else\n").unwrap();
        assert!(matches!(BioNet::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = BioNet::build(&small_config(), 5).unwrap();
        net.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(BioNet::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn config_mismatch_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = BioNet::build(&small_config(), 5).unwrap();
        net.save(&path).unwrap();
        let other = BioNetConfig { fusion: Fusion::Add, ..small_config() };
        let err = BioNet::load_expecting(&path, &other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fusion"), "message should name the field: {}", msg);
    }
}
