// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary checkpoint format.
//!
//! All integers little-endian.
//!
//! ```text
//! magic        8 bytes  "MEMLABCK"
//! version      u32      FORMAT_VERSION
//! config       6 x u32  n_layers n_heads d_model d_ff vocab_size max_seq
//!              2 x u8   norm (0 layer_norm, 1 rms_norm), positional (0 learned, 1 rotary)
//! step         u64
//! rng          2 x u64  seed, stream
//! n_tensors    u32
//! table        n_tensors x { name_len u16, name, rank u8, dims rank x u32, offset u64 }
//! data         f32 values, each tensor at its offset from the start of this section
//! ```
//!
//! Tensors must appear in canonical order with contiguous offsets and the
//! file must end exactly at the last tensor.

use std::path::Path;

use memlab_tensor::{RngStream, Tensor};

use crate::error::{Error, Result};
use crate::model::{layout, ModelConfig, NormKind, PositionalKind, Transformer};

pub const MAGIC: &[u8; 8] = b"MEMLABCK";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model plus the training position it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Transformer,
    pub step: u64,
    pub rng: RngStream,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            cfg.n_layers,
            cfg.n_heads,
            cfg.d_model,
            cfg.d_ff,
            cfg.vocab_size,
            cfg.max_seq,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(match cfg.norm {
            NormKind::LayerNorm => 0,
            NormKind::RmsNorm => 1,
        });
        out.push(match cfg.positional {
            PositionalKind::Learned => 0,
            PositionalKind::Rotary => 1,
        });
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        let named = self.model.weights().named();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &named {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for d in t.shape() {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.numel() as u64;
        }
        for (_, t) in &named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let norm = match r.u8()? {
            0 => NormKind::LayerNorm,
            1 => NormKind::RmsNorm,
            k => return Err(corrupt(format!("unknown norm kind {k}"))),
        };
        let positional = match r.u8()? {
            0 => PositionalKind::Learned,
            1 => PositionalKind::Rotary,
            k => return Err(corrupt(format!("unknown positional kind {k}"))),
        };
        let config = ModelConfig {
            n_layers: dims[0],
            n_heads: dims[1],
            d_model: dims[2],
            d_ff: dims[3],
            vocab_size: dims[4],
            max_seq: dims[5],
            norm,
            positional,
        };
        config.validate().map_err(|e| corrupt(format!("invalid config: {e}")))?;
        let step = r.u64()?;
        let rng = RngStream {
            seed: r.u64()?,
            stream: r.u64()?,
        };

        let expected = layout(&config)
            .named()
            .into_iter()
            .map(|(n, s)| (n, s.clone()))
            .collect::<Vec<_>>();
        let n_tensors = r.u32()? as usize;
        if n_tensors != expected.len() {
            return Err(corrupt(format!(
                "{n_tensors} tensors declared, config needs {}",
                expected.len()
            )));
        }
        let mut entries = Vec::with_capacity(n_tensors);
        let mut next_offset = 0u64;
        for (exp_name, exp_shape) in &expected {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            if &name != exp_name {
                return Err(corrupt(format!("expected tensor `{exp_name}`, found `{name}`")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            if &shape != exp_shape {
                return Err(Error::ShapeMismatch {
                    name,
                    found: shape,
                    expected: exp_shape.clone(),
                });
            }
            let offset = r.u64()?;
            if offset != next_offset {
                return Err(corrupt(format!(
                    "tensor `{name}` at offset {offset}, expected {next_offset}"
                )));
            }
            let numel: usize = shape.iter().product();
            next_offset += 4 * numel as u64;
            entries.push((shape, numel));
        }
        let data_len = usize::try_from(next_offset).map_err(|_| corrupt("data section too large"))?;
        let data = r.take(data_len)?;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let mut tensors = Vec::with_capacity(entries.len());
        let mut cursor = 0;
        for (shape, numel) in entries {
            let values = data[cursor..cursor + 4 * numel]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            cursor += 4 * numel;
            tensors.push(Tensor::new(shape, values).map_err(|e| corrupt(e.to_string()))?);
        }
        let weights = layout(&config).with_values(tensors)?;
        Ok(Self {
            model: Transformer::from_weights(config, weights)?,
            step,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt {
        what: "checkpoint",
        msg: msg.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(corrupt(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::new(2, 2, 8, 11).with_recipe(NormKind::LayerNorm, PositionalKind::Learned);
        Checkpoint {
            model: Transformer::init(cfg, &RngStream::new(3)).unwrap(),
            step: 17,
            rng: RngStream::new(9).substream(2),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 12, 40, bytes.len() - 1] {
            assert!(
                matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corrupt { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn edited_shape_header_is_shape_mismatch() {
        let mut bytes = sample().to_bytes();
        // first table entry: tok_emb, rank 2, dims [11, 8]
        let table = 8 + 4 + 24 + 2 + 8 + 16 + 4;
        let dims = table + 2 + "tok_emb".len() + 1;
        assert_eq!(u32::from_le_bytes(bytes[dims..dims + 4].try_into().unwrap()), 11);
        bytes[dims..dims + 4].copy_from_slice(&12u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::ShapeMismatch { ref name, .. }) if name == "tok_emb"
        ));
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = sample().to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corrupt { .. })));
    }
}
