//! Portable binary checkpoint format.
//!
//! Little-endian layout: magic `PLAB`, version, init seed, class count,
//! input shape, layer-spec table, then for each parameterized layer the raw
//! f64 weights, a packed LSB-first bitmask, and raw f64 biases. Round trips
//! are bit-exact.

use std::path::Path;

use thiserror::Error;

use super::{
    Granularity, LayerParam, LayerSpec, MaskedNetwork, MaskedParameter, NetError, NetworkSpec,
    PaddingSpec,
};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PLAB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn pack_mask(mask: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m == 1.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_mask(bytes: &[u8], len: usize) -> Vec<f64> {
    (0..len).map(|i| if bytes[i / 8] >> (i % 8) & 1 == 1 { 1.0 } else { 0.0 }).collect()
}

impl MaskedNetwork {
    /// Serializes the full network state.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        push_u32(&mut out, self.spec.classes as u32);
        push_u32(&mut out, self.spec.input_shape.len() as u32);
        for &d in &self.spec.input_shape {
            push_u32(&mut out, d as u32);
        }
        push_u32(&mut out, self.spec.layers.len() as u32);
        for layer in &self.spec.layers {
            match *layer {
                LayerSpec::Dense { fan_in, fan_out } => {
                    out.push(0);
                    push_u32(&mut out, fan_in as u32);
                    push_u32(&mut out, fan_out as u32);
                }
                LayerSpec::Conv2d { in_channels, out_channels, kernel, padding } => {
                    out.push(1);
                    push_u32(&mut out, in_channels as u32);
                    push_u32(&mut out, out_channels as u32);
                    push_u32(&mut out, kernel as u32);
                    out.push(match padding {
                        PaddingSpec::Same => 0,
                        PaddingSpec::Valid => 1,
                    });
                }
                LayerSpec::Relu => out.push(2),
                LayerSpec::Flatten => out.push(3),
            }
        }
        for lp in &self.params {
            out.push(match lp.weight.granularity() {
                Granularity::PerWeight => 0,
                Granularity::PerOutputUnit => 1,
            });
            for &w in lp.weight.weights().data() {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&pack_mask(lp.weight.mask().data()));
            for &b in lp.bias.data() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint. Any structural problem yields an error and no
    /// partially built network.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version).into());
        }
        let seed = r.u64()?;
        let classes = r.u32()? as usize;
        let shape_len = r.u32()? as usize;
        if shape_len > 4 {
            return Err(CheckpointError::Corrupt(format!("input rank {shape_len}")).into());
        }
        let mut input_shape = Vec::with_capacity(shape_len);
        for _ in 0..shape_len {
            input_shape.push(r.u32()? as usize);
        }
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(match r.u8()? {
                0 => LayerSpec::Dense { fan_in: r.u32()? as usize, fan_out: r.u32()? as usize },
                1 => LayerSpec::Conv2d {
                    in_channels: r.u32()? as usize,
                    out_channels: r.u32()? as usize,
                    kernel: r.u32()? as usize,
                    padding: match r.u8()? {
                        0 => PaddingSpec::Same,
                        1 => PaddingSpec::Valid,
                        p => return Err(CheckpointError::Corrupt(format!("padding tag {p}")).into()),
                    },
                },
                2 => LayerSpec::Relu,
                3 => LayerSpec::Flatten,
                t => return Err(CheckpointError::Corrupt(format!("layer tag {t}")).into()),
            });
        }
        let spec = NetworkSpec { input_shape, layers, classes };
        spec.validate().map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

        let mut params = Vec::new();
        for layer in &spec.layers {
            let (shape, fan_out) = match *layer {
                LayerSpec::Dense { fan_in, fan_out } => (vec![fan_out, fan_in], fan_out),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    (vec![out_channels, in_channels, kernel, kernel], out_channels)
                }
                _ => continue,
            };
            let granularity = match r.u8()? {
                0 => Granularity::PerWeight,
                1 => Granularity::PerOutputUnit,
                g => return Err(CheckpointError::Corrupt(format!("granularity tag {g}")).into()),
            };
            let len: usize = shape.iter().product();
            let weights = Tensor::new(shape.clone(), r.f64s(len)?)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let mask_bytes = r.take(len.div_ceil(8))?;
            let mask = Tensor::new(shape, unpack_mask(mask_bytes, len))
                .expect("mask length matches weights");
            let bias = Tensor::new(vec![fan_out], r.f64s(fan_out)?)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            let weight = MaskedParameter::from_parts(weights, mask, granularity)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params.push(LayerParam { weight, bias });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            ))
            .into());
        }
        MaskedNetwork::from_parts(spec, params, seed)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes()).map_err(CheckpointError::Io)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, NetError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::Io)?;
        Self::from_bytes(&bytes)
    }
}
