//! Binary checkpoint format.
//!
//! ```text
//! "RSTC"  u16 version  u64 seed
//! u32 input_channels  u32 input_height  u32 input_width
//! u32 layer_count
//! per layer:
//!   u32 in_maps  u32 out_maps  u32 k  u8 trained  u8 kind (0 binary, 1 real)
//!   u32 residual_count, per source: u32 from (0 = input)  u8 invert
//!   binary: f32 w_low  f32 w_high  ceil(n/8) packed bytes (bit i -> byte i/8, bit i%8)
//!   real:   n × f32
//!   u32 threshold_count  threshold_count × f32
//! u8 has_classifier
//!   u32 dense_count  f64 dropout
//!   per dense: u32 inputs  u32 outputs  inputs·outputs × f64 (column-major)  outputs × f64
//! u32 crc32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{check_magic, read_file, write_file, Reader};
use crate::classifier::{Dense, MlpModel};
use crate::convnet::ResidualSource;
use crate::error::{Error, Result};
use crate::kernel::{pack_bits, packed_len, unpack_bits, KernelBank, KernelShape, Kernels, RealKernelBank};

pub const MAGIC: &[u8; 4] = b"RSTC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub kernels: Kernels,
    pub thresholds: Vec<f32>,
    pub trained: bool,
    pub residual: Vec<ResidualSource>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerRecord>,
    pub classifier: Option<MlpModel>,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    let (c, h, w) = ckpt.input_shape;
    for v in [c, h, w, ckpt.layers.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for layer in &ckpt.layers {
        let shape = layer.kernels.shape();
        for v in [shape.in_maps, shape.out_maps, shape.k] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(layer.trained as u8);
        out.push(match layer.kernels {
            Kernels::Binary(_) => 0,
            Kernels::Real(_) => 1,
        });
        out.extend_from_slice(&(layer.residual.len() as u32).to_le_bytes());
        for src in &layer.residual {
            out.extend_from_slice(&(src.from as u32).to_le_bytes());
            out.push(src.invert as u8);
        }
        match &layer.kernels {
            Kernels::Binary(bank) => {
                out.extend_from_slice(&(bank.w_low as f32).to_le_bytes());
                out.extend_from_slice(&(bank.w_high as f32).to_le_bytes());
                out.extend_from_slice(&pack_bits(&bank.high));
            }
            Kernels::Real(real) => {
                for v in &real.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(layer.thresholds.len() as u32).to_le_bytes());
        for t in &layer.thresholds {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    match &ckpt.classifier {
        None => out.push(0),
        Some(model) => {
            out.push(1);
            out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
            out.extend_from_slice(&model.dropout.to_le_bytes());
            for dense in &model.layers {
                out.extend_from_slice(&(dense.inputs() as u32).to_le_bytes());
                out.extend_from_slice(&(dense.outputs() as u32).to_le_bytes());
                for v in dense.weights.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in dense.bias.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    const WHAT: &str = "checkpoint";
    let mut r = Reader::new(bytes, WHAT);
    check_magic(r.take(4)?, MAGIC, WHAT)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            what: WHAT.into(),
            expected: VERSION,
            found: version,
        });
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated {
            what: WHAT.into(),
            expected: 10,
            found: bytes.len(),
        });
    }
    let body = &bytes[..bytes.len().saturating_sub(4)];
    let seed = r.u64()?;
    let input_shape = (r.usize32()?, r.usize32()?, r.usize32()?);
    let layer_count = r.usize32()?;
    let mut layers = Vec::with_capacity(layer_count.min(64));
    for _ in 0..layer_count {
        let in_maps = r.usize32()?;
        let out_maps = r.usize32()?;
        let k = r.usize32()?;
        let shape = KernelShape {
            out_maps,
            in_maps,
            k,
        };
        let trained = r.u8()? != 0;
        let kind = r.u8()?;
        let residual_count = r.usize32()?;
        let mut residual = Vec::with_capacity(residual_count.min(64));
        for _ in 0..residual_count {
            let from = r.usize32()?;
            let invert = r.u8()? != 0;
            residual.push(ResidualSource { from, invert });
        }
        let kernels = match kind {
            0 => {
                let w_low = f64::from(r.f32()?);
                let w_high = f64::from(r.f32()?);
                let packed = r.take(packed_len(shape.len()))?;
                Kernels::Binary(KernelBank {
                    shape,
                    w_low,
                    w_high,
                    high: unpack_bits(packed, shape.len()),
                })
            }
            1 => {
                let mut values = Vec::with_capacity(shape.len());
                for _ in 0..shape.len() {
                    values.push(r.f32()?);
                }
                Kernels::Real(RealKernelBank { shape, values })
            }
            other => {
                return Err(Error::MagicMismatch {
                    what: "checkpoint kernel kind".into(),
                    expected: "0 or 1".into(),
                    found: other.to_string(),
                })
            }
        };
        let count = r.usize32()?;
        let mut thresholds = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            thresholds.push(r.f32()?);
        }
        layers.push(LayerRecord {
            kernels,
            thresholds,
            trained,
            residual,
        });
    }
    let classifier = if r.u8()? != 0 {
        let dense_count = r.usize32()?;
        let dropout = r.f64()?;
        let mut dense_layers = Vec::with_capacity(dense_count.min(16));
        for _ in 0..dense_count {
            let inputs = r.usize32()?;
            let outputs = r.usize32()?;
            let mut w = Vec::with_capacity(inputs * outputs);
            for _ in 0..inputs * outputs {
                w.push(r.f64()?);
            }
            let mut b = Vec::with_capacity(outputs);
            for _ in 0..outputs {
                b.push(r.f64()?);
            }
            dense_layers.push(Dense {
                weights: DMatrix::from_column_slice(inputs, outputs, &w),
                bias: DVector::from_vec(b),
            });
        }
        Some(MlpModel {
            layers: dense_layers,
            dropout,
        })
    } else {
        None
    };
    if r.position() != body.len() {
        return Err(Error::Truncated {
            what: WHAT.into(),
            expected: r.position() + 4,
            found: bytes.len(),
        });
    }
    let stored = r.u32()?;
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(Checkpoint {
        seed,
        input_shape,
        layers,
        classifier,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(ckpt))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Key, Phase};

    fn sample() -> Checkpoint {
        let shape = KernelShape {
            out_maps: 36,
            in_maps: 3,
            k: 3,
        };
        let key = Key::new(9, Phase::KernelInit);
        let high = (0..shape.len()).map(|i| key.with(i as u64).bernoulli(0.4)).collect();
        let real_shape = KernelShape {
            out_maps: 2,
            in_maps: 36,
            k: 3,
        };
        Checkpoint {
            seed: 1234,
            input_shape: (3, 32, 32),
            layers: vec![
                LayerRecord {
                    kernels: Kernels::Binary(KernelBank {
                        shape,
                        w_low: -1.0,
                        w_high: 1.0,
                        high,
                    }),
                    thresholds: (0..36).map(|i| i as f32 * 0.37).collect(),
                    trained: true,
                    residual: vec![],
                },
                LayerRecord {
                    kernels: Kernels::Real(RealKernelBank {
                        shape: real_shape,
                        values: (0..real_shape.len()).map(|i| (i as f32).sin()).collect(),
                    }),
                    thresholds: vec![0.0, 1.5],
                    trained: false,
                    residual: vec![ResidualSource {
                        from: 0,
                        invert: true,
                    }],
                },
            ],
            classifier: Some(MlpModel {
                layers: vec![Dense {
                    weights: DMatrix::from_fn(4, 3, |r, c| r as f64 * 0.1 - c as f64),
                    bias: DVector::from_vec(vec![0.5, -0.25, 1e-300]),
                }],
                dropout: 0.5,
            }),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ckpt = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.rstc");
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn kernel_payload_is_bit_packed() {
        let mut ckpt = sample();
        ckpt.layers.truncate(1);
        ckpt.classifier = None;
        let bytes = encode(&ckpt);
        // header 4+2+8+16, layer header 12+2+4, levels 8, payload 122,
        // thresholds 4+36*4, classifier flag 1, crc 4
        assert_eq!(bytes.len(), 30 + 18 + 8 + 122 + 148 + 1 + 4);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::MagicMismatch { .. })));
    }

    #[test]
    fn version_crc_and_truncation_errors() {
        let bytes = encode(&sample());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode(&v), Err(Error::VersionMismatch { found: 9, .. })));

        let mut c = bytes.clone();
        // inside the classifier bias payload
        let at = c.len() - 20;
        c[at] ^= 0x40;
        assert!(matches!(decode(&c), Err(Error::ChecksumMismatch { .. })));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 9]),
            Err(Error::Truncated { .. })
        ));
    }
}
