//! Convolution kernel banks.
//!
//! Weights are indexed `[out_map][in_map][row][col]`, row-major.

use serde::{Deserialize, Serialize};

/// Geometry shared by every kernel representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelShape {
    pub out_maps: usize,
    pub in_maps: usize,
    pub k: usize,
}

impl KernelShape {
    pub fn len(&self) -> usize {
        self.out_maps * self.in_maps * self.k * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, out_map: usize, in_map: usize, row: usize, col: usize) -> usize {
        ((out_map * self.in_maps + in_map) * self.k + row) * self.k + col
    }
}

/// Binary weights in `{w_low, w_high}`; `true` marks the high state.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    pub shape: KernelShape,
    pub w_low: f64,
    pub w_high: f64,
    pub high: Vec<bool>,
}

impl KernelBank {
    pub fn all_low(shape: KernelShape, w_low: f64, w_high: f64) -> Self {
        KernelBank {
            shape,
            w_low,
            w_high,
            high: vec![false; shape.len()],
        }
    }

    #[inline]
    pub fn weight(&self, index: usize) -> f64 {
        if self.high[index] {
            self.w_high
        } else {
            self.w_low
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.high.len()).map(|i| self.weight(i)).collect()
    }

    pub fn fraction_high(&self) -> f64 {
        if self.high.is_empty() {
            return 0.0;
        }
        self.high.iter().filter(|&&h| h).count() as f64 / self.high.len() as f64
    }

    /// Shannon entropy (bits) of the high/low distribution.
    pub fn bit_entropy(&self) -> f64 {
        let p = self.fraction_high();
        if p <= 0.0 || p >= 1.0 {
            return 0.0;
        }
        -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
    }

    /// One bit per weight, least significant bit first within each byte.
    pub fn pack(&self) -> Vec<u8> {
        pack_bits(&self.high)
    }
}

/// Full-precision kernels for the exponential-STDP ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct RealKernelBank {
    pub shape: KernelShape,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Kernels {
    Binary(KernelBank),
    Real(RealKernelBank),
}

impl Kernels {
    pub fn shape(&self) -> KernelShape {
        match self {
            Kernels::Binary(b) => b.shape,
            Kernels::Real(r) => r.shape,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            Kernels::Binary(b) => b.weights(),
            Kernels::Real(r) => r.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn as_binary(&self) -> Option<&KernelBank> {
        match self {
            Kernels::Binary(b) => Some(b),
            Kernels::Real(_) => None,
        }
    }
}

pub fn packed_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(bits.len())];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Vec<bool> {
    (0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}
