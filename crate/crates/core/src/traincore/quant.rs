//! Symmetric round-to-nearest quantization with one absmax per group.

use serde::{Deserialize, Serialize};

use super::TrainError;

pub const DEFAULT_GROUP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantBits {
    Four,
    Eight,
}

impl QuantBits {
    pub fn bits(self) -> u32 {
        match self {
            QuantBits::Four => 4,
            QuantBits::Eight => 8,
        }
    }

    /// Largest code magnitude, 2^(b-1) - 1.
    pub fn qmax(self) -> i32 {
        (1 << (self.bits() - 1)) - 1
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            4 => Some(QuantBits::Four),
            8 => Some(QuantBits::Eight),
            _ => None,
        }
    }
}

/// Codes are packed two per byte at 4 bits (low nibble first) and one per
/// byte at 8 bits, both two's complement. The per-group absmax is kept
/// rather than the scale so that codes at ±qmax decode to ±absmax exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub codes: Vec<u8>,
    pub absmax: Vec<f64>,
    pub group_size: usize,
    pub bits: QuantBits,
    pub len: usize,
}

impl QuantizedTensor {
    pub fn scales(&self) -> Vec<f64> {
        let q = self.bits.qmax() as f64;
        self.absmax.iter().map(|a| a / q).collect()
    }

    pub fn groups(&self) -> usize {
        self.absmax.len()
    }

    pub fn code(&self, i: usize) -> i32 {
        match self.bits {
            QuantBits::Eight => self.codes[i] as i8 as i32,
            QuantBits::Four => {
                let byte = self.codes[i / 2];
                let nib = if i % 2 == 0 { byte & 0x0f } else { byte >> 4 };
                ((nib << 4) as i8 >> 4) as i32
            }
        }
    }
}

pub fn quantize_rtn(values: &[f64], bits: QuantBits, group: usize) -> Result<QuantizedTensor, TrainError> {
    if group == 0 {
        return Err(TrainError::InvalidArgument("group size must be positive".into()));
    }
    let qmax = bits.qmax();
    let padded = values.len().div_ceil(group) * group;
    let mut codes = Vec::with_capacity(padded);
    let mut absmax = Vec::with_capacity(padded / group);
    for chunk in values.chunks(group) {
        let a = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        absmax.push(a);
        let scale = a / qmax as f64;
        for &v in chunk {
            let c = if a == 0.0 {
                0
            } else {
                ((v / scale).round() as i32).clamp(-qmax, qmax)
            };
            codes.push(c);
        }
    }
    codes.resize(padded, 0);
    let packed = match bits {
        QuantBits::Eight => codes.iter().map(|&c| c as i8 as u8).collect(),
        QuantBits::Four => codes
            .chunks(2)
            .map(|p| {
                let lo = (p[0] as u8) & 0x0f;
                let hi = (p.get(1).copied().unwrap_or(0) as u8) & 0x0f;
                lo | (hi << 4)
            })
            .collect(),
    };
    Ok(QuantizedTensor {
        codes: packed,
        absmax,
        group_size: group,
        bits,
        len: values.len(),
    })
}

pub fn dequantize(qt: &QuantizedTensor) -> Vec<f64> {
    let qmax = qt.bits.qmax();
    (0..qt.len)
        .map(|i| {
            let a = qt.absmax[i / qt.group_size];
            let c = qt.code(i);
            if c == qmax {
                a
            } else if c == -qmax {
                -a
            } else {
                c as f64 * (a / qmax as f64)
            }
        })
        .collect()
}
