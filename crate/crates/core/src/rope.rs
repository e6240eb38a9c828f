//! Rotary position embedding with context-extension variants.
//!
//! Base frequencies are `theta_i = base^(-2i/dim)` for `i in 0..dim/2`.
//! Variants either remap positions (linear interpolation) or rewrite the
//! frequencies (NTK base adjustment, NTK-by-parts ramp). Dynamic variants
//! pick their scale from the current sequence length, so callers must
//! rebuild the table whenever the length grows. xPos keeps the base
//! frequencies and adds a per-pair exponential decay on relative distance.
//!
//! Everything here runs in f64.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RopeError {
    #[error("bad rope spec: {0}")]
    BadSpec(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeKind {
    #[default]
    None,
    Linear,
    DynamicLinear,
    NtkV1,
    DynamicNtk,
    NtkV2,
    Xpos,
}

impl RopeKind {
    pub const ALL: [RopeKind; 7] = [
        RopeKind::None,
        RopeKind::Linear,
        RopeKind::DynamicLinear,
        RopeKind::NtkV1,
        RopeKind::DynamicNtk,
        RopeKind::NtkV2,
        RopeKind::Xpos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Linear => "linear",
            Self::DynamicLinear => "dynamic_linear",
            Self::NtkV1 => "ntk_v1",
            Self::DynamicNtk => "dynamic_ntk",
            Self::NtkV2 => "ntk_v2",
            Self::Xpos => "xpos",
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, Self::DynamicLinear | Self::DynamicNtk)
    }
}

impl fmt::Display for RopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RopeKind {
    type Err = RopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == key)
            .or(match key.as_str() {
                "ntkv1" | "ntk" => Some(Self::NtkV1),
                "ntkv2" | "ntk_by_parts" => Some(Self::NtkV2),
                "dynamic" => Some(Self::DynamicNtk),
                _ => None,
            })
            .ok_or_else(|| RopeError::BadSpec(format!("unknown rope kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RopeScalingSpec {
    pub kind: RopeKind,
    pub scale: f64,
    pub base: f64,
    pub dim: usize,
    pub train_len: usize,
    pub ntk2_alpha: f64,
    pub ntk2_beta: f64,
    pub xpos_gamma: f64,
}

impl Default for RopeScalingSpec {
    fn default() -> Self {
        Self {
            kind: RopeKind::None,
            scale: 1.0,
            base: 10_000.0,
            dim: 128,
            train_len: 2048,
            ntk2_alpha: 1.0,
            ntk2_beta: 32.0,
            xpos_gamma: 0.4,
        }
    }
}

impl RopeScalingSpec {
    pub fn new(kind: RopeKind, dim: usize, scale: f64) -> Self {
        Self {
            kind,
            dim,
            scale,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), RopeError> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(RopeError::BadSpec(format!("dim must be even and positive, got {}", self.dim)));
        }
        if matches!(self.kind, RopeKind::NtkV1 | RopeKind::DynamicNtk) && self.dim < 4 {
            return Err(RopeError::BadSpec("NTK base adjustment needs dim >= 4".into()));
        }
        if !(self.scale >= 1.0) || !self.scale.is_finite() {
            return Err(RopeError::BadSpec(format!("scale must be >= 1, got {}", self.scale)));
        }
        if !(self.base > 0.0) || !self.base.is_finite() {
            return Err(RopeError::BadSpec(format!("base must be positive, got {}", self.base)));
        }
        if self.train_len == 0 {
            return Err(RopeError::BadSpec("train_len must be >= 1".into()));
        }
        if !(self.ntk2_alpha < self.ntk2_beta) {
            return Err(RopeError::BadSpec(format!(
                "ntk2_alpha ({}) must be below ntk2_beta ({})",
                self.ntk2_alpha, self.ntk2_beta
            )));
        }
        if !(self.xpos_gamma >= 0.0) {
            return Err(RopeError::BadSpec("xpos_gamma must be non-negative".into()));
        }
        Ok(())
    }

    /// Scale a dynamic variant uses at `seq_len`: `max(1, seq_len / train_len)`.
    pub fn effective_scale(&self, seq_len: usize) -> f64 {
        if self.kind.is_dynamic() {
            (seq_len as f64 / self.train_len as f64).max(1.0)
        } else {
            self.scale
        }
    }
}

/// Per-pair rotation frequencies plus the position remapping `m -> m / position_divisor`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub thetas: Vec<f64>,
    pub position_divisor: f64,
    /// Per-pair decay bases for xPos; `None` for every other kind.
    pub xpos_zeta: Option<Vec<f64>>,
}

impl FrequencyTable {
    pub fn dim(&self) -> usize {
        self.thetas.len() * 2
    }

    pub fn effective_position(&self, m: f64) -> f64 {
        m / self.position_divisor
    }
}

pub fn base_thetas(base: f64, dim: usize) -> Vec<f64> {
    (0..dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
        .collect()
}

/// NTK-aware base: `base * scale^(dim / (dim - 2))`.
pub fn ntk_base(base: f64, scale: f64, dim: usize) -> f64 {
    base * scale.powf(dim as f64 / (dim as f64 - 2.0))
}

fn by_parts(thetas: &[f64], scale: f64, train_len: usize, alpha: f64, beta: f64) -> Vec<f64> {
    thetas
        .iter()
        .map(|&theta| {
            let wavelength = 2.0 * PI / theta;
            let ratio = train_len as f64 / wavelength;
            let gamma = ((ratio - alpha) / (beta - alpha)).clamp(0.0, 1.0);
            (1.0 - gamma) * theta / scale + gamma * theta
        })
        .collect()
}

/// Builds the frequency table for `spec` at the current sequence length.
pub fn frequencies(spec: &RopeScalingSpec, seq_len: usize) -> Result<FrequencyTable, RopeError> {
    spec.check()?;
    if seq_len == 0 {
        return Err(RopeError::BadSpec("seq_len must be >= 1".into()));
    }
    let dim = spec.dim;
    let plain = || FrequencyTable {
        thetas: base_thetas(spec.base, dim),
        position_divisor: 1.0,
        xpos_zeta: None,
    };
    let table = match spec.kind {
        RopeKind::None => plain(),
        RopeKind::Linear | RopeKind::DynamicLinear => {
            let scale = spec.effective_scale(seq_len);
            if scale == 1.0 {
                plain()
            } else {
                FrequencyTable {
                    position_divisor: scale,
                    ..plain()
                }
            }
        }
        RopeKind::NtkV1 | RopeKind::DynamicNtk => {
            let scale = spec.effective_scale(seq_len);
            if scale == 1.0 {
                plain()
            } else {
                FrequencyTable {
                    thetas: base_thetas(ntk_base(spec.base, scale, dim), dim),
                    ..plain()
                }
            }
        }
        RopeKind::NtkV2 => FrequencyTable {
            thetas: by_parts(
                &base_thetas(spec.base, dim),
                spec.scale,
                spec.train_len,
                spec.ntk2_alpha,
                spec.ntk2_beta,
            ),
            ..plain()
        },
        RopeKind::Xpos => {
            let gamma = spec.xpos_gamma;
            FrequencyTable {
                xpos_zeta: Some(
                    (0..dim / 2)
                        .map(|i| ((2 * i) as f64 / dim as f64 + gamma) / (1.0 + gamma))
                        .collect(),
                ),
                ..plain()
            }
        }
    };
    Ok(table)
}

/// Rotates consecutive pairs `(x[2i], x[2i+1])` by `p(m) * theta_i`.
pub fn rotate(vec: &[f64], m: usize, table: &FrequencyTable) -> Result<Vec<f64>, RopeError> {
    if vec.len() != table.dim() {
        return Err(RopeError::DimensionMismatch {
            expected: table.dim(),
            actual: vec.len(),
        });
    }
    let pos = table.effective_position(m as f64);
    let mut out = Vec::with_capacity(vec.len());
    for (pair, &theta) in vec.chunks_exact(2).zip(&table.thetas) {
        let (sin, cos) = (pos * theta).sin_cos();
        out.push(pair[0] * cos - pair[1] * sin);
        out.push(pair[0] * sin + pair[1] * cos);
    }
    Ok(out)
}

/// Attention logit between a query at `m` and a key at `n`.
///
/// `seq_len` selects the table for dynamic variants; use the current
/// sequence length.
pub fn score(
    q: &[f64],
    k: &[f64],
    m: usize,
    n: usize,
    spec: &RopeScalingSpec,
    seq_len: usize,
) -> Result<f64, RopeError> {
    if q.len() != k.len() {
        return Err(RopeError::DimensionMismatch {
            expected: q.len(),
            actual: k.len(),
        });
    }
    let table = frequencies(spec, seq_len)?;
    let rq = rotate(q, m, &table)?;
    let rk = rotate(k, n, &table)?;
    let dist = m as f64 - n as f64;
    let total = match &table.xpos_zeta {
        None => rq.iter().zip(&rk).map(|(a, b)| a * b).sum(),
        Some(zeta) => rq
            .chunks_exact(2)
            .zip(rk.chunks_exact(2))
            .zip(zeta)
            .map(|((a, b), z)| z.powf(dist) * (a[0] * b[0] + a[1] * b[1]))
            .sum(),
    };
    Ok(total)
}

/// CSV rendering of a table: `index,theta,wavelength,position_divisor`.
pub fn table_csv(table: &FrequencyTable) -> String {
    let mut out = String::from("index,theta,wavelength,position_divisor\n");
    for (i, theta) in table.thetas.iter().enumerate() {
        out.push_str(&format!("{i},{theta:e},{:e},{}\n", 2.0 * PI / theta, table.position_divisor));
    }
    out
}
