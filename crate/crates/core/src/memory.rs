//! Memory feasibility: the minimum-configuration table and an advisory
//! component estimator.
//!
//! The table decides feasibility. [`estimate_components`] is a rough
//! first-principles breakdown used for ranking and reporting only; the
//! table's small-model minima assume offloading the estimator cannot model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hardware::{format_gib, parse_layout_parts, GpuInventory, GIB};
use crate::registry::{ModelSpec, SizeBucket};

/// Devices report slightly less than their marketing size (a "48 GB" card
/// shows 49140 MiB). A device meets a requirement when it has at least this
/// fraction of the nominal capacity.
pub const NOMINAL_CAPACITY_SLACK: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method `{0}`; expected one of full16, lomo16, lora16, lora8, lora4")]
pub struct UnknownMethod(pub String);

/// Training method column of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Full16,
    Lomo16,
    Lora16,
    Lora8,
    Lora4,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Full16,
        MethodKind::Lomo16,
        MethodKind::Lora16,
        MethodKind::Lora8,
        MethodKind::Lora4,
    ];

    /// Bits per base weight.
    pub fn bits(self) -> u32 {
        match self {
            Self::Full16 | Self::Lomo16 | Self::Lora16 => 16,
            Self::Lora8 => 8,
            Self::Lora4 => 4,
        }
    }

    pub fn is_lora(self) -> bool {
        matches!(self, Self::Lora16 | Self::Lora8 | Self::Lora4)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full16 => "full16",
            Self::Lomo16 => "lomo16",
            Self::Lora16 => "lora16",
            Self::Lora8 => "lora8",
            Self::Lora4 => "lora4",
        }
    }

    /// Column header in the table.
    pub fn title(self) -> &'static str {
        match self {
            Self::Full16 => "16-bit Finetune",
            Self::Lomo16 => "16-bit LOMO",
            Self::Lora16 => "16-bit LoRA",
            Self::Lora8 => "8-bit LoRA",
            Self::Lora4 => "4-bit LoRA",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "full16" | "full" | "16bitfinetune" => Self::Full16,
            "lomo16" | "lomo" | "16bitlomo" => Self::Lomo16,
            "lora16" | "lora" | "16bitlora" => Self::Lora16,
            "lora8" | "8bitlora" => Self::Lora8,
            "lora4" | "qlora" | "4bitlora" => Self::Lora4,
            _ => return Err(UnknownMethod(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GpuLayout {
    pub count: u32,
    pub per_device_mem: u64,
}

impl GpuLayout {
    pub fn new(count: u32, per_device_gib: u64) -> Self {
        Self {
            count,
            per_device_mem: per_device_gib * GIB,
        }
    }

    pub fn total_mem(&self) -> u64 {
        self.per_device_mem * self.count as u64
    }

    /// Shorthand in the table's notation, e.g. `2x48 GB` or `24 GB`.
    pub fn label(&self) -> String {
        let size = if self.per_device_mem % GIB == 0 {
            format!("{}", self.per_device_mem / GIB)
        } else {
            format!("{:.2}", self.per_device_mem as f64 / GIB as f64)
        };
        if self.count == 1 {
            format!("{size} GB")
        } else {
            format!("{}x{size} GB", self.count)
        }
    }

    /// True when at least `count` devices each reach `per_device_mem`.
    pub fn dominated_by(&self, inv: &GpuInventory) -> bool {
        let threshold = self.per_device_mem as f64 * NOMINAL_CAPACITY_SLACK;
        let capable = inv
            .devices
            .iter()
            .filter(|d| d.total_mem as f64 >= threshold)
            .count();
        capable >= self.count as usize
    }
}

impl fmt::Display for GpuLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for GpuLayout {
    type Err = crate::hardware::HardwareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (count, per_device_mem) = parse_layout_parts(s)?;
        Ok(Self {
            count,
            per_device_mem,
        })
    }
}

/// Minimum GPU configurations at batch size 1, one row per size bucket and
/// one column per method. Cell text is copied from the published table;
/// alternatives are separated by whitespace.
pub const MIN_CONFIG_TABLE: [(SizeBucket, [&str; 5]); 6] = [
    (SizeBucket::B1, ["8 GB", "4 GB", "4 GB", "6 GB", "6 GB"]),
    (SizeBucket::B7, ["8 GB", "6 GB", "6 GB", "8 GB", "8 GB"]),
    (SizeBucket::B13, ["16 GB", "10 GB", "10 GB", "12 GB", "10 GB"]),
    (SizeBucket::B33, ["2x48 GB", "24 GB", "24 GB", "32 GB", "32 GB"]),
    (
        SizeBucket::B70,
        [
            "8x24 GB 4x48 GB 2x80 GB",
            "2x24 GB 48 GB",
            "2x24 GB 48 GB",
            "2x32 GB 80 GB",
            "2x24 GB 48 GB",
        ],
    ),
    (
        SizeBucket::B130,
        [
            "8x48 GB 4x80 GB",
            "8x24 GB 4x48 GB 2x80 GB",
            "8x24 GB 4x48 GB 2x80 GB",
            "8x24 GB 4x48 GB 2x80 GB",
            "8x24 GB 4x48 GB 2x80 GB",
        ],
    ),
];

fn cell_text(bucket: SizeBucket, method: MethodKind) -> &'static str {
    let row = MIN_CONFIG_TABLE
        .iter()
        .find(|(b, _)| *b == bucket)
        .expect("every bucket has a row");
    row.1[MethodKind::ALL.iter().position(|m| *m == method).unwrap()]
}

fn parse_cell(text: &str) -> Vec<GpuLayout> {
    text.split("GB")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            format!("{s} GB")
                .parse::<GpuLayout>()
                .expect("embedded table cells are well formed")
        })
        .collect()
}

/// Alternative minimum layouts for a cell, by ascending device count.
pub fn min_layouts(bucket: SizeBucket, method: MethodKind) -> Vec<GpuLayout> {
    let mut layouts = parse_cell(cell_text(bucket, method));
    layouts.sort_by_key(|l| l.count);
    layouts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryVerdict {
    pub feasible: bool,
    pub satisfied_layout: Option<GpuLayout>,
    pub required_layouts: Vec<GpuLayout>,
    /// Advisory notes, e.g. devices whose free memory is below the requirement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Checks the inventory against the table cell using total device memory.
pub fn check_feasible(inv: &GpuInventory, bucket: SizeBucket, method: MethodKind) -> MemoryVerdict {
    let required_layouts = min_layouts(bucket, method);
    let satisfied_layout = required_layouts.iter().copied().find(|l| l.dominated_by(inv));
    let mut warnings = Vec::new();
    if let Some(layout) = satisfied_layout {
        let busy: Vec<String> = inv
            .devices
            .iter()
            .filter(|d| d.total_mem as f64 >= layout.per_device_mem as f64 * NOMINAL_CAPACITY_SLACK)
            .filter(|d| (d.free_mem as f64) < layout.per_device_mem as f64 * NOMINAL_CAPACITY_SLACK)
            .map(|d| format!("[{}] {} free", d.index, format_gib(d.free_mem)))
            .collect();
        if !busy.is_empty() {
            warnings.push(format!(
                "devices below {} free memory: {}",
                format_gib(layout.per_device_mem),
                busy.join(", ")
            ));
        }
    }
    MemoryVerdict {
        feasible: satisfied_layout.is_some(),
        satisfied_layout,
        required_layouts,
        warnings,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityRow {
    pub bucket: SizeBucket,
    pub label: &'static str,
    pub cells: Vec<Vec<GpuLayout>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityMatrix {
    pub methods: Vec<MethodKind>,
    pub rows: Vec<FeasibilityRow>,
}

/// The whole table as buckets x methods.
pub fn feasibility_matrix() -> FeasibilityMatrix {
    FeasibilityMatrix {
        methods: MethodKind::ALL.to_vec(),
        rows: SizeBucket::ALL
            .iter()
            .map(|&bucket| FeasibilityRow {
                bucket,
                label: bucket.label(),
                cells: MethodKind::ALL.iter().map(|&m| min_layouts(bucket, m)).collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Lion,
    Adam,
}

impl OptimizerKind {
    /// Auxiliary state buffers per trainable tensor.
    pub fn state_buffers(self) -> u64 {
        match self {
            Self::Lion => 1,
            Self::Adam => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lion => "lion",
            Self::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lion" => Ok(Self::Lion),
            "adam" | "adamw" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}`; expected lion or adam")),
        }
    }
}

/// LoRA settings for the estimator. `matrices` lists `(out, in)` shapes of
/// adapted weights; when empty, shapes are inferred from the parameter count.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdapterShape {
    pub rank: u64,
    pub matrices: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub weights: u64,
    pub optimizer_states: u64,
    pub gradients: u64,
    pub adapter: u64,
    pub total_per_device: u64,
    pub assumptions: Vec<String>,
}

const BYTES_16BIT: u64 = 2;

/// Rough dense-transformer shape from a parameter count: `P ~= 12 L d^2`
/// with `L = d / 128`.
fn inferred_shape(param_count: u64) -> (u64, u64) {
    let d = (128.0 * param_count as f64 / 12.0).cbrt();
    let hidden = ((d / 128.0).round().max(1.0) * 128.0) as u64;
    let layers = (hidden / 128).max(1);
    (hidden, layers)
}

/// Trainable adapter parameters: `r * (in + out)` per adapted matrix.
pub fn adapter_params(model: &ModelSpec, adapter: &AdapterShape) -> u64 {
    if adapter.matrices.is_empty() {
        let (hidden, layers) = inferred_shape(model.param_count);
        // q and v projections in every layer
        2 * layers * adapter.rank * (hidden + hidden)
    } else {
        adapter
            .matrices
            .iter()
            .map(|&(out, inp)| adapter.rank * (out + inp))
            .sum()
    }
}

/// Advisory per-component memory breakdown.
pub fn estimate_components(
    model: &ModelSpec,
    method: MethodKind,
    optimizer: OptimizerKind,
    mp_degree: u32,
    adapter: &AdapterShape,
) -> MemoryEstimate {
    let mp = mp_degree.max(1) as u64;
    let p = model.param_count;
    let mut assumptions = vec![
        "uncalibrated: ZeRO stage and offload settings behind the table are unknown".to_string(),
        "activations excluded (batch size 1)".to_string(),
        format!(
            "weights: {p} params x {} bits / 8, divided across {mp} model-parallel rank(s)",
            method.bits()
        ),
    ];
    let weights = (p * method.bits() as u64 / 8).div_ceil(mp);

    let (trainable, adapter_bytes) = if method.is_lora() {
        let a = adapter_params(model, adapter);
        if adapter.matrices.is_empty() {
            assumptions.push(format!(
                "uncalibrated: adapter shapes inferred (q,v projections, rank {})",
                adapter.rank
            ));
        }
        assumptions.push(format!("trainable: {a} adapter params, base frozen"));
        assumptions.push("adapter weights held in 16-bit".to_string());
        (a, a * BYTES_16BIT)
    } else {
        assumptions.push(format!("trainable: all {p} params"));
        (p, 0)
    };

    let optimizer_states = trainable * BYTES_16BIT * optimizer.state_buffers();
    assumptions.push(format!(
        "optimizer states: {} buffer(s) x 2 bytes per trainable param ({optimizer})",
        optimizer.state_buffers()
    ));

    let gradients = if method == MethodKind::Lomo16 {
        let (_, layers) = inferred_shape(p);
        assumptions.push(format!(
            "gradients: fused update keeps one layer live ({p} / {layers} layers x 2 bytes)"
        ));
        p.div_ceil(layers) * BYTES_16BIT
    } else {
        assumptions.push("gradients: 2 bytes per trainable param".to_string());
        trainable * BYTES_16BIT
    };

    let total_per_device = weights + (optimizer_states + gradients + adapter_bytes).div_ceil(mp);
    MemoryEstimate {
        weights,
        optimizer_states,
        gradients,
        adapter: adapter_bytes,
        total_per_device,
        assumptions,
    }
}
