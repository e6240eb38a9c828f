//! Rule engine turning requirements and an inventory into a training plan.
//!
//! The planner never consults an LLM. Every rule that fires appends one
//! line to [`Plan::rationale`], so a plan can be audited after the fact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emit::{build_launch_command, render_readme};
use crate::hardware::{format_gib, summarize, GpuInventory};
use crate::memory::{
    check_feasible, estimate_components, AdapterShape, GpuLayout, MemoryVerdict, MethodKind,
    OptimizerKind, NOMINAL_CAPACITY_SLACK,
};
use crate::registry::{self, list_models, resolve_model, ModelSpec, RegistryError};
use crate::rope::{RopeKind, RopeScalingSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("{key}: expected {expected}, got `{value}`")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("{key}: {message}")]
    InvariantViolation { key: String, message: String },
    #[error("no feasible method for {model} on this hardware (needs one of: {})", needed.join(", "))]
    NoFeasiblePlan { model: String, needed: Vec<String> },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    QualityFirst,
    MemoryFirst,
}

impl Priority {
    /// Method preference order under this priority.
    pub fn method_order(self) -> [MethodKind; 5] {
        let mut order = MethodKind::ALL;
        if self == Priority::MemoryFirst {
            order.reverse();
        }
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Pretrain,
    #[default]
    Instruct,
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pretrain => "pretrain",
            Self::Instruct => "instruct",
        })
    }
}

impl FromStr for DataMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pretrain" => Ok(Self::Pretrain),
            "instruct" => Ok(Self::Instruct),
            other => Err(format!("unknown data mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Requirements {
    pub domain: String,
    pub language: String,
    pub quality_vs_memory: Priority,
    pub model_choice: Option<String>,
    pub dataset_choice: Option<String>,
    pub train_here: bool,
    pub persona_name: Option<String>,
    pub context_target: Option<u32>,
}

impl Default for Requirements {
    fn default() -> Self {
        Self {
            domain: "general".into(),
            language: "en".into(),
            quality_vs_memory: Priority::QualityFirst,
            model_choice: None,
            dataset_choice: None,
            train_here: true,
            persona_name: None,
            context_target: None,
        }
    }
}

/// Every tunable the wizard or planner settles. Serialized as ARGS.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub model: String,
    pub method: MethodKind,
    pub seed: u64,
    pub epochs: u32,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub lora_rank: u32,
    pub lora_alpha: f64,
    pub quant_bits: u8,
    pub zero_stage: u8,
    pub dataset: Option<String>,
    pub data_mode: DataMode,
    pub persona_name: Option<String>,
    pub max_length: u32,
    pub rope: RopeScalingSpec,
    pub world: GpuLayout,
    pub wandb: bool,
    pub output_dir: String,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            model: "Llama-7B".into(),
            method: MethodKind::Full16,
            seed: 1234,
            epochs: 10,
            lr: 1e-4,
            optimizer: OptimizerKind::Lion,
            lora_rank: 8,
            lora_alpha: 16.0,
            quant_bits: 16,
            zero_stage: 0,
            dataset: None,
            data_mode: DataMode::Instruct,
            persona_name: None,
            max_length: registry::DEFAULT_CONTEXT,
            rope: RopeScalingSpec::default(),
            world: GpuLayout::new(1, 8),
            wandb: false,
            output_dir: "./output".into(),
        }
    }
}

/// One documented config key.
#[derive(Debug, Clone, Serialize)]
pub struct FieldSchema {
    pub key: &'static str,
    pub kind: &'static str,
    pub allowed: &'static str,
    pub description: &'static str,
    /// Whether the key becomes a launcher flag; the rest are consumed elsewhere.
    pub launch: bool,
}

/// Config keys in schema order. ARGS.json and launch flags follow it.
pub const CONFIG_SCHEMA: [FieldSchema; 18] = [
    FieldSchema { key: "model", kind: "text", allowed: "registry model name", description: "base model", launch: true },
    FieldSchema { key: "method", kind: "enum", allowed: "full16 | lomo16 | lora16 | lora8 | lora4", description: "fine-tuning method", launch: true },
    FieldSchema { key: "seed", kind: "integer", allowed: ">= 0", description: "random seed", launch: true },
    FieldSchema { key: "epochs", kind: "integer", allowed: ">= 1", description: "passes over the dataset", launch: true },
    FieldSchema { key: "lr", kind: "real", allowed: "> 0", description: "learning rate", launch: true },
    FieldSchema { key: "optimizer", kind: "enum", allowed: "lion | adam", description: "optimizer", launch: true },
    FieldSchema { key: "lora_rank", kind: "integer", allowed: ">= 1", description: "LoRA rank r", launch: true },
    FieldSchema { key: "lora_alpha", kind: "real", allowed: "> 0", description: "LoRA scaling alpha (update scaled by alpha/r)", launch: true },
    FieldSchema { key: "quant_bits", kind: "enum", allowed: "16 | 8 | 4 (must match method)", description: "base weight precision", launch: true },
    FieldSchema { key: "zero_stage", kind: "enum", allowed: "0 | 1 | 2 | 3", description: "DeepSpeed ZeRO stage", launch: true },
    FieldSchema { key: "dataset", kind: "text", allowed: "built-in dataset name or local JSONL path", description: "training data", launch: true },
    FieldSchema { key: "data_mode", kind: "enum", allowed: "pretrain | instruct", description: "JSONL record format", launch: true },
    FieldSchema { key: "persona_name", kind: "text", allowed: "any, or none", description: "replaces [MODEL NAME] in the data", launch: true },
    FieldSchema { key: "max_length", kind: "integer", allowed: ">= 1", description: "maximum sequence length", launch: true },
    FieldSchema { key: "rope", kind: "object", allowed: "rope.kind, rope.scale, rope.base, rope.dim, rope.train_len, rope.ntk2_alpha, rope.ntk2_beta, rope.xpos_gamma", description: "position interpolation", launch: true },
    FieldSchema { key: "world", kind: "layout", allowed: "e.g. \"2x48 GB\"", description: "GPU layout; encoded in --world_info rather than a flag", launch: false },
    FieldSchema { key: "wandb", kind: "bool", allowed: "true | false", description: "external experiment tracking", launch: true },
    FieldSchema { key: "output_dir", kind: "path", allowed: "any path", description: "checkpoint directory", launch: true },
];

pub const ROPE_KEYS: [&str; 8] = [
    "kind", "scale", "base", "dim", "train_len", "ntk2_alpha", "ntk2_beta", "xpos_gamma",
];

pub fn quant_bits_for(method: MethodKind) -> u8 {
    method.bits() as u8
}

/// Outcome of [`validate`]; empty means the config can be launched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub problems: Vec<String>,
}

impl ConfigReport {
    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for ConfigReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.problems.join("; "))
    }
}

/// Field-level invariants that `set_arg` enforces on every update.
fn field_invariants(cfg: &TrainingConfig) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    if cfg.epochs < 1 {
        out.push(("epochs", "must be ≥ 1".to_string()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        out.push(("lr", "must be > 0".to_string()));
    }
    if cfg.lora_rank < 1 {
        out.push(("lora_rank", "must be ≥ 1".to_string()));
    }
    if !(cfg.lora_alpha > 0.0 && cfg.lora_alpha.is_finite()) {
        out.push(("lora_alpha", "must be > 0".to_string()));
    }
    let expected = quant_bits_for(cfg.method);
    if cfg.quant_bits != expected {
        out.push((
            "quant_bits",
            format!("must be {expected} for method {}", cfg.method),
        ));
    }
    if cfg.zero_stage > 3 {
        out.push(("zero_stage", "must be 0, 1, 2 or 3".to_string()));
    }
    if cfg.max_length < 1 {
        out.push(("max_length", "must be ≥ 1".to_string()));
    }
    if let Err(e) = cfg.rope.check() {
        out.push(("rope", e.to_string()));
    }
    if cfg.world.count < 1 || cfg.world.per_device_mem == 0 {
        out.push(("world", "needs at least one device with memory".to_string()));
    }
    if matches!(&cfg.persona_name, Some(p) if p.trim().is_empty()) {
        out.push(("persona_name", "must not be blank when set".to_string()));
    }
    out
}

/// Lists missing required fields and violated invariants.
pub fn validate(cfg: &TrainingConfig) -> ConfigReport {
    let mut problems = Vec::new();
    if cfg.model.trim().is_empty() {
        problems.push("model: required".to_string());
    } else if let Err(e) = resolve_model(&cfg.model) {
        problems.push(format!("model: {e}"));
    }
    match &cfg.dataset {
        Some(d) if !d.trim().is_empty() => {}
        _ => problems.push("dataset: required".to_string()),
    }
    if cfg.output_dir.trim().is_empty() {
        problems.push("output_dir: required".to_string());
    }
    for (key, message) in field_invariants(cfg) {
        problems.push(format!("{key}: {message}"));
    }
    if cfg.rope.kind == RopeKind::None && cfg.max_length as usize > cfg.rope.train_len {
        problems.push(format!(
            "rope: max_length {} exceeds train_len {} without a scaling method",
            cfg.max_length, cfg.rope.train_len
        ));
    }
    ConfigReport { problems }
}

fn mismatch(key: &str, expected: &'static str, value: &str) -> PlanError {
    PlanError::TypeMismatch {
        key: key.to_string(),
        expected,
        value: value.to_string(),
    }
}

fn parse_num<T: FromStr>(key: &str, expected: &'static str, value: &str) -> Result<T, PlanError> {
    value.trim().parse::<T>().map_err(|_| mismatch(key, expected, value))
}

/// Integers are parsed signed first so that `-1` reports a range problem
/// rather than a type problem.
fn parse_count(key: &str, value: &str) -> Result<u32, PlanError> {
    let n: i64 = parse_num(key, "integer", value)?;
    u32::try_from(n).map_err(|_| PlanError::InvariantViolation {
        key: key.to_string(),
        message: format!("must be ≥ 1, got {n}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PlanError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(mismatch(key, "bool", value)),
    }
}

fn optional_text(value: &str) -> Option<String> {
    let v = value.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("null") {
        None
    } else {
        Some(v.to_string())
    }
}

fn set_rope_field(rope: &mut RopeScalingSpec, field: &str, key: &str, value: &str) -> Result<(), PlanError> {
    match field {
        "kind" => rope.kind = value.parse().map_err(|_| mismatch(key, "rope kind", value))?,
        "scale" => rope.scale = parse_num(key, "real", value)?,
        "base" => rope.base = parse_num(key, "real", value)?,
        "dim" => rope.dim = parse_num(key, "integer", value)?,
        "train_len" => rope.train_len = parse_num(key, "integer", value)?,
        "ntk2_alpha" => rope.ntk2_alpha = parse_num(key, "real", value)?,
        "ntk2_beta" => rope.ntk2_beta = parse_num(key, "real", value)?,
        "xpos_gamma" => rope.xpos_gamma = parse_num(key, "real", value)?,
        _ => return Err(PlanError::UnknownKey(key.to_string())),
    }
    Ok(())
}

/// Returns a copy of `cfg` with one field updated and re-checked.
///
/// Setting `method` also moves `quant_bits` to the method's precision.
pub fn set_arg(cfg: &TrainingConfig, key: &str, value: &str) -> Result<TrainingConfig, PlanError> {
    let mut next = cfg.clone();
    let key = key.trim();
    match key {
        "model" => {
            let spec = resolve_model(value)?;
            next.model = spec.name;
        }
        "method" => {
            next.method = value.parse().map_err(|_| mismatch(key, "method", value))?;
            next.quant_bits = quant_bits_for(next.method);
        }
        "seed" => next.seed = parse_num(key, "non-negative integer", value)?,
        "epochs" => next.epochs = parse_count(key, value)?,
        "lr" => next.lr = parse_num(key, "real", value)?,
        "optimizer" => next.optimizer = value.parse().map_err(|_| mismatch(key, "lion | adam", value))?,
        "lora_rank" => next.lora_rank = parse_count(key, value)?,
        "lora_alpha" => next.lora_alpha = parse_num(key, "real", value)?,
        "quant_bits" => {
            let bits: u8 = parse_num(key, "16 | 8 | 4", value)?;
            if !matches!(bits, 4 | 8 | 16) {
                return Err(mismatch(key, "16 | 8 | 4", value));
            }
            next.quant_bits = bits;
        }
        "zero_stage" => next.zero_stage = parse_num(key, "0 | 1 | 2 | 3", value)?,
        "dataset" => next.dataset = optional_text(value),
        "data_mode" => next.data_mode = value.parse().map_err(|_| mismatch(key, "pretrain | instruct", value))?,
        "persona_name" => next.persona_name = optional_text(value),
        "max_length" => next.max_length = parse_count(key, value)?,
        "rope" => {
            next.rope = serde_json::from_str(value).map_err(|_| mismatch(key, "rope JSON object", value))?
        }
        "world" => next.world = value.parse().map_err(|_| mismatch(key, "layout like \"2x48 GB\"", value))?,
        "wandb" => next.wandb = parse_bool(key, value)?,
        "output_dir" => {
            let v = value.trim();
            if v.is_empty() {
                return Err(PlanError::InvariantViolation {
                    key: key.into(),
                    message: "must not be empty".into(),
                });
            }
            next.output_dir = v.to_string();
        }
        _ => match key.strip_prefix("rope.") {
            Some(field) => set_rope_field(&mut next.rope, field, key, value)?,
            None => return Err(PlanError::UnknownKey(key.to_string())),
        },
    }
    if let Some((k, message)) = field_invariants(&next).into_iter().next() {
        return Err(PlanError::InvariantViolation {
            key: k.to_string(),
            message,
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub config: TrainingConfig,
    pub verdict: MemoryVerdict,
    pub rationale: Vec<String>,
    /// Whether the plan trains on this machine. Forced off for an empty inventory.
    pub train_here: bool,
    pub launch: Option<String>,
    pub readme: Option<String>,
}

impl Plan {
    /// Regenerates the launch command or readme from the current config.
    pub fn refresh(&mut self, inv: &GpuInventory) {
        self.launch = None;
        self.readme = None;
        if self.train_here {
            if self.verdict.feasible {
                self.launch =
                    Some(build_launch_command(&self.config, inv).expect("feasible verdict implies devices"));
            }
        } else {
            self.readme = Some(render_readme(self));
        }
    }
}

fn language_fit(model: &ModelSpec, language: &str) -> bool {
    let families: &[&str] = match language.trim().to_ascii_lowercase().as_str() {
        "en" | "english" => &["llama", "llama2", "gpt2", "gpt-neo"],
        "zh" | "chinese" => &["chatglm", "glm"],
        _ => return true,
    };
    families.contains(&model.family.as_str())
}

/// One full model replica (weights, gradients, optimizer state) fits a
/// single device per the advisory estimator.
fn replica_fits(model: &ModelSpec, method: MethodKind, optimizer: OptimizerKind, inv: &GpuInventory) -> bool {
    let largest = inv.devices.iter().map(|d| d.total_mem).max().unwrap_or(0);
    let est = estimate_components(model, method, optimizer, 1, &AdapterShape { rank: 8, matrices: vec![] });
    est.total_per_device <= largest
}

struct Choice {
    model: ModelSpec,
    method: MethodKind,
}

fn auto_select(req: &Requirements, inv: &GpuInventory, rationale: &mut Vec<String>) -> Option<Choice> {
    let models = list_models();
    let optimizer = OptimizerKind::default();
    for method in req.quality_vs_memory.method_order() {
        let mut feasible: Vec<(usize, &ModelSpec)> = models
            .iter()
            .enumerate()
            .filter(|(_, m)| check_feasible(inv, m.bucket(), method).feasible)
            .collect();
        if feasible.is_empty() {
            rationale.push(format!("method: {method} is not feasible for any registry model"));
            continue;
        }
        let fit = |m: &ModelSpec| language_fit(m, &req.language);
        match req.quality_vs_memory {
            Priority::QualityFirst => feasible.sort_by_key(|&(i, m)| {
                (
                    !replica_fits(m, method, optimizer, inv),
                    !fit(m),
                    std::cmp::Reverse(m.bucket()),
                    i,
                )
            }),
            Priority::MemoryFirst => feasible.sort_by_key(|&(i, m)| (!fit(m), m.bucket(), i)),
        }
        let model = feasible[0].1.clone();
        let mut why = vec![format!("language fit for `{}`", req.language)];
        if req.quality_vs_memory == Priority::QualityFirst {
            if replica_fits(&model, method, optimizer, inv) {
                why.insert(0, "largest bucket whose full replica fits one device".to_string());
            } else {
                why.insert(0, "no replica fits one device; largest table-feasible bucket".to_string());
            }
        } else {
            why.insert(0, "smallest feasible footprint".to_string());
        }
        rationale.push(format!(
            "model: auto-selected {} ({} bucket) with {method}: {}",
            model.name,
            model.bucket(),
            why.join(", ")
        ));
        return Some(Choice { model, method });
    }
    None
}

/// Fallback model when nothing is feasible: language-fit model in the 7B bucket.
fn fallback_model(req: &Requirements) -> ModelSpec {
    let models = list_models();
    models
        .iter()
        .find(|m| m.bucket() == registry::SizeBucket::B7 && language_fit(m, &req.language))
        .or_else(|| models.iter().find(|m| m.bucket() == registry::SizeBucket::B7))
        .cloned()
        .expect("registry has a 7B model")
}

fn world_for(inv: &GpuInventory, verdict: &MemoryVerdict) -> GpuLayout {
    match verdict.satisfied_layout {
        Some(layout) => {
            let threshold = layout.per_device_mem as f64 * NOMINAL_CAPACITY_SLACK;
            let capable: Vec<u64> = inv
                .devices
                .iter()
                .filter(|d| d.total_mem as f64 >= threshold)
                .map(|d| d.total_mem)
                .collect();
            GpuLayout {
                count: capable.len() as u32,
                per_device_mem: capable.iter().copied().min().unwrap_or(layout.per_device_mem),
            }
        }
        None => verdict.required_layouts[0],
    }
}

/// Builds a complete plan. Pure: identical inputs give identical plans.
pub fn recommend(req: &Requirements, inv: &GpuInventory) -> Result<Plan, PlanError> {
    let summary = summarize(inv);
    let mut lines = summary.lines().map(str::trim);
    let head = lines.next().unwrap_or_default();
    let devices: Vec<&str> = lines.collect();
    let mut rationale = vec![if devices.is_empty() {
        format!("inventory: {head}")
    } else {
        format!("inventory: {head} {}", devices.join("; "))
    }];
    let mut train_here = req.train_here;
    if inv.is_empty() && train_here {
        train_here = false;
        rationale.push("inventory: no GPUs detected; exporting a Readme instead of launching".into());
    }
    let order = req.quality_vs_memory.method_order();
    let order_text = order.map(|m| m.as_str()).join(" > ");

    let (model, method, verdict) = match &req.model_choice {
        Some(name) => {
            let model = resolve_model(name)?;
            rationale.push(format!("model: pinned to {} ({} bucket)", model.name, model.bucket()));
            let found = order
                .iter()
                .map(|&m| (m, check_feasible(inv, model.bucket(), m)))
                .find(|(_, v)| v.feasible);
            match found {
                Some((method, verdict)) => {
                    rationale.push(format!("method: {method} is the first feasible in order {order_text}"));
                    (model, method, verdict)
                }
                None => {
                    let method = order[0];
                    let verdict = check_feasible(inv, model.bucket(), method);
                    if train_here {
                        return Err(PlanError::NoFeasiblePlan {
                            model: model.name,
                            needed: verdict.required_layouts.iter().map(GpuLayout::label).collect(),
                        });
                    }
                    rationale.push(format!(
                        "method: nothing fits this machine; planning {method} for the target machine"
                    ));
                    (model, method, verdict)
                }
            }
        }
        None => match auto_select(req, inv, &mut rationale) {
            Some(Choice { model, method }) => {
                rationale.push(format!("method: {method} is the first feasible in order {order_text}"));
                let verdict = check_feasible(inv, model.bucket(), method);
                (model, method, verdict)
            }
            None => {
                let model = fallback_model(req);
                let method = order[0];
                rationale.push(format!(
                    "model: nothing fits this machine; planning {} with {method} for the target machine",
                    model.name
                ));
                let verdict = check_feasible(inv, model.bucket(), method);
                (model, method, verdict)
            }
        },
    };

    match verdict.satisfied_layout {
        Some(layout) => rationale.push(format!(
            "feasibility: satisfied by {} (table minimum for {} {})",
            layout.label(),
            model.bucket(),
            method.title()
        )),
        None => rationale.push(format!(
            "feasibility: needs one of {}",
            verdict.required_layouts.iter().map(GpuLayout::label).collect::<Vec<_>>().join(", ")
        )),
    }
    for w in &verdict.warnings {
        rationale.push(format!("warning: {w}"));
    }

    let mut config = TrainingConfig {
        model: model.name.clone(),
        method,
        quant_bits: quant_bits_for(method),
        persona_name: req.persona_name.as_deref().and_then(optional_text),
        ..TrainingConfig::default()
    };

    config.dataset = Some(match &req.dataset_choice {
        Some(d) if !d.trim().is_empty() => {
            rationale.push(format!("dataset: user-supplied `{}`", d.trim()));
            d.trim().to_string()
        }
        _ => {
            let entry = registry::default_dataset(&req.domain, &req.language);
            rationale.push(format!(
                "dataset: defaulted to {} ({} {}, {} samples) for domain={}, language={}",
                entry.name, entry.language, entry.domain, entry.sample_count, req.domain, req.language
            ));
            entry.name
        }
    });

    config.world = world_for(inv, &verdict);
    rationale.push(format!(
        "world: {} device(s) of {}",
        config.world.count,
        format_gib(config.world.per_device_mem)
    ));

    config.zero_stage = if matches!(method, MethodKind::Full16 | MethodKind::Lomo16) && config.world.count > 1 {
        rationale.push("zero_stage: 2 (full-parameter method across several GPUs)".into());
        2
    } else {
        rationale.push("zero_stage: 0".into());
        0
    };

    config.max_length = model.default_context;
    config.rope.train_len = model.default_context as usize;
    if let Some(target) = req.context_target {
        if target > model.default_context {
            config.max_length = target;
            config.rope.kind = RopeKind::DynamicNtk;
            config.rope.scale = target as f64 / model.default_context as f64;
            rationale.push(format!(
                "rope: context target {target} exceeds {}; dynamic_ntk with scale {}",
                model.default_context, config.rope.scale
            ));
        }
    }

    if let Some(p) = &config.persona_name {
        rationale.push(format!("persona: [MODEL NAME] -> {p}"));
    }

    let mut plan = Plan {
        config,
        verdict,
        rationale,
        train_here,
        launch: None,
        readme: None,
    };
    plan.rationale.push(match (train_here, plan.verdict.feasible) {
        (true, true) => "launch: command generated for this machine".into(),
        (true, false) => "launch: withheld, hardware below the table minimum".into(),
        (false, _) => "readme: generated for setup on another machine".into(),
    });
    plan.refresh(inv);
    Ok(plan)
}
