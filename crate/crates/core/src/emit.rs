//! ARGS.json persistence, launch-command construction and Readme rendering.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;

use base64::engine::general_purpose::URL_SAFE;
use base64::Engine;
use serde::Serialize;
use thiserror::Error;

use crate::hardware::{format_gib, GpuInventory, DEFAULT_HOST};
use crate::memory::{GpuLayout, MethodKind, NOMINAL_CAPACITY_SLACK};
use crate::planner::{Plan, TrainingConfig, CONFIG_SCHEMA};
use crate::registry::resolve_model;

pub const ARGS_SCHEMA_VERSION: u32 = 1;
pub const ARGS_FILE_NAME: &str = "ARGS.json";
const VERSION_KEY: &str = "schema_version";

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("ARGS document is not valid JSON: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {found} (expected {ARGS_SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: String },
    #[error("unknown key `{0}` in ARGS document")]
    UnknownKey(String),
    #[error("bad value in ARGS document: {0}")]
    BadValue(String),
    #[error("cannot build a launch command for an empty inventory")]
    EmptyInventory,
    #[error("launch template has an unknown hole `{{{0}}}`")]
    Template(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize)]
struct ArgsDocument<'a> {
    schema_version: u32,
    #[serde(flatten)]
    config: &'a TrainingConfig,
}

/// Serializes a config as pretty JSON with keys in schema order.
pub fn write_args(cfg: &TrainingConfig) -> String {
    let doc = ArgsDocument {
        schema_version: ARGS_SCHEMA_VERSION,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("config serializes");
    text.push('\n');
    text
}

/// Parses an ARGS document, rejecting unknown keys and other schema versions.
pub fn read_args(bytes: &[u8]) -> Result<TrainingConfig, EmitError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| EmitError::Malformed(e.to_string()))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(EmitError::Malformed("top level must be an object".into()));
    };
    match map.shift_remove(VERSION_KEY) {
        Some(v) if v.as_u64() == Some(ARGS_SCHEMA_VERSION as u64) => {}
        Some(v) => return Err(EmitError::SchemaVersionMismatch { found: v.to_string() }),
        None => return Err(EmitError::SchemaVersionMismatch { found: "missing".into() }),
    }
    if let Some(key) = map.keys().find(|k| !CONFIG_SCHEMA.iter().any(|f| f.key == k.as_str())) {
        return Err(EmitError::UnknownKey(key.clone()));
    }
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("unknown field `") {
            Some(rest) => EmitError::UnknownKey(rest.split('`').next().unwrap_or(rest).to_string()),
            None => EmitError::BadValue(msg),
        }
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `contents` via a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), EmitError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| EmitError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn save_args(path: &Path, cfg: &TrainingConfig) -> Result<(), EmitError> {
    write_atomic(path, write_args(cfg).as_bytes())
}

/// Reads any path; the file name does not matter (ARGS.json, ARGS.config, ...).
pub fn load_args(path: &Path) -> Result<TrainingConfig, EmitError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    read_args(&bytes)
}

/// Command template with named holes `{world_info}`, `{entry}`, `{seed}`
/// and `{flags}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchTemplate {
    pub template: String,
    pub entry: String,
}

pub const DEEPSPEED_TEMPLATE: &str =
    "python -u -m deepspeed.launcher.launch --world_info={world_info} {entry} --seed {seed} {flags}";

impl Default for LaunchTemplate {
    fn default() -> Self {
        Self {
            template: DEEPSPEED_TEMPLATE.to_string(),
            entry: "main.py".to_string(),
        }
    }
}

impl LaunchTemplate {
    pub fn render(&self, world_info: &str, seed: u64, flags: &str) -> Result<String, EmitError> {
        let mut out = String::new();
        let mut rest = self.template.as_str();
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            let end = after
                .find('}')
                .ok_or_else(|| EmitError::Template(after.to_string()))?;
            match &after[..end] {
                "world_info" => out.push_str(world_info),
                "entry" => out.push_str(&self.entry),
                "seed" => out.push_str(&seed.to_string()),
                "flags" => out.push_str(flags),
                other => return Err(EmitError::Template(other.to_string())),
            }
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        Ok(out.trim_end().to_string())
    }
}

fn quote(value: &str) -> String {
    shlex::try_quote(value)
        .map(|q| q.into_owned())
        .unwrap_or_else(|_| format!("'{}'", value.replace('\0', "")))
}

/// `--key value` pairs in schema order. `seed` is placed by the template and
/// `world` travels in `--world_info`; optional fields are omitted when unset.
pub fn launch_flags(cfg: &TrainingConfig) -> Vec<(String, String)> {
    let mut flags = Vec::new();
    for field in CONFIG_SCHEMA.iter().filter(|f| f.launch) {
        let value = match field.key {
            "seed" => continue,
            "model" => cfg.model.clone(),
            "method" => cfg.method.to_string(),
            "epochs" => cfg.epochs.to_string(),
            "lr" => cfg.lr.to_string(),
            "optimizer" => cfg.optimizer.to_string(),
            "lora_rank" => cfg.lora_rank.to_string(),
            "lora_alpha" => cfg.lora_alpha.to_string(),
            "quant_bits" => cfg.quant_bits.to_string(),
            "zero_stage" => cfg.zero_stage.to_string(),
            "dataset" => match &cfg.dataset {
                Some(d) => d.clone(),
                None => continue,
            },
            "data_mode" => cfg.data_mode.to_string(),
            "persona_name" => match &cfg.persona_name {
                Some(p) => p.clone(),
                None => continue,
            },
            "max_length" => cfg.max_length.to_string(),
            "rope" => {
                let r = &cfg.rope;
                flags.push(("rope_kind".into(), r.kind.to_string()));
                flags.push(("rope_scale".into(), r.scale.to_string()));
                flags.push(("rope_base".into(), r.base.to_string()));
                flags.push(("rope_dim".into(), r.dim.to_string()));
                flags.push(("rope_train_len".into(), r.train_len.to_string()));
                flags.push(("rope_ntk2_alpha".into(), r.ntk2_alpha.to_string()));
                flags.push(("rope_ntk2_beta".into(), r.ntk2_beta.to_string()));
                flags.push(("rope_xpos_gamma".into(), r.xpos_gamma.to_string()));
                continue;
            }
            "wandb" => cfg.wandb.to_string(),
            "output_dir" => cfg.output_dir.clone(),
            other => unreachable!("schema key {other} has no launch mapping"),
        };
        flags.push((field.key.to_string(), value));
    }
    flags
}

/// Device indices the run uses: the first `world.count` devices that meet
/// the world's per-device memory.
pub fn world_devices(cfg: &TrainingConfig, inv: &GpuInventory) -> Vec<u32> {
    let threshold = cfg.world.per_device_mem as f64 * NOMINAL_CAPACITY_SLACK;
    let mut picked: Vec<u32> = inv
        .devices
        .iter()
        .filter(|d| d.total_mem as f64 >= threshold)
        .map(|d| d.index)
        .take(cfg.world.count as usize)
        .collect();
    if picked.is_empty() {
        picked = inv.devices.iter().map(|d| d.index).take(cfg.world.count as usize).collect();
    }
    picked
}

/// URL-safe base64 of `{"<host>": [indices]}`, as the DeepSpeed runner encodes it.
pub fn encode_world_info(host: &str, devices: &[u32]) -> String {
    let list = devices.iter().map(u32::to_string).collect::<Vec<_>>().join(", ");
    let json = format!("{{{}: [{list}]}}", serde_json::to_string(host).expect("host string"));
    URL_SAFE.encode(json)
}

pub fn build_launch_command_with(
    cfg: &TrainingConfig,
    inv: &GpuInventory,
    template: &LaunchTemplate,
) -> Result<String, EmitError> {
    if inv.is_empty() {
        return Err(EmitError::EmptyInventory);
    }
    let host = if inv.host.is_empty() { DEFAULT_HOST } else { &inv.host };
    let world_info = encode_world_info(host, &world_devices(cfg, inv));
    let flags = launch_flags(cfg)
        .into_iter()
        .map(|(k, v)| format!("--{k} {}", quote(&v)))
        .collect::<Vec<_>>()
        .join(" ");
    template.render(&world_info, cfg.seed, &flags)
}

/// DeepSpeed launch command for `cfg` on `inv`.
pub fn build_launch_command(cfg: &TrainingConfig, inv: &GpuInventory) -> Result<String, EmitError> {
    build_launch_command_with(cfg, inv, &LaunchTemplate::default())
}

/// Where a generated command goes.
pub trait LaunchExecutor {
    fn execute(&self, command: &str) -> std::io::Result<i32>;
}

/// Prints the command and runs nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct PrintOnly;

impl LaunchExecutor for PrintOnly {
    fn execute(&self, command: &str) -> std::io::Result<i32> {
        println!("{command}");
        Ok(0)
    }
}

/// Runs the command through `sh -c` and returns its exit code.
#[derive(Debug, Default, Clone, Copy)]
pub struct ShellExecutor;

impl LaunchExecutor for ShellExecutor {
    fn execute(&self, command: &str) -> std::io::Result<i32> {
        let status = Command::new("sh").arg("-c").arg(command).status()?;
        Ok(status.code().unwrap_or(-1))
    }
}

fn method_notes(cfg: &TrainingConfig) -> Vec<String> {
    let mut notes = Vec::new();
    match cfg.method {
        MethodKind::Full16 => notes.push("All weights are trained in 16-bit.".to_string()),
        MethodKind::Lomo16 => notes.push(
            "Full-parameter training with fused gradient/update (LOMO): each layer is updated as soon as its gradient exists.".to_string(),
        ),
        MethodKind::Lora16 | MethodKind::Lora8 | MethodKind::Lora4 => {
            notes.push(format!(
                "Base weights frozen at {} bits; LoRA adapters with rank {} and alpha {} are trained.",
                cfg.quant_bits, cfg.lora_rank, cfg.lora_alpha
            ));
            if cfg.method != MethodKind::Lora16 {
                notes.push(format!(
                    "Base weights are quantized to INT{} (round-to-nearest, per-group absmax) before training.",
                    cfg.quant_bits
                ));
            }
        }
    }
    notes.push(format!("Optimizer: {}, learning rate {}, {} epoch(s).", cfg.optimizer, cfg.lr, cfg.epochs));
    if cfg.rope.kind != crate::rope::RopeKind::None {
        notes.push(format!(
            "Position interpolation: {} (scale {}, trained length {}), max length {}.",
            cfg.rope.kind, cfg.rope.scale, cfg.rope.train_len, cfg.max_length
        ));
    }
    notes
}

/// Renders the setup guide for a plan: environment, model processing and
/// training sections, in that order.
pub fn render_readme(plan: &Plan) -> String {
    let cfg = &plan.config;
    let mut md = String::new();
    writeln!(md, "# Training plan: {} ({})\n", cfg.model, cfg.method).unwrap();

    md.push_str("## Environment Configuration\n\n");
    let layouts: Vec<String> = plan.verdict.required_layouts.iter().map(GpuLayout::label).collect();
    writeln!(md, "- Minimum GPU configuration (batch size 1): {}", layouts.join(" or ")).unwrap();
    writeln!(
        md,
        "- Planned world: {} GPU(s) with {} each",
        cfg.world.count,
        format_gib(cfg.world.per_device_mem)
    )
    .unwrap();
    md.push_str("- Linux with an NVIDIA driver >= 460.32.03 (or AMD ROCm >= 4.0)\n");
    md.push_str("- Python 3 with PyTorch, DeepSpeed and Apex\n\n");
    md.push_str("```bash\npip install torch deepspeed\ngit clone https://github.com/NVIDIA/apex && pip install -v --no-build-isolation ./apex\n```\n\n");

    md.push_str("## Model Processing\n\n");
    match resolve_model(&cfg.model) {
        Ok(spec) => writeln!(
            md,
            "- Base model: {} ({} family, {} parameters, {} bucket, commercial use: {})",
            spec.name,
            spec.family,
            spec.param_count,
            spec.bucket(),
            spec.commercial_ok
        )
        .unwrap(),
        Err(_) => writeln!(md, "- Base model: {}", cfg.model).unwrap(),
    }
    for note in method_notes(cfg) {
        writeln!(md, "- {note}").unwrap();
    }
    if let Some(ds) = &cfg.dataset {
        writeln!(md, "- Dataset: {ds} ({} format)", cfg.data_mode).unwrap();
    }
    if let Some(p) = &cfg.persona_name {
        writeln!(md, "- Persona: every `[MODEL NAME]` in the data becomes `{p}`").unwrap();
    }
    md.push_str("\nPlanner notes:\n\n");
    for line in &plan.rationale {
        writeln!(md, "- {line}").unwrap();
    }
    md.push('\n');

    md.push_str("## Training\n\n");
    writeln!(md, "Save the configuration as `{ARGS_FILE_NAME}`:\n").unwrap();
    md.push_str("```json\n");
    md.push_str(&write_args(cfg));
    md.push_str("```\n\n");
    let target = GpuInventory::uniform(cfg.world.count.max(1), cfg.world.per_device_mem, "target");
    let command = build_launch_command(cfg, &target).expect("target inventory is non-empty");
    md.push_str("Launch on the target machine:\n\n");
    writeln!(md, "```bash\n{command}\n```").unwrap();
    md
}
