//! Toy-scale training run that writes telemetry the service can stream.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use tuneplan_core::datasets::{load_any, set_model_name};
use tuneplan_core::emit::write_atomic;
use tuneplan_core::planner::TrainingConfig;
use tuneplan_core::telemetry::{run_dir, summary_path, telemetry_path, valid_run_id, JsonlSink};
use tuneplan_core::traincore::{train_toy, TrainOptions, TrainSummary};

pub fn run(
    cfg: &TrainingConfig,
    data_dir: &Path,
    runs_dir: &Path,
    run_id: &str,
    max_steps: Option<u64>,
) -> Result<TrainSummary> {
    if !valid_run_id(run_id) {
        bail!("invalid run id `{run_id}`");
    }
    let reference = cfg.dataset.as_deref().context("config has no dataset")?;
    let loaded = load_any(reference, cfg.data_mode, data_dir)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut ds = loaded.spec;
    if let Some(name) = &cfg.persona_name {
        ds = set_model_name(&ds.with_identity(), name);
    }

    fs::create_dir_all(run_dir(runs_dir, run_id))?;
    let summary_file = summary_path(runs_dir, run_id);
    if summary_file.exists() {
        fs::remove_file(&summary_file)?;
    }
    let mut sink = JsonlSink::create(&telemetry_path(runs_dir, run_id))?;
    let opts = TrainOptions {
        max_steps,
        ..TrainOptions::default()
    };
    let outcome = train_toy(cfg, &ds, &mut sink, opts)?;
    let json = serde_json::to_string_pretty(&outcome.summary)? + "\n";
    write_atomic(&summary_file, json.as_bytes())?;
    Ok(outcome.summary)
}
