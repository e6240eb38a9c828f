use std::collections::BTreeMap;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tuneplan_core::assistant::{QuestionnaireState, QuestionnaireStep};
use tuneplan_core::emit::read_args;
use tuneplan_core::hardware::{parse_layout, summarize, GpuInventory};
use tuneplan_core::memory::{check_feasible, feasibility_matrix, GpuLayout, MemoryVerdict};
use tuneplan_core::planner::{recommend, set_arg, Requirements, TrainingConfig};
use tuneplan_core::registry::{list_datasets, list_models, resolve_model};
use tuneplan_core::telemetry::{read_since, run_dir, telemetry_path, valid_run_id, SUMMARY_FILE, TELEMETRY_FILE};

use crate::AppState;

#[derive(Debug)]
pub(crate) enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

/// JSON body with the failing field path in the error message.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ApiError::BadRequest(inner.to_string())
        } else {
            ApiError::BadRequest(format!("{path}: {inner}"))
        }
    })
}

fn bad(e: impl std::fmt::Display) -> ApiError {
    ApiError::BadRequest(e.to_string())
}

fn gpus_or(shorthand: Option<&str>, fallback: GpuInventory) -> Result<GpuInventory, ApiError> {
    match shorthand {
        Some(s) => parse_layout(s).map_err(|e| ApiError::BadRequest(format!("gpus: {e}"))),
        None => Ok(fallback),
    }
}

#[derive(Serialize)]
pub(crate) struct ModelEntry {
    name: String,
    family: String,
    param_count: u64,
    default_context: u32,
    commercial_ok: String,
    bucket: &'static str,
}

pub(crate) async fn models() -> Json<Vec<ModelEntry>> {
    Json(
        list_models()
            .into_iter()
            .map(|m| ModelEntry {
                bucket: m.bucket().label(),
                commercial_ok: m.commercial_ok.to_string(),
                name: m.name,
                family: m.family,
                param_count: m.param_count,
                default_context: m.default_context,
            })
            .collect(),
    )
}

pub(crate) async fn datasets() -> impl IntoResponse {
    Json(list_datasets())
}

pub(crate) async fn gpus(State(state): State<AppState>) -> impl IntoResponse {
    let inv = state.inventory().await;
    Json(json!({
        "host": inv.host,
        "devices": inv.devices,
        "summary": summarize(&inv),
    }))
}

#[derive(Serialize)]
struct LayoutCell {
    count: u32,
    per_device_mem: u64,
    label: String,
}

#[derive(Serialize)]
struct MatrixRow {
    bucket: &'static str,
    cells: Vec<Vec<LayoutCell>>,
}

pub(crate) async fn feasibility() -> impl IntoResponse {
    let m = feasibility_matrix();
    let rows: Vec<MatrixRow> = m
        .rows
        .into_iter()
        .map(|r| MatrixRow {
            bucket: r.label,
            cells: r
                .cells
                .into_iter()
                .map(|cell| {
                    cell.into_iter()
                        .map(|l| LayoutCell {
                            count: l.count,
                            per_device_mem: l.per_device_mem,
                            label: l.label(),
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    Json(json!({ "methods": m.methods, "rows": rows }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    #[serde(default)]
    pub requirements: Requirements,
    /// Layout shorthand to plan for instead of this machine.
    #[serde(default)]
    pub gpus: Option<String>,
}

pub(crate) async fn plan(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PlanRequest = parse_body(&body)?;
    let inv = gpus_or(req.gpus.as_deref(), state.inventory().await)?;
    let plan = recommend(&req.requirements, &inv).map_err(bad)?;
    Ok(Json(plan).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    /// A config or ARGS.json document; defaults when absent.
    #[serde(default)]
    pub base: Option<Value>,
    /// Baseline layout shorthand; this machine when absent.
    #[serde(default)]
    pub gpus: Option<String>,
    /// Planner keys plus `gpus`.
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Serialize)]
pub struct FieldChange {
    pub key: String,
    pub before: Value,
    pub after: Value,
}

#[derive(Debug, Serialize)]
pub struct WhatIfResponse {
    pub verdict: MemoryVerdict,
    pub baseline: MemoryVerdict,
    pub flipped: bool,
    pub config: TrainingConfig,
    pub diff: Vec<FieldChange>,
}

fn verdict_for(cfg: &TrainingConfig, inv: &GpuInventory) -> Result<MemoryVerdict, ApiError> {
    let model = resolve_model(&cfg.model).map_err(|e| ApiError::BadRequest(format!("model: {e}")))?;
    Ok(check_feasible(inv, model.bucket(), cfg.method))
}

fn inventory_label(inv: &GpuInventory) -> String {
    let Some(first) = inv.devices.first() else {
        return "none".into();
    };
    if inv.devices.iter().all(|d| d.total_mem == first.total_mem) {
        GpuLayout {
            count: inv.len() as u32,
            per_device_mem: first.total_mem,
        }
        .label()
    } else {
        summarize(inv).replace('\n', " ")
    }
}

fn base_config(base: Option<Value>) -> Result<TrainingConfig, ApiError> {
    match base {
        None => Ok(TrainingConfig::default()),
        Some(v) if v.get("schema_version").is_some() => {
            read_args(v.to_string().as_bytes()).map_err(|e| ApiError::BadRequest(format!("base: {e}")))
        }
        Some(v) => serde_json::from_value(v).map_err(|e| ApiError::BadRequest(format!("base: {e}"))),
    }
}

pub(crate) async fn whatif(State(state): State<AppState>, body: Bytes) -> Result<Json<WhatIfResponse>, ApiError> {
    let req: WhatIfRequest = parse_body(&body)?;
    let base = base_config(req.base)?;
    let base_inv = gpus_or(req.gpus.as_deref(), state.inventory().await)?;
    let baseline = verdict_for(&base, &base_inv)?;

    let mut cfg = base.clone();
    let mut inv = base_inv.clone();
    let mut diff = Vec::new();
    for (key, value) in &req.overrides {
        if key == "gpus" {
            inv = parse_layout(value).map_err(|e| ApiError::BadRequest(format!("overrides.gpus: {e}")))?;
            cfg = set_arg(&cfg, "world", value).map_err(|e| ApiError::BadRequest(format!("overrides.gpus: {e}")))?;
        } else {
            cfg = set_arg(&cfg, key, value).map_err(|e| ApiError::BadRequest(format!("overrides.{key}: {e}")))?;
        }
    }
    let (before_label, after_label) = (inventory_label(&base_inv), inventory_label(&inv));
    if before_label != after_label {
        diff.push(FieldChange {
            key: "gpus".into(),
            before: before_label.into(),
            after: after_label.into(),
        });
    }
    let old = serde_json::to_value(&base).expect("config serializes");
    let new = serde_json::to_value(&cfg).expect("config serializes");
    if let (Value::Object(old), Value::Object(new)) = (old, new) {
        for (key, after) in new {
            let before = old.get(&key).cloned().unwrap_or(Value::Null);
            if before != after {
                diff.push(FieldChange { key, before, after });
            }
        }
    }
    let verdict = verdict_for(&cfg, &inv)?;
    Ok(Json(WhatIfResponse {
        flipped: verdict.feasible != baseline.feasible,
        verdict,
        baseline,
        config: cfg,
        diff,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireRequest {
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub gpus: Option<String>,
}

fn questionnaire_response(state: &QuestionnaireState, step: QuestionnaireStep) -> Value {
    json!({ "answered": state.answers.len(), "step": step })
}

pub(crate) async fn questionnaire_start(State(state): State<AppState>) -> impl IntoResponse {
    let inv = state.inventory().await;
    let (st, step) = QuestionnaireState::run(&inv, []);
    Json(questionnaire_response(&st, step))
}

/// Stateless: the client resends every answer so far.
pub(crate) async fn questionnaire(State(state): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: QuestionnaireRequest = parse_body(&body)?;
    let inv = gpus_or(req.gpus.as_deref(), state.inventory().await)?;
    let (st, step) = QuestionnaireState::run(&inv, req.answers.iter().map(String::as_str));
    Ok(Json(questionnaire_response(&st, step)))
}

pub(crate) fn run_file(state: &AppState, id: &str) -> Result<PathBuf, ApiError> {
    if !valid_run_id(id) {
        return Err(ApiError::NotFound(format!("unknown run `{id}`")));
    }
    let path = telemetry_path(&state.config.runs_dir, id);
    if !path.is_file() {
        return Err(ApiError::NotFound(format!("unknown run `{id}`")));
    }
    Ok(path)
}

#[derive(Debug, Deserialize)]
pub(crate) struct SinceQuery {
    #[serde(default)]
    pub since: Option<u64>,
}

pub(crate) async fn telemetry(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
) -> Result<Response, ApiError> {
    let path = run_file(&state, &id)?;
    let since = q.since.unwrap_or(0);
    let records = tokio::task::spawn_blocking(move || read_since(&path, since))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(records).into_response())
}

pub(crate) async fn runs(State(state): State<AppState>) -> Result<Json<Vec<Value>>, ApiError> {
    let dir = state.config.runs_dir.clone();
    let listed = tokio::task::spawn_blocking(move || -> std::io::Result<Vec<Value>> {
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e),
        };
        for entry in entries {
            let entry = entry?;
            let id = entry.file_name().to_string_lossy().into_owned();
            if !valid_run_id(&id) || !entry.path().join(TELEMETRY_FILE).is_file() {
                continue;
            }
            let summary = std::fs::read(run_dir(&dir, &id).join(SUMMARY_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice::<Value>(&b).ok());
            out.push(json!({ "id": id, "finished": summary.is_some(), "summary": summary }));
        }
        out.sort_by(|a, b| a["id"].as_str().cmp(&b["id"].as_str()));
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(listed))
}
