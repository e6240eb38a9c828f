//! QA datasets: JSONL loading and validation, persona substitution and
//! user-added samples.
//!
//! Two line formats are accepted. Pretrain lines carry an empty `input`;
//! instruct lines carry a `"Human: "` question and a `" Assistant: "`
//! answer (note the leading space).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::DataMode;
use crate::registry::find_dataset;

pub const PLACEHOLDER: &str = "[MODEL NAME]";
pub const HUMAN_PREFIX: &str = "Human: ";
pub const ASSISTANT_PREFIX: &str = " Assistant: ";

const IDENTITY_JSONL: &str = include_str!("../data/identity.jsonl");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("data file for `{name}` not found; expected it at {}", path.display())]
    DataFileMissing { name: String, path: PathBuf },
    #[error("{}: {report}", path.display())]
    Invalid { path: PathBuf, report: ValidationReport },
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("cannot add an instruct sample to a pretrain dataset")]
    ModeMismatch,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: String,
    pub mode: DataMode,
    pub records: Vec<DatasetRecord>,
    pub persona_applied: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<(usize, String)>,
    pub warnings: Vec<(usize, String)>,
    pub lines: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} line(s), {} error(s), {} warning(s)",
            self.lines,
            self.errors.len(),
            self.warnings.len()
        )?;
        for (line, msg) in &self.errors {
            write!(f, "\n  error line {line}: {msg}")?;
        }
        for (line, msg) in &self.warnings {
            write!(f, "\n  warning line {line}: {msg}")?;
        }
        Ok(())
    }
}

fn check_line(line: &str, mode: DataMode) -> Result<(DatasetRecord, Option<String>), String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("not valid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    if let Some(extra) = obj.keys().find(|k| *k != "input" && *k != "output") {
        return Err(format!("unexpected key `{extra}`"));
    }
    let field = |name: &str| -> Result<String, String> {
        match obj.get(name) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(format!("`{name}` must be a string")),
            None => Err(format!("missing key `{name}`")),
        }
    };
    let record = DatasetRecord {
        input: field("input")?,
        output: field("output")?,
    };
    if record.output.is_empty() {
        return Err("`output` must not be empty".into());
    }
    let mut warning = None;
    match mode {
        DataMode::Pretrain if !record.input.is_empty() => {
            return Err("pretrain lines must have an empty `input`".into())
        }
        DataMode::Instruct if record.input.is_empty() => {
            return Err("instruct lines need a non-empty `input`".into())
        }
        DataMode::Instruct => {
            if !record.input.starts_with("Human:") || !record.output.starts_with(" Assistant:") {
                warning = Some("missing \"Human:\" / \" Assistant:\" framing".to_string());
            }
        }
        DataMode::Pretrain => {}
    }
    Ok((record, warning))
}

fn scan<R: BufRead>(reader: R, mode: DataMode) -> (ValidationReport, Vec<DatasetRecord>) {
    let mut report = ValidationReport::default();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        report.lines = n;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                report.errors.push((n, format!("read error: {e}")));
                break;
            }
        };
        match check_line(&line, mode) {
            Ok((record, warning)) => {
                if let Some(w) = warning {
                    report.warnings.push((n, w));
                }
                records.push(record);
            }
            Err(msg) => report.errors.push((n, msg)),
        }
    }
    (report, records)
}

/// Checks every line; all findings go in the report.
pub fn validate_jsonl<R: BufRead>(reader: R, mode: DataMode) -> ValidationReport {
    scan(reader, mode).0
}

/// Loads a local JSONL file; fails if any line has an error.
pub fn load_jsonl(path: &Path, mode: DataMode) -> Result<DatasetSpec, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (report, records) = scan(BufReader::new(file), mode);
    if !report.is_clean() {
        return Err(DatasetError::Invalid {
            path: path.to_path_buf(),
            report,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(DatasetSpec {
        name,
        mode,
        records,
        persona_applied: None,
    })
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub warnings: Vec<String>,
}

/// Loads a catalog dataset from `data_dir`. Contents are not bundled; the
/// file must be placed at the catalog's local path.
pub fn load_builtin(name: &str, data_dir: &Path) -> Result<LoadedDataset, DatasetError> {
    let entry = find_dataset(name).ok_or_else(|| DatasetError::UnknownDataset(name.to_string()))?;
    let rel = entry.local_path.clone().unwrap_or_else(|| format!("{}.jsonl", entry.name));
    let path = data_dir.join(rel);
    if !path.is_file() {
        return Err(DatasetError::DataFileMissing {
            name: entry.name,
            path,
        });
    }
    let mut spec = load_jsonl(&path, DataMode::Instruct)?;
    spec.name = entry.name.clone();
    let mut warnings = Vec::new();
    if spec.records.len() != entry.sample_count {
        warnings.push(format!(
            "CountMismatch: {} has {} records, catalog lists {}",
            entry.name,
            spec.records.len(),
            entry.sample_count
        ));
    }
    Ok(LoadedDataset { spec, warnings })
}

/// Resolves a config `dataset` value: a catalog name under `data_dir`, or a
/// path to a local JSONL file.
pub fn load_any(reference: &str, mode: DataMode, data_dir: &Path) -> Result<LoadedDataset, DatasetError> {
    if find_dataset(reference).is_some() {
        return load_builtin(reference, data_dir);
    }
    let spec = load_jsonl(Path::new(reference), mode)?;
    Ok(LoadedDataset {
        spec,
        warnings: Vec::new(),
    })
}

/// The bundled identity QA pairs, still carrying the placeholder.
pub fn identity_samples() -> DatasetSpec {
    let (report, records) = scan(IDENTITY_JSONL.as_bytes(), DataMode::Instruct);
    debug_assert!(report.is_clean() && report.warnings.is_empty());
    DatasetSpec {
        name: "identity".into(),
        mode: DataMode::Instruct,
        records,
        persona_applied: None,
    }
}

impl DatasetSpec {
    pub fn new(name: &str, mode: DataMode) -> Self {
        Self {
            name: name.to_string(),
            mode,
            records: Vec::new(),
            persona_applied: None,
        }
    }

    /// Appends the bundled identity pairs (instruct datasets only).
    pub fn with_identity(mut self) -> Self {
        if self.mode == DataMode::Instruct {
            let mut extra = identity_samples().records;
            if let Some(name) = &self.persona_applied {
                for r in &mut extra {
                    r.input = r.input.replace(PLACEHOLDER, name);
                    r.output = r.output.replace(PLACEHOLDER, name);
                }
            }
            self.records.extend(extra);
        }
        self
    }

    pub fn placeholder_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.input.matches(PLACEHOLDER).count() + r.output.matches(PLACEHOLDER).count())
            .sum()
    }

    /// Text the trainer sees for one record: framed question then answer.
    pub fn training_text(&self, record: &DatasetRecord) -> String {
        let (input, output) = export_pair(self.mode, record);
        format!("{input}{output}")
    }
}

/// Replaces every `[MODEL NAME]` with `name`.
pub fn set_model_name(ds: &DatasetSpec, name: &str) -> DatasetSpec {
    let mut out = ds.clone();
    for r in &mut out.records {
        r.input = r.input.replace(PLACEHOLDER, name);
        r.output = r.output.replace(PLACEHOLDER, name);
    }
    out.persona_applied = Some(name.to_string());
    out
}

/// Appends a question/answer pair. Framing is added on export.
pub fn add_sample(ds: &DatasetSpec, qa: [&str; 2]) -> Result<DatasetSpec, DatasetError> {
    if ds.mode != DataMode::Instruct {
        return Err(DatasetError::ModeMismatch);
    }
    let [question, answer] = qa;
    if question.trim().is_empty() {
        return Err(DatasetError::EmptyField("question"));
    }
    if answer.trim().is_empty() {
        return Err(DatasetError::EmptyField("answer"));
    }
    let mut out = ds.clone();
    out.records.push(DatasetRecord {
        input: question.to_string(),
        output: answer.to_string(),
    });
    Ok(out)
}

fn export_pair(mode: DataMode, record: &DatasetRecord) -> (String, String) {
    match mode {
        DataMode::Pretrain => (String::new(), record.output.clone()),
        DataMode::Instruct => {
            let input = if record.input.starts_with("Human:") {
                record.input.clone()
            } else {
                format!("{HUMAN_PREFIX}{}", record.input)
            };
            let output = if record.output.starts_with(" Assistant:") {
                record.output.clone()
            } else {
                format!("{ASSISTANT_PREFIX}{}", record.output)
            };
            (input, output)
        }
    }
}

/// One JSON object per line with keys `input` and `output`.
pub fn export_jsonl(ds: &DatasetSpec) -> String {
    let mut out = String::new();
    for r in &ds.records {
        let (input, output) = export_pair(ds.mode, r);
        let line = DatasetRecord { input, output };
        out.push_str(&serde_json::to_string(&line).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub input_chars: usize,
    pub output_chars: usize,
    pub mean_output_chars: f64,
    pub placeholders: usize,
}

pub fn stats(ds: &DatasetSpec) -> DatasetStats {
    let input_chars = ds.records.iter().map(|r| r.input.chars().count()).sum();
    let output_chars: usize = ds.records.iter().map(|r| r.output.chars().count()).sum();
    DatasetStats {
        records: ds.records.len(),
        input_chars,
        output_chars,
        mean_output_chars: if ds.records.is_empty() {
            0.0
        } else {
            output_chars as f64 / ds.records.len() as f64
        },
        placeholders: ds.placeholder_count(),
    }
}
