//! Per-step training telemetry: the record type, an in-memory log, sinks and
//! an incremental JSONL reader.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
/// Written once a run has finished; its presence means no more records.
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("step {step} does not follow last step {last}")]
    NonMonotonicStep { last: u64, step: u64 },
    #[error("tokens went backwards at step {step}")]
    TokensDecreased { step: u64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TelemetryLog {
    pub run_id: String,
    pub records: Vec<TelemetryRecord>,
}

impl TelemetryLog {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            records: Vec::new(),
        }
    }

    pub fn last_step(&self) -> Option<u64> {
        self.records.last().map(|r| r.step)
    }

    pub fn append(&mut self, record: TelemetryRecord) -> Result<(), TelemetryError> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(TelemetryError::NonMonotonicStep {
                    last: last.step,
                    step: record.step,
                });
            }
            if record.tokens < last.tokens {
                return Err(TelemetryError::TokensDecreased { step: record.step });
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Records with `step > since`, in order.
    pub fn tail(&self, since: u64) -> &[TelemetryRecord] {
        let start = self.records.partition_point(|r| r.step <= since);
        &self.records[start..]
    }
}

pub trait TelemetrySink {
    fn record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError>;
}

#[derive(Debug, Default)]
pub struct VecSink {
    pub log: TelemetryLog,
}

impl TelemetrySink for VecSink {
    fn record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError> {
        self.log.append(*record)
    }
}

/// Appends one JSON line per record and flushes after each, so readers only
/// ever see whole lines once the newline lands.
pub struct JsonlSink {
    out: BufWriter<File>,
    last: Option<TelemetryRecord>,
}

impl JsonlSink {
    /// Truncates any existing file.
    pub fn create(path: &Path) -> Result<Self, TelemetryError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            last: None,
        })
    }
}

impl TelemetrySink for JsonlSink {
    fn record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError> {
        if let Some(last) = self.last {
            if record.step <= last.step {
                return Err(TelemetryError::NonMonotonicStep {
                    last: last.step,
                    step: record.step,
                });
            }
        }
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.out.flush()?;
        self.last = Some(*record);
        Ok(())
    }
}

pub fn run_dir(runs_dir: &Path, run_id: &str) -> PathBuf {
    runs_dir.join(run_id)
}

pub fn telemetry_path(runs_dir: &Path, run_id: &str) -> PathBuf {
    run_dir(runs_dir, run_id).join(TELEMETRY_FILE)
}

pub fn summary_path(runs_dir: &Path, run_id: &str) -> PathBuf {
    run_dir(runs_dir, run_id).join(SUMMARY_FILE)
}

/// Run ids are single path components.
pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Reads new complete lines from a growing JSONL file. A trailing partial
/// line is held back until its newline arrives.
#[derive(Debug)]
pub struct TelemetryTail {
    path: PathBuf,
    offset: u64,
    pending: Vec<u8>,
    lines: usize,
}

impl TelemetryTail {
    pub fn new(path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            offset: 0,
            pending: Vec::new(),
            lines: 0,
        }
    }

    pub fn poll(&mut self) -> Result<Vec<TelemetryRecord>, TelemetryError> {
        let mut file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let len = file.metadata()?.len();
        if len < self.offset {
            // truncated by a rerun; start over
            self.offset = 0;
            self.pending.clear();
            self.lines = 0;
        }
        file.seek(SeekFrom::Start(self.offset))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        self.offset += buf.len() as u64;
        self.pending.extend_from_slice(&buf);

        let mut out = Vec::new();
        let mut consumed = 0;
        while let Some(nl) = self.pending[consumed..].iter().position(|&b| b == b'\n') {
            let line = &self.pending[consumed..consumed + nl];
            consumed += nl + 1;
            self.lines += 1;
            if line.iter().all(|b| b.is_ascii_whitespace()) {
                continue;
            }
            let record = serde_json::from_slice(line).map_err(|e| TelemetryError::Parse {
                line: self.lines,
                message: e.to_string(),
            })?;
            out.push(record);
        }
        self.pending.drain(..consumed);
        Ok(out)
    }
}

/// All complete records currently in the file with `step > since`.
pub fn read_since(path: &Path, since: u64) -> Result<Vec<TelemetryRecord>, TelemetryError> {
    let mut tail = TelemetryTail::new(path);
    Ok(tail.poll()?.into_iter().filter(|r| r.step > since).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64) -> TelemetryRecord {
        TelemetryRecord {
            step,
            loss: 1.0 / step as f64,
            lr: 1e-3,
            tokens: step * 10,
        }
    }

    #[test]
    fn append_and_tail() {
        let mut log = TelemetryLog::new("r");
        for s in 1..=10 {
            log.append(rec(s)).unwrap();
        }
        let steps: Vec<u64> = log.tail(5).iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![6, 7, 8, 9, 10]);
        assert!(log.tail(10).is_empty());
        assert_eq!(log.tail(0).len(), 10);
        assert!(matches!(
            log.append(rec(10)),
            Err(TelemetryError::NonMonotonicStep { last: 10, step: 10 })
        ));
    }

    #[test]
    fn tail_holds_back_partial_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut tail = TelemetryTail::new(&path);
        assert!(tail.poll().unwrap().is_empty());

        let full = serde_json::to_string(&rec(1)).unwrap() + "\n";
        let second = serde_json::to_string(&rec(2)).unwrap();
        let (head, rest) = second.split_at(7);
        fs::write(&path, format!("{full}{head}")).unwrap();
        assert_eq!(tail.poll().unwrap(), vec![rec(1)]);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        write!(f, "{rest}").unwrap();
        assert!(tail.poll().unwrap().is_empty());
        writeln!(f).unwrap();
        assert_eq!(tail.poll().unwrap(), vec![rec(2)]);
    }

    #[test]
    fn run_ids() {
        assert!(valid_run_id("run-1_a.b"));
        for bad in ["", "..", "a/b", "a b", "../x"] {
            assert!(!valid_run_id(bad), "{bad}");
        }
    }

    #[test]
    fn jsonl_sink_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = telemetry_path(dir.path(), "abc");
        let mut sink = JsonlSink::create(&path).unwrap();
        for s in 1..=4 {
            sink.record(&rec(s)).unwrap();
        }
        assert!(sink.record(&rec(2)).is_err());
        assert_eq!(read_since(&path, 2).unwrap(), vec![rec(3), rec(4)]);
    }
}
