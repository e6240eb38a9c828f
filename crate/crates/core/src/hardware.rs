//! GPU inventory: parsing probe output and layout shorthand.
//!
//! Acquisition shells out to a probe command whose CSV output is handed to
//! [`parse_probe`]; everything else in this module is pure.

use std::fmt::Write as _;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Environment variable overriding the probe command.
pub const PROBE_ENV: &str = "TUNEPLAN_GPU_PROBE";
pub const DEFAULT_PROBE: &str =
    "nvidia-smi --query-gpu=index,name,memory.total,memory.free --format=csv,noheader,nounits";
pub const DEFAULT_HOST: &str = "localhost";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HardwareError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid GPU layout `{0}`; expected e.g. \"2x48 GB\" or \"80 GB\"")]
    Layout(String),
    #[error("probe command failed: {0}")]
    Probe(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuDevice {
    pub index: u32,
    pub name: String,
    pub total_mem: u64,
    pub free_mem: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GpuInventory {
    pub devices: Vec<GpuDevice>,
    pub host: String,
}

impl Default for GpuInventory {
    fn default() -> Self {
        Self {
            devices: Vec::new(),
            host: DEFAULT_HOST.to_string(),
        }
    }
}

impl GpuInventory {
    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    /// `count` identical devices with `per_device` bytes each, all free.
    pub fn uniform(count: u32, per_device: u64, name: &str) -> Self {
        Self {
            devices: (0..count)
                .map(|index| GpuDevice {
                    index,
                    name: name.to_string(),
                    total_mem: per_device,
                    free_mem: per_device,
                })
                .collect(),
            host: DEFAULT_HOST.to_string(),
        }
    }
}

fn parse_probe_line(line: &str) -> Result<GpuDevice, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 comma-separated fields, found {}", fields.len()));
    }
    let index: u32 = fields[0]
        .parse()
        .map_err(|_| format!("bad device index `{}`", fields[0]))?;
    let name = fields[1];
    if name.is_empty() {
        return Err("empty device name".into());
    }
    let total_mib: u64 = fields[2]
        .parse()
        .map_err(|_| format!("bad total memory `{}`", fields[2]))?;
    let free_mib: u64 = fields[3]
        .parse()
        .map_err(|_| format!("bad free memory `{}`", fields[3]))?;
    if total_mib == 0 {
        return Err("total memory must be positive".into());
    }
    if free_mib > total_mib {
        return Err(format!("free memory {free_mib} MiB exceeds total {total_mib} MiB"));
    }
    Ok(GpuDevice {
        index,
        name: name.to_string(),
        total_mem: total_mib * MIB,
        free_mem: free_mib * MIB,
    })
}

/// Parses `index, name, total_mib, free_mib` lines.
///
/// Blank lines are skipped; any other malformed line fails the whole parse.
/// Indices must run 0, 1, 2, ... in order.
pub fn parse_probe(probe_output: &str) -> Result<GpuInventory, HardwareError> {
    let mut devices = Vec::new();
    for (i, raw) in probe_output.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let device = parse_probe_line(raw).map_err(|message| HardwareError::Parse {
            line: line_no,
            message,
        })?;
        if device.index as usize != devices.len() {
            return Err(HardwareError::Parse {
                line: line_no,
                message: format!("expected device index {}, found {}", devices.len(), device.index),
            });
        }
        devices.push(device);
    }
    Ok(GpuInventory {
        devices,
        host: DEFAULT_HOST.to_string(),
    })
}

/// Parses `"<count>x<gib> GB"` or `"<gib> GB"` into a `(count, bytes)` pair.
pub fn parse_layout_parts(shorthand: &str) -> Result<(u32, u64), HardwareError> {
    let err = || HardwareError::Layout(shorthand.to_string());
    let text = shorthand.trim();
    let lower = text.to_ascii_lowercase();
    let body = lower
        .strip_suffix("gib")
        .or_else(|| lower.strip_suffix("gb"))
        .ok_or_else(err)?
        .trim_end();
    let (count, size) = match body.split_once(['x', '×']) {
        Some((c, s)) => (c.trim().parse::<u32>().map_err(|_| err())?, s.trim()),
        None => (1, body),
    };
    let gib: u64 = size.parse().map_err(|_| err())?;
    if count == 0 || gib == 0 {
        return Err(err());
    }
    Ok((count, gib * GIB))
}

/// Synthetic inventory from layout shorthand such as `"2x48 GB"`.
pub fn parse_layout(shorthand: &str) -> Result<GpuInventory, HardwareError> {
    let (count, bytes) = parse_layout_parts(shorthand)?;
    Ok(GpuInventory::uniform(count, bytes, "declared"))
}

/// Formats bytes as GiB, dropping the fraction when it is whole.
pub fn format_gib(bytes: u64) -> String {
    if bytes % GIB == 0 {
        format!("{} GiB", bytes / GIB)
    } else {
        format!("{:.2} GiB", bytes as f64 / GIB as f64)
    }
}

/// Human-readable summary: a header line then one line per device.
pub fn summarize(inv: &GpuInventory) -> String {
    if inv.devices.is_empty() {
        return "No GPUs detected".to_string();
    }
    let n = inv.devices.len();
    let mut out = format!("{n} GPU{}:", if n == 1 { "" } else { "s" });
    for d in &inv.devices {
        write!(
            out,
            "\n  [{}] {}: {} free / {}",
            d.index,
            d.name,
            format_gib(d.free_mem),
            format_gib(d.total_mem)
        )
        .unwrap();
    }
    out
}

/// Probe command: `$TUNEPLAN_GPU_PROBE` if set, else the vendor CLI query.
pub fn probe_command() -> String {
    std::env::var(PROBE_ENV).unwrap_or_else(|_| DEFAULT_PROBE.to_string())
}

/// Runs the probe command through `sh -c` and parses its output.
pub fn acquire(command: &str) -> Result<GpuInventory, HardwareError> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| HardwareError::Probe(e.to_string()))?;
    if !output.status.success() {
        return Err(HardwareError::Probe(format!(
            "`{command}` exited with {}",
            output.status
        )));
    }
    parse_probe(&String::from_utf8_lossy(&output.stdout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_two_a6000() {
        let inv = parse_probe("0, NVIDIA RTX A6000, 49140, 48900\n1, NVIDIA RTX A6000, 49140, 48900")
            .unwrap();
        assert_eq!(inv.len(), 2);
        for d in &inv.devices {
            assert_eq!(d.total_mem, 49140 * 1_048_576);
            assert_eq!(d.free_mem, 48900 * 1_048_576);
            assert_eq!(d.name, "NVIDIA RTX A6000");
        }
    }

    #[test]
    fn probe_empty_and_errors() {
        assert!(parse_probe("").unwrap().is_empty());
        assert!(parse_probe("\n\n").unwrap().is_empty());
        assert_eq!(
            parse_probe("0, A100, abc, 100"),
            Err(HardwareError::Parse {
                line: 1,
                message: "bad total memory `abc`".into()
            })
        );
        match parse_probe("0, A100, 100, 100\n1, A100, 100") {
            Err(HardwareError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_probe("0, A100, 100, 200"),
            Err(HardwareError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_probe("1, A100, 100, 100"),
            Err(HardwareError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn layout_shorthand() {
        let inv = parse_layout("2x48 GB").unwrap();
        assert_eq!(inv.len(), 2);
        assert!(inv.devices.iter().all(|d| d.total_mem == 48 * GIB && d.free_mem == 48 * GIB));
        let one = parse_layout("80 GB").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.devices[0].total_mem, 80 * GIB);
        assert_eq!(parse_layout_parts("4X24GB").unwrap(), (4, 24 * GIB));
        assert!(parse_layout("0x48 GB").is_err());
        assert!(parse_layout("48").is_err());
        assert!(parse_layout("two x 48 GB").is_err());
        assert!(parse_layout("2x0 GB").is_err());
    }

    #[test]
    fn summary_text() {
        assert_eq!(summarize(&GpuInventory::default()), "No GPUs detected");
        let inv = parse_layout("2x48 GB").unwrap();
        assert_eq!(
            summarize(&inv),
            "2 GPUs:\n  [0] declared: 48 GiB free / 48 GiB\n  [1] declared: 48 GiB free / 48 GiB"
        );
        let probed = parse_probe("0, A100, 81920, 40960").unwrap();
        assert_eq!(summarize(&probed), "1 GPU:\n  [0] A100: 40 GiB free / 80 GiB");
    }

    #[test]
    fn probe_through_shell() {
        let inv = acquire("printf '0, Fake, 1024, 512\\n'").unwrap();
        assert_eq!(inv.devices[0].total_mem, GIB);
        assert!(acquire("exit 3").is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn layout_summary_round_trip(n in 1u32..16, g in 1u64..256) {
                let inv = parse_layout(&format!("{n}x{g} GB")).unwrap();
                let text = summarize(&inv);
                let header = format!("{n} GPU{}:", if n == 1 { "" } else { "s" });
                prop_assert!(text.starts_with(&header));
                let needle = format!("{g} GiB free / {g} GiB");
                prop_assert_eq!(text.matches(&needle).count(), n as usize);
            }

            #[test]
            fn probe_is_total(lines in proptest::collection::vec("[0-9a-z, ]{0,20}", 0..5)) {
                let text = lines.join("\n");
                match parse_probe(&text) {
                    Ok(inv) => {
                        let non_blank = lines.iter().filter(|l| !l.trim().is_empty()).count();
                        prop_assert_eq!(inv.len(), non_blank);
                    }
                    Err(HardwareError::Parse { line, .. }) => {
                        prop_assert!(line >= 1 && line <= lines.len().max(1));
                    }
                    Err(e) => prop_assert!(false, "unexpected error {e}"),
                }
            }
        }
    }
}
