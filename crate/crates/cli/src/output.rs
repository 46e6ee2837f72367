use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tq3d::eval::{emit_records, Record, ReportFormat};

use crate::CliError;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io_err = |e: io::Error| CliError::Io(path.to_path_buf(), e);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))
            .map_err(io_err)?;
    }
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Emits records to `out` if given, otherwise to stdout.
pub fn emit<T: Record>(
    records: &[T],
    format: ReportFormat,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let bytes = emit_records(records, format)?;
    match out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(&bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CodebookSummary {
    pub dim: usize,
    pub bits: u8,
    pub levels: usize,
    pub expected_distortion: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    /// Space-separated, ascending.
    pub centroids: String,
}

impl Record for CodebookSummary {
    const FIELDS: &'static [&'static str] = &[
        "dim",
        "bits",
        "levels",
        "expected_distortion",
        "upper_bound",
        "lower_bound",
        "centroids",
    ];
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneSummary {
    pub input_count: usize,
    pub count: usize,
    pub input_sh_dim: usize,
    pub sh_dim: usize,
    pub bits: u8,
    pub original_bytes: u64,
    pub container_bytes: u64,
    pub exact_ratio: f64,
    /// Closed-form estimate; absent when there is nothing to quantize.
    pub formula_ratio: Option<f64>,
    pub mean_sh_norm_sq: f64,
    pub mean_sh_mse: f64,
}

impl Record for SceneSummary {
    const FIELDS: &'static [&'static str] = &[
        "input_count",
        "count",
        "input_sh_dim",
        "sh_dim",
        "bits",
        "original_bytes",
        "container_bytes",
        "exact_ratio",
        "formula_ratio",
        "mean_sh_norm_sq",
        "mean_sh_mse",
    ];
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlySummary {
    pub input_count: usize,
    pub count: usize,
    pub sh_dim: usize,
    pub bytes: u64,
}

impl Record for PlySummary {
    const FIELDS: &'static [&'static str] = &["input_count", "count", "sh_dim", "bytes"];
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TensorSummary {
    pub rows: usize,
    pub cols: usize,
    pub grouped: bool,
    pub entry_dim: usize,
    pub entries: usize,
    pub group: usize,
    pub pad_count: usize,
    pub bits: u8,
    pub container_bytes: u64,
    pub kv_ratio: f64,
}

impl Record for TensorSummary {
    const FIELDS: &'static [&'static str] = &[
        "rows",
        "cols",
        "grouped",
        "entry_dim",
        "entries",
        "group",
        "pad_count",
        "bits",
        "container_bytes",
        "kv_ratio",
    ];
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RatioSummary {
    pub input_count: usize,
    pub count: usize,
    pub input_sh_dim: usize,
    pub sh_dim: usize,
    pub bits: u8,
    pub original_bytes: u64,
    pub container_bytes: u64,
    pub exact_ratio: f64,
    pub formula_ratio: Option<f64>,
}

impl Record for RatioSummary {
    const FIELDS: &'static [&'static str] = &[
        "input_count",
        "count",
        "input_sh_dim",
        "sh_dim",
        "bits",
        "original_bytes",
        "container_bytes",
        "exact_ratio",
        "formula_ratio",
    ];
}
