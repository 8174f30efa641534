//! On-disk formats: the binary trace container and its metadata sidecar,
//! comma-separated columns with unit headers, and key-value reports.
//!
//! Container layout, all little-endian:
//!
//! | offset | size | field     |
//! |--------|------|-----------|
//! | 0      | 8    | magic `PTHTRACE` |
//! | 8      | 4    | version (u32) |
//! | 12     | 8    | n_reps (u64) |
//! | 20     | 8    | n_samples (u64) |
//! | 28     | 8    | dt in seconds (f64) |
//! | 36     | 4·n  | samples (f32), row-major |

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::{Provenance, PulseConfig, SynthTruth, TraceSet};

pub const MAGIC: &[u8; 8] = b"PTHTRACE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;
pub const TRACE_EXTENSION: &str = "ptt";

/// Identifies the run that produced a file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Contents of the sidecar written next to each trace container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub config_hash: String,
    pub seed: u64,
    /// Fridge temperature, K.
    pub temperature: Option<f64>,
    /// Marks an off-resonance (noise only) ensemble.
    #[serde(default)]
    pub off_resonance: bool,
    pub pulse: Option<PulseConfig>,
    pub truth: Option<SynthTruth>,
}

impl TraceMeta {
    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }
}

/// Lower-case hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn encode_traces(set: &TraceSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * set.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.n_reps as u64).to_le_bytes());
    out.extend_from_slice(&(set.n_samples as u64).to_le_bytes());
    out.extend_from_slice(&set.dt.to_le_bytes());
    for v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_traces(bytes: &[u8], path: &Path) -> Result<TraceSet> {
    let bad = |field: &str, detail: String| Error::Format {
        path: path.to_path_buf(),
        field: field.into(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(
            "header",
            format!("{} bytes, a header needs {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("magic", format!("found {:?}", String::from_utf8_lossy(&bytes[..8]))));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad("version", format!("{version}, this build reads {FORMAT_VERSION}")));
    }
    let n_reps = u64_at(12);
    if n_reps == 0 {
        return Err(bad("n_reps", "zero repetitions".into()));
    }
    let n_samples = u64_at(20);
    if n_samples == 0 {
        return Err(bad("n_samples", "zero samples per repetition".into()));
    }
    let dt = f64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
    if !(dt.is_finite() && dt > 0.0) {
        return Err(bad("dt", format!("{dt} is not a positive sample period")));
    }
    let expected = n_reps
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("n_samples", "n_reps x n_samples overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(bad(
            "data",
            format!("{} payload bytes, header implies {expected}", payload.len()),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    TraceSet::new(dt, n_reps as usize, n_samples as usize, data)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

/// Writes the container and its sidecar.
pub fn save_trace_file(path: &Path, set: &TraceSet, meta: &TraceMeta) -> Result<()> {
    write_atomic(path, &encode_traces(set))?;
    let text = toml::to_string(meta).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&sidecar_path(path), text.as_bytes())
}

/// Reads a container and its sidecar, restoring truth and provenance.
pub fn load_trace_file(path: &Path) -> Result<(TraceSet, TraceMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut set = decode_traces(&bytes, path)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::Dependency(format!(
            "metadata sidecar {} for {} is missing",
            side.display(),
            path.display()
        )));
    }
    let meta: TraceMeta = read_toml(&side)?;
    set.truth = meta.truth;
    set.provenance = Provenance {
        pulse: meta.pulse,
        seed: meta.seed,
    };
    Ok((set, meta))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: toml_field(&e),
        detail: e.message().to_string(),
    })
}

fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    // serde names the offending key in backticks
    msg.split('`').nth(1).unwrap_or("document").to_string()
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

/// Key-value report with the run stamp as leading keys. `units` pairs
/// key names with units and are written as leading comments.
pub fn write_report<T: Serialize>(
    path: &Path,
    title: &str,
    stamp: &Stamp,
    units: &[(&str, &str)],
    body: &T,
) -> Result<()> {
    let doc = Stamped {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        body,
    };
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    let mut head = format!("# {title}\n");
    for (k, u) in units {
        let _ = writeln!(head, "# {k}: {u}");
    }
    write_atomic(path, format!("{head}{text}").as_bytes())
}

pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<(Stamp, T)> {
    if !path.exists() {
        return Err(Error::Dependency(format!("{} not found", path.display())));
    }
    let doc: Stamped<T> = read_toml(path)?;
    Ok((
        Stamp {
            config_hash: doc.config_hash,
            seed: doc.seed,
        },
        doc.body,
    ))
}

/// A column name with its unit, rendered as `name [unit]`.
#[derive(Clone, Copy, Debug)]
pub struct Column<'a> {
    pub name: &'a str,
    pub unit: &'a str,
}

pub const fn col<'a>(name: &'a str, unit: &'a str) -> Column<'a> {
    Column { name, unit }
}

pub fn format_columns(stamp: &Stamp, columns: &[Column], rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash={}", stamp.config_hash);
    let _ = writeln!(s, "# seed={}", stamp.seed);
    let header: Vec<String> = columns.iter().map(|c| format!("{} [{}]", c.name, c.unit)).collect();
    let _ = writeln!(s, "{}", header.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn write_columns(path: &Path, stamp: &Stamp, columns: &[Column], rows: &[Vec<f64>]) -> Result<()> {
    debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
    write_atomic(path, format_columns(stamp, columns, rows).as_bytes())
}

/// Parsed columnar text.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }

    /// Index of the first column whose name (without unit) is `name`.
    pub fn find(&self, name: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| n.split(" [").next().map(str::trim) == Some(name))
    }
}

/// Reads comma-, tab- or whitespace-separated numeric columns. Lines
/// starting with `#` are comments; a leading non-numeric line is the header.
pub fn read_columns(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_columns(&text, path)
}

pub fn parse_columns(text: &str, path: &Path) -> Result<Table> {
    let split = |line: &str| -> Vec<String> {
        if line.contains(',') {
            line.split(',').map(|c| c.trim().to_string()).collect()
        } else {
            line.split_whitespace().map(str::to_string).collect()
        }
    };
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells = split(line);
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                let width = if names.is_empty() { rows.first().map_or(v.len(), Vec::len) } else { names.len() };
                if v.len() != width {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        field: format!("line {}", lineno + 1),
                        detail: format!("{} values, expected {width}", v.len()),
                    });
                }
                rows.push(v);
            }
            Err(_) if rows.is_empty() && names.is_empty() => names = cells,
            Err(e) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    field: format!("line {}", lineno + 1),
                    detail: e.to_string(),
                })
            }
        }
    }
    if names.is_empty() {
        let width = rows.first().map_or(0, Vec::len);
        names = (0..width).map(|i| format!("col{i}")).collect();
    }
    Ok(Table { names, rows })
}
