//! On-disk formats: per-rollout CSV plus a TOML manifest sidecar, Pareto
//! front tables and generic summary tables.
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Manifests carry the SHA-256 of their CSV so a reader can reject files
//! that were truncated or swapped after the fact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::Gains;
use crate::moga::GainBounds;
use crate::pareto::ParetoFront;
use crate::plant::{ArmModel, CartesianPoint, ElbowBranch};
use crate::rollout::{ObjectiveVector, RolloutLog, RolloutMeta};
use crate::trajectory::{TrajectoryKind, TrajectorySpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} already exists with different content (pass overwrite to replace it)")]
    PathCollision(PathBuf),
    #[error("{path}: malformed at line {line} (last good line {last_good}): {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        last_good: u64,
        reason: String,
    },
    #[error("{path}: checksum mismatch (manifest {expected}, file {actual})")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("{path}: invalid manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Written,
    /// Destination already held exactly these bytes.
    Unchanged,
}

/// Writes `bytes` through a temporary sibling and renames it over `path`.
///
/// Without `overwrite`, an existing file is only accepted if its content is
/// already identical, which makes regeneration idempotent.
pub fn write_atomic(path: &Path, bytes: &[u8], overwrite: bool) -> Result<WriteOutcome, DatasetError> {
    if path.exists() {
        let existing = fs::read(path).map_err(io_err(path))?;
        if existing == bytes {
            return Ok(WriteOutcome::Unchanged);
        }
        if !overwrite {
            return Err(DatasetError::PathCollision(path.to_path_buf()));
        }
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(WriteOutcome::Written)
}

/// Shortest decimal text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes a CSV table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], overwrite: bool) -> Result<WriteOutcome, DatasetError> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_atomic(path, &csv_bytes(&header, rows), overwrite)
}

/// Formats floats for [`write_table`] rows.
pub fn cell(v: f64) -> String {
    fmt_f64(v)
}

/// Column names of a rollout CSV for an `n`-joint arm: `1 + 3n + 4` columns.
pub fn rollout_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "qd", "u"] {
        h.extend((1..=n).map(|j| format!("{prefix}_{j}")));
    }
    h.extend(["ee_x", "ee_y", "des_x", "des_y"].map(String::from));
    h
}

pub fn rollout_column_count(n: usize) -> usize {
    1 + 3 * n + 4
}

/// Trajectory description recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub dt: f64,
    pub branch: ElbowBranch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<TrajectorySpec>,
}

/// Sidecar describing one rollout CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    /// CSV file name, relative to the manifest's directory.
    pub csv_file: String,
    pub csv_sha256: String,
    pub ticks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub model_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objectives: Option<ObjectiveVector>,
    pub trajectory: TrajectoryRecord,
    pub gains: Gains,
    pub model: ArmModel,
}

impl RunManifest {
    /// Manifest for `log`; the file name and checksum are filled by [`write_rollout`].
    pub fn describe(log: &RolloutLog, model: &ArmModel, trajectory: TrajectoryRecord, objectives: Option<ObjectiveVector>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: crate::TOOL_VERSION.to_string(),
            csv_file: String::new(),
            csv_sha256: String::new(),
            ticks: log.len(),
            seed: log.meta.seed,
            model_hash: log.meta.model_hash.clone(),
            objectives,
            trajectory,
            gains: log.meta.gains.clone(),
            model: model.clone(),
        }
    }
}

/// Sidecar path of a rollout CSV: `name.csv` → `name.manifest.toml`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.toml")
}

fn rollout_csv(log: &RolloutLog) -> Vec<u8> {
    let n = log.n_joints();
    let rows: Vec<Vec<String>> = (0..log.len())
        .map(|i| {
            let mut row = Vec::with_capacity(rollout_column_count(n));
            row.push(fmt_f64(log.t[i]));
            for v in log.q[i].iter().chain(&log.qd[i]).chain(&log.u[i]) {
                row.push(fmt_f64(*v));
            }
            for p in [log.ee[i], log.des[i]] {
                row.push(fmt_f64(p.x));
                row.push(fmt_f64(p.y));
            }
            row
        })
        .collect();
    csv_bytes(&rollout_header(n), &rows)
}

/// Writes the rollout CSV at `path` and its manifest next to it. Returns
/// the manifest as written.
pub fn write_rollout(log: &RolloutLog, manifest: &RunManifest, path: &Path, overwrite: bool) -> Result<RunManifest, DatasetError> {
    let bytes = rollout_csv(log);
    let mut manifest = manifest.clone();
    manifest.csv_file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| DatasetError::Manifest { path: path.to_path_buf(), reason: "path has no file name".into() })?;
    manifest.csv_sha256 = sha256_hex(&bytes);
    manifest.ticks = log.len();
    let text = toml::to_string(&manifest).map_err(|e| DatasetError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &bytes, overwrite)?;
    write_atomic(&manifest_path(path), text.as_bytes(), overwrite)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|e| DatasetError::Manifest { path: path.to_path_buf(), reason: e.to_string() })
}

/// Parses a numeric CSV with a fixed header; errors name the offending line.
fn parse_numeric_csv(path: &Path, bytes: &[u8], header: &[String]) -> Result<Vec<Vec<f64>>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut rows = Vec::new();
    let mut last_good = 0;
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 1;
        let malformed = |reason: String| DatasetError::Malformed { path: path.to_path_buf(), line, last_good, reason };
        let record = record.map_err(|e| malformed(e.to_string()))?;
        if idx == 0 {
            if record.iter().ne(header.iter().map(String::as_str)) {
                return Err(malformed(format!("header must be {}", header.join(","))));
            }
        } else {
            if record.len() != header.len() {
                return Err(malformed(format!("expected {} fields, found {}", header.len(), record.len())));
            }
            let values = record
                .iter()
                .map(|c| c.parse::<f64>().map_err(|_| malformed(format!("non-numeric cell {c:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(values);
        }
        last_good = line;
    }
    if last_good == 0 {
        return Err(DatasetError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            last_good: 0,
            reason: "missing header".into(),
        });
    }
    Ok(rows)
}

/// Reads a rollout written by [`write_rollout`], verifying the checksum.
pub fn read_rollout(path: &Path) -> Result<(RolloutLog, RunManifest), DatasetError> {
    let manifest = read_manifest(&manifest_path(path))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let n = manifest.model.n_links();
    let rows = parse_numeric_csv(path, &bytes, &rollout_header(n))?;
    let actual = sha256_hex(&bytes);
    if actual != manifest.csv_sha256 {
        return Err(DatasetError::Integrity { path: path.to_path_buf(), expected: manifest.csv_sha256, actual });
    }
    let mut log = RolloutLog {
        dt: manifest.trajectory.dt,
        t: Vec::with_capacity(rows.len()),
        q: Vec::with_capacity(rows.len()),
        qd: Vec::with_capacity(rows.len()),
        u: Vec::with_capacity(rows.len()),
        ee: Vec::with_capacity(rows.len()),
        des: Vec::with_capacity(rows.len()),
        meta: RolloutMeta {
            gains: manifest.gains.clone(),
            kind: manifest.trajectory.kind,
            duration: manifest.trajectory.duration,
            model_hash: manifest.model_hash.clone(),
            seed: manifest.seed,
        },
    };
    for row in rows {
        log.t.push(row[0]);
        log.q.push(row[1..1 + n].to_vec());
        log.qd.push(row[1 + n..1 + 2 * n].to_vec());
        log.u.push(row[1 + 2 * n..1 + 3 * n].to_vec());
        let k = 1 + 3 * n;
        log.ee.push(CartesianPoint::new(row[k], row[k + 1]));
        log.des.push(CartesianPoint::new(row[k + 2], row[k + 3]));
    }
    Ok((log, manifest))
}

/// One row of a front table.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontRow {
    pub objectives: ObjectiveVector,
    pub gains: Gains,
}

/// Decodes a front's genomes into table rows.
pub fn front_rows(front: &ParetoFront, bounds: &GainBounds) -> Vec<FrontRow> {
    let genomes = front.genomes.as_deref().unwrap_or(&[]);
    front
        .points
        .iter()
        .zip(genomes)
        .map(|(o, g)| FrontRow { objectives: *o, gains: g.decode(bounds) })
        .collect()
}

pub fn front_header(n: usize) -> Vec<String> {
    let mut h = vec!["f_acc".to_string(), "f_t".to_string()];
    h.extend((1..=n).map(|j| format!("kp_{j}")));
    h.extend((1..=n).map(|j| format!("kd_{j}")));
    h
}

/// Front table `f_acc, f_t, kp_1..kp_n, kd_1..kd_n`, sorted by `f_acc`.
pub fn write_front(rows: &[FrontRow], n_joints: usize, path: &Path, overwrite: bool) -> Result<WriteOutcome, DatasetError> {
    let mut sorted: Vec<&FrontRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.objectives
            .f_acc
            .total_cmp(&b.objectives.f_acc)
            .then(a.objectives.f_t.total_cmp(&b.objectives.f_t))
    });
    let body: Vec<Vec<String>> = sorted
        .iter()
        .map(|r| {
            [r.objectives.f_acc, r.objectives.f_t]
                .iter()
                .chain(&r.gains.kp)
                .chain(&r.gains.kd)
                .map(|v| fmt_f64(*v))
                .collect()
        })
        .collect();
    write_atomic(path, &csv_bytes(&front_header(n_joints), &body), overwrite)
}

pub fn read_front(path: &Path, n_joints: usize) -> Result<Vec<FrontRow>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let rows = parse_numeric_csv(path, &bytes, &front_header(n_joints))?;
    Ok(rows
        .into_iter()
        .map(|r| FrontRow {
            objectives: ObjectiveVector::new(r[0], r[1]),
            gains: Gains { kp: r[2..2 + n_joints].to_vec(), kd: r[2 + n_joints..2 + 2 * n_joints].to_vec() },
        })
        .collect())
}
