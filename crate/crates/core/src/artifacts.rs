//! On-disk artifacts: manifests with checksums, the dataset container and
//! plain CSV outputs.
//!
//! Every command writes `manifests/<command>.json` listing the checksum of
//! each input it consumed and each output it wrote. A consumer refuses to run
//! when a consumed file no longer matches the checksum recorded by its
//! producer, or when the producer ran with different settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::pipeline::{DatasetMeta, TrainingDataset};
use crate::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const DATASET_MAGIC: &str = "IMPEDANCE-SBI-DATASET 1";

pub const DATASET_FILE: &str = "dataset.bin";
pub const OBSERVATIONS_FILE: &str = "observation_points.csv";
pub const REFERENCE_OBS_FILE: &str = "reference_observation.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const POSTERIOR_FILE: &str = "posterior_samples.csv";
pub const POSTERIOR_SUMMARY_FILE: &str = "posterior_summary.json";
pub const PPC_FILE: &str = "ppc.csv";
pub const PPC_SUMMARY_FILE: &str = "ppc_summary.json";
pub const CALIBRATION_SUMMARY_FILE: &str = "calibration_summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MAC_FILE: &str = "mac.csv";
pub const METRICS_SUMMARY_FILE: &str = "metrics_summary.json";
pub const STUDY_FILE: &str = "study.csv";

pub fn impedance_band_file(surface: usize) -> String {
    format!("impedance_surface_{}.csv", surface + 1)
}

pub fn calibration_file(obs: usize, corrupted: bool) -> String {
    if corrupted {
        format!("calibration_obs{}_corrupted.csv", obs + 1)
    } else {
        format!("calibration_obs{}.csv", obs + 1)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    /// Settings this command's outputs depend on.
    pub fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub config: RunConfig,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join("manifests").join(format!("{command}.json"))
}

/// Writes `bytes` to `out/name`, creating directories.
pub fn write_file(out: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry> {
    let path = out.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    Ok(FileEntry { path: name.to_string(), sha256: sha256_bytes(bytes) })
}

pub fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    let path = manifest_path(out, &manifest.command);
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_manifest(out: &Path, command: &str) -> Result<Manifest> {
    let path = manifest_path(out, command);
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Artifact(format!("no manifest at {}; run `{command}` first", path.display()))
    })?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Artifact(format!("unreadable manifest {}: {e}", path.display())))?;
    if m.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "manifest {} has format {}, expected {MANIFEST_FORMAT_VERSION}; rerun `{command}`",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

/// Staleness guard: checks that `files` produced by `producer` are unchanged
/// on disk and that the producer ran with `fingerprint`. Returns the entries
/// to list as inputs of the consumer.
pub fn verify_inputs(out: &Path, producer: &str, fingerprint: &str, files: &[&str]) -> Result<Vec<FileEntry>> {
    let m = read_manifest(out, producer)?;
    if m.fingerprint != fingerprint {
        return Err(Error::Artifact(format!(
            "outputs of `{producer}` were produced with different settings; rerun `{producer}`"
        )));
    }
    let mut entries = Vec::with_capacity(files.len());
    for name in files {
        let listed = m.outputs.iter().find(|e| e.path == *name).ok_or_else(|| {
            Error::Artifact(format!("`{producer}` did not record {name}; rerun `{producer}`"))
        })?;
        let path = out.join(name);
        if !path.exists() {
            return Err(Error::Artifact(format!("missing {}; run `{producer}`", path.display())));
        }
        let sha = sha256_file(&path)?;
        if sha != listed.sha256 {
            return Err(Error::Artifact(format!(
                "{} changed since `{producer}` wrote it (stale checksum); rerun `{producer}`",
                path.display()
            )));
        }
        entries.push(listed.clone());
    }
    Ok(entries)
}

/// Serializes a dataset: a text header terminated by `END\n`, then per row
/// the 24 theta values and the observation vector as little-endian `f64`.
pub fn dataset_to_bytes(ds: &TrainingDataset) -> Result<Vec<u8>> {
    let meta = serde_json::to_string(&ds.meta)?;
    let mut header = String::new();
    writeln!(header, "{DATASET_MAGIC}").unwrap();
    writeln!(header, "rows {}", ds.len()).unwrap();
    writeln!(header, "theta_cols {}", ds.thetas.ncols()).unwrap();
    writeln!(header, "data_cols {}", ds.data.ncols()).unwrap();
    writeln!(header, "order row-major; row = theta then data; data = freq-major, point, re/im; f64 little-endian")
        .unwrap();
    writeln!(header, "meta {meta}").unwrap();
    header.push_str("END\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(8 * ds.len() * (ds.thetas.ncols() + ds.data.ncols()));
    for i in 0..ds.len() {
        for v in ds.thetas.row(i).iter().chain(ds.data.row(i).iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn read_dataset(path: &Path) -> Result<TrainingDataset> {
    let bad = |what: &str| Error::Artifact(format!("{}: malformed dataset ({what})", path.display()));
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    r.read_line(&mut line)?;
    if line.trim_end() != DATASET_MAGIC {
        return Err(bad("magic"));
    }
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing END"));
        }
        let l = line.trim_end();
        if l == "END" {
            break;
        }
        if let Some((k, v)) = l.split_once(' ') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let num = |k: &str| -> Result<usize> { fields.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(k)) };
    let (rows, tc, dc) = (num("rows")?, num("theta_cols")?, num("data_cols")?);
    let meta: DatasetMeta = serde_json::from_str(fields.get("meta").ok_or_else(|| bad("meta"))?)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * rows * (tc + dc) {
        return Err(bad("body length"));
    }
    let mut thetas = Array2::zeros((rows, tc));
    let mut data = Array2::zeros((rows, dc));
    let mut vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for i in 0..rows {
        for j in 0..tc {
            thetas[(i, j)] = vals.next().unwrap();
        }
        for j in 0..dc {
            data[(i, j)] = vals.next().unwrap();
        }
    }
    Ok(TrainingDataset { meta, thetas, data })
}

/// CSV text with a header row; values use the shortest round-trip format.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses a numeric CSV written by [`csv_string`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Artifact(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> = l.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Artifact(format!("{} line {}: {e}", path.display(), i + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Artifact(format!("{} line {}: wrong column count", path.display(), i + 2)));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<FileEntry> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_file(out, name, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Column names of the posterior sample CSV.
pub fn theta_columns() -> Vec<String> {
    (1..=crate::impedance::N_SURFACES)
        .flat_map(|s| ["R", "K", "G", "gamma"].map(|p| format!("{p}{s}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![vec![0.1, -1e-300, 3.0], vec![f64::MIN_POSITIVE, 1.0 / 3.0, 2e10]];
        write_file(dir.path(), "a.csv", csv_string(&["a", "b", "c"], &rows).as_bytes()).unwrap();
        let (h, back) = read_csv(&dir.path().join("a.csv")).unwrap();
        assert_eq!(h, ["a", "b", "c"]);
        assert_eq!(back, rows);
    }

    #[test]
    fn theta_columns_order() {
        let c = theta_columns();
        assert_eq!(c.len(), 24);
        assert_eq!(&c[..5], ["R1", "K1", "G1", "gamma1", "R2"]);
    }
}
