//! CSV tables and the JSON manifest.
//!
//! The manifest splits into a deterministic `run` record (configuration,
//! seed, code version, numerical results) and the run's circumstances (wall
//! time, worker count). Its hash covers only the `run` record, so outputs
//! stay bit-identical across worker counts, and every CSV starts with a
//! `# manifest_sha256=...` comment line carrying it.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub struct Table {
    /// File stem; the table is written to `<name>.csv`.
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table { name, header: header.to_vec(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip text of a float, in exponent form when very small
/// or large.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Empty for missing values.
pub fn opt<T: std::fmt::Debug>(x: Option<T>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Everything a mode produces.
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub results: Value,
}

#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub tool: &'static str,
    pub code_version: &'static str,
    pub mode: &'static str,
    pub seed: u64,
    /// The configuration with the output directory left out.
    pub config: &'a ExperimentConfig,
    pub results: &'a Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: &'a RunRecord<'a>,
    manifest_sha256: &'a str,
    output_dir: &'a Path,
    workers: usize,
    wall_time_s: f64,
    files: Vec<String>,
}

pub fn run_hash(run: &RunRecord) -> String {
    let bytes = serde_json::to_vec(run).expect("run record serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Writes every table and `manifest.json` into `dir`.
pub fn write_all(
    dir: &Path,
    run: &RunRecord,
    artifacts: &Artifacts,
    workers: usize,
    wall_time_s: f64,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let hash = run_hash(run);
    let mut written = vec![];
    for t in &artifacts.tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut file = File::create(&path)?;
        writeln!(file, "# manifest_sha256={hash}")?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(&t.header)?;
        for row in &t.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        written.push(path);
    }
    let manifest = Manifest {
        run,
        manifest_sha256: &hash,
        output_dir: dir,
        workers,
        wall_time_s,
        files: written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_results() {
        let cfg = ExperimentConfig::default();
        let a = Value::from(1.0);
        let b = Value::from(2.0);
        let r = |v| RunRecord { tool: "t", code_version: "0", mode: "m", seed: 0, config: &cfg, results: v };
        assert_eq!(run_hash(&r(&a)), run_hash(&r(&a)));
        assert_ne!(run_hash(&r(&a)), run_hash(&r(&b)));
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
