//! Clustering CSV (`unit_id,cluster_id`) and its JSON sidecar manifest.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClusterId, Clustering};
use crate::error::{Error, Result};
use crate::graph::UnitId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringManifest {
    pub name: String,
    pub date: String,
    pub algorithm: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// `clusters.csv` → `clusters.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

pub fn write_csv<W: Write>(clustering: &Clustering, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "cluster_id"])?;
    for (unit, cluster) in clustering.iter() {
        w.write_record([unit.as_str(), cluster.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R, name: &str, date: &str) -> Result<Clustering> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "unit_id" || &headers[1] != "cluster_id" {
        return Err(Error::Parse {
            line: 1,
            message: "clustering CSV header must be `unit_id,cluster_id`".into(),
        });
    }
    let mut pairs = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |k: usize| {
            record.get(k).ok_or_else(|| Error::Parse {
                line,
                message: "missing field".into(),
            })
        };
        let unit = UnitId::new(field(0)?).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let cluster = ClusterId::new(field(1)?).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        pairs.push((unit, cluster));
    }
    Clustering::from_pairs(name, date, pairs)
}

/// Writes `clusters.csv` plus its sidecar manifest.
pub fn save(clustering: &Clustering, path: &Path, algorithm: &str, params: serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(clustering, std::io::BufWriter::new(file))?;
    let manifest = ClusteringManifest {
        name: clustering.name().to_string(),
        date: clustering.date().to_string(),
        algorithm: algorithm.to_string(),
        params,
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a clustering CSV, taking name and date from the sidecar manifest
/// when present and from the file stem otherwise.
pub fn load(path: &Path) -> Result<(Clustering, Option<ClusteringManifest>)> {
    let sidecar = manifest_path(path);
    let manifest: Option<ClusteringManifest> = if sidecar.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?)
    } else {
        None
    };
    let (name, date) = match &manifest {
        Some(m) => (m.name.clone(), m.date.clone()),
        None => (
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "clustering".into()),
            "1970-01-01".to_string(),
        ),
    };
    let file = std::fs::File::open(path)?;
    let clustering = read_csv(std::io::BufReader::new(file), &name, &date)?;
    Ok((clustering, manifest))
}
