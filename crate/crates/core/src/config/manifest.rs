use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::ConfigError;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub video_id: String,
    pub path: PathBuf,
    pub alpha_label: Option<f64>,
    pub mos: Option<f64>,
}

/// Dataset index: CSV with header `video_id,path[,alpha_label][,mos]`.
/// Relative paths resolve against `root`, the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn manifest_err(path: &Path, message: impl Into<String>) -> ConfigError {
    ConfigError::Manifest {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn optional_number(path: &Path, row: usize, column: &str, cell: Option<&str>) -> Result<Option<f64>, ConfigError> {
    match cell.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(manifest_err(path, format!("row {row}: {column} `{s}` is not a finite number"))),
        },
    }
}

impl Manifest {
    /// Checks id uniqueness.
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Result<Self, ConfigError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.video_id.is_empty() {
                return Err(manifest_err(&root, "empty video_id"));
            }
            if !seen.insert(e.video_id.as_str()) {
                return Err(manifest_err(&root, format!("duplicate video_id `{}`", e.video_id)));
            }
        }
        Ok(Manifest { root, entries })
    }

    /// Reads a manifest; every path must exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = csv::Reader::from_path(path).map_err(|e| manifest_err(path, e.to_string()))?;
        let headers = r.headers().map_err(|e| manifest_err(path, e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (id_col, path_col) = match (col("video_id"), col("path")) {
            (Some(i), Some(p)) => (i, p),
            _ => return Err(manifest_err(path, "header must contain video_id and path")),
        };
        let (alpha_col, mos_col) = (col("alpha_label"), col("mos"));
        let mut entries = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| manifest_err(path, e.to_string()))?;
            let video_id = rec.get(id_col).unwrap_or("").trim().to_string();
            let rel = rec.get(path_col).unwrap_or("").trim();
            if rel.is_empty() {
                return Err(manifest_err(path, format!("row {row}: empty path")));
            }
            let p = PathBuf::from(rel);
            let resolved = if p.is_absolute() { p } else { root.join(p) };
            if !resolved.exists() {
                return Err(manifest_err(path, format!("row {row}: {} does not exist", resolved.display())));
            }
            entries.push(ManifestEntry {
                video_id,
                path: resolved,
                alpha_label: optional_number(path, row, "alpha_label", alpha_col.and_then(|c| rec.get(c)))?,
                mos: optional_number(path, row, "mos", mos_col.and_then(|c| rec.get(c)))?,
            });
        }
        Manifest::new(root, entries).map_err(|e| match e {
            ConfigError::Manifest { message, .. } => manifest_err(path, message),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ConfigError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| manifest_err(path, e.to_string()))?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows = vec![vec!["video_id".to_string(), "path".into(), "alpha_label".into(), "mos".into()]];
        for e in &self.entries {
            rows.push(vec![
                e.video_id.clone(),
                e.path.display().to_string(),
                num(e.alpha_label),
                num(e.mos),
            ]);
        }
        for r in rows {
            w.write_record(&r).map_err(|e| manifest_err(path, e.to_string()))?;
        }
        w.flush().map_err(|e| manifest_err(path, e.to_string()))
    }

    /// Replaces `alpha_label` with the values of a labels CSV, joined on `video_id`.
    pub fn with_labels(&self, labels: &HashMap<String, f64>) -> Manifest {
        Manifest {
            root: self.root.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    alpha_label: labels.get(&e.video_id).copied(),
                    ..e.clone()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `video_id → column` from any CSV with a `video_id` header.
pub fn read_scores(path: &Path, column: &str) -> Result<HashMap<String, f64>, ConfigError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| manifest_err(path, e.to_string()))?;
    let headers = r.headers().map_err(|e| manifest_err(path, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id, val) = match (col("video_id"), col(column)) {
        (Some(i), Some(v)) => (i, v),
        _ => return Err(manifest_err(path, format!("header must contain video_id and {column}"))),
    };
    let mut out = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| manifest_err(path, e.to_string()))?;
        let key = rec.get(id).unwrap_or("").trim().to_string();
        let v = optional_number(path, i + 2, column, rec.get(val))?
            .ok_or_else(|| manifest_err(path, format!("row {}: empty {column}", i + 2)))?;
        if out.insert(key.clone(), v).is_some() {
            return Err(manifest_err(path, format!("duplicate video_id `{key}`")));
        }
    }
    Ok(out)
}

/// Seeded shuffle, then the first `⌊n · train_fraction⌋` entries train.
/// Both halves keep manifest order.
pub fn split_manifest(m: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest), ConfigError> {
    if m.is_empty() {
        return Err(manifest_err(&m.root, "cannot split an empty manifest"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ConfigError::invalid(
            "train_fraction",
            format!("{train_fraction} must lie in (0, 1)"),
        ));
    }
    let n = m.len();
    let n_train = ((n as f64) * train_fraction + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &["split"]));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let pick = |want: bool| Manifest {
        root: m.root.clone(),
        entries: m
            .entries
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(e, _)| e.clone())
            .collect(),
    };
    Ok((pick(true), pick(false)))
}
