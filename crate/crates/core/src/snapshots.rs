//! On-disk format shared by JKO trajectories and reference runs: a
//! `manifest.json` index plus one CSV per field and snapshot.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{read_field_csv, write_field_csv, DensityField, Grid, GridMeta};

/// Time-ordered `(u, v)` snapshots on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub u: Vec<DensityField>,
    pub v: Vec<DensityField>,
}

impl SnapshotSeries {
    pub fn new(grid: Grid) -> Self {
        SnapshotSeries {
            grid,
            times: Vec::new(),
            u: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, u: DensityField, v: DensityField) {
        self.times.push(t);
        self.u.push(u);
        self.v.push(v);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the snapshot closest in time to `t` (earliest on ties).
    pub fn nearest(&self, t: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in self.times.iter().enumerate() {
            let d = (s - t).abs();
            if best.map_or(true, |(_, b)| d < b - 1e-12 * t.abs().max(1.0)) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub u: String,
    pub v: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub kind: String,
    pub grid: GridMeta,
    pub snapshots: Vec<SnapshotEntry>,
    /// Producer-specific metadata (parameters, step tables, run echo).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub fn write_snapshots(
    dir: &Path,
    kind: &str,
    series: &SnapshotSeries,
    extra: Map<String, Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(series.len());
    for (i, t) in series.times.iter().enumerate() {
        let (un, vn) = (format!("u_{i:05}.csv"), format!("v_{i:05}.csv"));
        write_field_csv(&series.u[i], &dir.join(&un))?;
        write_field_csv(&series.v[i], &dir.join(&vn))?;
        entries.push(SnapshotEntry { t: *t, u: un, v: vn });
    }
    let manifest = SnapshotManifest {
        kind: kind.to_string(),
        grid: GridMeta::from(&series.grid),
        snapshots: entries,
        extra,
    };
    write_manifest(dir, &manifest)
}

pub fn write_manifest(dir: &Path, manifest: &SnapshotManifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<SnapshotManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path,
        msg: e.to_string(),
    })
}

pub fn read_snapshots(dir: &Path) -> Result<(SnapshotSeries, SnapshotManifest)> {
    let manifest = read_manifest(dir)?;
    let grid = manifest.grid.to_grid()?;
    let mut series = SnapshotSeries::new(grid);
    for e in &manifest.snapshots {
        let u = read_field_csv(&dir.join(&e.u))?;
        let v = read_field_csv(&dir.join(&e.v))?;
        grid.check_same(u.grid())?;
        grid.check_same(v.grid())?;
        series.push(e.t, u, v);
    }
    Ok((series, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_nearest() {
        let g = Grid::line(1.0, 5).unwrap();
        let mut s = SnapshotSeries::new(g);
        for k in 0..3 {
            let u = DensityField::from_fn(g, |x, _| x + k as f64);
            s.push(0.1 * k as f64, u.clone(), u.map(|v| 2.0 * v));
        }
        let dir = tempfile::tempdir().unwrap();
        let mut extra = Map::new();
        extra.insert("tau".into(), Value::from(0.1));
        write_snapshots(dir.path(), "test", &s, extra).unwrap();
        let (back, m) = read_snapshots(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.kind, "test");
        assert_eq!(m.extra["tau"], Value::from(0.1));
        assert_eq!(s.nearest(0.14), Some(1));
        assert_eq!(s.nearest(1.0), Some(2));
    }
}
