use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DensityField, Grid};
use crate::error::{Error, Result};

/// Grid description stored next to every field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dim: usize,
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

impl From<&Grid> for GridMeta {
    fn from(g: &Grid) -> Self {
        GridMeta {
            dim: g.dim(),
            extents: g.extents().to_vec(),
            cells: g.cell_counts().to_vec(),
        }
    }
}

impl GridMeta {
    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(&self.extents, &self.cells)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` as `i[,j],value` rows plus a `.json` grid sidecar.
pub fn write_field_csv(field: &DensityField, path: &Path) -> Result<()> {
    let g = field.grid();
    let mut out = String::new();
    out.push_str(if g.dim() == 1 { "i,value\n" } else { "i,j,value\n" });
    for (idx, v) in field.values().iter().enumerate() {
        let (i, j) = g.coords(idx);
        if g.dim() == 1 {
            let _ = writeln!(out, "{i},{v}");
        } else {
            let _ = writeln!(out, "{i},{j},{v}");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&GridMeta::from(g)).expect("grid meta serializes");
    let side = sidecar(path);
    std::fs::write(&side, meta).map_err(|e| Error::io(side, e))
}

pub fn read_field_csv(path: &Path) -> Result<DensityField> {
    let side = sidecar(path);
    let meta_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: GridMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: side.clone(),
        msg: e.to_string(),
    })?;
    let grid = meta.to_grid()?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut values = vec![f64::NAN; grid.n_cells()];
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != grid.dim() + 1 {
            return Err(bad(format!("line {}: expected {} columns", lineno + 1, grid.dim() + 1)));
        }
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))
        };
        let i = parse_idx(parts[0])?;
        let j = if grid.dim() == 2 { parse_idx(parts[1])? } else { 0 };
        if i >= grid.cells(0) || j >= grid.cells(1) {
            return Err(bad(format!("line {}: index out of range", lineno + 1)));
        }
        let v: f64 = parts[grid.dim()]
            .trim()
            .parse()
            .map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
        values[grid.index(i, j)] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(bad("missing cells".into()));
    }
    DensityField::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for g in [Grid::line(1.0, 7).unwrap(), Grid::rect(2.0, 1.0, 4, 3).unwrap()] {
            let f = DensityField::from_fn(g, |x, y| (3.1 * x).sin() + y / 3.0);
            let p = dir.path().join("f.csv");
            write_field_csv(&f, &p).unwrap();
            let back = read_field_csv(&p).unwrap();
            assert_eq!(back, f);
        }
    }
}
