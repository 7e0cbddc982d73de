//! Named initial data. `u` presets are normalized to unit mass; `v`
//! presets are used as given.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Preset {
    Uniform {
        #[serde(default = "one")]
        value: f64,
    },
    /// `value * (1 + amplitude cos(mode pi x / L))` along `axis`.
    CosinePerturbed {
        #[serde(default = "one")]
        value: f64,
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
        #[serde(default)]
        axis: usize,
    },
    /// `floor + exp(-|x - center|^2 / (2 width^2))`.
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
    TwoBumps {
        centers: [Vec<f64>; 2],
        width: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn default_floor() -> f64 {
    0.05
}

fn bump(x: f64, y: f64, center: &[f64], width: f64) -> f64 {
    let dx = x - center[0];
    let dy = if center.len() > 1 { y - center[1] } else { 0.0 };
    (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
}

impl Preset {
    /// Problems with the preset on `grid`, as human-readable messages.
    pub fn violations(&self, grid: &Grid) -> Vec<String> {
        let mut v = Vec::new();
        let check_center = |c: &[f64], v: &mut Vec<String>| {
            if c.len() != grid.dim() {
                v.push(format!(
                    "center {c:?} has {} coordinates, domain has {}",
                    c.len(),
                    grid.dim()
                ));
            }
        };
        match self {
            Preset::Uniform { value } => {
                if !(*value >= 0.0) {
                    v.push(format!("uniform value must be >= 0, got {value}"));
                }
            }
            Preset::CosinePerturbed {
                value,
                amplitude,
                axis,
                ..
            } => {
                if !(*value >= 0.0) {
                    v.push(format!("cosine value must be >= 0, got {value}"));
                }
                if !(amplitude.abs() <= 1.0) {
                    v.push(format!("cosine amplitude must lie in [-1,1], got {amplitude}"));
                }
                if *axis >= grid.dim() {
                    v.push(format!("cosine axis {axis} out of range"));
                }
            }
            Preset::GaussianBump {
                center,
                width,
                floor,
            } => {
                check_center(center, &mut v);
                if !(*width > 0.0) {
                    v.push(format!("bump width must be > 0, got {width}"));
                }
                if !(*floor >= 0.0) {
                    v.push(format!("bump floor must be >= 0, got {floor}"));
                }
            }
            Preset::TwoBumps {
                centers,
                width,
                floor,
            } => {
                for c in centers {
                    check_center(c, &mut v);
                }
                if !(*width > 0.0) {
                    v.push(format!("bump width must be > 0, got {width}"));
                }
                if !(*floor >= 0.0) {
                    v.push(format!("bump floor must be >= 0, got {floor}"));
                }
            }
        }
        v
    }

    /// Evaluates the preset at cell centres.
    pub fn field(&self, grid: &Grid) -> Result<DensityField> {
        let v = self.violations(grid);
        if !v.is_empty() {
            return Err(Error::InvalidParams(v.join("; ")));
        }
        let pi = std::f64::consts::PI;
        Ok(match self {
            Preset::Uniform { value } => DensityField::constant(*grid, *value),
            Preset::CosinePerturbed {
                value,
                amplitude,
                mode,
                axis,
            } => {
                let l = grid.extent(*axis);
                DensityField::from_fn(*grid, |x, y| {
                    let s = if *axis == 0 { x } else { y };
                    value * (1.0 + amplitude * (*mode as f64 * pi * s / l).cos())
                })
            }
            Preset::GaussianBump {
                center,
                width,
                floor,
            } => DensityField::from_fn(*grid, |x, y| floor + bump(x, y, center, *width)),
            Preset::TwoBumps {
                centers,
                width,
                floor,
            } => DensityField::from_fn(*grid, |x, y| {
                floor + bump(x, y, &centers[0], *width) + bump(x, y, &centers[1], *width)
            }),
        })
    }

    /// The preset scaled to unit mass.
    pub fn density(&self, grid: &Grid) -> Result<DensityField> {
        self.field(grid)?.normalized()
    }
}
