//! Initial phase fields.
//!
//! Generated fields are clamped into `[-1 + 0.05, 1 - 0.05]`; the achieved
//! mean is reported since clamping can move it.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField, Grid};
use crate::output;

/// Distance kept from the pure phases by every generator.
pub const CLAMP_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// `mean + amplitude cos(2π f x / lx) cos(2π f y / ly)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        #[serde(default = "unit")]
        frequency: f64,
    },
    /// `tanh((radius - |x - center|) / width)`: +1 inside, -1 outside.
    TanhBlob {
        center: [f64; 2],
        radius: f64,
        width: f64,
    },
    /// Random combination of Neumann cosine modes with wave indices up to
    /// `modes` along each axis, scaled to the given amplitude.
    RandomSmooth {
        seed: u64,
        mean: f64,
        amplitude: f64,
        #[serde(default = "four")]
        modes: usize,
    },
    /// Phase field and face velocity read back from a snapshot file.
    Snapshot {
        path: PathBuf,
    },
}

fn unit() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Cosine {
            mean: 0.2,
            amplitude: 0.5,
            frequency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialField {
    pub phi: CellField,
    pub v: FaceField,
    pub mean: f64,
    /// Number of cells changed by the clamp.
    pub clamped: usize,
}

impl InitialData {
    /// Checks parameters that do not need the field itself.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let bad = |msg: String| Err(Error::param("initial", msg));
        match *self {
            InitialData::Constant { value } if !(value.abs() < 1.0) => bad(format!("constant {value} outside (-1, 1)")),
            InitialData::Cosine {
                mean,
                amplitude,
                frequency,
            } if !(mean.abs() < 1.0 && amplitude.is_finite() && frequency.is_finite()) => bad(format!(
                "cosine needs |mean| < 1 and finite parameters, got mean {mean}"
            )),
            InitialData::TanhBlob { radius, width, .. } if !(radius > 0.0 && width > 0.0) => {
                bad("tanh_blob needs positive radius and width".into())
            }
            InitialData::RandomSmooth {
                mean, amplitude, modes, ..
            } if !(mean.abs() < 1.0 && amplitude >= 0.0 && modes >= 1 && modes < grid.nx.max(grid.ny)) => bad(format!(
                "random_smooth needs |mean| < 1, amplitude >= 0 and 1 <= modes < {}",
                grid.nx.max(grid.ny)
            )),
            _ => Ok(()),
        }
    }

    pub fn generate(&self, grid: &Grid) -> Result<InitialField> {
        self.validate(grid)?;
        let raw = match self {
            InitialData::Constant { value } => CellField::constant(grid, *value),
            &InitialData::Cosine {
                mean,
                amplitude,
                frequency,
            } => {
                let (kx, ky) = (2.0 * PI * frequency / grid.lx, 2.0 * PI * frequency / grid.ly);
                CellField::from_fn(grid, |x| mean + amplitude * (kx * x[0]).cos() * (ky * x[1]).cos())
            }
            &InitialData::TanhBlob { center, radius, width } => CellField::from_fn(grid, |x| {
                let r = (x[0] - center[0]).hypot(x[1] - center[1]);
                ((radius - r) / width).tanh()
            }),
            &InitialData::RandomSmooth {
                seed,
                mean,
                amplitude,
                modes,
            } => random_smooth(grid, seed, mean, amplitude, modes),
            InitialData::Snapshot { path } => {
                let snap = output::read_snapshot(path, grid)?;
                let mean = grid.mean(&snap.phi);
                if let Some(&bad) = snap.phi.iter().find(|s| !(s.abs() <= 1.0)) {
                    return Err(Error::DomainViolation {
                        value: bad,
                        interval: "[-1, 1]",
                    });
                }
                return Ok(InitialField {
                    phi: snap.phi,
                    v: snap.v,
                    mean,
                    clamped: 0,
                });
            }
        };
        let limit = 1.0 - CLAMP_MARGIN;
        let mut clamped = 0;
        let phi: Vec<f64> = raw
            .iter()
            .map(|&s| {
                let c = s.clamp(-limit, limit);
                if c != s {
                    clamped += 1;
                }
                c
            })
            .collect();
        let mean = grid.mean(&phi);
        if !(mean.abs() < 1.0) {
            return Err(Error::MeanCondition(format!("generated mean {mean} outside (-1, 1)")));
        }
        Ok(InitialField {
            phi: CellField::wrap(phi),
            v: FaceField::zeros(grid),
            mean,
            clamped,
        })
    }
}

fn random_smooth(grid: &Grid, seed: u64, mean: f64, amplitude: f64, modes: usize) -> CellField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Vec::new();
    for ky in 0..=modes {
        for kx in 0..=modes {
            if kx + ky > 0 {
                coeffs.push((kx as f64, ky as f64, rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let field: Vec<f64> = (0..grid.num_cells())
        .map(|c| {
            let x = grid.cell_center(c);
            coeffs
                .iter()
                .map(|&(kx, ky, a)| a * (PI * kx * x[0] / grid.lx).cos() * (PI * ky * x[1] / grid.ly).cos())
                .sum()
        })
        .collect();
    let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    CellField::wrap(field.iter().map(|v| mean + scale * v).collect())
}
