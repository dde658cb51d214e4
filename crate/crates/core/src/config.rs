//! Run configuration in TOML.
//!
//! Only the `grid` and `time` sections are required. Everything else falls
//! back to the reference setup: `alpha = 1.5`, constant weight 1,
//! `theta = 1`, `theta_c = 2`, unit densities, viscosity and mobility.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FluidParams;
use crate::grid::Grid;
use crate::initial::InitialData;
use crate::kernel::{KernelSpec, WeightChoice};
use crate::nonlocal::{NonlocalForm, QuadratureOptions};
use crate::potential::PotentialParams;
use crate::stepper::{Model, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub potential: PotentialParams,
    #[serde(default)]
    pub fluid: FluidParams,
    pub time: TimeConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "unit")]
    pub lx: f64,
    #[serde(default = "unit")]
    pub ly: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub alpha: f64,
    /// Lower and upper bounds of the weight. When absent they are taken
    /// from the weight itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_upper: Option<f64>,
    pub omega: WeightChoice,
    pub quadrature: QuadratureOptions,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            c0: None,
            c_upper: None,
            omega: WeightChoice::default(),
            quadrature: QuadratureOptions::default(),
        }
    }
}

impl KernelConfig {
    pub fn spec(&self) -> Result<KernelSpec> {
        let omega = self.omega.build()?;
        let (lo, hi) = match self.omega {
            WeightChoice::Constant { value } => (value, value),
            WeightChoice::Sinusoidal { amplitude } => (1.0 - amplitude, 1.0 + amplitude),
        };
        let c0 = self.c0.unwrap_or(lo);
        let c_upper = self.c_upper.unwrap_or(hi);
        if c0 > lo || c_upper < hi {
            return Err(Error::param(
                "kernel",
                format!("weight range [{lo}, {hi}] is not inside [c0, C0] = [{c0}, {c_upper}]"),
            ));
        }
        KernelSpec::new(self.alpha, c0, c_upper, omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub h: f64,
    pub n_steps: usize,
    /// How often a failing step may be retried with half the step size.
    #[serde(default)]
    pub max_halvings: usize,
    /// Implicit substeps of the smoothing operator.
    #[serde(default = "one_substep")]
    pub smoothing_substeps: usize,
}

fn one_substep() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Snapshot every `cadence` steps; 0 keeps only the first and last state.
    pub cadence: usize,
    pub directory: PathBuf,
    /// Directory for assembled nonlocal matrices; no caching when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            cadence: 10,
            directory: PathBuf::from("output"),
            cache_dir: None,
        }
    }
}

/// Environment variable overriding `output.directory`.
pub const OUTPUT_DIR_ENV: &str = "NLAGG_OUTPUT_DIR";

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new(g.nx, g.ny, g.lx, g.ly)
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            max_halvings: self.time.max_halvings,
            ..self.solver
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.kernel.spec()?;
        self.kernel.quadrature.validate()?;
        self.potential.validate()?;
        self.fluid.validate()?;
        if !(self.time.h > 0.0 && self.time.h.is_finite()) {
            return Err(Error::param("time", format!("h must be positive, got {}", self.time.h)));
        }
        if self.time.smoothing_substeps == 0 {
            return Err(Error::param("time", "smoothing_substeps must be at least 1"));
        }
        self.settings().validate()?;
        self.initial.validate(&grid)
    }

    /// Output directory after applying the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.directory.clone(),
        }
    }

    /// Assembles the nonlocal form, through the cache when configured.
    pub fn assemble_form(&self) -> Result<NonlocalForm> {
        let grid = self.grid()?;
        let spec = self.kernel.spec()?;
        match &self.output.cache_dir {
            Some(dir) => NonlocalForm::assemble_cached(&grid, &spec, self.kernel.quadrature, dir),
            None => NonlocalForm::assemble(&grid, &spec, self.kernel.quadrature),
        }
    }

    pub fn model(&self) -> Result<Model> {
        self.model_with(Arc::new(self.assemble_form()?))
    }

    /// Builds the model around an already assembled form for this grid.
    pub fn model_with(&self, form: Arc<NonlocalForm>) -> Result<Model> {
        if *form.grid() != self.grid()? {
            return Err(Error::Config("nonlocal form was assembled for another grid".into()));
        }
        let mut model = Model::new(form, self.potential, self.fluid, self.settings())?;
        model.smoothing_substeps = self.time.smoothing_substeps;
        Ok(model)
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: SimConfig = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
