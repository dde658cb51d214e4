//! Singular interaction kernels `k(x, y, z) = omega(x, y) |z|^(-d - alpha)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension of every kernel in this crate.
pub const DIM: usize = 2;

/// Bounded, symmetric, strictly positive weight `omega(x, y)`.
///
/// Implement this trait to plug a new weight into [`KernelSpec`].
pub trait InteractionWeight: Send + Sync + fmt::Debug {
    fn weight(&self, x: [f64; 2], y: [f64; 2]) -> f64;

    /// `Some(c)` when the weight is the constant `c`. Constant weights make
    /// the assembled form translation invariant, which enables the FFT
    /// application path.
    fn constant_value(&self) -> Option<f64> {
        None
    }

    /// Stable textual identity, used as part of the assembly cache key.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantWeight(pub f64);

impl InteractionWeight for ConstantWeight {
    fn weight(&self, _x: [f64; 2], _y: [f64; 2]) -> f64 {
        self.0
    }

    fn constant_value(&self) -> Option<f64> {
        Some(self.0)
    }

    fn describe(&self) -> String {
        format!("constant({:e})", self.0)
    }
}

/// `1 + amplitude * sin(x_1 + y_1)`, with range `[1 - a, 1 + a]`.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidalWeight {
    pub amplitude: f64,
}

impl InteractionWeight for SinusoidalWeight {
    fn weight(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        1.0 + self.amplitude * (x[0] + y[0]).sin()
    }

    fn describe(&self) -> String {
        format!("sinusoidal({:e})", self.amplitude)
    }
}

/// Named weights selectable from a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightChoice {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    Sinusoidal {
        #[serde(default = "half")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl Default for WeightChoice {
    fn default() -> Self {
        WeightChoice::Constant { value: 1.0 }
    }
}

impl WeightChoice {
    pub fn build(&self) -> Result<Arc<dyn InteractionWeight>> {
        match *self {
            WeightChoice::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::param(
                        "kernel",
                        format!("constant omega must be positive, got {value}"),
                    ));
                }
                Ok(Arc::new(ConstantWeight(value)))
            }
            WeightChoice::Sinusoidal { amplitude } => {
                if !(0.0..1.0).contains(&amplitude) {
                    return Err(Error::param(
                        "kernel",
                        format!("sinusoidal omega needs amplitude in [0, 1), got {amplitude}"),
                    ));
                }
                Ok(Arc::new(SinusoidalWeight { amplitude }))
            }
        }
    }
}

/// Kernel of order `alpha` with comparability constants `c0 <= omega <= c_upper`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub alpha: f64,
    pub c0: f64,
    pub c_upper: f64,
    pub omega: Arc<dyn InteractionWeight>,
}

impl KernelSpec {
    pub fn new(alpha: f64, c0: f64, c_upper: f64, omega: Arc<dyn InteractionWeight>) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::param("kernel", "alpha must lie in (1,2)"));
        }
        if !(c0 > 0.0 && c_upper >= c0 && c_upper.is_finite()) {
            return Err(Error::param(
                "kernel",
                format!("require 0 < c0 <= C0, got c0 = {c0}, C0 = {c_upper}"),
            ));
        }
        Ok(Self {
            alpha,
            c0,
            c_upper,
            omega,
        })
    }

    /// Pure power kernel with `omega = 1` and `c0 = C0 = 1`.
    pub fn fractional(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0, 1.0, Arc::new(ConstantWeight(1.0)))
    }

    pub fn exponent(&self) -> f64 {
        DIM as f64 + self.alpha
    }

    /// `omega(x, y) |x - y|^(-d - alpha)`.
    pub fn eval(&self, x: [f64; 2], y: [f64; 2]) -> Result<f64> {
        if x == y {
            return Err(Error::SingularEvaluation { x });
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        self.omega.weight(x, y) * power_kernel(x, y, self.alpha)
    }

    /// Samples random point pairs in `[0, lx] x [0, ly]` and checks exchange
    /// symmetry and the two-sided bound.
    pub fn validate(&self, n_samples: usize, seed: u64, extent: [f64; 2]) -> Result<KernelReport> {
        if n_samples == 0 {
            return Err(Error::param("kernel", "validation needs at least one sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = KernelReport {
            samples: n_samples,
            min_ratio: f64::INFINITY,
            max_ratio: 0.0,
            max_asymmetry: 0.0,
        };
        let mut drawn = 0;
        while drawn < n_samples {
            let x = [rng.gen::<f64>() * extent[0], rng.gen::<f64>() * extent[1]];
            let y = [rng.gen::<f64>() * extent[0], rng.gen::<f64>() * extent[1]];
            if x == y {
                continue;
            }
            drawn += 1;
            let kxy = self.eval_unchecked(x, y);
            let kyx = self.eval_unchecked(y, x);
            let asym = (kxy - kyx).abs() / kxy.abs().max(f64::MIN_POSITIVE);
            report.max_asymmetry = report.max_asymmetry.max(asym);
            if asym > 1e-12 {
                return Err(Error::KernelViolation {
                    assumption: "exchange symmetry",
                    x,
                    y,
                    detail: format!("k(x,y) = {kxy:e}, k(y,x) = {kyx:e}"),
                });
            }
            let ratio = kxy / power_kernel(x, y, self.alpha);
            report.min_ratio = report.min_ratio.min(ratio);
            report.max_ratio = report.max_ratio.max(ratio);
            if ratio < self.c0 {
                return Err(Error::KernelViolation {
                    assumption: "lower bound",
                    x,
                    y,
                    detail: format!("ratio {ratio} < c0 = {}", self.c0),
                });
            }
            if ratio > self.c_upper {
                return Err(Error::KernelViolation {
                    assumption: "upper bound",
                    x,
                    y,
                    detail: format!("ratio {ratio} > C0 = {}", self.c_upper),
                });
            }
        }
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelReport {
    pub samples: usize,
    /// Extremes of `k(x, y, z) |z|^(d + alpha)` over the samples.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub max_asymmetry: f64,
}

#[inline]
pub(crate) fn power_kernel(x: [f64; 2], y: [f64; 2], alpha: f64) -> f64 {
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    (dx * dx + dy * dy).powf(-0.5 * (DIM as f64 + alpha))
}
