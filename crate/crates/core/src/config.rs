//! Experiment configuration: presets, sweeps and the threshold-ratio solver.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, ObservationKernel};
use crate::divergence::{it_threshold, ConstantsConfig};
use crate::error::{GhcmError, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    GeometricSl,
    GeometricPds,
    SymmetricSbm,
    Custom,
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::GeometricSl => "geometric-sl",
            Preset::GeometricPds => "geometric-pds",
            Preset::SymmetricSbm => "symmetric-sbm",
            Preset::Custom => "custom",
        })
    }
}

/// One sweep axis: a parameter name and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<f64>,
}

/// Sweepable parameter names.
pub const SWEEP_PARAMS: [&str; 8] = ["lambda", "n", "d", "pi1", "mu", "p", "q", "threshold_ratio"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Problem sizes, smallest first.
    pub n: Vec<f64>,
    /// Runs per size; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: vec![1e4, 2e4, 4e4],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n")]
    pub n: f64,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_pi1")]
    pub pi1: f64,
    /// SL signal strength.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Within-community edge probability (PDS: only community 1).
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    /// Solve `mu` (SL) or `p` (PDS, SBM) so that `lambda nu_d D+` hits this.
    #[serde(default)]
    pub threshold_ratio: Option<f64>,
    /// Full kernel for the custom preset.
    #[serde(default)]
    pub kernel: Option<ObservationKernel>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_lambda() -> f64 {
    2.0
}
fn default_n() -> f64 {
    1e4
}
fn default_d() -> usize {
    2
}
fn default_pi1() -> f64 {
    0.5
}
fn default_trials() -> usize {
    20
}

/// A fully resolved sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    /// `(name, value)` for every sweep axis, in axis order.
    pub values: Vec<(String, f64)>,
    pub params: ModelParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| GhcmError::config(e.to_string()))?;
        cfg.points()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GhcmError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "lambda" => self.lambda = value,
            "n" => self.n = value,
            "d" => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(GhcmError::config(format!(
                        "d must be a positive integer, got {value}"
                    )));
                }
                self.d = value as usize;
            }
            "pi1" => self.pi1 = value,
            "mu" => self.mu = Some(value),
            "p" => self.p = Some(value),
            "q" => self.q = Some(value),
            "threshold_ratio" => self.threshold_ratio = Some(value),
            other => {
                return Err(GhcmError::config(format!(
                    "unknown sweep parameter `{other}`; expected one of {}",
                    SWEEP_PARAMS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Model parameters for the base (unswept) configuration.
    pub fn params(&self) -> Result<ModelParams> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| GhcmError::config(format!("preset {} needs `{name}`", self.preset)))
        };
        let exclusive = |field: Option<f64>, name: &str| {
            if field.is_some() && self.threshold_ratio.is_some() {
                Err(GhcmError::config(format!(
                    "give either `{name}` or `threshold_ratio`, not both"
                )))
            } else {
                Ok(())
            }
        };
        let params = match self.preset {
            Preset::GeometricSl => {
                exclusive(self.mu, "mu")?;
                let build =
                    |mu| ModelParams::geometric_sl(self.lambda, self.n, self.d, self.pi1, mu);
                match self.threshold_ratio {
                    Some(target) => solve_for_ratio(build, 0.0, 40.0, target)?,
                    None => build(need(self.mu, "mu")?),
                }
            }
            Preset::GeometricPds | Preset::SymmetricSbm => {
                exclusive(self.p, "p")?;
                let q = need(self.q, "q")?;
                let sbm = self.preset == Preset::SymmetricSbm;
                let build = |p| {
                    if sbm {
                        let kernel = ObservationKernel::from_upper(
                            DistributionSpec::bernoulli(p),
                            DistributionSpec::bernoulli(q),
                            DistributionSpec::bernoulli(p),
                        )
                        .expect("bernoulli kernel");
                        ModelParams {
                            lambda: self.lambda,
                            n: self.n,
                            d: self.d,
                            pi: [self.pi1, 1.0 - self.pi1],
                            kernel,
                        }
                    } else {
                        ModelParams::geometric_pds(self.lambda, self.n, self.d, self.pi1, p, q)
                    }
                };
                match self.threshold_ratio {
                    Some(target) => solve_for_ratio(build, q, 1.0, target)?,
                    None => {
                        let p = need(self.p, "p")?;
                        if p < q {
                            return Err(GhcmError::config(format!(
                                "preset needs q <= p, got p = {p}, q = {q}"
                            )));
                        }
                        build(p)
                    }
                }
            }
            Preset::Custom => {
                if self.threshold_ratio.is_some() {
                    return Err(GhcmError::config(
                        "threshold_ratio cannot be solved for a custom kernel",
                    ));
                }
                let kernel = self
                    .kernel
                    .clone()
                    .ok_or_else(|| GhcmError::config("preset custom needs `kernel`"))?;
                ModelParams::new(self.lambda, self.n, self.d, self.pi1, kernel)?
            }
        };
        if self.kernel.is_some() && self.preset != Preset::Custom {
            return Err(GhcmError::config(
                "`kernel` is only allowed with preset custom",
            ));
        }
        params.validate()?;
        Ok(params)
    }

    /// Every sweep point, first axis slowest. Without axes there is one point.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        for axis in &self.sweep {
            if !SWEEP_PARAMS.contains(&axis.param.as_str()) {
                return Err(GhcmError::config(format!(
                    "unknown sweep parameter `{}`",
                    axis.param
                )));
            }
            if axis.values.is_empty() {
                return Err(GhcmError::config(format!(
                    "sweep axis `{}` has no values",
                    axis.param
                )));
            }
        }
        let total: usize = self.sweep.iter().map(|a| a.values.len()).product();
        (0..total)
            .map(|index| {
                let mut cfg = self.clone();
                let mut rest = index;
                let mut values = vec![(String::new(), 0.0); self.sweep.len()];
                for (k, axis) in self.sweep.iter().enumerate().rev() {
                    let v = axis.values[rest % axis.values.len()];
                    rest /= axis.values.len();
                    values[k] = (axis.param.clone(), v);
                }
                // A swept threshold ratio replaces an explicit mu or p.
                if values.iter().any(|(name, _)| name == "threshold_ratio") {
                    match cfg.preset {
                        Preset::GeometricSl => cfg.mu = None,
                        _ => cfg.p = None,
                    }
                }
                for (name, v) in &values {
                    cfg.set(name, *v)?;
                }
                let params = cfg.params().map_err(|e| match e {
                    GhcmError::Config(msg) if !values.is_empty() => {
                        GhcmError::config(format!("sweep point {index} {values:?}: {msg}"))
                    }
                    other => other,
                })?;
                Ok(SweepPoint {
                    index,
                    values,
                    params,
                })
            })
            .collect()
    }
}

/// Finds the parameter in `[lo, hi]` at which `build(x)` has the requested
/// threshold ratio. The ratio must be increasing in the parameter.
pub fn solve_for_ratio(
    build: impl Fn(f64) -> ModelParams,
    lo: f64,
    hi: f64,
    target: f64,
) -> Result<ModelParams> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(GhcmError::config(format!(
            "threshold_ratio must be non-negative, got {target}"
        )));
    }
    let ratio = |x: f64| it_threshold(&build(x)).map(|r| r.threshold_ratio);
    let top = ratio(hi)?;
    if target > top {
        return Err(GhcmError::config(format!(
            "threshold_ratio {target} is out of reach: the supremum at these parameters is {top}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if ratio(mid)? < target {
            a = mid;
        } else {
            b = mid;
        }
    }
    // Whichever end is closer in ratio.
    let x = if (ratio(a)? - target).abs() <= (ratio(b)? - target).abs() {
        a
    } else {
        b
    };
    Ok(build(x))
}
