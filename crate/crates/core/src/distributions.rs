//! Pairwise observation distributions and the 2x2 observation kernel.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GhcmError, Result};
use crate::model::Label;

const PARAM_TOL: f64 = 1e-12;

/// Distribution of a single pairwise observation `Y_uv`.
///
/// Bernoulli draws are encoded as `0.0` / `1.0` so every kernel shares one
/// observation container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DistributionSpec {
    Bernoulli { p: f64 },
    Gaussian { mean: f64, var: f64 },
    Pmf { support: Vec<f64>, probs: Vec<f64> },
}

impl DistributionSpec {
    pub fn bernoulli(p: f64) -> Self {
        DistributionSpec::Bernoulli { p }
    }

    pub fn gaussian(mean: f64, var: f64) -> Self {
        DistributionSpec::Gaussian { mean, var }
    }

    pub fn pmf(support: Vec<f64>, probs: Vec<f64>) -> Self {
        DistributionSpec::Pmf { support, probs }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(GhcmError::config(format!(
                        "bernoulli p = {p} outside [0, 1]"
                    )));
                }
            }
            DistributionSpec::Gaussian { mean, var } => {
                if !mean.is_finite() || !(*var > 0.0) || !var.is_finite() {
                    return Err(GhcmError::config(format!(
                        "gaussian needs finite mean and positive variance, got mean = {mean}, var = {var}"
                    )));
                }
            }
            DistributionSpec::Pmf { support, probs } => {
                if support.is_empty() || support.len() != probs.len() {
                    return Err(GhcmError::config(
                        "pmf support and probs must be non-empty and equally long",
                    ));
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(GhcmError::config("pmf probabilities must lie in [0, 1]"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PARAM_TOL {
                    return Err(GhcmError::config(format!(
                        "pmf probabilities sum to {total}, not 1"
                    )));
                }
                if support.iter().any(|x| !x.is_finite()) {
                    return Err(GhcmError::config("pmf support values must be finite"));
                }
                let mut sorted = support.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(GhcmError::config("pmf support values must be distinct"));
                }
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, DistributionSpec::Gaussian { .. })
    }

    /// Atoms with their masses, for discrete specs.
    pub(crate) fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            DistributionSpec::Bernoulli { p } => Some(vec![(0.0, 1.0 - p), (1.0, *p)]),
            DistributionSpec::Pmf { support, probs } => {
                Some(support.iter().copied().zip(probs.iter().copied()).collect())
            }
            DistributionSpec::Gaussian { .. } => None,
        }
    }

    /// Natural-log mass or density at `y`; `-inf` off the support.
    pub fn log_density(&self, y: f64) -> f64 {
        match self {
            DistributionSpec::Bernoulli { p } => {
                if y == 1.0 {
                    p.ln()
                } else if y == 0.0 {
                    (1.0 - p).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            DistributionSpec::Gaussian { mean, var } => {
                let z = y - mean;
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - z * z / (2.0 * var)
            }
            DistributionSpec::Pmf { support, probs } => support
                .iter()
                .position(|&x| x == y)
                .map_or(f64::NEG_INFINITY, |i| probs[i].ln()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Bernoulli { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionSpec::Gaussian { mean, var } => Normal::new(*mean, var.sqrt())
                .expect("validated gaussian")
                .sample(rng),
            DistributionSpec::Pmf { support, probs } => {
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (x, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *x;
                    }
                }
                // Rounding left a sliver above the cumulative sum.
                let last = probs
                    .iter()
                    .rposition(|&p| p > 0.0)
                    .unwrap_or(probs.len() - 1);
                support[last]
            }
        }
    }
}

/// Structural equality of two specs: same variant, parameters within 1e-12.
pub fn equal_specs(a: &DistributionSpec, b: &DistributionSpec) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= PARAM_TOL;
    match (a, b) {
        (DistributionSpec::Bernoulli { p: x }, DistributionSpec::Bernoulli { p: y }) => {
            close(*x, *y)
        }
        (
            DistributionSpec::Gaussian { mean: m1, var: v1 },
            DistributionSpec::Gaussian { mean: m2, var: v2 },
        ) => close(*m1, *m2) && close(*v1, *v2),
        (
            DistributionSpec::Pmf {
                support: s1,
                probs: p1,
            },
            DistributionSpec::Pmf {
                support: s2,
                probs: p2,
            },
        ) => {
            s1.len() == s2.len()
                && s1.iter().zip(s2).all(|(x, y)| close(*x, *y))
                && p1.iter().zip(p2).all(|(x, y)| close(*x, *y))
        }
        _ => false,
    }
}

/// The symmetric 2x2 matrix of observation distributions, indexed by labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "[[DistributionSpec; 2]; 2]",
    into = "[[DistributionSpec; 2]; 2]"
)]
pub struct ObservationKernel {
    entries: [[DistributionSpec; 2]; 2],
}

impl ObservationKernel {
    pub fn new(entries: [[DistributionSpec; 2]; 2]) -> Result<Self> {
        for row in &entries {
            for spec in row {
                spec.validate()?;
            }
        }
        if !equal_specs(&entries[0][1], &entries[1][0]) {
            return Err(GhcmError::config(
                "kernel must be symmetric: P12 differs from P21",
            ));
        }
        let discrete = entries.iter().flatten().filter(|s| s.is_discrete()).count();
        if discrete != 0 && discrete != 4 {
            return Err(GhcmError::UnsupportedKernel(
                "kernel mixes discrete and continuous entries".into(),
            ));
        }
        Ok(ObservationKernel { entries })
    }

    /// `P11`, `P12 = P21`, `P22`.
    pub fn from_upper(
        p11: DistributionSpec,
        p12: DistributionSpec,
        p22: DistributionSpec,
    ) -> Result<Self> {
        ObservationKernel::new([[p11, p12.clone()], [p12, p22]])
    }

    #[inline]
    pub fn get(&self, a: Label, b: Label) -> &DistributionSpec {
        &self.entries[a.index()][b.index()]
    }

    pub fn entries(&self) -> &[[DistributionSpec; 2]; 2] {
        &self.entries
    }

    /// Row `theta_i = (P_i1, P_i2)`.
    pub fn row(&self, a: Label) -> &[DistributionSpec; 2] {
        &self.entries[a.index()]
    }

    /// `P11 != P12` and `P21 = P22`: the regime the recovery algorithm targets.
    pub fn is_asymmetric2(&self) -> bool {
        !equal_specs(&self.entries[0][0], &self.entries[0][1])
            && equal_specs(&self.entries[1][0], &self.entries[1][1])
    }
}

impl TryFrom<[[DistributionSpec; 2]; 2]> for ObservationKernel {
    type Error = GhcmError;

    fn try_from(entries: [[DistributionSpec; 2]; 2]) -> Result<Self> {
        ObservationKernel::new(entries)
    }
}

impl From<ObservationKernel> for [[DistributionSpec; 2]; 2] {
    fn from(k: ObservationKernel) -> Self {
        k.entries
    }
}
