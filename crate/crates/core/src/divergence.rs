//! Chernoff-Hellinger divergence, the exact-recovery threshold and the
//! block-partition constants used by Phase I.

use serde::{Deserialize, Serialize};

use crate::distributions::{equal_specs, DistributionSpec};
use crate::error::{GhcmError, Result};
use crate::model::{Label, ModelParams};

/// Volume of the unit Euclidean ball in `R^d`, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    // nu_d = 2 pi / d * nu_{d-2}, nu_0 = 1, nu_1 = 2.
    let (mut v, start) = if d.is_multiple_of(2) {
        (1.0, 2)
    } else {
        (2.0, 3)
    };
    let mut k = start;
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

const QUAD_NODES: usize = 20_001;
const QUAD_HALF_WIDTH_SD: f64 = 12.0;

/// `sum_x p(x)^t q(x)^(1-t)` (or the integral, for Gaussians).
pub fn bhattacharyya_t(p: &DistributionSpec, q: &DistributionSpec, t: f64) -> Result<f64> {
    use DistributionSpec::*;
    check_t(t)?;
    if equal_specs(p, q) {
        return Ok(1.0);
    }
    match (p, q) {
        (Bernoulli { p: a }, Bernoulli { p: b }) => {
            Ok(a.powf(t) * b.powf(1.0 - t) + (1.0 - a).powf(t) * (1.0 - b).powf(1.0 - t))
        }
        (Gaussian { mean: m1, var: v1 }, Gaussian { mean: m2, var: v2 }) if v1 == v2 => {
            let diff = m1 - m2;
            Ok((-t * (1.0 - t) * diff * diff / (2.0 * v1)).exp())
        }
        (Gaussian { .. }, Gaussian { .. }) => bhattacharyya_t_quadrature(p, q, t),
        _ if p.is_discrete() && q.is_discrete() => bhattacharyya_t_summation(p, q, t),
        _ => Err(GhcmError::UnsupportedKernel(format!(
            "cannot mix discrete and continuous distributions: {p:?} vs {q:?}"
        ))),
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(GhcmError::contract(format!("t = {t} outside [0, 1]")))
    }
}

/// Exact summation over the union of the two supports.
pub fn bhattacharyya_t_summation(
    p: &DistributionSpec,
    q: &DistributionSpec,
    t: f64,
) -> Result<f64> {
    check_t(t)?;
    let (Some(pa), Some(qa)) = (p.atoms(), q.atoms()) else {
        return Err(GhcmError::UnsupportedKernel(
            "summation needs discrete distributions".into(),
        ));
    };
    let mass = |atoms: &[(f64, f64)], x: f64| {
        atoms
            .iter()
            .filter(|(y, _)| *y == x)
            .map(|(_, m)| m)
            .sum::<f64>()
    };
    let mut support: Vec<f64> = pa.iter().chain(&qa).map(|(x, _)| *x).collect();
    support.sort_by(f64::total_cmp);
    support.dedup();
    Ok(support
        .into_iter()
        .map(|x| mass(&pa, x).powf(t) * mass(&qa, x).powf(1.0 - t))
        .sum())
}

/// Composite Simpson quadrature of `p^t q^(1-t)` for Gaussian pairs.
pub fn bhattacharyya_t_quadrature(
    p: &DistributionSpec,
    q: &DistributionSpec,
    t: f64,
) -> Result<f64> {
    check_t(t)?;
    let (
        DistributionSpec::Gaussian { mean: m1, var: v1 },
        DistributionSpec::Gaussian { mean: m2, var: v2 },
    ) = (p, q)
    else {
        return Err(GhcmError::UnsupportedKernel(
            "quadrature is only defined for gaussian pairs".into(),
        ));
    };
    let sd = v1.max(*v2).sqrt();
    let lo = m1.min(*m2) - QUAD_HALF_WIDTH_SD * sd;
    let hi = m1.max(*m2) + QUAD_HALF_WIDTH_SD * sd;
    Ok(simpson(lo, hi, QUAD_NODES, |x| {
        (t * p.log_density(x) + (1.0 - t) * q.log_density(x)).exp()
    }))
}

/// Composite Simpson rule with an odd number of nodes.
pub(crate) fn simpson(lo: f64, hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(nodes >= 3 && nodes % 2 == 1);
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..nodes - 1 {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

const GRID_POINTS: usize = 65;
const SEARCH_WIDTH: f64 = 1e-12;

/// Minimizes a convex function on `[0, 1]`: uniform grid seed, then ternary
/// search on the bracket around the best grid point.
fn minimize_on_unit_interval(g: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let step = 1.0 / (GRID_POINTS - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let v = g(i as f64 * step)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (mut lo, mut hi) = (
        best.0.saturating_sub(1) as f64 * step,
        (best.0 + 1).min(GRID_POINTS - 1) as f64 * step,
    );
    while hi - lo > SEARCH_WIDTH {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if g(a)? <= g(b)? {
            hi = b;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    let v = g(t)?;
    if v <= best.1 {
        Ok((t, v))
    } else {
        Ok((best.0 as f64 * step, best.1))
    }
}

/// Chernoff-Hellinger divergence `D+(theta_p, theta_q)` under prior `pi`,
/// with the minimizing `t`.
pub fn ch_divergence(
    theta_p: &[DistributionSpec; 2],
    theta_q: &[DistributionSpec; 2],
    pi: [f64; 2],
) -> Result<(f64, f64)> {
    let g = |t: f64| -> Result<f64> {
        Ok(pi[0] * bhattacharyya_t(&theta_p[0], &theta_q[0], t)?
            + pi[1] * bhattacharyya_t(&theta_p[1], &theta_q[1], t)?)
    };
    let (t, v) = minimize_on_unit_interval(g)?;
    Ok(((1.0 - v).clamp(0.0, 1.0), t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Above,
    Below,
    Critical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Above => "above",
            Regime::Below => "below",
            Regime::Critical => "critical",
        })
    }
}

/// Where a parameterization sits relative to the exact-recovery threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub nu_d: f64,
    pub d_plus: f64,
    /// `lambda * nu_d * min D+`.
    pub threshold_ratio: f64,
    pub argmin_t: f64,
    pub regime: Regime,
    /// `pi_1 * lambda * nu_d`; above one, almost exact recovery is possible.
    pub almost_exact_ratio: f64,
    pub almost_exact: bool,
}

pub fn it_threshold(params: &ModelParams) -> Result<ThresholdReport> {
    let nu_d = unit_ball_volume(params.d);
    let k = &params.kernel;
    let forward = ch_divergence(k.row(Label::One), k.row(Label::Two), params.pi)?;
    let backward = ch_divergence(k.row(Label::Two), k.row(Label::One), params.pi)?;
    let (d_plus, argmin_t) = if backward.0 < forward.0 {
        backward
    } else {
        forward
    };
    let threshold_ratio = params.lambda * nu_d * d_plus;
    let regime = if (threshold_ratio - 1.0).abs() <= 1e-9 {
        Regime::Critical
    } else if threshold_ratio > 1.0 {
        Regime::Above
    } else {
        Regime::Below
    };
    let almost_exact_ratio = params.pi[0] * params.lambda * nu_d;
    Ok(ThresholdReport {
        nu_d,
        d_plus,
        threshold_ratio,
        argmin_t,
        regime,
        almost_exact_ratio,
        almost_exact: almost_exact_ratio > 1.0,
    })
}

/// Knobs for [`choose_constants`]. Any explicit `chi`, `delta` or `epsilon0`
/// replaces the derived value and is then checked like a derived one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub safety: f64,
    pub delta_tilde: f64,
    pub chi: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon0: Option<f64>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            safety: 0.9,
            delta_tilde: 0.5,
            chi: None,
            delta: None,
            epsilon0: None,
        }
    }
}

/// Block volume factor `chi`, occupancy factor `delta` and seed fraction
/// `epsilon0` for an effective intensity `lambda_prime`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConstants {
    pub chi: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub r_d: f64,
    pub lambda_prime: f64,
    pub epsilon0: f64,
    pub d: usize,
    pub nu_d: f64,
}

impl PhaseConstants {
    /// Left side minus right side of the first block-size condition
    /// `nu_d (1 - 3 sqrt(d) chi^(1/d) / 2)^d >= (nu_d + 1/lambda') / 2`.
    fn occupancy_margin(chi: f64, d: usize, nu_d: f64, lambda_prime: f64) -> f64 {
        let inner = 1.0 - 3.0 * (d as f64).sqrt() * chi.powf(1.0 / d as f64) / 2.0;
        if inner <= 0.0 {
            return f64::NEG_INFINITY;
        }
        nu_d * inner.powi(d as i32) - (nu_d + 1.0 / lambda_prime) / 2.0
    }

    /// Every violated condition, empty when the constants are admissible.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (chi, d, nu, lp) = (self.chi, self.d, self.nu_d, self.lambda_prime);
        let inner = 1.0 - 3.0 * (d as f64).sqrt() * chi.powf(1.0 / d as f64) / 2.0;
        if !(inner > 0.0 && nu * inner.powi(d as i32) >= (nu + 1.0 / lp) / 2.0) {
            out.push(format!("chi = {chi} violates nu_d (1 - 3 sqrt(d) chi^(1/d) / 2)^d >= (nu_d + 1/lambda') / 2"));
        }
        if !(chi > 0.0 && chi < (nu - 1.0 / lp) / 2.0) {
            out.push(format!("chi = {chi} outside (0, (nu_d - 1/lambda') / 2)"));
        }
        let r_d = 1.0 - (d as f64).sqrt() * chi.powf(1.0 / d as f64) / 2.0;
        if (r_d - self.r_d).abs() > 1e-12 {
            out.push(format!(
                "r_d = {} does not match 1 - sqrt(d) chi^(1/d) / 2 = {r_d}",
                self.r_d
            ));
        }
        let delta_bound = self.delta_tilde * chi / (nu * r_d);
        if !(self.delta > 0.0 && self.delta < delta_bound) {
            out.push(format!("delta = {} outside (0, {delta_bound})", self.delta));
        }
        let eps_bound = (1.0 / (2.0 * std::f64::consts::LN_2)).min(self.delta);
        if !(self.epsilon0 > 0.0 && self.epsilon0 <= eps_bound) {
            out.push(format!(
                "epsilon0 = {} outside (0, {eps_bound}]",
                self.epsilon0
            ));
        }
        if !(chi < (2.0 / (3.0 * (d as f64).sqrt())).powi(d as i32)) {
            out.push(format!("chi = {chi} too large for within-block visibility"));
        }
        out
    }
}

/// Derives admissible `(chi, delta, epsilon0)` for effective intensity
/// `lambda_prime` in dimension `d`.
pub fn choose_constants(
    lambda_prime: f64,
    d: usize,
    cfg: &ConstantsConfig,
) -> Result<PhaseConstants> {
    let nu_d = unit_ball_volume(d);
    let lambda_nu = lambda_prime * nu_d;
    if !(lambda_nu > 1.0) {
        return Err(GhcmError::Infeasible { lambda_nu });
    }
    if !(cfg.safety > 0.0 && cfg.safety < 1.0) {
        return Err(GhcmError::config(format!(
            "safety must lie in (0, 1), got {}",
            cfg.safety
        )));
    }
    if !(cfg.delta_tilde > 0.0) {
        return Err(GhcmError::config(format!(
            "delta_tilde must be positive, got {}",
            cfg.delta_tilde
        )));
    }

    let chi = match cfg.chi {
        Some(chi) => chi,
        None => {
            // The occupancy margin is decreasing in chi and positive at 0.
            let mut lo = 0.0;
            let mut hi = (2.0 / (3.0 * (d as f64).sqrt())).powi(d as i32);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if PhaseConstants::occupancy_margin(mid, d, nu_d, lambda_prime) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let chi_star = lo.min((nu_d - 1.0 / lambda_prime) / 2.0);
            cfg.safety * chi_star
        }
    };
    let r_d = 1.0 - (d as f64).sqrt() * chi.powf(1.0 / d as f64) / 2.0;
    let delta = match cfg.delta {
        Some(delta) => delta,
        None => {
            let bound = cfg.delta_tilde * chi / (nu_d * r_d);
            // Half the expected C*-count of a block's inner ball, keeping occupancy likely.
            let cap = chi * lambda_prime * nu_d * r_d.powi(d as i32) / 2.0;
            cfg.safety * bound.min(cap)
        }
    };
    let epsilon0 = cfg
        .epsilon0
        .unwrap_or_else(|| (1.0 / (2.0 * std::f64::consts::LN_2)).min(delta));
    let consts = PhaseConstants {
        chi,
        delta,
        delta_tilde: cfg.delta_tilde,
        r_d,
        lambda_prime,
        epsilon0,
        d,
        nu_d,
    };
    let problems = consts.violations();
    if !problems.is_empty() {
        return Err(GhcmError::config(problems.join("; ")));
    }
    Ok(consts)
}
