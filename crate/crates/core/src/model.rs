//! Model parameters, sampled instances and the GHCM sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, ObservationKernel};
use crate::divergence::unit_ball_volume;
use crate::error::{GhcmError, Result};
use crate::geometry::{sort_spatially, visible_pairs, Torus, TorusPoint};

/// Community label. `One` is the planted community `C*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    One,
    Two,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::One, Label::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Label::One => 0,
            Label::Two => 1,
        }
    }

    pub fn as_u8(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::One => Label::Two,
            Label::Two => Label::One,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = GhcmError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Label::One),
            2 => Ok(Label::Two),
            other => Err(GhcmError::format(format!(
                "label must be 1 or 2, got {other}"
            ))),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

/// Parameters of `GHCM(lambda, n, pi, P, d)` with two communities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Intensity of the Poisson point process.
    pub lambda: f64,
    /// Volume of the torus.
    pub n: f64,
    pub d: usize,
    pub pi: [f64; 2],
    pub kernel: ObservationKernel,
}

impl ModelParams {
    pub fn new(lambda: f64, n: f64, d: usize, pi1: f64, kernel: ObservationKernel) -> Result<Self> {
        let params = ModelParams {
            lambda,
            n,
            d,
            pi: [pi1, 1.0 - pi1],
            kernel,
        };
        params.validate()?;
        Ok(params)
    }

    /// Geometric submatrix localization: `P11 = N(mu, 1)`, everything else `N(0, 1)`.
    pub fn geometric_sl(lambda: f64, n: f64, d: usize, pi1: f64, mu: f64) -> Self {
        let kernel = ObservationKernel::from_upper(
            DistributionSpec::gaussian(mu, 1.0),
            DistributionSpec::gaussian(0.0, 1.0),
            DistributionSpec::gaussian(0.0, 1.0),
        )
        .expect("gaussian kernel");
        ModelParams {
            lambda,
            n,
            d,
            pi: [pi1, 1.0 - pi1],
            kernel,
        }
    }

    /// Geometric planted dense subgraph: `P11 = Bern(p)`, everything else `Bern(q)`.
    pub fn geometric_pds(lambda: f64, n: f64, d: usize, pi1: f64, p: f64, q: f64) -> Self {
        let kernel = ObservationKernel::from_upper(
            DistributionSpec::bernoulli(p),
            DistributionSpec::bernoulli(q),
            DistributionSpec::bernoulli(q),
        )
        .expect("bernoulli kernel");
        ModelParams {
            lambda,
            n,
            d,
            pi: [pi1, 1.0 - pi1],
            kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(GhcmError::config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.n > 1.0) || !self.n.is_finite() {
            return Err(GhcmError::config(format!(
                "n must exceed 1, got {}",
                self.n
            )));
        }
        if self.d < 2 {
            return Err(GhcmError::config(format!(
                "dimension must be at least 2, got {}",
                self.d
            )));
        }
        let [p1, p2] = self.pi;
        if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || (p1 + p2 - 1.0).abs() > 1e-12
        {
            return Err(GhcmError::config(format!(
                "prior {:?} is not a probability vector",
                self.pi
            )));
        }
        for spec in self.kernel.entries().iter().flatten() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn torus(&self) -> Torus {
        Torus::from_params(self)
    }

    pub fn prior(&self, l: Label) -> f64 {
        self.pi[l.index()]
    }

    /// Expected number of ordered visible pairs, `lambda n * lambda nu_d ln n`.
    pub fn expected_ordered_pairs(&self) -> f64 {
        self.lambda * self.n * self.lambda * unit_ball_volume(self.d) * self.n.ln()
    }
}

/// Sparse symmetric observations, one value per unordered visible pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pairs: Vec<(u32, u32)>,
    values: Vec<f64>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    edge_of: Vec<u32>,
}

impl Observations {
    /// `pairs` must be sorted with `u < v`, parallel to `values`.
    pub fn from_sorted(
        vertex_count: usize,
        pairs: Vec<(u32, u32)>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if pairs.len() != values.len() {
            return Err(GhcmError::contract("pairs and values differ in length"));
        }
        if pairs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GhcmError::contract("pairs must be strictly increasing"));
        }
        if let Some(&(u, v)) = pairs
            .iter()
            .find(|(u, v)| u >= v || *v as usize >= vertex_count)
        {
            return Err(GhcmError::contract(format!("invalid pair ({u}, {v})")));
        }
        let mut offsets = vec![0usize; vertex_count + 1];
        for &(u, v) in &pairs {
            offsets[u as usize + 1] += 1;
            offsets[v as usize + 1] += 1;
        }
        for i in 0..vertex_count {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0u32; 2 * pairs.len()];
        let mut edge_of = vec![0u32; 2 * pairs.len()];
        // Pairs are sorted, so every adjacency list is filled in ascending order.
        for (e, &(u, v)) in pairs.iter().enumerate() {
            neighbors[fill[u as usize]] = v;
            edge_of[fill[u as usize]] = e as u32;
            fill[u as usize] += 1;
            neighbors[fill[v as usize]] = u;
            edge_of[fill[v as usize]] = e as u32;
            fill[v as usize] += 1;
        }
        Ok(Observations {
            pairs,
            values,
            offsets,
            neighbors,
            edge_of,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Y_uv`, if `u` and `v` are visible to each other.
    #[inline]
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        let (lo, hi) = (self.offsets[u as usize], self.offsets[u as usize + 1]);
        self.neighbors[lo..hi]
            .binary_search(&v)
            .ok()
            .map(|k| self.values[self.edge_of[lo + k] as usize])
    }

    /// Visible neighbors of `u` with their observations, ascending by id.
    pub fn neighbors(&self, u: u32) -> impl Iterator<Item = (u32, f64)> + '_ {
        let (lo, hi) = (self.offsets[u as usize], self.offsets[u as usize + 1]);
        self.neighbors[lo..hi]
            .iter()
            .zip(&self.edge_of[lo..hi])
            .map(move |(&v, &e)| (v, self.values[e as usize]))
    }

    pub fn degree(&self, u: u32) -> usize {
        self.offsets[u as usize + 1] - self.offsets[u as usize]
    }
}

/// The observable part of an instance: positions and pairwise observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PublicInstance {
    pub params: ModelParams,
    pub positions: Vec<TorusPoint>,
    pub observations: Observations,
}

impl PublicInstance {
    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }
}

/// A realized instance including the hidden community labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInstance {
    public: PublicInstance,
    true_labels: Vec<Label>,
    pub seed: u64,
}

impl SampleInstance {
    pub fn from_parts(public: PublicInstance, true_labels: Vec<Label>, seed: u64) -> Result<Self> {
        if public.positions.len() != true_labels.len()
            || public.observations.vertex_count() != true_labels.len()
        {
            return Err(GhcmError::contract(
                "positions, labels and observations disagree on vertex count",
            ));
        }
        Ok(SampleInstance {
            public,
            true_labels,
            seed,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.public.params
    }

    pub fn positions(&self) -> &[TorusPoint] {
        &self.public.positions
    }

    pub fn observations(&self) -> &Observations {
        &self.public.observations
    }

    pub fn true_labels(&self) -> &[Label] {
        &self.true_labels
    }

    pub fn vertex_count(&self) -> usize {
        self.true_labels.len()
    }

    pub fn into_parts(self) -> (PublicInstance, Vec<Label>, u64) {
        (self.public, self.true_labels, self.seed)
    }
}

/// The label-free view handed to recovery algorithms.
pub fn strip_labels(inst: &SampleInstance) -> &PublicInstance {
    &inst.public
}

/// Refuse to sample when `lambda n * lambda nu_d ln n` exceeds this.
pub const DEFAULT_PAIR_CAP: f64 = 4e8;

// Sub-stream ids of the master seed.
const STREAM_COUNT: u64 = 0;
const STREAM_POSITIONS: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_OBSERVATIONS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Samples `GHCM(lambda, n, pi, P, d)` from a single master seed.
pub fn sample_ghcm(params: &ModelParams, seed: u64) -> Result<SampleInstance> {
    sample_ghcm_capped(params, seed, DEFAULT_PAIR_CAP)
}

pub fn sample_ghcm_capped(
    params: &ModelParams,
    seed: u64,
    pair_cap: f64,
) -> Result<SampleInstance> {
    params.validate()?;
    let expected = params.expected_ordered_pairs();
    if expected > pair_cap {
        return Err(GhcmError::Guard(format!(
            "expected {expected:.3e} ordered visible pairs exceeds cap {pair_cap:.3e}"
        )));
    }
    let torus = params.torus();

    let mean = params.lambda * params.n;
    let count = Poisson::new(mean)
        .map_err(|e| GhcmError::config(format!("poisson mean {mean}: {e}")))?
        .sample(&mut stream(seed, STREAM_COUNT)) as usize;

    let mut rng = stream(seed, STREAM_POSITIONS);
    let half = torus.side / 2.0;
    let mut positions: Vec<TorusPoint> = (0..count)
        .map(|_| {
            let c = (0..params.d)
                .map(|_| rng.random::<f64>() * torus.side - half)
                .collect();
            TorusPoint::wrapped(c, torus.side)
        })
        .collect();
    // Ids follow space; the points stay i.i.d. uniform as a set.
    sort_spatially(&mut positions, &torus);

    let mut rng = stream(seed, STREAM_LABELS);
    let labels: Vec<Label> = (0..count)
        .map(|_| {
            if rng.random::<f64>() < params.pi[0] {
                Label::One
            } else {
                Label::Two
            }
        })
        .collect();

    let pairs = visible_pairs(&positions, &torus);
    let mut rng = stream(seed, STREAM_OBSERVATIONS);
    let values: Vec<f64> = pairs
        .iter()
        .map(|&(u, v)| {
            params
                .kernel
                .get(labels[u as usize], labels[v as usize])
                .sample(&mut rng)
        })
        .collect();

    let observations = Observations::from_sorted(count, pairs, values)?;
    SampleInstance::from_parts(
        PublicInstance {
            params: params.clone(),
            positions,
            observations,
        },
        labels,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::torus_distance;

    fn sl(lambda: f64, n: f64, pi1: f64) -> ModelParams {
        ModelParams::geometric_sl(lambda, n, 2, pi1, 2.0)
    }

    #[test]
    fn vertex_count_is_poisson() {
        let params = sl(2.0, 1000.0, 0.5);
        let seeds = 200;
        let total: usize = (0..seeds)
            .map(|s| sample_ghcm(&params, s).unwrap().vertex_count())
            .sum();
        let mean = total as f64 / seeds as f64;
        assert!(
            (mean - 2000.0).abs() <= 3.0 * (2000.0f64 / seeds as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn observations_exactly_on_visible_pairs() {
        let params = sl(1.0, 300.0, 0.5);
        let inst = sample_ghcm(&params, 4).unwrap();
        let torus = params.torus();
        let pos = inst.positions();
        let obs = inst.observations();
        for u in 0..pos.len() as u32 {
            for v in 0..pos.len() as u32 {
                if u == v {
                    continue;
                }
                let dist = torus_distance(&pos[u as usize], &pos[v as usize], torus.side).unwrap();
                assert_eq!(obs.get(u, v).is_some(), dist <= torus.radius);
                assert_eq!(obs.get(u, v), obs.get(v, u));
            }
        }
        let strip = strip_labels(&inst);
        assert_eq!(strip.observations.pairs(), obs.pairs());
    }

    #[test]
    fn reproducible_and_paired_across_kernels() {
        let a = sample_ghcm(&sl(2.0, 500.0, 0.5), 42).unwrap();
        let b = sample_ghcm(&sl(2.0, 500.0, 0.5), 42).unwrap();
        assert_eq!(a, b);
        let c = sample_ghcm(
            &ModelParams::geometric_pds(2.0, 500.0, 2, 0.5, 0.9, 0.1),
            42,
        )
        .unwrap();
        assert_eq!(a.positions(), c.positions());
        assert_eq!(a.true_labels(), c.true_labels());
        assert_ne!(a.observations().values(), c.observations().values());
    }

    #[test]
    fn degenerate_prior() {
        let inst = sample_ghcm(&sl(2.0, 200.0, 1.0), 3).unwrap();
        assert!(inst.true_labels().iter().all(|&l| l == Label::One));
    }

    #[test]
    fn label_frequency_matches_prior() {
        let inst = sample_ghcm(&sl(2.0, 20000.0, 0.3), 8).unwrap();
        let n = inst.vertex_count() as f64;
        let f = inst
            .true_labels()
            .iter()
            .filter(|&&l| l == Label::One)
            .count() as f64
            / n;
        assert!((f - 0.3).abs() <= 4.0 * (0.3f64 * 0.7 / n).sqrt(), "{f}");
    }

    #[test]
    fn within_community_observations_follow_p11() {
        let inst = sample_ghcm(&ModelParams::geometric_sl(2.0, 5000.0, 2, 0.5, 1.7), 12).unwrap();
        let labels = inst.true_labels();
        let ys: Vec<f64> = inst
            .observations()
            .pairs()
            .iter()
            .zip(inst.observations().values())
            .filter(|((u, v), _)| {
                labels[*u as usize] == Label::One && labels[*v as usize] == Label::One
            })
            .map(|(_, &y)| y)
            .collect();
        assert!(ys.len() >= 10_000, "{}", ys.len());
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!(
            (mean - 1.7).abs() <= 4.0 / (ys.len() as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn degree_is_order_log_n() {
        let params = sl(2.0, 20000.0, 0.5);
        let inst = sample_ghcm(&params, 1).unwrap();
        let obs = inst.observations();
        let max = (0..inst.vertex_count() as u32)
            .map(|u| obs.degree(u))
            .max()
            .unwrap();
        // Mean degree is lambda * pi * ln n ~ 62; allow a generous constant.
        assert!(
            (max as f64) < 4.0 * params.lambda * std::f64::consts::PI * params.n.ln(),
            "{max}"
        );
    }

    #[test]
    fn guard_refuses_huge_instances() {
        let params = sl(2.0, 1e9, 0.5);
        assert!(matches!(sample_ghcm(&params, 0), Err(GhcmError::Guard(_))));
    }

    #[test]
    fn invalid_params() {
        let mut p = sl(2.0, 100.0, 0.5);
        p.d = 1;
        assert!(p.validate().is_err());
        let mut p = sl(2.0, 100.0, 0.5);
        p.pi = [0.5, 0.6];
        assert!(p.validate().is_err());
        assert!(sl(-1.0, 100.0, 0.5).validate().is_err());
    }

    #[test]
    fn observation_lookup_rejects_unsorted() {
        assert!(Observations::from_sorted(3, vec![(1, 2), (0, 1)], vec![0.0, 0.0]).is_err());
        assert!(Observations::from_sorted(3, vec![(1, 1)], vec![0.0]).is_err());
        let obs = Observations::from_sorted(4, vec![(0, 2), (1, 2), (2, 3)], vec![1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(
            obs.neighbors(2).collect::<Vec<_>>(),
            vec![(0, 1.0), (1, 2.0), (3, 3.0)]
        );
        assert_eq!(obs.get(3, 2), Some(3.0));
        assert_eq!(obs.get(0, 1), None);
    }
}
