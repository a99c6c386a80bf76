//! Two-phase exact recovery.
//!
//! Phase I labels a seed set inside one occupied block by exhaustive MAP,
//! then propagates labels block by block. A block is only propagated *from*
//! once enough of its vertices were labeled as `C*`, so the exploration
//! follows the planted community rather than raw vertex counts. Vertices in
//! blocks the exploration never reaches default to label 2.
//!
//! Phase II relabels every vertex by the likelihood of its observations
//! against the Phase I labels of its visible neighbors.

use std::collections::VecDeque;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::ObservationKernel;
use crate::divergence::PhaseConstants;
use crate::error::{GhcmError, Result};
use crate::geometry::{build_block_grid, BlockGrid, TorusPoint};
use crate::model::{Label, ModelParams, PublicInstance};

/// Largest seed set the MAP enumeration accepts.
pub const MAP_ENUMERATION_GUARD: usize = 40;

/// Relative gap below which two log-posteriors count as tied, so that the
/// tie rule does not depend on summation order.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-10;

/// `a` and `b` agree up to [`SCORE_TIE_TOLERANCE`].
pub fn scores_tie(a: f64, b: f64) -> bool {
    a == b
        || (a.is_finite()
            && b.is_finite()
            && (a - b).abs() <= SCORE_TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0))
}

/// How a vertex received its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MapSeed,
    Propagated,
    Default2,
    Refined,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::MapSeed => "map_seed",
            Provenance::Propagated => "propagated",
            Provenance::Default2 => "default2",
            Provenance::Refined => "refined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "map_seed" => Provenance::MapSeed,
            "propagated" => Provenance::Propagated,
            "default2" => Provenance::Default2,
            "refined" => Provenance::Refined,
            _ => return None,
        })
    }
}

/// A total labeling of an instance's vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    labels: Vec<Label>,
    provenance: Vec<Provenance>,
}

impl Labeling {
    pub fn new(labels: Vec<Label>, provenance: Vec<Provenance>) -> Result<Self> {
        if labels.len() != provenance.len() {
            return Err(GhcmError::contract(
                "labels and provenance differ in length",
            ));
        }
        if let Some(u) = (0..labels.len())
            .find(|&u| provenance[u] == Provenance::Default2 && labels[u] != Label::Two)
        {
            return Err(GhcmError::contract(format!(
                "vertex {u} is default2 but labeled 1"
            )));
        }
        Ok(Labeling { labels, provenance })
    }

    /// All vertices share one provenance tag.
    pub fn uniform(labels: Vec<Label>, provenance: Provenance) -> Result<Self> {
        let n = labels.len();
        Labeling::new(labels, vec![provenance; n])
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Read access to the observable data. Phase I only goes through this trait,
/// so wrappers can audit which observations it reads.
pub trait ObservationSource: Sync {
    fn params(&self) -> &ModelParams;
    fn positions(&self) -> &[TorusPoint];
    fn observation(&self, u: u32, v: u32) -> Option<f64>;

    fn vertex_count(&self) -> usize {
        self.positions().len()
    }
}

impl ObservationSource for PublicInstance {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn positions(&self) -> &[TorusPoint] {
        &self.positions
    }

    #[inline]
    fn observation(&self, u: u32, v: u32) -> Option<f64> {
        self.observations.get(u, v)
    }
}

/// Vertex ids of every block, ascending within a block.
#[derive(Debug, Clone)]
pub struct BlockMembership {
    starts: Vec<usize>,
    members: Vec<u32>,
    block_of: Vec<usize>,
}

impl BlockMembership {
    pub fn build(positions: &[TorusPoint], grid: &BlockGrid) -> Self {
        let block_of: Vec<usize> = positions.iter().map(|p| grid.block_of(p)).collect();
        let mut starts = vec![0usize; grid.block_count() + 1];
        for &b in &block_of {
            starts[b + 1] += 1;
        }
        for i in 0..grid.block_count() {
            starts[i + 1] += starts[i];
        }
        let mut fill = starts.clone();
        let mut members = vec![0u32; positions.len()];
        for (u, &b) in block_of.iter().enumerate() {
            members[fill[b]] = u as u32;
            fill[b] += 1;
        }
        BlockMembership {
            starts,
            members,
            block_of,
        }
    }

    pub fn block(&self, b: usize) -> &[u32] {
        &self.members[self.starts[b]..self.starts[b + 1]]
    }

    pub fn block_of(&self, u: u32) -> usize {
        self.block_of[u as usize]
    }

    pub fn block_count(&self) -> usize {
        self.starts.len() - 1
    }
}

/// Blocks holding strictly more than `delta * ln n` vertices, ascending.
pub fn occupied_blocks(inst: &impl ObservationSource, grid: &BlockGrid, delta: f64) -> Vec<usize> {
    let members = BlockMembership::build(inst.positions(), grid);
    occupied_from_membership(&members, delta * inst.params().n.ln())
}

fn occupied_from_membership(members: &BlockMembership, threshold: f64) -> Vec<usize> {
    (0..members.block_count())
        .filter(|&b| members.block(b).len() as f64 > threshold)
        .collect()
}

fn missing(u: u32, v: u32) -> GhcmError {
    GhcmError::contract(format!("vertices {u} and {v} are not mutually visible"))
}

/// Exhaustive MAP labeling of a small, mutually visible vertex set using the
/// prior and the observations inside the set. Ties go to the
/// lexicographically smallest label vector (label 1 before label 2).
pub fn map_seed(
    inst: &impl ObservationSource,
    seed: &[u32],
    pi: [f64; 2],
    kernel: &ObservationKernel,
) -> Result<Vec<Label>> {
    let k = seed.len();
    if k > MAP_ENUMERATION_GUARD {
        return Err(GhcmError::config(format!(
            "seed set of {k} vertices exceeds the enumeration guard of {MAP_ENUMERATION_GUARD}"
        )));
    }
    // Pair log-likelihoods indexed by (#label-2 endpoints): 11, 12, 22.
    let mut pair_terms = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let y = inst
                .observation(seed[a], seed[b])
                .ok_or_else(|| missing(seed[a], seed[b]))?;
            pair_terms.push((
                a,
                b,
                [
                    kernel.get(Label::One, Label::One).log_density(y),
                    kernel.get(Label::One, Label::Two).log_density(y),
                    kernel.get(Label::Two, Label::Two).log_density(y),
                ],
            ));
        }
    }
    let log_prior = [pi[0].ln(), pi[1].ln()];
    // Mask bit (k-1-i) set means vertex i gets label 2; ascending masks walk
    // label vectors in lexicographic order.
    let is_two = |mask: u64, i: usize| (mask >> (k - 1 - i)) & 1;
    let score = |mask: u64| {
        let mut s: f64 = (0..k).map(|i| log_prior[is_two(mask, i) as usize]).sum();
        for (a, b, terms) in &pair_terms {
            s += terms[(is_two(mask, *a) + is_two(mask, *b)) as usize];
        }
        s
    };
    // Two passes: the maximum, then the first vector tied with it.
    let top = (0..(1u64 << k))
        .map(score)
        .fold(f64::NEG_INFINITY, f64::max);
    let best = (0..(1u64 << k))
        .find(|&mask| scores_tie(score(mask), top))
        .expect("some labeling attains the maximum");
    Ok((0..k)
        .map(|i| {
            if is_two(best, i) == 1 {
                Label::Two
            } else {
                Label::One
            }
        })
        .collect())
}

/// Labels each vertex of `targets` by comparing the likelihood of its
/// observations to the label-1 vertices of `labeled` under `P11` versus
/// `P12`. Ties, including the empty sum, give label 2.
pub fn propagate(
    inst: &impl ObservationSource,
    labeled: &[(u32, Label)],
    targets: &[u32],
) -> Result<Vec<Label>> {
    let kernel = &inst.params().kernel;
    let (p11, p12) = (
        kernel.get(Label::One, Label::One),
        kernel.get(Label::One, Label::Two),
    );
    let sources: Vec<u32> = labeled
        .iter()
        .filter(|(_, l)| *l == Label::One)
        .map(|(v, _)| *v)
        .collect();
    targets
        .iter()
        .map(|&u| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for &v in &sources {
                let y = inst.observation(u, v).ok_or_else(|| missing(u, v))?;
                s1 += p11.log_density(y);
                s2 += p12.log_density(y);
            }
            Ok(if s1 > s2 { Label::One } else { Label::Two })
        })
        .collect()
}

/// Summary of one Phase I run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Stats {
    pub initial_block: usize,
    pub seed_size: usize,
    pub occupied_blocks: usize,
    pub labeled_blocks: usize,
    pub explored_blocks: usize,
    pub block_count: usize,
}

#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub labeling: Labeling,
    pub stats: Phase1Stats,
    /// Blocks in the order they were explored.
    pub explored: Vec<usize>,
}

/// The `delta`-occupied block with the most vertices, lowest index on ties.
pub(crate) fn initial_block(members: &BlockMembership, occupancy_threshold: f64) -> Option<usize> {
    occupied_from_membership(members, occupancy_threshold)
        .into_iter()
        .max_by(|&a, &b| {
            members
                .block(a)
                .len()
                .cmp(&members.block(b).len())
                .then(b.cmp(&a))
        })
}

/// Breadth-first exploration of the block visibility structure.
///
/// `label_block(i, j, labels)` fills the labels of block `j` from the already
/// labeled block `i`; `j` is queued when at least `queue_threshold` of its
/// vertices came out as label 1. Returns the explored blocks in order and the
/// per-block labeled flags.
pub(crate) fn explore(
    grid: &BlockGrid,
    members: &BlockMembership,
    start: usize,
    labels: &mut [Option<Label>],
    queue_threshold: f64,
    mut label_block: impl FnMut(usize, usize, &mut [Option<Label>]) -> Result<()>,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut labeled = vec![false; grid.block_count()];
    let mut explored_flag = vec![false; grid.block_count()];
    let mut explored = Vec::new();
    let mut active = VecDeque::from([start]);
    labeled[start] = true;
    while let Some(i) = active.pop_front() {
        for j in grid.visible_blocks(i) {
            if labeled[j] || explored_flag[j] {
                continue;
            }
            label_block(i, j, labels)?;
            labeled[j] = true;
            let ones = members
                .block(j)
                .iter()
                .filter(|&&u| labels[u as usize] == Some(Label::One))
                .count();
            if ones as f64 >= queue_threshold {
                active.push_back(j);
            }
        }
        explored_flag[i] = true;
        explored.push(i);
    }
    Ok((explored, labeled))
}

/// Phase I: MAP seed, propagation along a data-driven exploration, default 2.
pub fn phase1(inst: &impl ObservationSource, consts: &PhaseConstants) -> Result<Phase1Result> {
    let params = inst.params();
    let grid = build_block_grid(params, consts.chi)?;
    phase1_on_grid(inst, consts, &grid)
}

pub fn phase1_on_grid(
    inst: &impl ObservationSource,
    consts: &PhaseConstants,
    grid: &BlockGrid,
) -> Result<Phase1Result> {
    let params = inst.params();
    let log_n = params.n.ln();
    let members = BlockMembership::build(inst.positions(), grid);
    let occupancy = consts.delta * log_n;
    let occupied = occupied_from_membership(&members, occupancy).len();
    let start = initial_block(&members, occupancy).ok_or_else(|| {
        GhcmError::Degenerate(format!("no block holds more than {occupancy:.4} vertices"))
    })?;

    let block = members.block(start);
    let seed_size = ((consts.epsilon0 * log_n).ceil() as usize)
        .max(1)
        .min(block.len())
        .min(MAP_ENUMERATION_GUARD);
    let (seed, rest) = block.split_at(seed_size);

    let n = inst.vertex_count();
    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut provenance = vec![Provenance::Default2; n];

    let seed_labels = map_seed(inst, seed, params.pi, &params.kernel)?;
    for (&u, &l) in seed.iter().zip(&seed_labels) {
        labels[u as usize] = Some(l);
        provenance[u as usize] = Provenance::MapSeed;
    }
    if !rest.is_empty() {
        let seeded: Vec<(u32, Label)> = seed.iter().copied().zip(seed_labels).collect();
        for (&u, l) in rest.iter().zip(propagate(inst, &seeded, rest)?) {
            labels[u as usize] = Some(l);
            provenance[u as usize] = Provenance::Propagated;
        }
    }

    let mut parent: Vec<(u32, Label)> = Vec::new();
    let (explored, labeled) = explore(
        grid,
        &members,
        start,
        &mut labels,
        occupancy / 2.0,
        |i, j, labels| {
            parent.clear();
            parent.extend(
                members
                    .block(i)
                    .iter()
                    .map(|&v| (v, labels[v as usize].expect("parent block labeled"))),
            );
            let targets = members.block(j);
            for (&u, l) in targets.iter().zip(propagate(inst, &parent, targets)?) {
                labels[u as usize] = Some(l);
                provenance[u as usize] = Provenance::Propagated;
            }
            Ok(())
        },
    )?;

    let labels: Vec<Label> = labels
        .into_iter()
        .map(|l| l.unwrap_or(Label::Two))
        .collect();
    let stats = Phase1Stats {
        initial_block: start,
        seed_size,
        occupied_blocks: occupied,
        labeled_blocks: labeled.iter().filter(|&&b| b).count(),
        explored_blocks: explored.len(),
        block_count: grid.block_count(),
    };
    Ok(Phase1Result {
        labeling: Labeling::new(labels, provenance)?,
        stats,
        explored,
    })
}

/// Log-likelihood of `u`'s observations under each hypothesis for `u`, given
/// neighbor labels.
#[inline]
pub(crate) fn neighbor_scores(
    inst: &PublicInstance,
    u: u32,
    neighbor_labels: &[Label],
) -> [f64; 2] {
    let kernel = &inst.params.kernel;
    let mut s = [0.0f64; 2];
    for (v, y) in inst.observations.neighbors(u) {
        let lv = neighbor_labels[v as usize];
        s[0] += kernel.get(Label::One, lv).log_density(y);
        s[1] += kernel.get(Label::Two, lv).log_density(y);
    }
    s
}

/// Phase II: one simultaneous pass of likelihood refinement against `xhat`.
/// Ties keep the Phase I label.
pub fn phase2(inst: &PublicInstance, xhat: &Labeling) -> Result<Labeling> {
    if xhat.len() != inst.vertex_count() {
        return Err(GhcmError::contract(format!(
            "labeling covers {} vertices, instance has {}",
            xhat.len(),
            inst.vertex_count()
        )));
    }
    let prior = xhat.labels();
    let refined: Vec<(Label, Provenance)> = (0..inst.vertex_count() as u32)
        .into_par_iter()
        .map(|u| {
            let [s1, s2] = neighbor_scores(inst, u, prior);
            let old = prior[u as usize];
            let new = if s1 > s2 {
                Label::One
            } else if s2 > s1 {
                Label::Two
            } else {
                old
            };
            let tag = if new == old {
                xhat.provenance()[u as usize]
            } else {
                Provenance::Refined
            };
            (new, tag)
        })
        .collect();
    let (labels, provenance) = refined.into_iter().unzip();
    Labeling::new(labels, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub phase1_secs: f64,
    pub phase2_secs: f64,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub phase1: Phase1Result,
    pub labeling: Labeling,
    pub timings: Timings,
}

/// Phase I followed by Phase II.
pub fn full_recover(inst: &PublicInstance, consts: &PhaseConstants) -> Result<Recovery> {
    let t0 = Instant::now();
    let phase1 = phase1(inst, consts)?;
    let t1 = Instant::now();
    let labeling = phase2(inst, &phase1.labeling)?;
    let t2 = Instant::now();
    Ok(Recovery {
        phase1,
        labeling,
        timings: Timings {
            phase1_secs: (t1 - t0).as_secs_f64(),
            phase2_secs: (t2 - t1).as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::divergence::{choose_constants, ConstantsConfig};
    use crate::model::{sample_ghcm, strip_labels, Observations};

    /// All vertices stacked on one point, with the given observations.
    fn clique(params: ModelParams, count: usize, obs: &[((u32, u32), f64)]) -> PublicInstance {
        let side = params.torus().side;
        let positions = vec![TorusPoint::new(vec![0.5; params.d], side).unwrap(); count];
        let mut obs = obs.to_vec();
        obs.sort_by_key(|o| o.0);
        let (pairs, values) = obs.into_iter().unzip();
        PublicInstance {
            params,
            positions,
            observations: Observations::from_sorted(count, pairs, values).unwrap(),
        }
    }

    fn pds(p: f64, q: f64, pi1: f64) -> ModelParams {
        ModelParams::geometric_pds(2.0, 1000.0, 2, pi1, p, q)
    }

    fn complete(count: u32, y: f64) -> Vec<((u32, u32), f64)> {
        (0..count)
            .flat_map(|u| (u + 1..count).map(move |v| ((u, v), y)))
            .collect()
    }

    #[test]
    fn propagate_single_neighbor() {
        let inst = clique(pds(0.9, 0.1, 0.5), 2, &[((0, 1), 1.0)]);
        assert_eq!(
            propagate(&inst, &[(0, Label::One)], &[1]).unwrap(),
            vec![Label::One]
        );
        let inst = clique(pds(0.9, 0.1, 0.5), 2, &[((0, 1), 0.0)]);
        assert_eq!(
            propagate(&inst, &[(0, Label::One)], &[1]).unwrap(),
            vec![Label::Two]
        );
    }

    #[test]
    fn propagate_without_label_one_sources_gives_two() {
        let inst = clique(pds(0.9, 0.1, 0.5), 4, &complete(4, 1.0));
        let out = propagate(&inst, &[(0, Label::Two), (1, Label::Two)], &[2, 3]).unwrap();
        assert_eq!(out, vec![Label::Two; 2]);
        assert_eq!(propagate(&inst, &[], &[2, 3]).unwrap(), vec![Label::Two; 2]);
    }

    #[test]
    fn propagate_requires_visibility() {
        let inst = clique(pds(0.9, 0.1, 0.5), 3, &[((0, 1), 1.0)]);
        assert!(matches!(
            propagate(&inst, &[(0, Label::One)], &[2]),
            Err(GhcmError::Contract(_))
        ));
    }

    #[test]
    fn propagate_gaussian_is_mean_test() {
        use rand::{Rng, SeedableRng};
        let mu = 1.3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let k = rng.random_range(1..6u32);
            let obs: Vec<_> = (0..k)
                .map(|v| ((v, k), rng.random_range(-1.0..2.5)))
                .collect();
            let mean = obs.iter().map(|(_, y)| y).sum::<f64>() / k as f64;
            let inst = clique(
                ModelParams::geometric_sl(2.0, 1000.0, 2, 0.5, mu),
                k as usize + 1,
                &obs,
            );
            let labeled: Vec<_> = (0..k).map(|v| (v, Label::One)).collect();
            let got = propagate(&inst, &labeled, &[k]).unwrap()[0];
            if (mean - mu / 2.0).abs() > 1e-9 {
                assert_eq!(got == Label::One, mean > mu / 2.0, "mean {mean}");
            }
        }
    }

    #[test]
    fn map_seed_prior_only() {
        let params = pds(0.9, 0.1, 0.7);
        let inst = clique(params.clone(), 1, &[]);
        assert_eq!(
            map_seed(&inst, &[0], params.pi, &params.kernel).unwrap(),
            vec![Label::One]
        );
        let params = pds(0.9, 0.1, 0.3);
        assert_eq!(
            map_seed(&inst, &[0], params.pi, &params.kernel).unwrap(),
            vec![Label::Two]
        );
    }

    #[test]
    fn map_seed_ties_go_lexicographic() {
        let params = pds(0.5, 0.5, 0.5);
        let inst = clique(params.clone(), 4, &complete(4, 1.0));
        assert_eq!(
            map_seed(&inst, &[0, 1, 2, 3], params.pi, &params.kernel).unwrap(),
            vec![Label::One; 4]
        );
    }

    #[test]
    fn map_seed_follows_strong_evidence() {
        let params = pds(0.95, 0.05, 0.5);
        // 0 and 1 connect to each other only; 2 connects to nobody.
        let obs = [((0, 1), 1.0), ((0, 2), 0.0), ((1, 2), 0.0)];
        let inst = clique(params.clone(), 3, &obs);
        assert_eq!(
            map_seed(&inst, &[0, 1, 2], params.pi, &params.kernel).unwrap(),
            vec![Label::One, Label::One, Label::Two]
        );
    }

    #[test]
    fn map_seed_guard() {
        let params = pds(0.9, 0.1, 0.5);
        let inst = clique(params.clone(), 41, &[]);
        let seed: Vec<u32> = (0..41).collect();
        assert!(matches!(
            map_seed(&inst, &seed, params.pi, &params.kernel),
            Err(GhcmError::Config(_))
        ));
    }

    #[test]
    fn phase2_isolated_vertex_keeps_label() {
        let params = pds(0.9, 0.1, 0.5);
        let inst = clique(params, 3, &[((0, 1), 1.0)]);
        let xhat = Labeling::uniform(
            vec![Label::Two, Label::One, Label::One],
            Provenance::Propagated,
        )
        .unwrap();
        let out = phase2(&inst, &xhat).unwrap();
        assert_eq!(out.labels()[2], Label::One);
        assert_eq!(out.provenance()[2], Provenance::Propagated);
    }

    #[test]
    fn phase2_all_two_is_fixed_under_asymmetric2_kernel() {
        let params = ModelParams::geometric_sl(2.0, 2000.0, 2, 0.5, 2.0);
        let inst = sample_ghcm(&params, 3).unwrap();
        let public = strip_labels(&inst);
        let xhat = Labeling::uniform(
            vec![Label::Two; public.vertex_count()],
            Provenance::Default2,
        )
        .unwrap();
        assert_eq!(phase2(public, &xhat).unwrap(), xhat);
    }

    #[test]
    fn phase2_matches_sequential_pass_and_thread_count() {
        let params = ModelParams::geometric_sl(2.0, 3000.0, 2, 0.5, 2.0);
        let inst = sample_ghcm(&params, 11).unwrap();
        let public = strip_labels(&inst);
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let xhat = phase1(public, &consts).unwrap().labeling;
        let pool = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
        };
        let one = pool(1).install(|| phase2(public, &xhat).unwrap());
        let four = pool(4).install(|| phase2(public, &xhat).unwrap());
        assert_eq!(one, four);
        for u in 0..public.vertex_count() as u32 {
            let [s1, s2] = neighbor_scores(public, u, xhat.labels());
            let expect = if s1 > s2 {
                Label::One
            } else if s2 > s1 {
                Label::Two
            } else {
                xhat.labels()[u as usize]
            };
            assert_eq!(one.labels()[u as usize], expect);
        }
    }

    struct Logged<'a> {
        inner: &'a PublicInstance,
        reads: Mutex<Vec<(u32, u32)>>,
    }

    impl ObservationSource for Logged<'_> {
        fn params(&self) -> &ModelParams {
            &self.inner.params
        }
        fn positions(&self) -> &[TorusPoint] {
            &self.inner.positions
        }
        fn observation(&self, u: u32, v: u32) -> Option<f64> {
            self.reads.lock().unwrap().push((u, v));
            self.inner.observation(u, v)
        }
    }

    #[test]
    fn phase1_structure_and_data_use() {
        let params = ModelParams::geometric_sl(2.0, 3000.0, 2, 0.5, 2.85);
        let inst = sample_ghcm(&params, 2).unwrap();
        let logged = Logged {
            inner: strip_labels(&inst),
            reads: Mutex::new(Vec::new()),
        };
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let grid = build_block_grid(&params, consts.chi).unwrap();
        let res = phase1_on_grid(&logged, &consts, &grid).unwrap();
        let members = BlockMembership::build(logged.positions(), &grid);

        let mut explored = vec![false; grid.block_count()];
        for &b in &res.explored {
            assert!(!explored[b], "block {b} explored twice");
            explored[b] = true;
        }
        assert_eq!(res.explored[0], res.stats.initial_block);
        assert!(res.stats.explored_blocks <= res.stats.labeled_blocks);
        assert!(res.stats.labeled_blocks <= grid.block_count());

        // Default-2 vertices sit exactly in blocks no explored block can see.
        let reached: Vec<bool> = (0..grid.block_count())
            .map(|b| explored[b] || grid.visible_blocks(b).iter().any(|&e| explored[e]))
            .collect();
        for u in 0..logged.vertex_count() as u32 {
            let default = res.labeling.provenance()[u as usize] == Provenance::Default2;
            assert_eq!(default, !reached[members.block_of(u)], "vertex {u}");
        }

        for &(u, v) in logged.reads.lock().unwrap().iter() {
            assert!(
                explored[members.block_of(u)] || explored[members.block_of(v)],
                "read ({u}, {v})"
            );
        }
    }

    #[test]
    fn phase1_without_community_is_nearly_all_two() {
        let params = ModelParams::geometric_sl(2.0, 3000.0, 2, 0.0, 2.0);
        let inst = sample_ghcm(&params, 4).unwrap();
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let res = phase1(strip_labels(&inst), &consts).unwrap();
        let grid = build_block_grid(&params, consts.chi).unwrap();
        let members = BlockMembership::build(inst.positions(), &grid);
        let ones = res
            .labeling
            .labels()
            .iter()
            .filter(|&&l| l == Label::One)
            .count();
        assert!(
            ones <= members.block(res.stats.initial_block).len(),
            "{ones}"
        );
    }

    #[test]
    fn phase1_degenerate_without_occupied_block() {
        let params = pds(0.9, 0.1, 0.5);
        let inst = clique(params, 0, &[]);
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        assert!(matches!(
            phase1(&inst, &consts),
            Err(GhcmError::Degenerate(_))
        ));
    }

    #[test]
    fn full_recover_is_composition_and_deterministic() {
        let params = ModelParams::geometric_pds(2.0, 3000.0, 2, 0.5, 0.9, 0.1);
        let inst = sample_ghcm(&params, 8).unwrap();
        let public = strip_labels(&inst);
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let a = full_recover(public, &consts).unwrap();
        let b = full_recover(public, &consts).unwrap();
        assert_eq!(a.labeling, b.labeling);
        let p1 = phase1(public, &consts).unwrap();
        assert_eq!(p1.labeling, a.phase1.labeling);
        assert_eq!(phase2(public, &p1.labeling).unwrap(), a.labeling);
    }

    #[test]
    fn labeling_rejects_labeled_default2() {
        assert!(Labeling::new(vec![Label::One], vec![Provenance::Default2]).is_err());
        assert!(Labeling::new(vec![Label::One], vec![]).is_err());
        for p in [
            Provenance::MapSeed,
            Provenance::Propagated,
            Provenance::Default2,
            Provenance::Refined,
        ] {
            assert_eq!(Provenance::parse(p.as_str()), Some(p));
        }
    }

    #[test]
    fn occupied_blocks_are_strict() {
        let params = pds(0.9, 0.1, 0.5);
        let inst = clique(params.clone(), 3, &[]);
        let grid = build_block_grid(&params, 0.01).unwrap();
        let delta_at = |count: f64| count / params.n.ln();
        assert_eq!(
            occupied_blocks(&inst, &grid, delta_at(3.0)),
            Vec::<usize>::new()
        );
        assert_eq!(occupied_blocks(&inst, &grid, delta_at(2.9)).len(), 1);
    }
}
