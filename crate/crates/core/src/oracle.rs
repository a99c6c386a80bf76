//! Brute-force references used to check the recovery module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GhcmError, Result};
use crate::geometry::{BlockGrid, TorusPoint};
use crate::model::{Label, ModelParams, Observations, PublicInstance, SampleInstance};
use crate::recovery::{explore, initial_block, scores_tie, BlockMembership, Labeling, Provenance};

/// Hard ceiling on `max_vertices` for [`brute_force_map`].
pub const BRUTE_FORCE_LIMIT: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    #[serde(skip)]
    pub labeling: Labeling,
    pub log_posterior: f64,
    pub enumerated: u64,
}

/// Log-posterior (up to a constant) of a full labeling.
pub fn log_posterior(inst: &PublicInstance, labels: &[Label]) -> f64 {
    let kernel = &inst.params.kernel;
    let mut s: f64 = labels.iter().map(|&l| inst.params.prior(l).ln()).sum();
    for (&(u, v), &y) in inst
        .observations
        .pairs()
        .iter()
        .zip(inst.observations.values())
    {
        s += kernel
            .get(labels[u as usize], labels[v as usize])
            .log_density(y);
    }
    s
}

struct Search<'a> {
    inst: &'a PublicInstance,
    current: Vec<Label>,
    leaves: Vec<f64>,
}

impl Search<'_> {
    // Vertices are assigned in id order with label 1 tried first, so leaves
    // come out in lexicographic order of label vectors.
    fn descend(&mut self, u: usize, partial: f64) {
        if u == self.current.len() {
            self.leaves.push(partial);
            return;
        }
        let params = &self.inst.params;
        for l in Label::BOTH {
            let mut s = partial + params.prior(l).ln();
            for (v, y) in self.inst.observations.neighbors(u as u32) {
                if (v as usize) < u {
                    s += params
                        .kernel
                        .get(l, self.current[v as usize])
                        .log_density(y);
                }
            }
            self.current[u] = l;
            self.descend(u + 1, s);
        }
    }
}

/// Exact global MAP labeling by exhaustive enumeration. Ties resolve to the
/// lexicographically smallest label vector, as in
/// [`map_seed`](crate::recovery::map_seed).
pub fn brute_force_map(inst: &PublicInstance, max_vertices: usize) -> Result<OracleResult> {
    if max_vertices > BRUTE_FORCE_LIMIT {
        return Err(GhcmError::config(format!(
            "max_vertices {max_vertices} exceeds the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let n = inst.vertex_count();
    if n > max_vertices {
        return Err(GhcmError::Guard(format!(
            "{n} vertices exceed the brute-force bound {max_vertices}"
        )));
    }
    let mut search = Search {
        inst,
        current: vec![Label::One; n],
        leaves: Vec::with_capacity(1 << n),
    };
    search.descend(0, 0.0);
    let top = search
        .leaves
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let enumerated = search.leaves.len() as u64;
    let k = search
        .leaves
        .iter()
        .position(|&s| scores_tie(s, top))
        .expect("enumeration is nonempty");
    let log_posterior = search.leaves[k];
    // The k-th leaf is k written in binary over n digits, 0 = label 1.
    let labels = (0..n)
        .map(|i| {
            if (k >> (n - 1 - i)) & 1 == 1 {
                Label::Two
            } else {
                Label::One
            }
        })
        .collect();
    Ok(OracleResult {
        labeling: Labeling::uniform(labels, Provenance::MapSeed)?,
        log_posterior,
        enumerated,
    })
}

/// Genie-aided estimator: each vertex labeled by the likelihood of its
/// observations given the true labels of its neighbors. Ties give label 2.
pub fn genie(inst: &SampleInstance) -> Labeling {
    let kernel = &inst.params().kernel;
    let truth = inst.true_labels();
    let labels = (0..inst.vertex_count() as u32)
        .map(|u| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (v, y) in inst.observations().neighbors(u) {
                s1 += kernel.get(Label::One, truth[v as usize]).log_density(y);
                s2 += kernel.get(Label::Two, truth[v as usize]).log_density(y);
            }
            if s1 > s2 {
                Label::One
            } else {
                Label::Two
            }
        })
        .collect();
    Labeling::uniform(labels, Provenance::Refined).expect("refined labels carry no default2 tag")
}

/// The Phase I exploration driven by true labels instead of propagated
/// ones. Returns the explored blocks in order and the labeled-block flags.
pub fn oracle_exploration(
    inst: &SampleInstance,
    grid: &BlockGrid,
    delta: f64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let occupancy = delta * inst.params().n.ln();
    let members = BlockMembership::build(inst.positions(), grid);
    let start = initial_block(&members, occupancy).ok_or_else(|| {
        GhcmError::Degenerate(format!("no block holds more than {occupancy:.4} vertices"))
    })?;
    let truth = inst.true_labels();
    let mut labels = vec![None; inst.vertex_count()];
    for &u in members.block(start) {
        labels[u as usize] = Some(truth[u as usize]);
    }
    explore(
        grid,
        &members,
        start,
        &mut labels,
        occupancy / 2.0,
        |_, j, labels| {
            for &u in members.block(j) {
                labels[u as usize] = Some(truth[u as usize]);
            }
            Ok(())
        },
    )
}

/// A `k`-vertex instance whose vertices are all mutually visible, with
/// labels and observations drawn from `params`.
pub fn sample_clique(params: &ModelParams, k: usize, seed: u64) -> Result<SampleInstance> {
    params.validate()?;
    let torus = params.torus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Any two points of a cube with diagonal r are visible to each other.
    let edge = torus.radius / (params.d as f64).sqrt();
    let positions = (0..k)
        .map(|_| {
            TorusPoint::wrapped(
                (0..params.d).map(|_| rng.random::<f64>() * edge).collect(),
                torus.side,
            )
        })
        .collect::<Vec<_>>();
    let labels: Vec<Label> = (0..k)
        .map(|_| {
            if rng.random::<f64>() < params.pi[0] {
                Label::One
            } else {
                Label::Two
            }
        })
        .collect();
    let mut pairs = Vec::new();
    let mut values = Vec::new();
    for u in 0..k {
        for v in u + 1..k {
            pairs.push((u as u32, v as u32));
            values.push(params.kernel.get(labels[u], labels[v]).sample(&mut rng));
        }
    }
    let observations = Observations::from_sorted(k, pairs, values)?;
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

/// Random micro-instance for the MAP equivalence check: PDS for even `seed`,
/// SL for odd, at most `max_vertices` vertices. Every fourth draw uses a
/// kernel that cannot tell the communities apart, to exercise tie-breaking.
pub fn random_micro_instance(seed: u64, max_vertices: usize) -> Result<SampleInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let k = rng.random_range(1..=max_vertices.max(1));
    let pi1 = [0.5, 0.3, 0.7][rng.random_range(0..3)];
    let flat = seed % 8 < 2;
    let params = if seed.is_multiple_of(2) {
        let q = rng.random_range(0.05..0.5);
        let p = if flat { q } else { rng.random_range(q..0.95) };
        ModelParams::geometric_pds(2.0, 1000.0, 2, pi1, p, q)
    } else {
        let mu = if flat {
            0.0
        } else {
            rng.random_range(0.2..3.0)
        };
        ModelParams::geometric_sl(2.0, 1000.0, 2, pi1, mu)
    };
    sample_clique(&params, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{choose_constants, ConstantsConfig};
    use crate::geometry::build_block_grid;
    use crate::model::{sample_ghcm, strip_labels};
    use crate::recovery::{map_seed, phase2};

    #[test]
    fn no_edges_follows_prior() {
        let params = ModelParams::geometric_pds(2.0, 1000.0, 2, 0.7, 0.9, 0.1);
        let inst = sample_clique(&params, 1, 0).unwrap();
        let res = brute_force_map(strip_labels(&inst), 5).unwrap();
        assert_eq!(res.labeling.labels(), &[Label::One]);
        assert_eq!(res.enumerated, 2);
    }

    #[test]
    fn guards() {
        let params = ModelParams::geometric_pds(2.0, 1000.0, 2, 0.5, 0.9, 0.1);
        let inst = sample_clique(&params, 6, 0).unwrap();
        assert!(matches!(
            brute_force_map(strip_labels(&inst), 5),
            Err(GhcmError::Guard(_))
        ));
        assert!(matches!(
            brute_force_map(strip_labels(&inst), 23),
            Err(GhcmError::Config(_))
        ));
    }

    #[test]
    fn matches_map_seed_on_cliques() {
        for seed in 0..100 {
            let inst = random_micro_instance(seed, 12).unwrap();
            let public = strip_labels(&inst);
            let ids: Vec<u32> = (0..public.vertex_count() as u32).collect();
            let seeded = map_seed(public, &ids, public.params.pi, &public.params.kernel).unwrap();
            let res = brute_force_map(public, 12).unwrap();
            assert_eq!(res.labeling.labels(), &seeded[..], "seed {seed}");
            assert_eq!(res.enumerated, 1 << ids.len());
        }
    }

    #[test]
    fn optimum_dominates_every_labeling() {
        let inst = random_micro_instance(3, 8).unwrap();
        let public = strip_labels(&inst);
        let res = brute_force_map(public, 8).unwrap();
        let n = public.vertex_count();
        assert!((log_posterior(public, res.labeling.labels()) - res.log_posterior).abs() < 1e-9);
        for mask in 0..1u32 << n {
            let labels: Vec<Label> = (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        Label::Two
                    } else {
                        Label::One
                    }
                })
                .collect();
            assert!(log_posterior(public, &labels) <= res.log_posterior + 1e-9);
        }
    }

    #[test]
    fn permutation_stable() {
        let inst = random_micro_instance(5, 9).unwrap();
        let public = strip_labels(&inst);
        let n = public.vertex_count();
        let base = brute_force_map(public, 9).unwrap();
        // Reverse the vertex ids.
        let rev = |u: u32| (n - 1) as u32 - u;
        let mut obs: Vec<_> = public
            .observations
            .pairs()
            .iter()
            .zip(public.observations.values())
            .map(|(&(u, v), &y)| ((rev(v), rev(u)), y))
            .collect();
        obs.sort_by_key(|o| o.0);
        let (pairs, values) = obs.into_iter().unzip();
        let permuted = PublicInstance {
            params: public.params.clone(),
            positions: public.positions.iter().rev().cloned().collect(),
            observations: Observations::from_sorted(n, pairs, values).unwrap(),
        };
        let res = brute_force_map(&permuted, 9).unwrap();
        assert!((res.log_posterior - base.log_posterior).abs() < 1e-9);
        let back: Vec<Label> = res.labeling.labels().iter().rev().copied().collect();
        assert!((log_posterior(public, &back) - base.log_posterior).abs() < 1e-9);
    }

    #[test]
    fn genie_matches_phase2_on_truth() {
        let params = ModelParams::geometric_sl(2.0, 3000.0, 2, 0.5, 2.85);
        let inst = sample_ghcm(&params, 1).unwrap();
        let truth = Labeling::uniform(inst.true_labels().to_vec(), Provenance::MapSeed).unwrap();
        let refined = phase2(strip_labels(&inst), &truth).unwrap();
        let g = genie(&inst);
        for u in 0..inst.vertex_count() as u32 {
            let [s1, s2] =
                crate::recovery::neighbor_scores(strip_labels(&inst), u, inst.true_labels());
            if s1 != s2 {
                assert_eq!(g.labels()[u as usize], refined.labels()[u as usize]);
            }
        }
    }

    #[test]
    fn genie_without_observations_is_all_two() {
        let params = ModelParams::geometric_sl(2.0, 1000.0, 2, 0.5, 2.0);
        let inst = sample_clique(&params, 5, 2).unwrap();
        let (mut public, labels, seed) = inst.into_parts();
        public.observations = Observations::from_sorted(5, vec![], vec![]).unwrap();
        let bare = SampleInstance::from_parts(public, labels, seed).unwrap();
        assert_eq!(genie(&bare).labels(), &[Label::Two; 5]);
    }

    #[test]
    fn oracle_exploration_visits_cstar_blocks() {
        let params = ModelParams::geometric_sl(2.0, 5000.0, 2, 0.5, 2.85);
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let grid = build_block_grid(&params, consts.chi).unwrap();
        let inst = sample_ghcm(&params, 6).unwrap();
        let (explored, labeled) = oracle_exploration(&inst, &grid, consts.delta).unwrap();
        let members = BlockMembership::build(inst.positions(), &grid);
        let threshold = consts.delta * params.n.ln();
        let cstar = |b: usize| {
            members
                .block(b)
                .iter()
                .filter(|&&u| inst.true_labels()[u as usize] == Label::One)
                .count() as f64
        };
        assert!(cstar(explored[0]) > threshold);
        let mut seen = vec![false; grid.block_count()];
        for &b in &explored {
            seen[b] = true;
        }
        // Every C*-occupied block reachable from the start through C*-occupied
        // visible blocks is explored.
        let mut reach = vec![false; grid.block_count()];
        let mut stack = vec![explored[0]];
        reach[explored[0]] = true;
        while let Some(b) = stack.pop() {
            assert!(seen[b], "block {b}");
            for j in grid.visible_blocks(b) {
                if !reach[j] && cstar(j) > threshold {
                    reach[j] = true;
                    stack.push(j);
                }
            }
        }
        assert!(labeled.iter().zip(&reach).all(|(&l, &r)| l || !r));
    }
}
