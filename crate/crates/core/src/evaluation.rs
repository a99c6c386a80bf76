//! Agreement under permissible relabelings and recovery diagnostics.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::distributions::{equal_specs, ObservationKernel};
use crate::divergence::PhaseConstants;
use crate::error::{GhcmError, Result};
use crate::geometry::BlockGrid;
use crate::model::{Label, SampleInstance};
use crate::recovery::{BlockMembership, Labeling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relabeling {
    Identity,
    Swap,
}

impl Relabeling {
    pub fn apply(self, l: Label) -> Label {
        match self {
            Relabeling::Identity => l,
            Relabeling::Swap => l.flipped(),
        }
    }
}

/// Label permutations that preserve both the prior and the kernel.
pub fn permissible_relabelings(pi: [f64; 2], kernel: &ObservationKernel) -> Vec<Relabeling> {
    let e = kernel.entries();
    let swap = (pi[0] - pi[1]).abs() <= 1e-12
        && equal_specs(&e[0][0], &e[1][1])
        && equal_specs(&e[0][1], &e[1][0]);
    if swap {
        vec![Relabeling::Identity, Relabeling::Swap]
    } else {
        vec![Relabeling::Identity]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub agreement: f64,
    pub exact: bool,
    pub relabeling: Relabeling,
    /// Misclassified vertices per block under `relabeling`; blocks without
    /// errors are omitted.
    pub per_block_errors: BTreeMap<usize, usize>,
    pub max_block_errors: usize,
    /// Filled in separately by [`cstar_visibility_connected`].
    pub cstar_connected: Option<bool>,
}

/// Fraction of vertices on which `xtilde` matches the truth, maximized over
/// permissible relabelings of the truth.
pub fn agreement(xtilde: &Labeling, inst: &SampleInstance, grid: &BlockGrid) -> Result<EvalReport> {
    let truth = inst.true_labels();
    if xtilde.len() != truth.len() {
        return Err(GhcmError::contract(format!(
            "labeling covers {} vertices, instance has {}",
            xtilde.len(),
            truth.len()
        )));
    }
    let params = inst.params();
    let matches = |w: Relabeling| {
        xtilde
            .labels()
            .iter()
            .zip(truth)
            .filter(|(&x, &t)| x == w.apply(t))
            .count()
    };
    // Identity is listed first, so it wins ties.
    let (relabeling, hits) = permissible_relabelings(params.pi, &params.kernel)
        .into_iter()
        .map(|w| (w, matches(w)))
        .fold(None, |best: Option<(Relabeling, usize)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
        .expect("identity is always permissible");

    let mut per_block_errors = BTreeMap::new();
    for (u, p) in inst.positions().iter().enumerate() {
        if xtilde.labels()[u] != relabeling.apply(truth[u]) {
            *per_block_errors.entry(grid.block_of(p)).or_insert(0) += 1;
        }
    }
    let n = truth.len();
    Ok(EvalReport {
        agreement: if n == 0 { 1.0 } else { hits as f64 / n as f64 },
        exact: hits == n,
        relabeling,
        max_block_errors: per_block_errors.values().copied().max().unwrap_or(0),
        per_block_errors,
        cstar_connected: None,
    })
}

/// Whether the visibility graph on blocks holding more than `delta ln n`
/// true community-1 vertices is connected. Vacuously true with at most one
/// such block.
pub fn cstar_visibility_connected(
    inst: &SampleInstance,
    grid: &BlockGrid,
    consts: &PhaseConstants,
) -> bool {
    let threshold = consts.delta * inst.params().n.ln();
    let members = BlockMembership::build(inst.positions(), grid);
    let truth = inst.true_labels();
    let node: Vec<bool> = (0..grid.block_count())
        .map(|b| {
            members
                .block(b)
                .iter()
                .filter(|&&u| truth[u as usize] == Label::One)
                .count() as f64
                > threshold
        })
        .collect();
    let total = node.iter().filter(|&&x| x).count();
    let Some(start) = node.iter().position(|&x| x) else {
        return true;
    };
    let mut seen = vec![false; grid.block_count()];
    seen[start] = true;
    let mut reached = 1;
    let mut queue = VecDeque::from([start]);
    while let Some(b) = queue.pop_front() {
        for j in grid.visible_blocks(b) {
            if node[j] && !seen[j] {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    reached == total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistributionSpec;
    use crate::divergence::{choose_constants, ConstantsConfig};
    use crate::geometry::{build_block_grid, Torus, TorusPoint};
    use crate::model::{sample_ghcm, ModelParams, Observations, PublicInstance};
    use crate::recovery::Provenance;

    fn sbm() -> ObservationKernel {
        let (p, q) = (
            DistributionSpec::bernoulli(0.8),
            DistributionSpec::bernoulli(0.2),
        );
        ObservationKernel::from_upper(p.clone(), q, p).unwrap()
    }

    #[test]
    fn relabeling_sets() {
        let sl = ModelParams::geometric_sl(2.0, 100.0, 2, 0.5, 2.0);
        assert_eq!(
            permissible_relabelings(sl.pi, &sl.kernel),
            vec![Relabeling::Identity]
        );
        assert_eq!(
            permissible_relabelings([0.5, 0.5], &sbm()),
            vec![Relabeling::Identity, Relabeling::Swap]
        );
        assert_eq!(
            permissible_relabelings([0.6, 0.4], &sbm()),
            vec![Relabeling::Identity]
        );
    }

    /// `labels.len()` vertices on a line, no observations.
    fn line(params: ModelParams, labels: Vec<Label>) -> SampleInstance {
        let side = params.torus().side;
        let n = labels.len();
        let positions = (0..n)
            .map(|i| TorusPoint::new(vec![(i as f64 / n as f64 - 0.5) * side, 0.0], side).unwrap())
            .collect();
        let public = PublicInstance {
            params,
            positions,
            observations: Observations::from_sorted(n, vec![], vec![]).unwrap(),
        };
        SampleInstance::from_parts(public, labels, 0).unwrap()
    }

    fn alternating(n: usize) -> Vec<Label> {
        (0..n)
            .map(|i| if i % 2 == 0 { Label::One } else { Label::Two })
            .collect()
    }

    fn flip(labels: &[Label]) -> Labeling {
        Labeling::uniform(
            labels.iter().map(|l| l.flipped()).collect(),
            Provenance::Refined,
        )
        .unwrap()
    }

    #[test]
    fn agreement_examples() {
        let truth = alternating(10);
        let sl = line(
            ModelParams::geometric_sl(2.0, 100.0, 2, 0.5, 2.0),
            truth.clone(),
        );
        let grid = BlockGrid::with_blocks_per_side(Torus::new(2, 100.0), 4).unwrap();
        let same = agreement(
            &Labeling::uniform(truth.clone(), Provenance::Refined).unwrap(),
            &sl,
            &grid,
        )
        .unwrap();
        assert_eq!(
            (same.agreement, same.exact, same.max_block_errors),
            (1.0, true, 0)
        );

        let flipped = agreement(&flip(&truth), &sl, &grid).unwrap();
        assert_eq!((flipped.agreement, flipped.exact), (0.0, false));
        assert_eq!(flipped.per_block_errors.values().sum::<usize>(), 10);

        let mut params = ModelParams::geometric_sl(2.0, 100.0, 2, 0.5, 2.0);
        params.kernel = sbm();
        let sym = line(params, truth.clone());
        let r = agreement(&flip(&truth), &sym, &grid).unwrap();
        assert_eq!(
            (r.agreement, r.exact, r.relabeling),
            (1.0, true, Relabeling::Swap)
        );
    }

    #[test]
    fn agreement_rejects_partial_labeling() {
        let sl = line(
            ModelParams::geometric_sl(2.0, 100.0, 2, 0.5, 2.0),
            alternating(4),
        );
        let grid = BlockGrid::with_blocks_per_side(Torus::new(2, 100.0), 4).unwrap();
        let short = Labeling::uniform(vec![Label::One; 3], Provenance::Refined).unwrap();
        assert!(matches!(
            agreement(&short, &sl, &grid),
            Err(GhcmError::Contract(_))
        ));
    }

    #[test]
    fn errors_sum_to_disagreement() {
        let params = ModelParams::geometric_sl(2.0, 2000.0, 2, 0.5, 2.0);
        let inst = sample_ghcm(&params, 9).unwrap();
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let grid = build_block_grid(&params, consts.chi).unwrap();
        let noisy: Vec<Label> = inst
            .true_labels()
            .iter()
            .enumerate()
            .map(|(i, &l)| if i % 7 == 0 { l.flipped() } else { l })
            .collect();
        let r = agreement(
            &Labeling::uniform(noisy, Provenance::Refined).unwrap(),
            &inst,
            &grid,
        )
        .unwrap();
        let errors: usize = r.per_block_errors.values().sum();
        let expect = (1.0 - r.agreement) * inst.vertex_count() as f64;
        assert!((errors as f64 - expect).abs() < 1e-6);
        assert_eq!(errors, inst.vertex_count().div_ceil(7));
    }

    #[test]
    fn connectivity_vacuous_and_dense() {
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let none = ModelParams::geometric_sl(2.0, 2000.0, 2, 0.0, 2.0);
        let inst = sample_ghcm(&none, 1).unwrap();
        assert!(cstar_visibility_connected(
            &inst,
            &build_block_grid(&none, consts.chi).unwrap(),
            &consts
        ));

        let dense = ModelParams::geometric_sl(6.0, 10_000.0, 2, 1.0, 2.0);
        let consts = choose_constants(6.0, 2, &ConstantsConfig::default()).unwrap();
        let grid = build_block_grid(&dense, consts.chi).unwrap();
        for seed in 0..20 {
            assert!(
                cstar_visibility_connected(&sample_ghcm(&dense, seed).unwrap(), &grid, &consts),
                "seed {seed}"
            );
        }
    }

    #[test]
    fn connectivity_detects_split() {
        // Two community-1 vertices on opposite sides of the torus.
        let params = ModelParams::geometric_sl(2.0, 10_000.0, 2, 0.5, 2.0);
        let consts = choose_constants(2.0, 2, &ConstantsConfig::default()).unwrap();
        let grid = build_block_grid(&params, consts.chi).unwrap();
        let side = params.torus().side;
        let positions = vec![
            TorusPoint::new(vec![0.0, 0.0], side).unwrap(),
            TorusPoint::new(vec![-side / 2.0, -side / 2.0], side).unwrap(),
        ];
        let public = PublicInstance {
            params: params.clone(),
            positions: positions.clone(),
            observations: Observations::from_sorted(2, vec![], vec![]).unwrap(),
        };
        let split = SampleInstance::from_parts(public, vec![Label::One; 2], 0).unwrap();
        assert!(!cstar_visibility_connected(&split, &grid, &consts));

        // Adding a chain of community-1 vertices between them reconnects.
        let mut chain = positions;
        let steps = (side / (params.torus().radius / 3.0)).ceil() as usize;
        for k in 1..steps {
            let t = -side / 2.0 * k as f64 / steps as f64;
            chain.push(TorusPoint::new(vec![t, t], side).unwrap());
        }
        let n = chain.len();
        let public = PublicInstance {
            params,
            positions: chain,
            observations: Observations::from_sorted(n, vec![], vec![]).unwrap(),
        };
        let joined = SampleInstance::from_parts(public, vec![Label::One; n], 0).unwrap();
        assert!(cstar_visibility_connected(&joined, &grid, &consts));
    }
}
