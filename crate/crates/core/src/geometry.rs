//! Toroidal geometry: the metric, the block partition used by the recovery
//! algorithm, block-level visibility and a cell index for fixed-radius
//! neighbor queries.
//!
//! The region is the cube `[-L/2, L/2)^d` with side `L = n^(1/d)`, glued into a
//! torus. Two vertices can observe each other when their toroidal distance is
//! at most `r = (ln n)^(1/d)`.

use crate::error::{GhcmError, Result};
use crate::model::ModelParams;

/// A point of the torus, stored with every coordinate in `[-L/2, L/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Builds a point, rejecting coordinates outside the fundamental domain.
    pub fn new(coords: Vec<f64>, side: f64) -> Result<Self> {
        let half = side / 2.0;
        if let Some(x) = coords.iter().find(|x| !(**x >= -half && **x < half)) {
            return Err(GhcmError::contract(format!(
                "coordinate {x} outside [-{half}, {half})"
            )));
        }
        Ok(TorusPoint { coords })
    }

    /// Builds a point by wrapping arbitrary coordinates onto the torus.
    pub fn wrapped(coords: Vec<f64>, side: f64) -> Self {
        let coords = coords.into_iter().map(|x| wrap_coord(x, side)).collect();
        TorusPoint { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

fn wrap_coord(x: f64, side: f64) -> f64 {
    let half = side / 2.0;
    let w = (x + half).rem_euclid(side) - half;
    if w >= half {
        -half
    } else {
        w
    }
}

/// Toroidal distance between two points of a torus with the given side length.
pub fn torus_distance(u: &TorusPoint, v: &TorusPoint, side: f64) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(GhcmError::contract(format!(
            "dimension mismatch: {} vs {}",
            u.dim(),
            v.dim()
        )));
    }
    if !(side > 0.0) {
        return Err(GhcmError::contract(format!(
            "side must be positive, got {side}"
        )));
    }
    Ok(distance_unchecked(u.coords(), v.coords(), side))
}

#[inline]
pub(crate) fn distance_unchecked(u: &[f64], v: &[f64], side: f64) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let diff = (a - b).abs();
            let m = diff.min(side - diff);
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// The torus `S_{d,n}` together with the visibility radius of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Torus {
    pub dim: usize,
    pub side: f64,
    pub radius: f64,
    pub log_n: f64,
}

impl Torus {
    pub fn new(dim: usize, n: f64) -> Self {
        let log_n = n.ln();
        Torus {
            dim,
            side: n.powf(1.0 / dim as f64),
            radius: log_n.powf(1.0 / dim as f64),
            log_n,
        }
    }

    pub fn from_params(params: &ModelParams) -> Self {
        Torus::new(params.d, params.n)
    }

    /// Closed visibility test, `||u - v|| <= r`.
    #[inline]
    pub fn visible(&self, u: &TorusPoint, v: &TorusPoint) -> bool {
        distance_unchecked(u.coords(), v.coords(), self.side) <= self.radius
    }
}

/// Row-major partition of the torus into `m^d` equal axis-aligned blocks.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    torus: Torus,
    blocks_per_side: usize,
    block_side: f64,
    target_block_volume: f64,
    /// Per-axis offsets `k` (minimal wrap) for which blocks are visible.
    visible_offsets: Vec<Vec<i64>>,
}

impl BlockGrid {
    /// Tiles the torus with the largest `m` whose blocks still have volume at
    /// least `chi * ln n`. Does not check self-visibility; see
    /// [`build_block_grid`].
    pub fn tile(torus: Torus, chi: f64) -> Result<Self> {
        if !(chi > 0.0) || !chi.is_finite() {
            return Err(GhcmError::config(format!(
                "chi must be positive, got {chi}"
            )));
        }
        let target = chi * torus.log_n;
        let n = torus.side.powi(torus.dim as i32);
        let d = torus.dim as i32;
        let mut m = (n / target).powf(1.0 / torus.dim as f64).floor().max(0.0) as usize;
        // Floor of a floating root can land one off in either direction.
        while ((m + 1) as f64).powi(d) * target <= n * (1.0 + 1e-12) {
            m += 1;
        }
        while m > 0 && (m as f64).powi(d) * target > n * (1.0 + 1e-12) {
            m -= 1;
        }
        if m == 0 {
            let min_n = minimum_n(chi, torus.dim);
            return Err(GhcmError::config(format!(
                "n = {n} too small for chi = {chi}: a single block of volume chi*ln n \
                 does not fit; need n >= {min_n:.6}"
            )));
        }
        Ok(BlockGrid::with_blocks_per_side_inner(torus, m, target))
    }

    /// A grid with an explicit number of blocks per side.
    pub fn with_blocks_per_side(torus: Torus, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(GhcmError::config("blocks per side must be at least 1"));
        }
        let vol = (torus.side / m as f64).powi(torus.dim as i32);
        Ok(BlockGrid::with_blocks_per_side_inner(torus, m, vol))
    }

    fn with_blocks_per_side_inner(torus: Torus, m: usize, target: f64) -> Self {
        let block_side = torus.side / m as f64;
        let mut grid = BlockGrid {
            torus,
            blocks_per_side: m,
            block_side,
            target_block_volume: target,
            visible_offsets: Vec::new(),
        };
        grid.visible_offsets = grid.enumerate_visible_offsets();
        grid
    }

    fn enumerate_visible_offsets(&self) -> Vec<Vec<i64>> {
        let s = self.block_side;
        let r = self.torus.radius;
        if s > r {
            return Vec::new();
        }
        let reach = ((r / s).floor() as i64 - 1).max(0);
        // Offsets beyond half the grid wrap onto smaller ones.
        let reach = reach.min(self.blocks_per_side as i64 / 2);
        let d = self.torus.dim;
        let mut out = Vec::new();
        let mut k = vec![-reach; d];
        loop {
            if offset_visible(&k, s, r) {
                out.push(k.clone());
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if k[axis] < reach {
                    k[axis] += 1;
                    break;
                }
                k[axis] = -reach;
            }
        }
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn blocks_per_side(&self) -> usize {
        self.blocks_per_side
    }

    pub fn block_side(&self) -> f64 {
        self.block_side
    }

    pub fn visibility_radius(&self) -> f64 {
        self.torus.radius
    }

    pub fn block_count(&self) -> usize {
        self.blocks_per_side.pow(self.torus.dim as u32)
    }

    pub fn target_block_volume(&self) -> f64 {
        self.target_block_volume
    }

    pub fn block_volume(&self) -> f64 {
        self.block_side.powi(self.torus.dim as i32)
    }

    /// Whether all points of one block see each other (`sqrt(d) * s <= r`).
    pub fn self_visible(&self) -> bool {
        (self.torus.dim as f64).sqrt() * self.block_side <= self.torus.radius
    }

    /// Row-major block index of a point. Coordinates on an interior cell
    /// boundary belong to the higher cell.
    pub fn block_of(&self, p: &TorusPoint) -> usize {
        let half = self.torus.side / 2.0;
        let m = self.blocks_per_side;
        p.coords().iter().fold(0usize, |acc, &x| {
            let c = (((x + half) / self.block_side).floor().max(0.0) as usize).min(m - 1);
            acc * m + c
        })
    }

    pub fn block_coords(&self, index: usize) -> Vec<usize> {
        let m = self.blocks_per_side;
        let mut c = vec![0; self.torus.dim];
        let mut rest = index;
        for slot in c.iter_mut().rev() {
            *slot = rest % m;
            rest /= m;
        }
        c
    }

    fn index_of(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .fold(0, |acc, &c| acc * self.blocks_per_side + c)
    }

    /// Exact block visibility: every pair of points across the two blocks is
    /// within the visibility radius.
    pub fn blocks_visible(&self, i: usize, j: usize) -> bool {
        let m = self.blocks_per_side as i64;
        let a = self.block_coords(i);
        let b = self.block_coords(j);
        let k: Vec<i64> = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| {
                let diff = (x as i64 - y as i64).rem_euclid(m);
                diff.min(m - diff)
            })
            .collect();
        offset_visible(&k, self.block_side, self.torus.radius)
    }

    /// Blocks visible from `i`, excluding `i` itself, ascending.
    pub fn visible_blocks(&self, i: usize) -> Vec<usize> {
        let m = self.blocks_per_side as i64;
        let base = self.block_coords(i);
        let mut coords = vec![0usize; base.len()];
        let mut out: Vec<usize> = self
            .visible_offsets
            .iter()
            .map(|k| {
                for ((slot, &b), &o) in coords.iter_mut().zip(&base).zip(k) {
                    *slot = (b as i64 + o).rem_euclid(m) as usize;
                }
                self.index_of(&coords)
            })
            .filter(|&j| j != i)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn offset_visible(k: &[i64], s: f64, r: f64) -> bool {
    let worst: f64 = k
        .iter()
        .map(|&ki| {
            let w = (ki.unsigned_abs() as f64 + 1.0) * s;
            w * w
        })
        .sum();
    worst.sqrt() <= r
}

/// Smallest `n` (approximately) for which `n >= chi * ln n`, i.e. one block fits.
fn minimum_n(chi: f64, _dim: usize) -> f64 {
    let (mut lo, mut hi) = (1.0f64, 2.0f64);
    while hi < chi * hi.ln() {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid >= chi * mid.ln() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Partitions the torus of `params` into blocks of volume at least
/// `chi * ln n`, requiring that each block is visible to itself.
pub fn build_block_grid(params: &ModelParams, chi: f64) -> Result<BlockGrid> {
    let grid = BlockGrid::tile(Torus::from_params(params), chi)?;
    if !grid.self_visible() {
        return Err(GhcmError::config(format!(
            "block diameter {:.6} exceeds visibility radius {:.6} (chi = {chi} too large)",
            (grid.torus.dim as f64).sqrt() * grid.block_side,
            grid.torus.radius
        )));
    }
    Ok(grid)
}

/// Fixed-radius neighbor index with cells of side at least the visibility
/// radius, so only the `3^d` surrounding cells need scanning.
struct CellIndex {
    cells_per_side: usize,
    cell_side: f64,
    dim: usize,
    starts: Vec<usize>,
    members: Vec<u32>,
}

impl CellIndex {
    fn layout(torus: &Torus) -> (usize, f64) {
        let cells_per_side = ((torus.side / torus.radius).floor() as usize).max(1);
        (cells_per_side, torus.side / cells_per_side as f64)
    }

    /// Row-major index of the cell holding `p`.
    fn cell_of(p: &TorusPoint, torus: &Torus, cells_per_side: usize, cell_side: f64) -> usize {
        let half = torus.side / 2.0;
        p.coords().iter().fold(0usize, |acc, &x| {
            let c = (((x + half) / cell_side).floor().max(0.0) as usize).min(cells_per_side - 1);
            acc * cells_per_side + c
        })
    }

    fn build(points: &[TorusPoint], torus: &Torus) -> Self {
        let (cells_per_side, cell_side) = Self::layout(torus);
        let dim = torus.dim;
        let count = cells_per_side.pow(dim as u32);
        let cells: Vec<usize> = points
            .iter()
            .map(|p| Self::cell_of(p, torus, cells_per_side, cell_side))
            .collect();
        let mut starts = vec![0usize; count + 1];
        for &c in &cells {
            starts[c + 1] += 1;
        }
        for i in 0..count {
            starts[i + 1] += starts[i];
        }
        let mut fill = starts.clone();
        let mut members = vec![0u32; points.len()];
        for (id, &c) in cells.iter().enumerate() {
            members[fill[c]] = id as u32;
            fill[c] += 1;
        }
        CellIndex {
            cells_per_side,
            cell_side,
            dim,
            starts,
            members,
        }
    }

    fn cell_coords(&self, p: &TorusPoint, half: f64) -> Vec<usize> {
        p.coords()
            .iter()
            .map(|&x| {
                (((x + half) / self.cell_side).floor().max(0.0) as usize)
                    .min(self.cells_per_side - 1)
            })
            .collect()
    }

    /// Distinct cells in the wrapped `{-1,0,1}^d` neighborhood of a cell.
    fn neighborhood(&self, base: &[usize]) -> Vec<usize> {
        let c = self.cells_per_side as i64;
        let mut out = Vec::with_capacity(3usize.pow(self.dim as u32));
        let mut k = vec![-1i64; self.dim];
        loop {
            let idx = base.iter().zip(&k).fold(0usize, |acc, (&b, &o)| {
                acc * self.cells_per_side + (b as i64 + o).rem_euclid(c) as usize
            });
            out.push(idx);
            let mut axis = self.dim;
            loop {
                if axis == 0 {
                    out.sort_unstable();
                    out.dedup();
                    return out;
                }
                axis -= 1;
                if k[axis] < 1 {
                    k[axis] += 1;
                    break;
                }
                k[axis] = -1;
            }
        }
    }

    fn cell(&self, idx: usize) -> &[u32] {
        &self.members[self.starts[idx]..self.starts[idx + 1]]
    }
}

/// Stable sort of `points` by a row-major sweep of cells of side at least the
/// visibility radius, so that mutually visible points get nearby indices.
pub fn sort_spatially(points: &mut [TorusPoint], torus: &Torus) {
    let (cells_per_side, cell_side) = CellIndex::layout(torus);
    points.sort_by_cached_key(|p| CellIndex::cell_of(p, torus, cells_per_side, cell_side));
}

/// All unordered pairs `(u, v)`, `u < v`, at toroidal distance at most the
/// visibility radius, sorted lexicographically.
pub fn visible_pairs(points: &[TorusPoint], torus: &Torus) -> Vec<(u32, u32)> {
    if points.len() < 2 {
        return Vec::new();
    }
    let index = CellIndex::build(points, torus);
    let half = torus.side / 2.0;
    let mut out = Vec::new();
    let mut row: Vec<u32> = Vec::new();
    for (u, p) in points.iter().enumerate() {
        let base = index.cell_coords(p, half);
        row.clear();
        for cell in index.neighborhood(&base) {
            for &v in index.cell(cell) {
                if v as usize > u && torus.visible(p, &points[v as usize]) {
                    row.push(v);
                }
            }
        }
        row.sort_unstable();
        out.extend(row.iter().map(|&v| (u as u32, v)));
    }
    out
}
