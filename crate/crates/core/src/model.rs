//! Pairwise objectives, their discretization on grid points, and the
//! marginal containers shared by the relaxation and the multiscale driver.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MmrError, Result};
use crate::grid::{GridHierarchy, IndexBox, Point};

/// Default clamp for singular or huge cost entries.
pub const DEFAULT_COST_CAP: f64 = 1e6;

/// A pairwise cost `H_ij(x_i, x_j)` over `N` particles.
pub trait PairCost: Send + Sync {
    fn n_particles(&self) -> usize;

    /// `H_ij(x_i, x_j)` for `i != j`. May return `+inf` at singularities.
    fn cost(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> f64;

    /// Gradients of `H_ij` with respect to `x_i` and `x_j`, if known in
    /// closed form.
    fn gradient(&self, _i: usize, _j: usize, _xi: &Point, _xj: &Point) -> Option<(Point, Point)> {
        None
    }

    /// `H_ij = H` for every pair and `H(x, y) = H(y, x)`.
    fn symmetric(&self) -> bool {
        false
    }

    /// Pairs without a measurement contribute nothing to the objective.
    fn observed(&self, _i: usize, _j: usize) -> bool {
        true
    }

    /// `H_ij(x, y)` depends only on `y - x`.
    fn translation_invariant(&self) -> bool {
        false
    }

    /// Pairs sharing a class have identical cost functions; used to share
    /// cached coarse averages.
    fn pair_class(&self, i: usize, j: usize) -> usize {
        if self.symmetric() {
            0
        } else {
            pair_index(i.min(j), i.max(j), self.n_particles())
        }
    }
}

/// Position of pair `(i, j)`, `i < j`, in lexicographic pair order.
pub fn pair_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j`, in [`pair_index`] order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

/// Admissible finest points for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Any,
    /// Rectangle of finest-lattice indices (a singleton pins the particle).
    Box(IndexBox),
}

impl Region {
    pub fn singleton(h: &GridHierarchy, q: usize) -> Self {
        let idx = h.lattice_index(q);
        Region::Box(IndexBox {
            lo: idx,
            hi: [idx[0] + 1, idx[1] + 1],
        })
    }

    pub fn admits(&self, h: &GridHierarchy, q: usize) -> bool {
        match self {
            Region::Any => true,
            Region::Box(b) => b.contains(h.lattice_index(q)),
        }
    }

    /// Admissible part of `b`.
    pub fn clip(&self, b: &IndexBox) -> IndexBox {
        match self {
            Region::Any => *b,
            Region::Box(r) => r.intersect(b),
        }
    }

    pub fn is_singleton(&self) -> bool {
        matches!(self, Region::Box(b) if b.len() == 1)
    }
}

/// A pairwise objective together with per-particle admissible regions.
#[derive(Clone)]
pub struct PairwiseProblem {
    pub cost: Arc<dyn PairCost>,
    pub regions: Vec<Region>,
    pub dim: usize,
}

impl std::fmt::Debug for PairwiseProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairwiseProblem")
            .field("n", &self.n())
            .field("dim", &self.dim)
            .field("symmetric", &self.symmetric())
            .field("regions", &self.regions)
            .finish()
    }
}

impl PairwiseProblem {
    pub fn new(cost: Arc<dyn PairCost>, regions: Vec<Region>, dim: usize) -> Result<Self> {
        if regions.len() != cost.n_particles() {
            return Err(MmrError::ShapeMismatch(format!(
                "{} regions for {} particles",
                regions.len(),
                cost.n_particles()
            )));
        }
        if cost.n_particles() < 2 {
            return Err(MmrError::InvalidArgument("need at least two particles".into()));
        }
        Ok(Self { cost, regions, dim })
    }

    pub fn unconstrained(cost: Arc<dyn PairCost>, dim: usize) -> Result<Self> {
        let n = cost.n_particles();
        Self::new(cost, vec![Region::Any; n], dim)
    }

    pub fn n(&self) -> usize {
        self.cost.n_particles()
    }

    pub fn symmetric(&self) -> bool {
        self.cost.symmetric()
    }

    /// `H(x) = sum_{i<j} H_ij(x_i, x_j)` at a continuous configuration.
    pub fn energy(&self, x: &Configuration) -> f64 {
        pairs(self.n())
            .filter(|&(i, j)| self.cost.observed(i, j))
            .map(|(i, j)| self.cost.cost(i, j, &x.positions[i], &x.positions[j]))
            .sum()
    }
}

/// Positions of all particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub dim: usize,
    pub positions: Vec<Point>,
}

impl Configuration {
    pub fn new(dim: usize, positions: Vec<Point>) -> Self {
        Self { dim, positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn from_points(h: &GridHierarchy, points: &[usize]) -> Self {
        Self {
            dim: h.dim(),
            positions: points.iter().map(|&q| h.point(q)).collect(),
        }
    }

    /// Flattened `N x dim` coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        self.positions
            .iter()
            .flat_map(|p| p[..self.dim].to_vec())
            .collect()
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Self {
        let positions = flat
            .chunks(dim)
            .map(|c| {
                let mut p = [0.0; 2];
                p[..dim].copy_from_slice(c);
                p
            })
            .collect();
        Self { dim, positions }
    }
}

/// Replace `+inf` or over-cap values by `cap`.
pub fn cap_cost(v: f64, cap: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(MmrError::NonFinite("cost evaluated to NaN".into()));
    }
    Ok(if v > cap { cap } else if v < -cap { -cap } else { v })
}

/// Pairwise cost values on (points of `i`) x (points of `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostBlock {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: DMatrix<f64>,
}

/// Evaluate `H_ij` on every pair of listed finest points, clamped at `cap`.
pub fn discretize_pair(
    problem: &PairwiseProblem,
    h: &GridHierarchy,
    i: usize,
    j: usize,
    points_i: &[usize],
    points_j: &[usize],
    cap: f64,
) -> Result<CostBlock> {
    let n = problem.n();
    if i >= n || j >= n || i == j {
        return Err(MmrError::InvalidArgument(format!("bad pair ({i}, {j})")));
    }
    if points_i.is_empty() || points_j.is_empty() {
        return Err(MmrError::InvalidArgument("empty point list".into()));
    }
    let m = h.n_points();
    if let Some(&q) = points_i.iter().chain(points_j).find(|&&q| q >= m) {
        return Err(MmrError::InvalidArgument(format!("point index {q} >= {m}")));
    }
    let mut values = DMatrix::zeros(points_i.len(), points_j.len());
    if problem.cost.observed(i, j) {
        let pj: Vec<Point> = points_j.iter().map(|&q| h.point(q)).collect();
        for (a, &qa) in points_i.iter().enumerate() {
            let xa = h.point(qa);
            for (b, xb) in pj.iter().enumerate() {
                values[(a, b)] = cap_cost(problem.cost.cost(i, j, &xa, xb), cap)?;
            }
        }
    }
    Ok(CostBlock {
        rows: points_i.to_vec(),
        cols: points_j.to_vec(),
        values,
    })
}

/// Weighted average of a finest-level block over `parts_i x parts_j` at
/// `level`. Only rows/columns listed in the block take part; a part with no
/// listed point is an error.
pub fn coarsen_block(
    block: &CostBlock,
    h: &GridHierarchy,
    level: usize,
    parts_i: &[usize],
    parts_j: &[usize],
) -> Result<DMatrix<f64>> {
    let row_groups = group_by_part(&block.rows, h, level, parts_i)?;
    let col_groups = group_by_part(&block.cols, h, level, parts_j)?;
    let mut out = DMatrix::zeros(parts_i.len(), parts_j.len());
    for (a, rows) in row_groups.iter().enumerate() {
        for (b, cols) in col_groups.iter().enumerate() {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for &(r, wr) in rows {
                for &(c, wc) in cols {
                    acc += wr * wc * block.values[(r, c)];
                    wsum += wr * wc;
                }
            }
            out[(a, b)] = acc / wsum;
        }
    }
    Ok(out)
}

fn group_by_part(
    points: &[usize],
    h: &GridHierarchy,
    level: usize,
    parts: &[usize],
) -> Result<Vec<Vec<(usize, f64)>>> {
    let slot: HashMap<usize, usize> = parts.iter().enumerate().map(|(s, &l)| (l, s)).collect();
    let mut groups = vec![Vec::new(); parts.len()];
    for (r, &q) in points.iter().enumerate() {
        if let Some(&s) = slot.get(&h.part_of(level, q)) {
            groups[s].push((r, h.weight(q)));
        }
    }
    if let Some(s) = groups.iter().position(Vec::is_empty) {
        return Err(MmrError::InvalidArgument(format!(
            "part {} has no points in the block",
            parts[s]
        )));
    }
    Ok(groups)
}

type KernelKey = (usize, [usize; 2], [usize; 2], [i64; 2]);

/// Computes part-averaged costs without materializing finest blocks.
///
/// For translation-invariant costs on the regular lattice, the average of
/// `H_ij` over two index rectangles only depends on their extents and
/// relative offset, and equals a sum over difference vectors weighted by
/// the number of point pairs realizing each difference. Those averages are
/// cached per level. Other costs fall back to explicit enumeration.
pub struct CoarseCost<'a> {
    problem: &'a PairwiseProblem,
    h: &'a GridHierarchy,
    cap: f64,
    cache: HashMap<KernelKey, f64>,
}

impl<'a> CoarseCost<'a> {
    pub fn new(problem: &'a PairwiseProblem, h: &'a GridHierarchy, cap: f64) -> Self {
        Self {
            problem,
            h,
            cap,
            cache: HashMap::new(),
        }
    }

    /// Drop cached averages (call between levels to bound memory).
    pub fn clear(&mut self) {
        self.cache.clear();
    }

    /// Admissible rectangle of part `l` for particle `i`, if nonempty.
    pub fn admissible_box(&self, i: usize, level: usize, l: usize) -> Option<IndexBox> {
        let b = self.problem.regions[i].clip(&self.h.part_box(level, l));
        (!b.is_empty()).then_some(b)
    }

    /// Coarse block `H^(k)_ij` over `parts_i x parts_j`.
    pub fn block(
        &mut self,
        level: usize,
        i: usize,
        j: usize,
        parts_i: &[usize],
        parts_j: &[usize],
    ) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(parts_i.len(), parts_j.len());
        if !self.problem.cost.observed(i, j) {
            return Ok(out);
        }
        let boxes_i = self.boxes(i, level, parts_i)?;
        let boxes_j = self.boxes(j, level, parts_j)?;
        for (a, ba) in boxes_i.iter().enumerate() {
            for (b, bb) in boxes_j.iter().enumerate() {
                out[(a, b)] = self.average(i, j, ba, bb)?;
            }
        }
        Ok(out)
    }

    fn boxes(&self, i: usize, level: usize, parts: &[usize]) -> Result<Vec<IndexBox>> {
        parts
            .iter()
            .map(|&l| {
                self.admissible_box(i, level, l).ok_or_else(|| {
                    MmrError::InvalidArgument(format!(
                        "part {l} at level {level} is not admissible for particle {i}"
                    ))
                })
            })
            .collect()
    }

    /// Average of `H_ij` over the point rectangles `ba x bb`.
    pub fn average(&mut self, i: usize, j: usize, ba: &IndexBox, bb: &IndexBox) -> Result<f64> {
        let cost = &self.problem.cost;
        if !cost.translation_invariant() {
            return self.explicit_average(i, j, ba, bb);
        }
        let ea = ba.extent();
        let eb = bb.extent();
        let offset = [
            bb.lo[0] as i64 - ba.lo[0] as i64,
            bb.lo[1] as i64 - ba.lo[1] as i64,
        ];
        if ea == [1, 1] && eb == [1, 1] {
            return self.kernel_average(i, j, ea, eb, offset);
        }
        let key = (cost.pair_class(i, j), ea, eb, offset);
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = self.kernel_average(i, j, ea, eb, offset)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    fn kernel_average(
        &self,
        i: usize,
        j: usize,
        ea: [usize; 2],
        eb: [usize; 2],
        offset: [i64; 2],
    ) -> Result<f64> {
        let spacing = self.h.spacing();
        let origin = self.h.lattice_point([0, 0]);
        let dims = self.h.dim();
        // per-axis pair counts for each index difference t - s
        let axis_counts = |axis: usize| -> Vec<(i64, f64)> {
            let (na, nb) = (ea[axis] as i64, eb[axis] as i64);
            let mut out = Vec::with_capacity((na + nb - 1) as usize);
            for d in (1 - na)..nb {
                // s in [0, na), t = s + d in [0, nb)
                let lo = 0.max(-d);
                let hi = na.min(nb - d);
                if hi > lo {
                    out.push((d + offset[axis], (hi - lo) as f64));
                }
            }
            out
        };
        let cx = axis_counts(0);
        let cy = if dims == 2 { axis_counts(1) } else { vec![(0, 1.0)] };
        let total = (ea[0] * ea[1] * eb[0] * eb[1]) as f64;
        let mut acc = 0.0;
        for &(dy, wy) in &cy {
            for &(dx, wx) in &cx {
                let mut xj = origin;
                xj[0] += dx as f64 * spacing[0];
                if dims == 2 {
                    xj[1] += dy as f64 * spacing[1];
                }
                let v = cap_cost(self.problem.cost.cost(i, j, &origin, &xj), self.cap)?;
                acc += wx * wy * v;
            }
        }
        Ok(acc / total)
    }

    fn explicit_average(&self, i: usize, j: usize, ba: &IndexBox, bb: &IndexBox) -> Result<f64> {
        let pa = self.h.box_points(ba);
        let pb: Vec<Point> = self.h.box_points(bb).iter().map(|&q| self.h.point(q)).collect();
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for &qa in &pa {
            let xa = self.h.point(qa);
            let wa = self.h.weight(qa);
            for (xb, qb) in pb.iter().zip(self.h.box_points(bb)) {
                let w = wa * self.h.weight(qb);
                acc += w * cap_cost(self.problem.cost.cost(i, j, &xa, xb), self.cap)?;
                wsum += w;
            }
        }
        Ok(acc / wsum)
    }
}

/// 1- and 2-marginals returned by a relaxation.
///
/// For the general relaxation `marginals[i]` is `mu_i` and
/// `pair_marginals[pair_index(i, j)]` is `mu_ij`. For the permutation-invariant
/// relaxation there is a single shared `rho` and `gamma`, and
/// `symmetric_particles` holds `N`.
#[derive(Debug, Clone)]
pub struct MarginalSolution {
    pub marginals: Vec<DVector<f64>>,
    pub pair_marginals: Vec<DMatrix<f64>>,
    pub objective: f64,
    pub symmetric_particles: Option<usize>,
    /// The PSD-constrained matrix (`G`, or `diag(rho) + (N-1) gamma`).
    pub moment: DMatrix<f64>,
}

impl MarginalSolution {
    /// Largest deviation from `sum(mu_i) = 1`.
    pub fn normalization_error(&self) -> f64 {
        self.marginals
            .iter()
            .map(|m| (m.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Most negative entry over all marginals (0 if none negative).
    pub fn negativity(&self) -> f64 {
        self.marginals
            .iter()
            .flat_map(|m| m.iter())
            .chain(self.pair_marginals.iter().flat_map(|m| m.iter()))
            .fold(0.0f64, |acc, &v| acc.max(-v))
    }

    /// Largest violation of row/column sums matching the 1-marginals.
    pub fn consistency_error(&self) -> f64 {
        let mut worst = 0.0f64;
        if self.symmetric_particles.is_some() {
            let g = &self.pair_marginals[0];
            let rho = &self.marginals[0];
            for l in 0..rho.len() {
                worst = worst.max((g.row(l).sum() - rho[l]).abs());
                worst = worst.max((g.column(l).sum() - rho[l]).abs());
            }
            return worst;
        }
        let n = self.marginals.len();
        for (i, j) in pairs(n) {
            let m = &self.pair_marginals[pair_index(i, j, n)];
            for a in 0..m.nrows() {
                worst = worst.max((m.row(a).sum() - self.marginals[i][a]).abs());
            }
            for b in 0..m.ncols() {
                worst = worst.max((m.column(b).sum() - self.marginals[j][b]).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Quadratic;
    impl PairCost for Quadratic {
        fn n_particles(&self) -> usize {
            3
        }
        fn cost(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> f64 {
            let d = (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
            (d - 0.3 * (i + j) as f64).powi(2) + 0.1 * xi[0]
        }
    }

    struct Shifted(f64);
    impl PairCost for Shifted {
        fn n_particles(&self) -> usize {
            2
        }
        fn cost(&self, _i: usize, _j: usize, xi: &Point, xj: &Point) -> f64 {
            let d = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2)).sqrt();
            (d - self.0).abs().sqrt()
        }
        fn translation_invariant(&self) -> bool {
            true
        }
    }

    fn grid(levels: usize) -> GridHierarchy {
        GridHierarchy::build_regular(Domain::square(0.0, 1.0).unwrap(), &[2, 2], levels).unwrap()
    }

    #[test]
    fn pair_index_is_lexicographic() {
        let n = 5;
        for (k, (i, j)) in pairs(n).enumerate() {
            assert_eq!(pair_index(i, j, n), k);
        }
    }

    #[test]
    fn coarsen_plain_average() {
        let h = GridHierarchy::build_regular(Domain::interval(0.0, 1.0).unwrap(), &[2], 2).unwrap();
        // level 1 part 0 holds finest points {0, 1}
        let block = CostBlock {
            rows: vec![0, 1],
            cols: vec![0, 1],
            values: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        };
        let c = coarsen_block(&block, &h, 1, &[0], &[0]).unwrap();
        assert_eq!(c[(0, 0)], 2.5);
        assert!(coarsen_block(&block, &h, 1, &[0, 1], &[0]).is_err());
    }

    #[test]
    fn coarsen_constant_and_random_blocks() {
        let h = grid(3);
        let pts: Vec<usize> = (0..h.n_points()).collect();
        let block = CostBlock {
            rows: pts.clone(),
            cols: pts.clone(),
            values: DMatrix::from_element(pts.len(), pts.len(), 3.25),
        };
        for k in 1..=3 {
            let parts = h.all_parts(k);
            let c = coarsen_block(&block, &h, k, &parts, &parts).unwrap();
            assert!(c.iter().all(|&v| (v - 3.25).abs() < 1e-12));
        }

        // 4x4 random block on a 1D grid with 2-point parts, double-loop oracle
        let line = GridHierarchy::build_regular(Domain::interval(0.0, 1.0).unwrap(), &[2], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let block = CostBlock {
            rows: vec![0, 1, 2, 3],
            cols: vec![0, 1, 2, 3],
            values: vals.clone(),
        };
        let c = coarsen_block(&block, &line, 1, &[0, 1], &[0, 1]).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for r in 0..2 {
                    for q in 0..2 {
                        s += vals[(2 * a + r, 2 * b + q)];
                    }
                }
                assert!((c[(a, b)] - s / 4.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coarsening_tower_property() {
        let h = grid(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<usize> = (0..h.n_points()).collect();
        let block = CostBlock {
            rows: pts.clone(),
            cols: pts.clone(),
            values: DMatrix::from_fn(pts.len(), pts.len(), |_, _| rng.gen_range(-1.0..1.0)),
        };
        let fine = coarsen_block(&block, &h, 2, &h.all_parts(2), &h.all_parts(2)).unwrap();
        let mid_block = CostBlock {
            rows: h.all_parts(2).iter().map(|&l| h.part_points(2, l)[0]).collect(),
            cols: h.all_parts(2).iter().map(|&l| h.part_points(2, l)[0]).collect(),
            values: fine,
        };
        // every level-2 part has the same weight sum, so representatives suffice
        let two_step = coarsen_block(&mid_block, &h, 1, &h.all_parts(1), &h.all_parts(1)).unwrap();
        let one_step = coarsen_block(&block, &h, 1, &h.all_parts(1), &h.all_parts(1)).unwrap();
        assert!((two_step - one_step).abs().max() < 1e-12);
    }

    #[test]
    fn discretize_evaluates_and_caps() {
        let h = grid(2);
        let problem = PairwiseProblem::unconstrained(Arc::new(Quadratic), 2).unwrap();
        let pts: Vec<usize> = (0..h.n_points()).collect();
        let b = discretize_pair(&problem, &h, 0, 2, &pts, &pts[..3], 0.05).unwrap();
        assert_eq!(b.values.shape(), (16, 3));
        assert!(b.values.iter().all(|&v| v <= 0.05));
        assert!(discretize_pair(&problem, &h, 0, 0, &pts, &pts, 1.0).is_err());
        assert!(discretize_pair(&problem, &h, 0, 1, &[], &pts, 1.0).is_err());
    }

    #[test]
    fn kernel_average_matches_explicit_coarsening() {
        let h = grid(4);
        let problem = PairwiseProblem::unconstrained(Arc::new(Shifted(0.37)), 2).unwrap();
        let pts: Vec<usize> = (0..h.n_points()).collect();
        let block = discretize_pair(&problem, &h, 0, 1, &pts, &pts, DEFAULT_COST_CAP).unwrap();
        let mut coarse = CoarseCost::new(&problem, &h, DEFAULT_COST_CAP);
        for k in 1..=4 {
            let parts = h.all_parts(k);
            let fast = coarse.block(k, 0, 1, &parts, &parts).unwrap();
            let slow = coarsen_block(&block, &h, k, &parts, &parts).unwrap();
            assert!((fast - slow).abs().max() < 1e-12, "level {k}");
        }
    }

    #[test]
    fn kernel_average_respects_regions() {
        let h = grid(3);
        let row = IndexBox {
            lo: [3, 2],
            hi: [8, 3],
        };
        let problem = PairwiseProblem::new(
            Arc::new(Shifted(0.2)),
            vec![Region::Box(row), Region::Any],
            2,
        )
        .unwrap();
        let mut coarse = CoarseCost::new(&problem, &h, DEFAULT_COST_CAP);
        let parts_i: Vec<usize> = h
            .all_parts(1)
            .into_iter()
            .filter(|&l| coarse.admissible_box(0, 1, l).is_some())
            .collect();
        assert_eq!(parts_i.len(), 2);
        let parts_j = h.all_parts(1);
        let fast = coarse.block(1, 0, 1, &parts_i, &parts_j).unwrap();
        let pts_i: Vec<usize> = (0..h.n_points()).filter(|&q| problem.regions[0].admits(&h, q)).collect();
        let pts_j: Vec<usize> = (0..h.n_points()).collect();
        let block = discretize_pair(&problem, &h, 0, 1, &pts_i, &pts_j, DEFAULT_COST_CAP).unwrap();
        let slow = coarsen_block(&block, &h, 1, &parts_i, &parts_j).unwrap();
        assert!((fast - slow).abs().max() < 1e-12);
    }

    #[test]
    fn symmetric_problem_gives_symmetric_blocks() {
        struct Sym;
        impl PairCost for Sym {
            fn n_particles(&self) -> usize {
                3
            }
            fn cost(&self, _: usize, _: usize, a: &Point, b: &Point) -> f64 {
                (a[0] - b[0]).powi(2) + (a[1] * b[1])
            }
            fn symmetric(&self) -> bool {
                true
            }
        }
        let h = grid(2);
        let problem = PairwiseProblem::unconstrained(Arc::new(Sym), 2).unwrap();
        let pts: Vec<usize> = (0..h.n_points()).collect();
        let b = discretize_pair(&problem, &h, 0, 1, &pts, &pts, DEFAULT_COST_CAP).unwrap();
        assert!((&b.values - b.values.transpose()).abs().max() < 1e-15);
    }
}
