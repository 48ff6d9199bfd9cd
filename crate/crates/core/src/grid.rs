//! Nested regular partitions of a box into quadrature points.
//!
//! The finest level is a regular lattice with `base * 2^(K-1)` points per
//! axis, anchored at the lower corner of the box (`lo + idx * h`). Each part
//! at level `k` is a `2 x 2` block (2 in 1D) of parts at level `k + 1`, so a
//! level-`k` part covers `2^(K-k)` finest points per axis. Parts and points
//! are both indexed row-major (`iy * nx + ix`). Levels are numbered from 1
//! (coarsest) to `K` (finest, singleton parts).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{MmrError, Result};

/// A point in the plane. One-dimensional problems leave the second
/// coordinate at zero.
pub type Point = [f64; 2];

/// Axis-aligned box in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 2 {
            return Err(MmrError::InvalidGrid(format!(
                "domain needs 1 or 2 matching bounds, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(MmrError::InvalidGrid(format!(
                    "degenerate interval [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The square `[lo, hi]^2`.
    pub fn square(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo, lo], vec![hi, hi])
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn center(&self) -> Point {
        let mut c = [0.0; 2];
        for a in 0..self.dim() {
            c[a] = 0.5 * (self.lo[a] + self.hi[a]);
        }
        c
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim()).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }
}

/// Half-open rectangle of finest-lattice indices, `lo[a] <= idx[a] < hi[a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: [usize; 2],
    pub hi: [usize; 2],
}

impl IndexBox {
    pub fn is_empty(&self) -> bool {
        self.hi[0] <= self.lo[0] || self.hi[1] <= self.lo[1]
    }

    pub fn extent(&self) -> [usize; 2] {
        [
            self.hi[0].saturating_sub(self.lo[0]),
            self.hi[1].saturating_sub(self.lo[1]),
        ]
    }

    pub fn len(&self) -> usize {
        let e = self.extent();
        e[0] * e[1]
    }

    pub fn intersect(&self, other: &IndexBox) -> IndexBox {
        IndexBox {
            lo: [self.lo[0].max(other.lo[0]), self.lo[1].max(other.lo[1])],
            hi: [self.hi[0].min(other.hi[0]), self.hi[1].min(other.hi[1])],
        }
    }

    pub fn contains(&self, idx: [usize; 2]) -> bool {
        (0..2).all(|a| idx[a] >= self.lo[a] && idx[a] < self.hi[a])
    }
}

/// Adjacency between parts of the same level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodPolicy {
    /// 8-connected in 2D.
    Moore,
    /// 4-connected in 2D.
    Neumann,
}

/// Nested regular partitions of a box, from level 1 (coarsest) to level K
/// (one part per quadrature point).
#[derive(Debug, Clone)]
pub struct GridHierarchy {
    domain: Domain,
    base: Vec<usize>,
    levels: usize,
    fine: [usize; 2],
    spacing: [f64; 2],
    weights: Vec<f64>,
}

impl GridHierarchy {
    /// Regular hierarchy with `base[a]` parts per axis at level 1, refined by
    /// halving cells `levels - 1` times.
    pub fn build_regular(domain: Domain, base: &[usize], levels: usize) -> Result<Self> {
        let dim = domain.dim();
        if base.len() != dim {
            return Err(MmrError::InvalidGrid(format!(
                "base grid has {} axes, domain has {dim}",
                base.len()
            )));
        }
        if levels < 1 {
            return Err(MmrError::InvalidGrid("need at least one level".into()));
        }
        if let Some(b) = base.iter().find(|&&b| b < 2) {
            return Err(MmrError::InvalidGrid(format!(
                "base grid needs at least 2 parts per axis, got {b}"
            )));
        }
        if levels > 24 {
            return Err(MmrError::InvalidGrid(format!("too many levels: {levels}")));
        }
        let mut fine = [1usize; 2];
        let mut spacing = [1.0; 2];
        for a in 0..dim {
            fine[a] = base[a] << (levels - 1);
            spacing[a] = domain.width(a) / fine[a] as f64;
        }
        let m = fine[0] * fine[1];
        Ok(Self {
            domain,
            base: base.to_vec(),
            levels,
            fine,
            spacing,
            weights: vec![1.0; m],
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn base(&self) -> &[usize] {
        &self.base
    }

    /// Number of finest quadrature points `M`.
    pub fn n_points(&self) -> usize {
        self.fine[0] * self.fine[1]
    }

    /// Finest lattice spacing per axis.
    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    /// Finest-lattice points per axis.
    pub fn fine_shape(&self) -> [usize; 2] {
        self.fine
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels {
            Err(MmrError::InvalidLevel {
                level,
                levels: self.levels,
            })
        } else {
            Ok(())
        }
    }

    fn check_part(&self, level: usize, index: usize) -> Result<()> {
        let count = self.n_parts(level);
        if index >= count {
            Err(MmrError::InvalidPart {
                level,
                index,
                count,
            })
        } else {
            Ok(())
        }
    }

    /// Parts per axis at `level`.
    pub fn level_shape(&self, level: usize) -> [usize; 2] {
        let mut s = [1usize; 2];
        for a in 0..self.dim() {
            s[a] = self.base[a] << (level - 1);
        }
        s
    }

    /// Number of parts `M^(k)` at `level`.
    pub fn n_parts(&self, level: usize) -> usize {
        let s = self.level_shape(level);
        s[0] * s[1]
    }

    /// Finest points per axis covered by one part at `level`.
    pub fn part_side(&self, level: usize) -> usize {
        1 << (self.levels - level)
    }

    pub fn lattice_index(&self, q: usize) -> [usize; 2] {
        [q % self.fine[0], q / self.fine[0]]
    }

    pub fn point_index(&self, idx: [usize; 2]) -> usize {
        idx[1] * self.fine[0] + idx[0]
    }

    pub fn point(&self, q: usize) -> Point {
        let idx = self.lattice_index(q);
        self.lattice_point(idx)
    }

    pub fn lattice_point(&self, idx: [usize; 2]) -> Point {
        let mut p = [0.0; 2];
        for a in 0..self.dim() {
            p[a] = self.domain.lo[a] + idx[a] as f64 * self.spacing[a];
        }
        p
    }

    /// Lattice coordinates of part `l` at `level`.
    pub fn part_cell(&self, level: usize, l: usize) -> [usize; 2] {
        let s = self.level_shape(level);
        [l % s[0], l / s[0]]
    }

    pub fn cell_part(&self, level: usize, cell: [usize; 2]) -> usize {
        let s = self.level_shape(level);
        cell[1] * s[0] + cell[0]
    }

    /// Part at `level` containing finest point `q`.
    pub fn part_of(&self, level: usize, q: usize) -> usize {
        let side = self.part_side(level);
        let idx = self.lattice_index(q);
        self.cell_part(level, [idx[0] / side, idx[1] / side])
    }

    /// Finest-lattice rectangle covered by part `l` at `level`.
    pub fn part_box(&self, level: usize, l: usize) -> IndexBox {
        let side = self.part_side(level);
        let cell = self.part_cell(level, l);
        let mut b = IndexBox {
            lo: [0, 0],
            hi: [1, 1],
        };
        for a in 0..self.dim() {
            b.lo[a] = cell[a] * side;
            b.hi[a] = (cell[a] + 1) * side;
        }
        b
    }

    /// Finest points of part `l` at `level`, in increasing index order.
    pub fn part_points(&self, level: usize, l: usize) -> Vec<usize> {
        self.box_points(&self.part_box(level, l))
    }

    pub fn box_points(&self, b: &IndexBox) -> Vec<usize> {
        let mut out = Vec::with_capacity(b.len());
        for iy in b.lo[1]..b.hi[1] {
            for ix in b.lo[0]..b.hi[0] {
                out.push(self.point_index([ix, iy]));
            }
        }
        out
    }

    /// Weighted centroid of part `l` at `level`.
    pub fn part_centroid(&self, level: usize, l: usize) -> Point {
        let b = self.part_box(level, l);
        let mut c = [0.0; 2];
        for a in 0..self.dim() {
            let mid = 0.5 * (b.lo[a] + b.hi[a] - 1) as f64;
            c[a] = self.domain.lo[a] + mid * self.spacing[a];
        }
        c
    }

    /// Parent (at `level - 1`) of part `m` at `level`.
    pub fn parent_of(&self, level: usize, m: usize) -> Result<usize> {
        self.check_level(level)?;
        if level == 1 {
            return Err(MmrError::InvalidArgument(
                "level 1 parts have no parent".into(),
            ));
        }
        self.check_part(level, m)?;
        let cell = self.part_cell(level, m);
        Ok(self.cell_part(level - 1, [cell[0] / 2, cell[1] / 2]))
    }

    /// All parts at `level + 1` whose parent lies in `parts`.
    pub fn children_of(&self, level: usize, parts: &[usize]) -> Result<Vec<usize>> {
        self.check_level(level)?;
        if level == self.levels {
            return Err(MmrError::InvalidLevel {
                level: level + 1,
                levels: self.levels,
            });
        }
        let mut out = BTreeSet::new();
        let fan = if self.dim() == 2 { 2 } else { 1 };
        for &l in parts {
            self.check_part(level, l)?;
            let cell = self.part_cell(level, l);
            for dy in 0..fan {
                for dx in 0..2 {
                    let child = [2 * cell[0] + dx, if fan == 2 { 2 * cell[1] + dy } else { 0 }];
                    out.insert(self.cell_part(level + 1, child));
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Parts adjacent to `l` at `level` (excluding `l`).
    pub fn adjacent_parts(&self, level: usize, l: usize, policy: NeighborhoodPolicy) -> Vec<usize> {
        let s = self.level_shape(level);
        let cell = self.part_cell(level, l);
        let mut out = Vec::with_capacity(8);
        let dy_range: &[i64] = if self.dim() == 2 { &[-1, 0, 1] } else { &[0] };
        for &dy in dy_range {
            for dx in [-1i64, 0, 1] {
                if dx == 0 && dy == 0 {
                    continue;
                }
                if policy == NeighborhoodPolicy::Neumann && dx != 0 && dy != 0 {
                    continue;
                }
                let x = cell[0] as i64 + dx;
                let y = cell[1] as i64 + dy;
                if x < 0 || y < 0 || x >= s[0] as i64 || y >= s[1] as i64 {
                    continue;
                }
                out.push(self.cell_part(level, [x as usize, y as usize]));
            }
        }
        out
    }

    /// `parts` together with every part adjacent to one of them.
    pub fn neighbor_parts(
        &self,
        level: usize,
        parts: &[usize],
        policy: NeighborhoodPolicy,
    ) -> Result<Vec<usize>> {
        self.check_level(level)?;
        let mut out = BTreeSet::new();
        for &l in parts {
            self.check_part(level, l)?;
            out.insert(l);
            out.extend(self.adjacent_parts(level, l, policy));
        }
        Ok(out.into_iter().collect())
    }

    /// Groups of `parts` connected through 8-neighbour adjacency at `level`,
    /// each sorted, ordered by smallest member.
    pub fn clusters(&self, level: usize, parts: &[usize]) -> Vec<Vec<usize>> {
        let members: BTreeSet<usize> = parts.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in &members {
            if !seen.insert(start) {
                continue;
            }
            let mut group = vec![start];
            let mut stack = vec![start];
            while let Some(l) = stack.pop() {
                for m in self.adjacent_parts(level, l, NeighborhoodPolicy::Moore) {
                    if members.contains(&m) && seen.insert(m) {
                        group.push(m);
                        stack.push(m);
                    }
                }
            }
            group.sort_unstable();
            out.push(group);
        }
        out
    }

    /// Finest points covered by `parts` and their adjacent parts.
    pub fn neighborhood(
        &self,
        level: usize,
        parts: &[usize],
        policy: NeighborhoodPolicy,
    ) -> Result<Vec<usize>> {
        let mut pts: Vec<usize> = self
            .neighbor_parts(level, parts, policy)?
            .into_iter()
            .flat_map(|l| self.part_points(level, l))
            .collect();
        pts.sort_unstable();
        Ok(pts)
    }

    /// Finest point closest to `x`; fails if `x` lies outside the domain.
    pub fn nearest_point(&self, x: &Point) -> Result<usize> {
        if !self.domain.contains(x) {
            return Err(MmrError::InvalidArgument(format!(
                "point {:?} outside domain",
                &x[..self.dim()]
            )));
        }
        let mut idx = [0usize; 2];
        for a in 0..self.dim() {
            let t = ((x[a] - self.domain.lo[a]) / self.spacing[a]).round();
            idx[a] = (t.max(0.0) as usize).min(self.fine[a] - 1);
        }
        Ok(self.point_index(idx))
    }

    /// Grid row/column index nearest to coordinate `value` on `axis`.
    pub fn nearest_lattice_coord(&self, axis: usize, value: f64) -> usize {
        let t = ((value - self.domain.lo[axis]) / self.spacing[axis]).round();
        (t.max(0.0) as usize).min(self.fine[axis] - 1)
    }

    /// Every part index at `level`.
    pub fn all_parts(&self, level: usize) -> Vec<usize> {
        (0..self.n_parts(level)).collect()
    }
}

/// Per-particle selected part indices `p_i(k)` at one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedParts {
    pub level: usize,
    pub parts: Vec<Vec<usize>>,
}

impl SelectedParts {
    pub fn new(h: &GridHierarchy, level: usize, parts: Vec<Vec<usize>>) -> Result<Self> {
        h.check_level(level)?;
        for (i, p) in parts.iter().enumerate() {
            if p.is_empty() {
                return Err(MmrError::InvalidArgument(format!(
                    "particle {i} has no selected parts"
                )));
            }
            for &l in p {
                h.check_part(level, l)?;
            }
        }
        Ok(Self { level, parts })
    }

    /// The whole level for each of `n` particles.
    pub fn full(h: &GridHierarchy, level: usize, n: usize) -> Self {
        Self {
            level,
            parts: vec![h.all_parts(level); n],
        }
    }

    /// Union of points `S_{p_i(k)}` for particle `i`.
    pub fn points(&self, h: &GridHierarchy, i: usize) -> Vec<usize> {
        let mut pts: Vec<usize> = self.parts[i]
            .iter()
            .flat_map(|&l| h.part_points(self.level, l))
            .collect();
        pts.sort_unstable();
        pts
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(Vec::len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(base: usize, levels: usize) -> GridHierarchy {
        GridHierarchy::build_regular(Domain::square(0.0, 10.0).unwrap(), &[base, base], levels)
            .unwrap()
    }

    #[test]
    fn part_counts_follow_merging_rule() {
        let h = square(16, 4);
        assert_eq!(h.fine_shape(), [128, 128]);
        assert_eq!(h.n_parts(1), 256);
        let h = square(4, 6);
        for k in 1..=6 {
            assert_eq!(h.n_parts(k), 4usize.pow(k as u32 + 1));
        }
        assert_eq!(h.fine_shape(), [128, 128]);
        assert!((h.spacing()[0] - 0.078125).abs() < 1e-15);
    }

    #[test]
    fn single_level_interval() {
        let h = GridHierarchy::build_regular(Domain::interval(0.0, 1.0).unwrap(), &[2], 1).unwrap();
        assert_eq!(h.n_points(), 2);
        assert_eq!(h.part_points(1, 0), vec![0]);
        assert_eq!(h.part_points(1, 1), vec![1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(GridHierarchy::build_regular(Domain::square(0.0, 1.0).unwrap(), &[4, 4], 0).is_err());
        assert!(Domain::square(1.0, 1.0).is_err());
        assert!(GridHierarchy::build_regular(Domain::square(0.0, 1.0).unwrap(), &[1, 4], 2).is_err());
    }

    #[test]
    fn partitions_are_disjoint_covers() {
        let h = square(3, 4);
        for k in 1..=h.levels() {
            let mut seen = vec![0u32; h.n_points()];
            for l in 0..h.n_parts(k) {
                for q in h.part_points(k, l) {
                    seen[q] += 1;
                    assert_eq!(h.part_of(k, q), l);
                }
            }
            assert!(seen.iter().all(|&c| c == 1));
        }
        for l in 0..h.n_parts(h.levels()) {
            assert_eq!(h.part_points(h.levels(), l), vec![l]);
        }
    }

    #[test]
    fn nested_parts_have_unique_parents() {
        let h = square(2, 4);
        for k in 2..=h.levels() {
            for m in 0..h.n_parts(k) {
                let parent = h.parent_of(k, m).unwrap();
                let pp: BTreeSet<usize> = h.part_points(k - 1, parent).into_iter().collect();
                assert!(h.part_points(k, m).iter().all(|q| pp.contains(q)));
            }
        }
    }

    #[test]
    fn children_examples() {
        let h = square(4, 3);
        assert_eq!(h.children_of(1, &h.all_parts(1)).unwrap(), h.all_parts(2));
        assert_eq!(h.children_of(1, &[5]).unwrap().len(), 4);
        assert!(h.children_of(1, &[]).unwrap().is_empty());
        assert!(h.children_of(3, &[0]).is_err());
        assert!(h.children_of(1, &[16]).is_err());
        let line = GridHierarchy::build_regular(Domain::interval(0.0, 1.0).unwrap(), &[4], 3).unwrap();
        assert_eq!(line.children_of(1, &[1]).unwrap(), vec![2, 3]);
    }

    #[test]
    fn children_then_parents_round_trip() {
        let h = square(3, 3);
        let parts = vec![0, 4, 7];
        let kids = h.children_of(1, &parts).unwrap();
        let mut back: Vec<usize> = kids.iter().map(|&m| h.parent_of(2, m).unwrap()).collect();
        back.sort_unstable();
        back.dedup();
        assert_eq!(back, parts);
        assert_eq!(h.children_of(1, &back).unwrap(), kids);
    }

    #[test]
    fn neighborhood_examples() {
        let h = square(4, 2);
        let interior = h.cell_part(1, [1, 1]);
        assert_eq!(h.neighbor_parts(1, &[interior], NeighborhoodPolicy::Moore).unwrap().len(), 9);
        assert_eq!(h.neighbor_parts(1, &[interior], NeighborhoodPolicy::Neumann).unwrap().len(), 5);
        assert_eq!(h.neighbor_parts(1, &[0], NeighborhoodPolicy::Neumann).unwrap().len(), 3);
        assert_eq!(h.neighbor_parts(1, &[0], NeighborhoodPolicy::Moore).unwrap().len(), 4);
        let pts = h.neighborhood(1, &[interior], NeighborhoodPolicy::Moore).unwrap();
        assert_eq!(pts.len(), 9 * 4);
        let all = h.all_parts(1);
        assert_eq!(h.neighbor_parts(1, &all, NeighborhoodPolicy::Moore).unwrap(), all);
        assert!(h.neighborhood(1, &[99], NeighborhoodPolicy::Moore).is_err());
    }

    #[test]
    fn moore_neighborhood_size_bound() {
        let h = square(4, 3);
        for parts in [vec![0usize], vec![3, 20, 21], vec![10, 11, 12, 13]] {
            let selected: usize = parts.iter().map(|&l| h.part_points(2, l).len()).sum();
            let nb = h.neighborhood(2, &parts, NeighborhoodPolicy::Moore).unwrap();
            assert!(nb.len() <= 9 * selected);
        }
    }

    #[test]
    fn nearest_point_and_centroid() {
        let h = square(4, 3);
        let q = h.nearest_point(&[5.0, 5.0]).unwrap();
        assert_eq!(h.point(q), [5.0, 5.0]);
        assert!(h.nearest_point(&[10.5, 1.0]).is_err());
        let c = h.part_centroid(3, 0);
        assert_eq!(c, h.point(0));
        let c = h.part_centroid(1, 0);
        let s = h.spacing()[0];
        assert!((c[0] - 1.5 * s).abs() < 1e-12);
    }

    #[test]
    fn selected_parts_validation() {
        let h = square(2, 2);
        assert!(SelectedParts::new(&h, 1, vec![vec![0], vec![]]).is_err());
        assert!(SelectedParts::new(&h, 1, vec![vec![4]]).is_err());
        let s = SelectedParts::new(&h, 1, vec![vec![0, 3]]).unwrap();
        assert_eq!(s.points(&h, 0).len(), 8);
    }
}
