//! Sensor network localization and Lennard-Jones cluster instances.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{local_refine, Bounds, RefineResult, RefineSettings};
use crate::error::{MmrError, Result};
use crate::grid::{Domain, GridHierarchy, IndexBox, Point};
use crate::model::{pair_index, pairs, Configuration, PairCost, PairwiseProblem, Region};

fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A localization instance. Distances are stored for observed pairs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnlInstance {
    pub n: usize,
    pub dim: usize,
    /// Ground truth when known.
    pub truth: Option<Vec<Point>>,
    /// `(i, j, D(i, j))` with `i < j`.
    pub observations: Vec<(usize, usize, f64)>,
    pub sigma: f64,
    pub d_max: f64,
    pub anchors: Vec<usize>,
    /// Anchor coordinates, parallel to `anchors`.
    pub anchor_positions: Vec<Point>,
    pub seed: u64,
}

/// Draw a localization instance: truth uniform in the domain, pairs within
/// `d_max` observed, and each observation corrupted with probability
/// `sigma` by a `Unif[0, 3]` offset. The first `n_anchors` sensors are
/// anchors.
pub fn generate_snl(
    n: usize,
    domain: &Domain,
    sigma: f64,
    d_max: f64,
    n_anchors: usize,
    seed: u64,
) -> Result<SnlInstance> {
    if n_anchors > n || n < 2 {
        return Err(MmrError::InvalidArgument(format!("{n} sensors with {n_anchors} anchors")));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(MmrError::InvalidArgument(format!("sigma {sigma} outside [0, 1]")));
    }
    let dim = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<Point> = (0..n)
        .map(|_| {
            let mut p = [0.0; 2];
            for a in 0..dim {
                p[a] = rng.gen_range(domain.lo[a]..domain.hi[a]);
            }
            p
        })
        .collect();
    let mut observations = Vec::new();
    for (i, j) in pairs(n) {
        let d0 = dist(&truth[i], &truth[j]);
        let corrupt = rng.gen_bool(sigma);
        let z: f64 = rng.gen_range(0.0..3.0);
        if d0 <= d_max {
            observations.push((i, j, if corrupt { d0 + z } else { d0 }));
        }
    }
    Ok(SnlInstance {
        n,
        dim,
        anchor_positions: truth[..n_anchors].to_vec(),
        anchors: (0..n_anchors).collect(),
        truth: Some(truth),
        observations,
        sigma,
        d_max,
        seed,
    })
}

impl SnlInstance {
    /// Instance from known positions and an explicit list of measured pairs.
    pub fn from_truth(truth: Vec<Point>, dim: usize, edges: &[(usize, usize)], anchors: Vec<usize>) -> Self {
        let observations = edges
            .iter()
            .map(|&(i, j)| (i.min(j), i.max(j), dist(&truth[i], &truth[j])))
            .collect();
        Self {
            n: truth.len(),
            dim,
            anchor_positions: anchors.iter().map(|&a| truth[a]).collect(),
            anchors,
            truth: Some(truth),
            observations,
            sigma: 0.0,
            d_max: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn cost(&self) -> SnlCost {
        let mut d = DMatrix::zeros(self.n, self.n);
        let mut observed = vec![false; self.n * (self.n - 1) / 2];
        for &(i, j, v) in &self.observations {
            d[(i, j)] = v;
            d[(j, i)] = v;
            observed[pair_index(i.min(j), i.max(j), self.n)] = true;
        }
        SnlCost {
            n: self.n,
            distances: d,
            observed,
        }
    }

    pub fn problem(&self, h: &GridHierarchy) -> Result<PairwiseProblem> {
        PairwiseProblem::new(Arc::new(self.cost()), snl_regions(self, h)?, self.dim)
    }

    /// Continuous boxes for refinement: anchors fixed at their exact
    /// positions, everyone else free in the domain.
    pub fn bounds(&self, domain: &Domain) -> Vec<Bounds> {
        (0..self.n)
            .map(|i| {
                let mut b = [[0.0; 2]; 2];
                for a in 0..self.dim {
                    b[a] = [domain.lo[a], domain.hi[a]];
                }
                if let Some(k) = self.anchors.iter().position(|&x| x == i) {
                    let p = self.anchor_positions[k];
                    for a in 0..self.dim {
                        b[a] = [p[a], p[a]];
                    }
                }
                b
            })
            .collect()
    }
}

/// `|‖x_i - x_j‖ - D(i, j)|^{1/2}` on observed pairs, 0 elsewhere.
#[derive(Debug, Clone)]
pub struct SnlCost {
    n: usize,
    distances: DMatrix<f64>,
    observed: Vec<bool>,
}

impl PairCost for SnlCost {
    fn n_particles(&self) -> usize {
        self.n
    }

    fn cost(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> f64 {
        if i == j || !self.observed(i, j) {
            return 0.0;
        }
        (dist(xi, xj) - self.distances[(i, j)]).abs().sqrt()
    }

    fn observed(&self, i: usize, j: usize) -> bool {
        i != j && self.observed[pair_index(i.min(j), i.max(j), self.n)]
    }

    fn translation_invariant(&self) -> bool {
        true
    }
}

/// `w_ij (‖x_i - x_j‖ - D(i, j))^2`: the quadratic majorizer of the
/// square-root residual cost at a reference configuration.
#[derive(Debug, Clone)]
struct WeightedSnlCost {
    base: SnlCost,
    weights: DMatrix<f64>,
}

impl PairCost for WeightedSnlCost {
    fn n_particles(&self) -> usize {
        self.base.n
    }

    fn cost(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> f64 {
        if !self.base.observed(i, j) {
            return 0.0;
        }
        self.weights[(i, j)] * (dist(xi, xj) - self.base.distances[(i, j)]).powi(2)
    }

    fn gradient(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> Option<(Point, Point)> {
        let d = dist(xi, xj);
        if !self.base.observed(i, j) {
            return Some(([0.0; 2], [0.0; 2]));
        }
        if d == 0.0 {
            return None;
        }
        let c = 2.0 * self.weights[(i, j)] * (d - self.base.distances[(i, j)]) / d;
        let gi = [c * (xi[0] - xj[0]), c * (xi[1] - xj[1])];
        Some((gi, [-gi[0], -gi[1]]))
    }

    fn observed(&self, i: usize, j: usize) -> bool {
        self.base.observed(i, j)
    }
}

/// Smallest smoothing used when reweighting residuals.
const SMOOTHING_FLOOR: f64 = 1e-12;

/// Local refinement for the localization cost: [`local_refine`] followed by
/// iteratively reweighted least squares. Round `k` minimizes the tangent
/// quadratic of the smoothed cost `(r^2 + e_k^2)^{1/4}` at the current
/// residuals, with `e_k` halving each round so the surrogate approaches
/// `|r|^{1/2}`. Anchors are first moved to their exact coordinates; from
/// there the objective never increases.
pub fn refine_snl(
    inst: &SnlInstance,
    start: &Configuration,
    bounds: &[Bounds],
    settings: &RefineSettings,
    rounds: usize,
) -> Result<RefineResult> {
    let cost = inst.cost();
    let problem = PairwiseProblem::unconstrained(Arc::new(cost.clone()), inst.dim)?;
    let mut start = start.clone();
    for (&a, p) in inst.anchors.iter().zip(&inst.anchor_positions) {
        start.positions[a] = *p;
    }
    let mut best = local_refine(&problem, &start, bounds, settings)?;
    let mut current = best.configuration.clone();
    let mut smooth = 0.1;
    for _ in 0..rounds {
        let x = &current.positions;
        let weights = DMatrix::from_fn(inst.n, inst.n, |i, j| {
            if i == j || !cost.observed(i, j) {
                return 0.0;
            }
            let r = dist(&x[i], &x[j]) - cost.distances[(i, j)];
            0.25 * (r * r + smooth * smooth).powf(-0.75)
        });
        // bring typical weights to order one so the stopping tolerance stays meaningful
        let mut w: Vec<f64> = weights.iter().copied().filter(|&v| v > 0.0).collect();
        w.sort_by(f64::total_cmp);
        let scale = w.get(w.len() / 2).copied().unwrap_or(1.0);
        let surrogate = PairwiseProblem::unconstrained(
            Arc::new(WeightedSnlCost {
                base: cost.clone(),
                weights: weights / scale,
            }),
            inst.dim,
        )?;
        let step = local_refine(&surrogate, &current, bounds, settings)?;
        best.iterations += step.iterations;
        current = step.configuration;
        let value = problem.energy(&current);
        if value < best.value {
            best.history.push(value);
            best.configuration = current.clone();
            best.value = value;
        }
        smooth = (smooth * 0.5).max(SMOOTHING_FLOOR);
    }
    Ok(best)
}

/// Anchors are restricted to the grid point nearest their position.
pub fn snl_regions(inst: &SnlInstance, h: &GridHierarchy) -> Result<Vec<Region>> {
    let mut regions = vec![Region::Any; inst.n];
    for (&a, p) in inst.anchors.iter().zip(&inst.anchor_positions) {
        regions[a] = Region::singleton(h, h.nearest_point(p)?);
    }
    Ok(regions)
}

/// Lennard-Jones interaction `eps [(r/d)^12 - 2 (r/d)^6]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LjInstance {
    pub n: usize,
    pub epsilon: f64,
    /// Symmetric equilibrium distances; constant for identical particles.
    pub r: Vec<Vec<f64>>,
    pub symmetric: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LjKind {
    Symmetric,
    Asymmetric,
}

impl LjInstance {
    /// Identical particles with common distance `r`.
    pub fn symmetric(n: usize, epsilon: f64, r: f64) -> Self {
        Self {
            n,
            epsilon,
            r: vec![vec![r; n]; n],
            symmetric: true,
            seed: 0,
        }
    }

    /// Distinct particles with `r_ij ~ Unif(0.5, 1.5)`.
    pub fn asymmetric(n: usize, epsilon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = vec![vec![1.0; n]; n];
        for (i, j) in pairs(n) {
            let v = rng.gen_range(0.5..1.5);
            r[i][j] = v;
            r[j][i] = v;
        }
        Self {
            n,
            epsilon,
            r,
            symmetric: false,
            seed,
        }
    }

    pub fn cost(&self) -> LjCost {
        LjCost {
            n: self.n,
            epsilon: self.epsilon,
            r: DMatrix::from_fn(self.n, self.n, |i, j| self.r[i][j]),
            symmetric: self.symmetric,
        }
    }

    pub fn problem(&self, h: &GridHierarchy) -> Result<(PairwiseProblem, Vec<usize>)> {
        let kind = if self.symmetric {
            LjKind::Symmetric
        } else {
            LjKind::Asymmetric
        };
        let (regions, pins) = lj_regions(kind, h, self.n)?;
        Ok((PairwiseProblem::new(Arc::new(self.cost()), regions, h.dim())?, pins))
    }
}

#[derive(Debug, Clone)]
pub struct LjCost {
    n: usize,
    epsilon: f64,
    r: DMatrix<f64>,
    symmetric: bool,
}

impl LjCost {
    /// Potential as a function of distance for pair `(i, j)`.
    pub fn radial(&self, i: usize, j: usize, d: f64) -> f64 {
        if d == 0.0 {
            return f64::INFINITY;
        }
        let s6 = (self.r[(i, j)] / d).powi(6);
        self.epsilon * (s6 * s6 - 2.0 * s6)
    }
}

impl PairCost for LjCost {
    fn n_particles(&self) -> usize {
        self.n
    }

    fn cost(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> f64 {
        self.radial(i, j, dist(xi, xj))
    }

    fn gradient(&self, i: usize, j: usize, xi: &Point, xj: &Point) -> Option<(Point, Point)> {
        let d = dist(xi, xj);
        if d == 0.0 {
            return None;
        }
        let s6 = (self.r[(i, j)] / d).powi(6);
        // dV/dd = eps * (-12 s^12 + 12 s^6) / d
        let dv = self.epsilon * 12.0 * (s6 - s6 * s6) / d;
        let gi = [dv * (xi[0] - xj[0]) / d, dv * (xi[1] - xj[1]) / d];
        Some((gi, [-gi[0], -gi[1]]))
    }

    fn symmetric(&self) -> bool {
        self.symmetric
    }

    fn translation_invariant(&self) -> bool {
        true
    }
}

/// Admissible regions removing the rigid-motion degeneracy.
///
/// Symmetric clusters return unrestricted regions plus three pinned grid
/// points at the vertices of a unit triangle around the domain center.
/// Asymmetric clusters fix particle 1 at the center, put particle 2 on the
/// center row to the right of it, and particle 3 in the upper half.
pub fn lj_regions(kind: LjKind, h: &GridHierarchy, n: usize) -> Result<(Vec<Region>, Vec<usize>)> {
    if h.dim() != 2 {
        return Err(MmrError::InvalidArgument("cluster constraints need a 2D grid".into()));
    }
    let c = h.domain().center();
    let fine = h.fine_shape();
    let cx = h.nearest_lattice_coord(0, c[0]);
    let cy = h.nearest_lattice_coord(1, c[1]);
    match kind {
        LjKind::Symmetric => {
            let s = 3f64.sqrt() / 4.0;
            let verts = [[c[0] - 0.5, c[1] - s], [c[0] + 0.5, c[1] - s], [c[0], c[1] + s]];
            let pins = verts
                .iter()
                .take(n.min(3))
                .map(|v| h.nearest_point(v))
                .collect::<Result<Vec<_>>>()?;
            Ok((vec![Region::Any; n], pins))
        }
        LjKind::Asymmetric => {
            let mut regions = vec![Region::Any; n];
            regions[0] = Region::singleton(h, h.point_index([cx, cy]));
            if n > 1 {
                regions[1] = Region::Box(IndexBox {
                    lo: [cx, cy],
                    hi: [fine[0], cy + 1],
                });
            }
            if n > 2 {
                regions[2] = Region::Box(IndexBox {
                    lo: [0, cy],
                    hi: [fine[0], fine[1]],
                });
            }
            Ok((regions, Vec::new()))
        }
    }
}

/// Fraction of particles whose every coordinate is within `spacing`.
pub fn success_rate(recovered: &Configuration, truth: &Configuration, spacing: f64) -> f64 {
    let n = truth.len();
    if n == 0 {
        return 1.0;
    }
    let dim = truth.dim;
    let ok = recovered
        .positions
        .iter()
        .zip(&truth.positions)
        .filter(|(a, b)| (0..dim).all(|k| (a[k] - b[k]).abs() < spacing))
        .count();
    ok as f64 / n as f64
}

/// Mean Euclidean error over the particles not listed in `skip`.
pub fn position_error(recovered: &Configuration, truth: &Configuration, skip: &[usize]) -> f64 {
    let errs: Vec<f64> = (0..truth.len())
        .filter(|i| !skip.contains(i))
        .map(|i| dist(&recovered.positions[i], &truth.positions[i]))
        .collect();
    if errs.is_empty() {
        0.0
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}
