//! The 2-marginal relaxation and its permutation-invariant variant, written
//! as conic programs over the moment matrix.
//!
//! General form: the PSD variable is `G`, whose diagonal blocks are
//! `diag(mu_i)` and off-diagonal blocks are `mu_ij`.
//!
//! Permutation-invariant form with `diag(gamma) = 0`: the PSD variable is
//! `X = diag(rho) + (N-1) gamma`, so `rho = diag(X)` and `gamma` is the
//! off-diagonal part of `X / (N-1)`. Without the zero-diagonal constraint,
//! `rho` and `diag(gamma)` become auxiliary scalars.

use nalgebra::{DMatrix, DVector};

use crate::conic::{
    self, AffineStructure, AuxVar, ConicProgram, LinearEquality, SolveReport, SolverSettings, WarmStart,
};
use crate::error::{MmrError, Result};
use crate::grid::Point;
use crate::model::{pair_index, pairs, Configuration, MarginalSolution, DEFAULT_COST_CAP};

/// A particle (general form) or a point of the shared list (symmetric
/// form) fixed by an anchor constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pin {
    /// Ignored in the symmetric form.
    pub particle: usize,
    pub point: usize,
}

#[derive(Debug, Clone)]
pub struct RelaxationSpec {
    /// Active point count per particle; a single entry in the symmetric form.
    pub sizes: Vec<usize>,
    /// Pair blocks in [`pair_index`] order, or the single shared matrix in
    /// the symmetric form.
    pub costs: Vec<DMatrix<f64>>,
    /// Entrywise upper bound on 2-marginals.
    pub upper_bound: f64,
    pub pins: Vec<Pin>,
    /// `Some(N)` selects the permutation-invariant form.
    pub symmetric: Option<usize>,
    pub zero_diag: bool,
    /// 2-marginal entries whose cost reaches this value are forced to zero.
    pub forbid_above: f64,
}

impl RelaxationSpec {
    pub fn general(sizes: Vec<usize>, costs: Vec<DMatrix<f64>>) -> Self {
        Self {
            sizes,
            costs,
            upper_bound: 1.0,
            pins: Vec::new(),
            symmetric: None,
            zero_diag: false,
            forbid_above: DEFAULT_COST_CAP,
        }
    }

    pub fn symmetric(n_particles: usize, cost: DMatrix<f64>) -> Self {
        Self {
            sizes: vec![cost.nrows()],
            costs: vec![cost],
            upper_bound: 1.0,
            pins: Vec::new(),
            symmetric: Some(n_particles),
            zero_diag: true,
            forbid_above: DEFAULT_COST_CAP,
        }
    }

    pub fn with_upper_bound(mut self, u: f64) -> Self {
        self.upper_bound = u;
        self
    }

    pub fn with_pins(mut self, pins: Vec<Pin>) -> Self {
        self.pins = pins;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.upper_bound > 0.0 && self.upper_bound <= 1.0) {
            return Err(MmrError::InvalidArgument(format!(
                "upper bound {} outside (0, 1]",
                self.upper_bound
            )));
        }
        if self.sizes.iter().any(|&s| s == 0) {
            return Err(MmrError::InvalidArgument("empty active point list".into()));
        }
        Ok(())
    }
}

/// Block matrix with `diag(mu_i)` on the diagonal and `mu_ij` (`mu_ij^T`
/// below) off the diagonal.
pub fn assemble_g(marginals: &[DVector<f64>], pair_marginals: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n = marginals.len();
    if pair_marginals.len() != n * n.saturating_sub(1) / 2 {
        return Err(MmrError::ShapeMismatch(format!(
            "{} pair blocks for {n} particles",
            pair_marginals.len()
        )));
    }
    let offsets = offsets(&marginals.iter().map(|m| m.len()).collect::<Vec<_>>());
    let dim = offsets[n];
    let mut g = DMatrix::zeros(dim, dim);
    for (i, m) in marginals.iter().enumerate() {
        for a in 0..m.len() {
            g[(offsets[i] + a, offsets[i] + a)] = m[a];
        }
    }
    for (i, j) in pairs(n) {
        let b = &pair_marginals[pair_index(i, j, n)];
        if b.nrows() != marginals[i].len() || b.ncols() != marginals[j].len() {
            return Err(MmrError::ShapeMismatch(format!(
                "block ({i}, {j}) is {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        for a in 0..b.nrows() {
            for c in 0..b.ncols() {
                g[(offsets[i] + a, offsets[j] + c)] = b[(a, c)];
                g[(offsets[j] + c, offsets[i] + a)] = b[(a, c)];
            }
        }
    }
    Ok(g)
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for s in sizes {
        o.push(o.last().unwrap() + s);
    }
    o
}

/// The 2-marginal relaxation over `G`.
pub fn build_general(spec: &RelaxationSpec) -> Result<ConicProgram> {
    spec.check()?;
    let n = spec.sizes.len();
    if n < 2 {
        return Err(MmrError::InvalidArgument("need at least two particles".into()));
    }
    if spec.costs.len() != n * (n - 1) / 2 {
        return Err(MmrError::ShapeMismatch(format!(
            "{} cost blocks for {n} particles",
            spec.costs.len()
        )));
    }
    let off = offsets(&spec.sizes);
    let dim = off[n];
    let mut p = ConicProgram::new(dim);
    p.lower.fill(0.0);
    p.upper.fill(spec.upper_bound);
    for i in 0..n {
        for a in off[i]..off[i + 1] {
            for b in off[i]..off[i + 1] {
                p.upper[(a, b)] = if a == b { 1.0 } else { 0.0 };
            }
        }
    }
    for (i, j) in pairs(n) {
        let h = &spec.costs[pair_index(i, j, n)];
        if h.nrows() != spec.sizes[i] || h.ncols() != spec.sizes[j] {
            return Err(MmrError::ShapeMismatch(format!(
                "cost block ({i}, {j}) is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                spec.sizes[i],
                spec.sizes[j]
            )));
        }
        for a in 0..spec.sizes[i] {
            for b in 0..spec.sizes[j] {
                let (r, c) = (off[i] + a, off[j] + b);
                let v = h[(a, b)];
                if v.is_nan() {
                    return Err(MmrError::NonFinite(format!("cost block ({i}, {j})")));
                }
                if v >= spec.forbid_above {
                    p.upper[(r, c)] = 0.0;
                    p.upper[(c, r)] = 0.0;
                } else {
                    p.cost[(r, c)] = 0.5 * v;
                    p.cost[(c, r)] = 0.5 * v;
                }
            }
        }
    }

    for i in 0..n {
        for a in off[i]..off[i + 1] {
            for b in a + 1..off[i + 1] {
                p.equalities.push(LinearEquality::new(vec![(a, b, 1.0)], 0.0));
            }
        }
        p.equalities.push(LinearEquality::new(
            (off[i]..off[i + 1]).map(|a| (a, a, 1.0)).collect(),
            1.0,
        ));
    }
    for (i, j) in pairs(n) {
        for a in off[i]..off[i + 1] {
            let mut e: Vec<_> = (off[j]..off[j + 1]).map(|b| (a, b, 1.0)).collect();
            e.push((a, a, -1.0));
            p.equalities.push(LinearEquality::new(e, 0.0));
        }
        for b in off[j]..off[j + 1] {
            let mut e: Vec<_> = (off[i]..off[i + 1]).map(|a| (a, b, 1.0)).collect();
            e.push((b, b, -1.0));
            p.equalities.push(LinearEquality::new(e, 0.0));
        }
    }
    for pin in &spec.pins {
        if pin.particle >= n || pin.point >= spec.sizes[pin.particle] {
            return Err(MmrError::InvalidArgument(format!(
                "pin {:?} outside the active set",
                pin
            )));
        }
        let i = pin.particle;
        for a in off[i]..off[i + 1] {
            let v = if a == off[i] + pin.point { 1.0 } else { 0.0 };
            p.lower[(a, a)] = v;
            p.upper[(a, a)] = v;
        }
    }
    p.structure = AffineStructure::Marginal { offsets: off };
    Ok(p)
}

/// The permutation-invariant relaxation over a shared point list.
pub fn build_symmetric(spec: &RelaxationSpec) -> Result<ConicProgram> {
    spec.check()?;
    let n_particles = spec
        .symmetric
        .ok_or_else(|| MmrError::InvalidArgument("spec is not symmetric".into()))?;
    if n_particles < 2 {
        return Err(MmrError::InvalidArgument("need at least two particles".into()));
    }
    if spec.costs.len() != 1 || spec.sizes.len() != 1 {
        return Err(MmrError::ShapeMismatch("symmetric form takes one cost matrix".into()));
    }
    let h = &spec.costs[0];
    let m = spec.sizes[0];
    if h.nrows() != m || h.ncols() != m {
        return Err(MmrError::ShapeMismatch(format!("cost is {}x{}, expected {m}x{m}", h.nrows(), h.ncols())));
    }
    if h.iter().any(|v| v.is_nan()) {
        return Err(MmrError::NonFinite("symmetric cost".into()));
    }
    let nn = n_particles as f64;
    let nm1 = nn - 1.0;
    let mut pin_mass = vec![0.0; m];
    for pin in &spec.pins {
        if pin.point >= m {
            return Err(MmrError::InvalidArgument(format!("pin {:?} outside the active set", pin)));
        }
        pin_mass[pin.point] += 1.0 / nn;
    }
    let pinned: Vec<(usize, f64)> = (0..m).filter(|&l| pin_mass[l] > 0.0).map(|l| (l, pin_mass[l])).collect();
    if pinned.iter().map(|x| x.1).sum::<f64>() > 1.0 + 1e-12 {
        return Err(MmrError::InvalidArgument("more pins than particles".into()));
    }

    let mut p = ConicProgram::new(m);
    p.lower.fill(0.0);
    p.upper.fill(nm1 * spec.upper_bound);
    for l in 0..m {
        for k in 0..m {
            if l == k {
                p.upper[(l, l)] = 1.0;
                continue;
            }
            let v = 0.5 * (h[(l, k)] + h[(k, l)]);
            if v >= spec.forbid_above {
                p.upper[(l, k)] = 0.0;
            } else {
                p.cost[(l, k)] = 0.5 * nn * v;
            }
        }
    }
    for &(l, v) in &pinned {
        p.lower[(l, l)] = v;
        p.upper[(l, l)] = v;
    }
    // Two points each holding exactly one anchor share exactly one pair, so
    // their entry is known; its cost moves into the offset.
    let single: Vec<usize> = pinned
        .iter()
        .filter(|&&(_, v)| (v * nn - 1.0).abs() < 1e-12)
        .map(|&(l, _)| l)
        .collect();
    for &l in &single {
        for &k in &single {
            if l != k {
                p.lower[(l, k)] = 1.0 / nn;
                p.upper[(l, k)] = 1.0 / nn;
                p.cost[(l, k)] = 0.0;
                if l < k {
                    p.offset += 0.5 * (h[(l, k)] + h[(k, l)]);
                }
            }
        }
    }

    if spec.zero_diag {
        for l in 0..m {
            let mut e: Vec<_> = (0..m).filter(|&k| k != l).map(|k| (l, k, 1.0)).collect();
            e.push((l, l, -nm1));
            p.equalities.push(LinearEquality::new(e, 0.0));
        }
        p.equalities
            .push(LinearEquality::new((0..m).map(|l| (l, l, 1.0)).collect(), 1.0));
        for &(l, v) in &pinned {
            p.equalities.push(LinearEquality::new(vec![(l, l, 1.0)], v));
        }
        p.structure = AffineStructure::Symmetric { n_particles, pinned };
    } else {
        // aux 0..m: rho, aux m..2m: diag(gamma)
        for l in 0..m {
            let (lo, hi) = match pin_mass[l] {
                v if v > 0.0 => (v, v),
                _ => (0.0, 1.0),
            };
            p.aux.push(AuxVar { cost: 0.0, lower: lo, upper: hi });
        }
        for l in 0..m {
            p.aux.push(AuxVar {
                cost: 0.5 * nn * nm1 * h[(l, l)].min(spec.forbid_above),
                lower: 0.0,
                upper: if h[(l, l)] >= spec.forbid_above { 0.0 } else { spec.upper_bound },
            });
            p.upper[(l, l)] = 1.0;
            p.lower[(l, l)] = 0.0;
        }
        for l in 0..m {
            let e: Vec<_> = (0..m).filter(|&k| k != l).map(|k| (l, k, 1.0)).collect();
            p.equalities
                .push(LinearEquality::new(e, 0.0).with_aux(vec![(m + l, nm1), (l, -nm1)]));
            p.equalities
                .push(LinearEquality::new(vec![(l, l, 1.0)], 0.0).with_aux(vec![(l, -1.0), (m + l, -nm1)]));
        }
        p.equalities
            .push(LinearEquality::new(Vec::new(), 1.0).with_aux((0..m).map(|l| (l, 1.0)).collect()));
    }
    Ok(p)
}

/// Same program with the 2-marginal bound replaced by `b`.
pub fn sublevel_bound(spec: &RelaxationSpec, b: f64) -> Result<ConicProgram> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(MmrError::InvalidArgument(format!("bound {b} outside (0, 1]")));
    }
    let s = spec.clone().with_upper_bound(b);
    build(&s)
}

/// Dispatch on the spec's form.
pub fn build(spec: &RelaxationSpec) -> Result<ConicProgram> {
    if spec.symmetric.is_some() {
        build_symmetric(spec)
    } else {
        build_general(spec)
    }
}

/// Read marginals back out of a solved program.
pub fn extract(spec: &RelaxationSpec, report: &SolveReport) -> MarginalSolution {
    let x = &report.x;
    match spec.symmetric {
        Some(n_particles) => {
            let m = spec.sizes[0];
            let nm1 = n_particles as f64 - 1.0;
            let mut gamma = DMatrix::from_fn(m, m, |r, c| if r == c { 0.0 } else { x[(r, c)] / nm1 });
            let rho = if spec.zero_diag {
                DVector::from_fn(m, |l, _| x[(l, l)])
            } else {
                for l in 0..m {
                    gamma[(l, l)] = report.y[m + l];
                }
                DVector::from_fn(m, |l, _| report.y[l])
            };
            MarginalSolution {
                marginals: vec![rho],
                pair_marginals: vec![gamma],
                objective: report.objective,
                symmetric_particles: Some(n_particles),
                moment: x.clone(),
            }
        }
        None => {
            let n = spec.sizes.len();
            let off = offsets(&spec.sizes);
            let marginals = (0..n)
                .map(|i| DVector::from_fn(spec.sizes[i], |a, _| x[(off[i] + a, off[i] + a)]))
                .collect();
            let pair_marginals = pairs(n)
                .map(|(i, j)| x.view((off[i], off[j]), (spec.sizes[i], spec.sizes[j])).into_owned())
                .collect();
            MarginalSolution {
                marginals,
                pair_marginals,
                objective: report.objective,
                symmetric_particles: None,
                moment: x.clone(),
            }
        }
    }
}

/// Build, solve, and extract in one call.
pub fn solve_relaxation(
    spec: &RelaxationSpec,
    settings: &SolverSettings,
    warm: Option<&WarmStart>,
) -> Result<(MarginalSolution, SolveReport)> {
    let program = build(spec)?;
    let report = conic::solve(&program, settings, warm)?;
    Ok((extract(spec, &report), report))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    best
}

/// Indices of the `k` largest entries, ordered by decreasing value with
/// ties going to the lower index.
pub fn top_k(v: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Like [`top_k`], but an entry is skipped while it `conflict`s with one
/// already taken. Skipped entries fill any remaining slots in order.
pub fn top_k_compatible(v: &DVector<f64>, k: usize, conflict: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let order = top_k(v, v.len());
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for l in order {
        if chosen.len() == k {
            break;
        }
        if chosen.iter().any(|&c| conflict(c, l)) {
            skipped.push(l);
        } else {
            chosen.push(l);
        }
    }
    chosen.extend(skipped.into_iter().take(k.saturating_sub(chosen.len())));
    chosen
}

/// Per-particle argmax of the 1-marginals, as indices into the active
/// lists. The symmetric form returns the `N` heaviest entries of `rho`.
pub fn round_indices(sol: &MarginalSolution) -> Vec<usize> {
    match sol.symmetric_particles {
        Some(n) => top_k(&sol.marginals[0], n),
        None => sol.marginals.iter().map(argmax).collect(),
    }
}

/// Rounded configuration. `points` lists the active coordinates of each
/// particle (one shared list in the symmetric form).
pub fn round_solution(sol: &MarginalSolution, points: &[Vec<Point>], dim: usize) -> Configuration {
    let idx = round_indices(sol);
    let positions = match sol.symmetric_particles {
        Some(_) => idx.iter().map(|&l| points[0][l]).collect(),
        None => idx.iter().enumerate().map(|(i, &a)| points[i][a]).collect(),
    };
    Configuration::new(dim, positions)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Every 1-marginal is a delta; indices into the active lists.
    Exact(Vec<usize>),
    Inexact,
}

impl Certificate {
    pub fn is_exact(&self) -> bool {
        matches!(self, Certificate::Exact(_))
    }
}

/// Exact recovery test: every `mu_i` has an entry `>= 1 - tol`. In the
/// symmetric form, `N rho` must have `N` entries `>= 1 - tol`.
pub fn certify_exact(sol: &MarginalSolution, tol: f64) -> Certificate {
    match sol.symmetric_particles {
        Some(n) => {
            let rho = &sol.marginals[0];
            let idx = top_k(rho, n);
            if idx.len() == n && idx.iter().all(|&l| n as f64 * rho[l] >= 1.0 - tol) {
                Certificate::Exact(idx)
            } else {
                Certificate::Inexact
            }
        }
        None => {
            let idx: Vec<usize> = sol.marginals.iter().map(argmax).collect();
            if sol.marginals.iter().zip(&idx).all(|(m, &a)| m[a] >= 1.0 - tol) {
                Certificate::Exact(idx)
            } else {
                Certificate::Inexact
            }
        }
    }
}
