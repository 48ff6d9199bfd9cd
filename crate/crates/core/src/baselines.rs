//! Reference optimizers and exact oracles: enumeration, layered shortest
//! paths, the closed-form sublevel-set LP, simulated annealing, and a
//! continuous local refiner.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MmrError, Result};
use crate::grid::{GridHierarchy, Point};
use crate::model::{pair_index, pairs, Configuration, PairwiseProblem, Region};

/// Largest product space [`brute_force_discrete`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

fn product_size(sizes: &[usize]) -> u128 {
    sizes.iter().fold(1u128, |acc, &s| acc.saturating_mul(s as u128))
}

fn check_blocks(sizes: &[usize], costs: &[DMatrix<f64>]) -> Result<()> {
    let n = sizes.len();
    if costs.len() != n * n.saturating_sub(1) / 2 {
        return Err(MmrError::ShapeMismatch(format!("{} blocks for {n} particles", costs.len())));
    }
    for (i, j) in pairs(n) {
        let b = &costs[pair_index(i, j, n)];
        if b.nrows() != sizes[i] || b.ncols() != sizes[j] {
            return Err(MmrError::ShapeMismatch(format!("block ({i}, {j})")));
        }
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(MmrError::InvalidArgument("empty state space".into()));
    }
    Ok(())
}

/// Visit every assignment in lexicographic order, passing its total cost.
fn enumerate(sizes: &[usize], costs: &[DMatrix<f64>], mut visit: impl FnMut(&[usize], f64)) {
    let n = sizes.len();
    let mut idx = vec![0usize; n];
    // partial[i] = cost of pairs among particles 0..i
    let mut partial = vec![0.0; n + 1];
    let mut depth = 0;
    loop {
        if depth == n {
            visit(&idx, partial[n]);
            // advance
            loop {
                if depth == 0 {
                    return;
                }
                depth -= 1;
                idx[depth] += 1;
                if idx[depth] < sizes[depth] {
                    break;
                }
                idx[depth] = 0;
            }
        }
        let a = idx[depth];
        let add: f64 = (0..depth)
            .map(|j| costs[pair_index(j, depth, n)][(idx[j], a)])
            .sum();
        partial[depth + 1] = partial[depth] + add;
        depth += 1;
    }
}

/// Exact minimum over the product of discrete spaces. Costs are pair blocks
/// in [`pair_index`] order; ties go to the lexicographically first state.
pub fn brute_force_discrete(sizes: &[usize], costs: &[DMatrix<f64>]) -> Result<(Vec<usize>, f64)> {
    check_blocks(sizes, costs)?;
    let states = product_size(sizes);
    if states > BRUTE_FORCE_LIMIT {
        return Err(MmrError::TooLarge {
            states,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best = (Vec::new(), f64::INFINITY);
    enumerate(sizes, costs, |idx, v| {
        if v < best.1 {
            best = (idx.to_vec(), v);
        }
    });
    Ok(best)
}

/// Number of states within `tol` of the minimum, with the minimum.
pub fn count_minimizers(sizes: &[usize], costs: &[DMatrix<f64>], tol: f64) -> Result<(usize, f64)> {
    let (_, best) = brute_force_discrete(sizes, costs)?;
    let mut count = 0;
    enumerate(sizes, costs, |_, v| {
        if v <= best + tol {
            count += 1;
        }
    });
    Ok((count, best))
}

/// All state values in lexicographic order.
pub fn all_values(sizes: &[usize], costs: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    check_blocks(sizes, costs)?;
    let states = product_size(sizes);
    if states > BRUTE_FORCE_LIMIT {
        return Err(MmrError::TooLarge {
            states,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(states as usize);
    enumerate(sizes, costs, |_, v| out.push(v));
    Ok(out)
}

/// Exact minimum of a continuous problem restricted to listed points.
pub fn brute_force(problem: &PairwiseProblem, points: &[Vec<Point>]) -> Result<(Configuration, f64)> {
    let n = problem.n();
    if points.len() != n {
        return Err(MmrError::ShapeMismatch(format!("{} point lists for {n} particles", points.len())));
    }
    let sizes: Vec<usize> = points.iter().map(Vec::len).collect();
    let states = product_size(&sizes);
    if states > BRUTE_FORCE_LIMIT {
        return Err(MmrError::TooLarge {
            states,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let costs: Vec<DMatrix<f64>> = pairs(n)
        .map(|(i, j)| {
            DMatrix::from_fn(sizes[i], sizes[j], |a, b| {
                if problem.cost.observed(i, j) {
                    problem.cost.cost(i, j, &points[i][a], &points[j][b])
                } else {
                    0.0
                }
            })
        })
        .collect();
    let (idx, v) = brute_force_discrete(&sizes, &costs)?;
    let positions = idx.iter().enumerate().map(|(i, &a)| points[i][a]).collect();
    Ok((Configuration::new(problem.dim, positions), v))
}

/// Exact minimum of `sum_{a<b} H[s_a, s_b]` over sets of `n` distinct
/// points, the discrete optimum of an identical-particle problem.
pub fn brute_force_symmetric(n: usize, cost: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let m = cost.nrows();
    if n > m {
        return Err(MmrError::InvalidArgument(format!("{n} particles on {m} points")));
    }
    let mut combos: u128 = 1;
    for k in 0..n as u128 {
        combos = combos * (m as u128 - k) / (k + 1);
    }
    if combos > BRUTE_FORCE_LIMIT {
        return Err(MmrError::TooLarge {
            states: combos,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best = (Vec::new(), f64::INFINITY);
    let mut set: Vec<usize> = (0..n).collect();
    loop {
        let v: f64 = pairs(n).map(|(a, b)| cost[(set[a], set[b])]).sum();
        if v < best.1 {
            best = (set.clone(), v);
        }
        // next combination
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            if set[k] < m - n + k {
                break;
            }
        }
        set[k] += 1;
        for r in k + 1..n {
            set[r] = set[r - 1] + 1;
        }
    }
}

/// Layered graph: `edges[l]` holds costs from layer `l` to layer `l + 1`.
/// The first and last layers are single anchor vertices.
#[derive(Debug, Clone)]
pub struct ChainProblem {
    pub edges: Vec<DMatrix<f64>>,
}

impl ChainProblem {
    pub fn new(edges: Vec<DMatrix<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(MmrError::InvalidArgument("chain needs at least one edge layer".into()));
        }
        for w in edges.windows(2) {
            if w[0].ncols() != w[1].nrows() {
                return Err(MmrError::ShapeMismatch("consecutive layers disagree".into()));
            }
        }
        if edges[0].nrows() != 1 || edges[edges.len() - 1].ncols() != 1 {
            return Err(MmrError::InvalidArgument("end layers must be singletons".into()));
        }
        Ok(Self { edges })
    }

    /// Layer sizes, endpoints included.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.edges.iter().map(|e| e.nrows()).collect();
        s.push(1);
        s
    }

    /// Pair blocks of the equivalent pairwise problem (zero off the chain).
    pub fn pair_costs(&self) -> Vec<DMatrix<f64>> {
        let sizes = self.sizes();
        let n = sizes.len();
        pairs(n)
            .map(|(i, j)| {
                if j == i + 1 {
                    self.edges[i].clone()
                } else {
                    DMatrix::zeros(sizes[i], sizes[j])
                }
            })
            .collect()
    }
}

/// Dynamic-programming shortest path through the layers.
pub fn shortest_path(chain: &ChainProblem) -> (Vec<usize>, f64) {
    let sizes = chain.sizes();
    let layers = sizes.len();
    let mut dist = vec![vec![f64::INFINITY; 0]; layers];
    let mut back = vec![Vec::new(); layers];
    dist[0] = vec![0.0];
    for l in 1..layers {
        let e = &chain.edges[l - 1];
        let mut d = vec![f64::INFINITY; sizes[l]];
        let mut b = vec![0usize; sizes[l]];
        for t in 0..sizes[l] {
            for s in 0..sizes[l - 1] {
                let v = dist[l - 1][s] + e[(s, t)];
                if v < d[t] {
                    d[t] = v;
                    b[t] = s;
                }
            }
        }
        dist[l] = d;
        back[l] = b;
    }
    let mut path = vec![0usize; layers];
    for l in (1..layers).rev() {
        path[l - 1] = back[l][path[l]];
    }
    (path, dist[layers - 1][0])
}

/// Closed-form optimizer of `min <H, mu>` over `sum mu = t`, `0 <= mu <= 1`:
/// unit mass on the `ceil(t) - 1` lowest states and the remainder
/// `t - ceil(t) + 1` on the next one. Ties go to the lower index.
pub fn sublevel_lp(costs: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 1.0) || t > costs.len() as f64 {
        return Err(MmrError::InvalidArgument(format!(
            "t = {t} must lie in [1, {}]",
            costs.len()
        )));
    }
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    let k = t.ceil() as usize;
    let mut mu = vec![0.0; costs.len()];
    for &s in &order[..k - 1] {
        mu[s] = 1.0;
    }
    mu[order[k - 1]] = t - (k - 1) as f64;
    Ok(mu)
}

/// Per-particle continuous box `[lo, hi]` per axis.
pub type Bounds = [[f64; 2]; 2];

/// Continuous boxes matching each particle's admissible region.
pub fn continuous_bounds(problem: &PairwiseProblem, h: &GridHierarchy) -> Vec<Bounds> {
    let d = h.domain();
    problem
        .regions
        .iter()
        .map(|r| {
            let mut b = [[0.0; 2]; 2];
            for axis in 0..h.dim() {
                b[axis] = [d.lo[axis], d.hi[axis]];
            }
            if let Region::Box(ib) = r {
                let lo = h.lattice_point(ib.lo);
                let hi = h.lattice_point([ib.hi[0] - 1, ib.hi[1].max(1) - 1]);
                for axis in 0..h.dim() {
                    b[axis] = [lo[axis], hi[axis]];
                }
            }
            b
        })
        .collect()
}

fn clamp_point(x: &mut Point, b: &Bounds, dim: usize) {
    for axis in 0..dim {
        x[axis] = x[axis].clamp(b[axis][0], b[axis][1]);
    }
}

/// Uniform draw inside each particle's box; degenerate axes stay fixed.
pub fn random_configuration(bounds: &[Bounds], dim: usize, rng: &mut impl Rng) -> Configuration {
    let positions = bounds
        .iter()
        .map(|b| {
            let mut p = [0.0; 2];
            for axis in 0..dim {
                p[axis] = if b[axis][1] > b[axis][0] {
                    rng.gen_range(b[axis][0]..=b[axis][1])
                } else {
                    b[axis][0]
                };
            }
            p
        })
        .collect();
    Configuration::new(dim, positions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaSettings {
    /// Initial temperature; `None` uses the cost spread over 100 random
    /// configurations.
    pub t0: Option<f64>,
    pub decay: f64,
    /// Proposal standard deviation; `None` uses a twentieth of the domain.
    pub step: Option<f64>,
    /// Total objective evaluations, temperature estimation included.
    pub budget: usize,
}

impl Default for SaSettings {
    fn default() -> Self {
        Self {
            t0: None,
            decay: 0.995,
            step: None,
            budget: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaResult {
    pub configuration: Configuration,
    pub value: f64,
    pub evaluations: usize,
    /// Energy of the current state after each step.
    pub trace: Vec<f64>,
}

/// Metropolis random walk with geometric cooling; returns the best state
/// seen.
pub fn simulated_annealing(
    problem: &PairwiseProblem,
    bounds: &[Bounds],
    start: Option<&Configuration>,
    settings: &SaSettings,
    seed: u64,
) -> Result<SaResult> {
    if settings.budget == 0 {
        return Err(MmrError::InvalidArgument("budget must be positive".into()));
    }
    let n = problem.n();
    let dim = problem.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0usize;
    let width = (0..dim).map(|a| bounds.iter().map(|b| b[a][1] - b[a][0]).fold(0.0, f64::max)).fold(0.0, f64::max);
    let random_config = |rng: &mut ChaCha8Rng| random_configuration(bounds, dim, rng);

    let mut current = match start {
        Some(s) => s.clone(),
        None => random_config(&mut rng),
    };
    let mut e = problem.energy(&current);
    evaluations += 1;
    if !e.is_finite() {
        e = f64::MAX;
    }

    let t0 = match settings.t0 {
        Some(t) => t,
        None => {
            let samples = 100.min(settings.budget - evaluations);
            let vals: Vec<f64> = (0..samples)
                .map(|_| problem.energy(&random_config(&mut rng)))
                .filter(|v| v.is_finite())
                .collect();
            evaluations += samples;
            if vals.len() < 2 {
                1.0
            } else {
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            }
        }
    };
    let sigma = settings.step.unwrap_or(width / 20.0).max(1e-12);
    let normal = Normal::new(0.0, sigma).expect("positive step");
    let movable: Vec<usize> = (0..n)
        .filter(|&i| (0..dim).any(|a| bounds[i][a][1] > bounds[i][a][0]))
        .collect();

    let mut best = (current.clone(), e);
    let mut temp = t0;
    let mut trace = Vec::with_capacity(settings.budget.saturating_sub(evaluations));
    while evaluations < settings.budget {
        if movable.is_empty() {
            evaluations += 1;
            trace.push(e);
            continue;
        }
        let i = movable[rng.gen_range(0..movable.len())];
        let old = current.positions[i];
        let mut x = old;
        for axis in 0..dim {
            x[axis] += normal.sample(&mut rng);
        }
        clamp_point(&mut x, &bounds[i], dim);
        let mut delta = 0.0;
        for j in 0..n {
            if j == i || !problem.cost.observed(i, j) {
                continue;
            }
            let xj = current.positions[j];
            delta += problem.cost.cost(i, j, &x, &xj) - problem.cost.cost(i, j, &old, &xj);
        }
        evaluations += 1;
        let accept = if delta.is_nan() {
            false
        } else if delta <= 0.0 {
            true
        } else if temp > 0.0 {
            rng.gen::<f64>() < (-delta / temp).exp()
        } else {
            false
        };
        if accept {
            current.positions[i] = x;
            e += delta;
            if e < best.1 {
                best = (current.clone(), e);
            }
        }
        trace.push(e);
        temp *= settings.decay;
    }
    let value = problem.energy(&best.0);
    Ok(SaResult {
        configuration: best.0,
        value,
        evaluations,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    /// Projected-gradient norm at which to stop.
    pub tol: f64,
    pub max_iter: usize,
    /// Central-difference step as a fraction of the domain width.
    pub fd_step: f64,
    /// L-BFGS memory.
    pub memory: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5000,
            fd_step: 1e-6,
            memory: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub configuration: Configuration,
    pub value: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting value first.
    pub history: Vec<f64>,
}

fn gradient(problem: &PairwiseProblem, x: &[f64], dim: usize, fd: f64, fixed: &[bool]) -> Vec<f64> {
    let n = problem.n();
    let cost = &problem.cost;
    let pos = |k: usize, x: &[f64]| -> Point {
        let mut p = [0.0; 2];
        p[..dim].copy_from_slice(&x[k * dim..(k + 1) * dim]);
        p
    };
    let mut g = vec![0.0; x.len()];
    for (i, j) in pairs(n) {
        if !cost.observed(i, j) || (fixed[i] && fixed[j]) {
            continue;
        }
        let (xi, xj) = (pos(i, x), pos(j, x));
        let (gi, gj) = match cost.gradient(i, j, &xi, &xj) {
            Some(v) => v,
            None => {
                let mut gi = [0.0; 2];
                let mut gj = [0.0; 2];
                for a in 0..dim {
                    let (mut p, mut m) = (xi, xi);
                    p[a] += fd;
                    m[a] -= fd;
                    gi[a] = (cost.cost(i, j, &p, &xj) - cost.cost(i, j, &m, &xj)) / (2.0 * fd);
                    let (mut p, mut m) = (xj, xj);
                    p[a] += fd;
                    m[a] -= fd;
                    gj[a] = (cost.cost(i, j, &xi, &p) - cost.cost(i, j, &xi, &m)) / (2.0 * fd);
                }
                (gi, gj)
            }
        };
        for a in 0..dim {
            g[i * dim + a] += gi[a];
            g[j * dim + a] += gj[a];
        }
    }
    g
}

/// Projected L-BFGS descent with backtracking; every accepted step strictly
/// lowers the objective. Particles with degenerate boxes stay fixed.
pub fn local_refine(
    problem: &PairwiseProblem,
    start: &Configuration,
    bounds: &[Bounds],
    settings: &RefineSettings,
) -> Result<RefineResult> {
    let n = problem.n();
    let dim = problem.dim;
    if start.len() != n || bounds.len() != n {
        return Err(MmrError::ShapeMismatch("start or bounds length".into()));
    }
    let e0 = problem.energy(start);
    if !e0.is_finite() {
        return Err(MmrError::NonFinite(format!("start energy {e0}")));
    }
    let lo: Vec<f64> = (0..n * dim).map(|k| bounds[k / dim][k % dim][0]).collect();
    let hi: Vec<f64> = (0..n * dim).map(|k| bounds[k / dim][k % dim][1]).collect();
    let fixed: Vec<bool> = (0..n).map(|i| (0..dim).all(|a| bounds[i][a][1] <= bounds[i][a][0])).collect();
    let width = (0..n * dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max).max(1.0);
    let fd = settings.fd_step * width;
    let project = |x: &mut Vec<f64>| {
        for k in 0..x.len() {
            x[k] = x[k].clamp(lo[k], hi[k]);
        }
    };
    let energy = |x: &[f64]| problem.energy(&Configuration::from_flat(dim, x));

    let mut x = start.to_flat();
    project(&mut x);
    let mut e = energy(&x);
    if e > e0 {
        x = start.to_flat();
        e = e0;
    }
    let mut history = vec![e];
    let mut g = gradient(problem, &x, dim, fd, &fixed);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    while iterations < settings.max_iter {
        iterations += 1;
        // projected gradient: zero components pushing out of the box
        let mut pg = g.clone();
        for k in 0..x.len() {
            if fixed[k / dim] || (x[k] <= lo[k] && pg[k] > 0.0) || (x[k] >= hi[k] && pg[k] < 0.0) {
                pg[k] = 0.0;
            }
        }
        if dot(&pg, &pg).sqrt() <= settings.tol {
            break;
        }
        // two-loop recursion
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let a = dot(s, &q) / dot(y, s);
            for k in 0..q.len() {
                q[k] -= a * y[k];
            }
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 0.01 * width / dot(&pg, &pg).sqrt();
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y), a) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = dot(y, &q) / dot(y, s);
            for k in 0..q.len() {
                q[k] += (a - b) * s[k];
            }
        }
        for k in 0..q.len() {
            if pg[k] == 0.0 {
                q[k] = 0.0;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &pg) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            let scale = 0.01 * width / dot(&pg, &pg).sqrt();
            dir = pg.iter().map(|v| -v * scale).collect();
        }

        let slope = dot(&dir, &pg);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut xn);
            let en = energy(&xn);
            if en.is_finite() && en < e + 1e-4 * step * slope.min(0.0) && en < e {
                accepted = Some((xn, en));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, en)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let gn = gradient(problem, &xn, dim, fd, &fixed);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > settings.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let stalled = (e - en).abs() <= 1e-15 * (1.0 + e.abs());
        x = xn;
        e = en;
        g = gn;
        history.push(e);
        if stalled {
            break;
        }
    }
    Ok(RefineResult {
        configuration: Configuration::from_flat(dim, &x),
        value: e,
        iterations,
        history,
    })
}
