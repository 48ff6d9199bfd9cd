//! Instance generators shared by the relaxation tests and the acceptance run.

use mmr_core::baselines::ChainProblem;
use mmr_core::grid::{Domain, GridHierarchy, Point};
use mmr_core::mmr::finest_costs;
use mmr_core::problems::SnlInstance;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `N` in 2..=4 particles with 2..=4 states each, costs uniform on [-1, 1].
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<DMatrix<f64>>) {
    let n = rng.gen_range(2..=4);
    let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
    let mut costs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            costs.push(DMatrix::from_fn(sizes[i], sizes[j], |_, _| rng.gen_range(-1.0..1.0)));
        }
    }
    (sizes, costs)
}

pub struct Cycle {
    pub sizes: Vec<usize>,
    pub costs: Vec<DMatrix<f64>>,
    /// Position of each sensor's true point in its active list.
    pub truth: Vec<usize>,
}

/// 1D cycle with anchors at the first and last sensor, on `m` points
/// spanning `[lo, hi)`.
pub fn cycle(truth: &[f64], m: usize, lo: f64, hi: f64) -> Cycle {
    let n = truth.len();
    let pts: Vec<Point> = truth.iter().map(|&x| [x, 0.0]).collect();
    let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    edges.push((0, n - 1));
    let inst = SnlInstance::from_truth(pts, 1, &edges, vec![0, n - 1]);
    let h = GridHierarchy::build_regular(Domain::interval(lo, hi).unwrap(), &[m], 1).unwrap();
    let problem = inst.problem(&h).unwrap();
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..h.n_points()).filter(|&q| problem.regions[i].admits(&h, q)).collect())
        .collect();
    let costs = finest_costs(&problem, &h, &active, 1e6).unwrap();
    let truth = truth
        .iter()
        .enumerate()
        .map(|(i, &x)| active[i].iter().position(|&q| (h.point(q)[0] - x).abs() < 1e-12).unwrap())
        .collect();
    Cycle {
        sizes: active.iter().map(Vec::len).collect(),
        costs,
        truth,
    }
}

/// Chain with singleton end layers and `lo..hi` uniform edge costs.
pub fn random_chain(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ChainProblem {
    let layers = rng.gen_range(3..=6);
    let sizes: Vec<usize> = (0..layers)
        .map(|k| if k == 0 || k == layers - 1 { 1 } else { rng.gen_range(2..=5) })
        .collect();
    let edges = (0..layers - 1)
        .map(|k| DMatrix::from_fn(sizes[k], sizes[k + 1], |_, _| rng.gen_range(lo..hi)))
        .collect();
    ChainProblem::new(edges).unwrap()
}
