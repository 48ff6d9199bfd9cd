//! Randomized exploration of near-optimal configurations: perturb the
//! finest-level costs with Gaussian noise, re-solve without upper bounds,
//! and read a configuration off the leading eigenvector of the moment
//! matrix.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conic::{top_eigenpair, SolverSettings};
use crate::error::{MmrError, Result};
use crate::grid::GridHierarchy;
use crate::model::{pairs, Configuration, PairwiseProblem};
use crate::relax::{self, certify_exact, Certificate, Pin, RelaxationSpec};

/// Finest-level costs plus a seeded Gaussian perturbation.
#[derive(Debug, Clone)]
pub struct PerturbedInstance {
    pub base_costs: Vec<DMatrix<f64>>,
    pub lambda: f64,
    pub seed: u64,
    /// Standard normal draws (symmetrized in the identical-particle form).
    pub perturbation: Vec<DMatrix<f64>>,
}

impl PerturbedInstance {
    pub fn new(base_costs: Vec<DMatrix<f64>>, lambda: f64, seed: u64, symmetric: bool) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(MmrError::InvalidArgument(format!("lambda {lambda} must be >= 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perturbation = base_costs
            .iter()
            .map(|b| {
                let r = DMatrix::from_fn(b.nrows(), b.ncols(), |_, _| StandardNormal.sample(&mut rng));
                if symmetric {
                    (&r + r.transpose()) / 2f64.sqrt()
                } else {
                    r
                }
            })
            .collect();
        Ok(Self {
            base_costs,
            lambda,
            seed,
            perturbation,
        })
    }

    pub fn perturbed(&self) -> Vec<DMatrix<f64>> {
        self.base_costs
            .iter()
            .zip(&self.perturbation)
            .map(|(b, r)| b + r * self.lambda)
            .collect()
    }
}

/// A hundredth of the spread between the smallest and fifth-smallest cost
/// entries (one per unordered pair of distinct points in the symmetric form).
pub fn default_lambda(costs: &[DMatrix<f64>], symmetric: bool) -> f64 {
    let mut vals: Vec<f64> = Vec::new();
    for c in costs {
        for j in 0..c.ncols() {
            for i in 0..c.nrows() {
                if !(symmetric && i >= j) {
                    vals.push(c[(i, j)]);
                }
            }
        }
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    if vals.len() < 2 {
        return 0.0;
    }
    let k = 4.min(vals.len() - 1);
    0.01 * (vals[k] - vals[0])
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// Grid point per particle.
    pub points: Vec<usize>,
    pub configuration: Configuration,
    /// Energy under the unperturbed continuous cost.
    pub energy: f64,
    pub seed: u64,
    /// Whether the perturbed relaxation returned delta marginals.
    pub exact: bool,
    /// Most negative entry of the sign-normalized eigenvector (0 when the
    /// configuration was rounded directly).
    pub min_eigenvector_entry: f64,
}

/// Sign-normalized leading eigenvector: the largest-magnitude entry is
/// positive. Returns it with the gap to the second eigenvalue.
pub fn leading_vector(m: &DMatrix<f64>) -> (DVector<f64>, f64, f64) {
    let (l1, mut v, l2) = top_eigenpair(m);
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    (v, l1, l2)
}

/// Heaviest `n` entries mapping to distinct points; a repeated point, or
/// one that `conflict`s with a point already taken, is passed over.
pub fn top_distinct(
    v: &DVector<f64>,
    points: &[usize],
    n: usize,
    conflict: impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let distinct: Vec<usize> = order
        .into_iter()
        .scan(Vec::<usize>::new(), |seen, l| {
            if seen.contains(&points[l]) {
                Some(None)
            } else {
                seen.push(points[l]);
                Some(Some(l))
            }
        })
        .flatten()
        .collect();
    let ranked = DVector::from_iterator(distinct.len(), distinct.iter().map(|&l| v[l]));
    relax::top_k_compatible(&ranked, n, |a, b| conflict(distinct[a], distinct[b]))
        .into_iter()
        .map(|a| distinct[a])
        .collect()
}

const MAX_RETRIES: u64 = 5;

/// Solve the perturbed relaxation on the final support and extract one
/// configuration. `active` lists the finest points per particle (one shared
/// list for identical particles); `pins` are local indices of the shared
/// list fixed to `1/N` mass. Pairs whose base cost reaches `forbid_above`
/// are excluded from the relaxation and never rounded together.
pub fn sample_configuration(
    problem: &PairwiseProblem,
    h: &GridHierarchy,
    active: &[Vec<usize>],
    base_costs: &[DMatrix<f64>],
    pins: &[usize],
    lambda: f64,
    seed: u64,
    forbid_above: f64,
    settings: &SolverSettings,
) -> Result<Sample> {
    let n = problem.n();
    let symmetric = problem.symmetric() && active.len() == 1;
    let mut attempt_seed = seed;
    for attempt in 0..=MAX_RETRIES {
        let inst = PerturbedInstance::new(base_costs.to_vec(), lambda, attempt_seed, symmetric)?;
        let costs = inst.perturbed();
        let spec = if symmetric {
            RelaxationSpec::symmetric(n, costs[0].clone())
                .with_pins(pins.iter().map(|&l| Pin { particle: 0, point: l }).collect())
        } else {
            RelaxationSpec::general(active.iter().map(Vec::len).collect(), costs)
        };
        let mut spec = spec;
        spec.forbid_above = forbid_above;
        let (sol, _report) = relax::solve_relaxation(&spec, settings, None)?;

        let (local, exact, min_entry) = match certify_exact(&sol, 1e-4) {
            Certificate::Exact(idx) => (idx, true, 0.0),
            Certificate::Inexact => {
                let (v, l1, l2) = leading_vector(&sol.moment);
                if (l1 - l2).abs() <= 1e-8 * l1.abs().max(1e-300) && attempt < MAX_RETRIES {
                    attempt_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(attempt + 1));
                    continue;
                }
                let min_entry = v.min().min(0.0);
                let idx = if symmetric {
                    top_distinct(&v, &active[0], n, |a, b| !(base_costs[0][(a, b)] < forbid_above))
                } else {
                    let mut off = 0;
                    active
                        .iter()
                        .map(|a| {
                            let block = v.rows(off, a.len()).into_owned();
                            off += a.len();
                            relax::argmax(&block)
                        })
                        .collect()
                };
                (idx, false, min_entry)
            }
        };
        let points: Vec<usize> = if symmetric {
            local.iter().map(|&l| active[0][l]).collect()
        } else {
            local.iter().enumerate().map(|(i, &a)| active[i][a]).collect()
        };
        let configuration = Configuration::from_points(h, &points);
        let energy = problem.energy(&configuration);
        return Ok(Sample {
            points,
            configuration,
            energy,
            seed: attempt_seed,
            exact,
            min_eigenvector_entry: min_entry,
        });
    }
    unreachable!("the last attempt always returns")
}

/// Energy of a rounded discrete state given pair blocks (general form).
pub fn discrete_energy(costs: &[DMatrix<f64>], idx: &[usize]) -> f64 {
    let n = idx.len();
    pairs(n)
        .zip(costs)
        .map(|((i, j), c)| c[(idx[i], idx[j])])
        .sum()
}
