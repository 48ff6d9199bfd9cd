use std::sync::Arc;

use mmr_core::baselines::*;
use mmr_core::grid::{Domain, GridHierarchy};
use mmr_core::mmr::finest_costs;
use mmr_core::model::{pairs, Configuration, PairwiseProblem};
use mmr_core::problems::{generate_snl, position_error, refine_snl, LjInstance, SnlInstance};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vertices of `{0 <= mu <= 1, sum mu = t}` have at most one fractional
/// coordinate; enumerate them all and keep the best value.
fn vertex_minimum(costs: &[f64], t: f64) -> f64 {
    let n = costs.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let ones = mask.count_ones() as f64;
        let base: f64 = (0..n).filter(|&s| mask >> s & 1 == 1).map(|s| costs[s]).sum();
        if (ones - t).abs() < 1e-15 {
            best = best.min(base);
        }
        let rest = t - ones;
        if rest > 0.0 && rest < 1.0 {
            for s in (0..n).filter(|&s| mask >> s & 1 == 0) {
                best = best.min(base + rest * costs[s]);
            }
        }
    }
    best
}

#[test]
fn sublevel_lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.gen_range(6..=9);
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sorted = costs.clone();
        sorted.sort_by(f64::total_cmp);
        for t in [1.0, 2.0, 2.5, 5.0] {
            let mu = sublevel_lp(&costs, t).unwrap();
            let value: f64 = mu.iter().zip(&costs).map(|(m, c)| m * c).sum();
            assert!((value - vertex_minimum(&costs, t)).abs() <= 1e-12);
            assert!((mu.iter().sum::<f64>() - t).abs() <= 1e-12);
            let k = t.ceil() as usize;
            let support: Vec<usize> = (0..n).filter(|&s| mu[s] > 0.0).collect();
            let lowest: Vec<usize> = (0..n).filter(|&s| costs[s] <= sorted[k - 1]).collect();
            assert_eq!(support, lowest);
            let e = 0.5 * (sorted[k - 1] + sorted[k]);
            let sublevel: Vec<usize> = (0..n).filter(|&s| costs[s] <= e).collect();
            assert_eq!(support, sublevel);
        }
    }
}

#[test]
fn sublevel_lp_rejects_small_mass() {
    assert!(sublevel_lp(&[1.0, 2.0], 0.5).is_err());
    assert_eq!(sublevel_lp(&[3.0, 1.0, 2.0], 1.0).unwrap(), vec![0.0, 1.0, 0.0]);
}

fn random_chain(rng: &mut ChaCha8Rng) -> ChainProblem {
    let layers = rng.gen_range(3..=6);
    let sizes: Vec<usize> = (0..layers)
        .map(|k| if k == 0 || k == layers - 1 { 1 } else { rng.gen_range(2..=6) })
        .collect();
    let edges = (0..layers - 1)
        .map(|k| DMatrix::from_fn(sizes[k], sizes[k + 1], |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    ChainProblem::new(edges).unwrap()
}

#[test]
fn shortest_path_equals_brute_force_on_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let chain = random_chain(&mut rng);
        let (path, dp) = shortest_path(&chain);
        let (idx, bf) = brute_force_discrete(&chain.sizes(), &chain.pair_costs()).unwrap();
        assert!((dp - bf).abs() <= 1e-12, "{dp} vs {bf}");
        let along: f64 = (0..path.len() - 1).map(|l| chain.edges[l][(path[l], path[l + 1])]).sum();
        assert!((along - dp).abs() <= 1e-12);
        assert_eq!(idx.len(), path.len());
    }
}

#[test]
fn four_sensor_chain_has_zero_cost_path() {
    // anchors 0 and -1.5 at the ends, free sensors on a 1D grid of spacing 0.5
    let truth = vec![[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0], [-1.5, 0.0]];
    let inst = SnlInstance::from_truth(truth, 1, &[(0, 1), (1, 2), (2, 3), (0, 3)], vec![0, 3]);
    let h = GridHierarchy::build_regular(Domain::interval(-2.0, 2.0).unwrap(), &[8], 1).unwrap();
    let p = inst.problem(&h).unwrap();
    let active: Vec<Vec<usize>> = (0..4)
        .map(|i| (0..h.n_points()).filter(|&q| p.regions[i].admits(&h, q)).collect())
        .collect();
    let blocks = finest_costs(&p, &h, &active, 1e6).unwrap();
    // pair order (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    let chain = ChainProblem::new(vec![blocks[0].clone(), blocks[3].clone(), blocks[5].clone()]).unwrap();
    let (path, value) = shortest_path(&chain);
    let xs: Vec<f64> = path.iter().enumerate().map(|(i, &a)| h.point(active[i][a])[0]).collect();
    assert_eq!(xs, vec![0.0, 0.5, -0.5, -1.5]);
    assert_eq!(value, 0.0);
}

#[test]
fn grid_methods_never_beat_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let n = 3;
        let sizes = vec![4usize; n];
        let costs: Vec<DMatrix<f64>> = pairs(n)
            .map(|_| DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let all = all_values(&sizes, &costs).unwrap();
        let (_, best) = brute_force_discrete(&sizes, &costs).unwrap();
        assert!(all.iter().all(|&v| v >= best));
        assert_eq!(all.iter().cloned().fold(f64::INFINITY, f64::min), best);
    }
}

fn lj_pair() -> (PairwiseProblem, Vec<Bounds>) {
    let inst = LjInstance::symmetric(2, 1.0, 1.0);
    let p = PairwiseProblem::unconstrained(Arc::new(inst.cost()), 2).unwrap();
    let b = vec![[[0.0, 3.0], [0.0, 3.0]]; 2];
    (p, b)
}

fn separation(x: &Configuration) -> f64 {
    let (a, b) = (x.positions[0], x.positions[1]);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Root of the radial derivative on `[lo, hi]`, by bisection on the sign
/// of a central difference of the pair potential.
fn radial_minimizer(lo: f64, hi: f64) -> f64 {
    let c = LjInstance::symmetric(2, 1.0, 1.0).cost();
    let slope = |d: f64| c.radial(0, 1, d + 1e-7) - c.radial(0, 1, d - 1e-7);
    let (mut a, mut b) = (lo, hi);
    assert!(slope(a) < 0.0 && slope(b) > 0.0);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if slope(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn refine_two_particles_to_equilibrium() {
    let (p, b) = lj_pair();
    let start = Configuration::new(2, vec![[1.0, 1.5], [2.2, 1.5]]);
    let r = local_refine(&p, &start, &b, &RefineSettings::default()).unwrap();
    let d_star = radial_minimizer(0.8, 2.0);
    assert!((d_star - 1.0).abs() < 1e-9);
    assert!((separation(&r.configuration) - d_star).abs() <= 1e-6);
    assert!(r.history.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn refine_keeps_a_stationary_point() {
    let (p, b) = lj_pair();
    let start = Configuration::new(2, vec![[1.0, 1.5], [2.0, 1.5]]);
    let r = local_refine(&p, &start, &b, &RefineSettings::default()).unwrap();
    assert_eq!(r.configuration, start);
    assert_eq!(r.value, p.energy(&start));
}

#[test]
fn refine_rejects_non_finite_start() {
    let (p, b) = lj_pair();
    let start = Configuration::new(2, vec![[1.0, 1.0], [1.0, 1.0]]);
    assert!(local_refine(&p, &start, &b, &RefineSettings::default()).is_err());
}

#[test]
fn annealing_is_deterministic_per_seed() {
    let (p, b) = lj_pair();
    let s = SaSettings {
        budget: 3000,
        ..SaSettings::default()
    };
    let a = simulated_annealing(&p, &b, None, &s, 5).unwrap();
    let c = simulated_annealing(&p, &b, None, &s, 5).unwrap();
    assert_eq!(a.trace, c.trace);
    assert_eq!(a.configuration, c.configuration);
    let d = simulated_annealing(&p, &b, None, &s, 6).unwrap();
    assert_ne!(a.trace, d.trace);
}

#[test]
fn zero_temperature_annealing_only_descends() {
    let (p, b) = lj_pair();
    let s = SaSettings {
        t0: Some(0.0),
        budget: 2000,
        ..SaSettings::default()
    };
    let r = simulated_annealing(&p, &b, None, &s, 1).unwrap();
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(r.evaluations, 2000);
}

#[test]
fn annealing_finds_the_pair_distance() {
    let (p, b) = lj_pair();
    let s = SaSettings {
        budget: 50_000,
        ..SaSettings::default()
    };
    let r = simulated_annealing(&p, &b, None, &s, 3).unwrap();
    assert!((separation(&r.configuration) - 1.0).abs() <= 0.05, "{}", separation(&r.configuration));
}

#[test]
fn localization_refiner_recovers_truth_from_a_nearby_start() {
    let dom = Domain::square(0.0, 10.0).unwrap();
    // dense sensing: every pair observed, no corruption
    let inst = generate_snl(8, &dom, 0.0, 20.0, 3, 2).unwrap();
    let truth = Configuration::new(2, inst.truth.clone().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut start = truth.clone();
    for x in start.positions.iter_mut().skip(3) {
        x[0] = (x[0] + rng.gen_range(-0.1..0.1)).clamp(0.0, 10.0);
        x[1] = (x[1] + rng.gen_range(-0.1..0.1)).clamp(0.0, 10.0);
    }
    let b = inst.bounds(&dom);
    let p = PairwiseProblem::unconstrained(Arc::new(inst.cost()), 2).unwrap();
    let r = refine_snl(&inst, &start, &b, &RefineSettings::default(), 60).unwrap();
    assert!(r.value <= p.energy(&start));
    assert!(position_error(&r.configuration, &truth, &inst.anchors) < 1e-5);
}
