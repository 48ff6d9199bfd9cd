use mmr_core::conic::SolverSettings;
use mmr_core::grid::{Domain, GridHierarchy, NeighborhoodPolicy};
use mmr_core::mmr::*;
use mmr_core::model::{pairs, Configuration};
use mmr_core::problems::{position_error, SnlInstance};
use mmr_core::sampling::sample_configuration;
use mmr_core::mmr::finest_costs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn four_sensor() -> (SnlInstance, GridHierarchy) {
    let truth = vec![[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0], [-1.5, 0.0]];
    let inst = SnlInstance::from_truth(truth, 1, &[(0, 1), (1, 2), (2, 3), (0, 3)], vec![0, 3]);
    // 8 finest points of spacing 0.5 on [-2, 2), merged pairwise over three levels
    let h = GridHierarchy::build_regular(Domain::interval(-2.0, 2.0).unwrap(), &[2], 3).unwrap();
    (inst, h)
}

#[test]
fn four_sensor_cycle_through_the_hierarchy() {
    let (inst, h) = four_sensor();
    let p = inst.problem(&h).unwrap();
    let r = run(&p, &h, &MmrConfig::snl(), &[]).unwrap();
    let xs: Vec<f64> = r.configuration.positions.iter().map(|x| x[0]).collect();
    assert_eq!(xs, vec![0.0, 0.5, -0.5, -1.5]);
    assert!(r.exact);
}

/// Truth on the finest 8 x 8 lattice, every pair measured, no corruption.
fn on_grid_instance(seed: u64) -> (SnlInstance, GridHierarchy) {
    let h = GridHierarchy::build_regular(Domain::square(0.0, 10.0).unwrap(), &[2, 2], 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // anchors at three corners so no reflection maps the truth to itself
    let mut qs: Vec<usize> = vec![h.point_index([0, 0]), h.point_index([7, 0]), h.point_index([0, 7])];
    while qs.len() < 5 {
        let q = rng.gen_range(0..h.n_points());
        if !qs.contains(&q) {
            qs.push(q);
        }
    }
    let truth = qs.iter().map(|&q| h.point(q)).collect();
    let edges: Vec<(usize, usize)> = pairs(5).collect();
    (SnlInstance::from_truth(truth, 2, &edges, vec![0, 1, 2]), h)
}

#[test]
fn noiseless_on_grid_recovery_is_exact() {
    for seed in 0..3 {
        let (inst, h) = on_grid_instance(seed);
        let p = inst.problem(&h).unwrap();
        let truth = Configuration::new(2, inst.truth.clone().unwrap());
        let r = run(&p, &h, &MmrConfig::snl(), &[]).unwrap();
        assert_eq!(position_error(&r.configuration, &truth, &inst.anchors), 0.0, "seed {seed}");
        assert_eq!(p.energy(&r.configuration), 0.0);
        assert!(r.exact);
    }
}

#[test]
fn trace_respects_floor_locality_and_pass_monotonicity() {
    let (inst, h) = on_grid_instance(4);
    let p = inst.problem(&h).unwrap();
    let cfg = MmrConfig::snl();
    let r = run(&p, &h, &cfg, &[]).unwrap();
    let levels = &r.trace.levels;
    assert_eq!(levels.len(), h.levels());
    for (k, lt) in levels.iter().enumerate() {
        for (i, sel) in lt.selected.iter().enumerate() {
            let available = if inst.anchors.contains(&i) { 1 } else { h.n_parts(lt.level) };
            assert!(sel.len() >= cfg.min_support.min(available));
        }
        // thresholding over fixed neighbourhoods only removes
        let refine: Vec<_> = lt.passes.iter().filter(|s| s.stage == "refine").collect();
        for w in refine.windows(2).skip(1) {
            for i in 0..w[0].kept_sizes.len() {
                assert!(w[1].kept_sizes[i] <= w[0].kept_sizes[i] || w[1].solved_sizes != w[0].solved_sizes);
            }
        }
        if k + 1 < levels.len() {
            let next = &levels[k + 1];
            for (i, sel) in lt.selected.iter().enumerate() {
                let children = h.children_of(lt.level, sel).unwrap();
                let admissible = children.iter().filter(|&&l| {
                    h.part_points(next.level, l).iter().any(|&q| p.regions[i].admits(&h, q))
                });
                assert_eq!(next.initial_sizes[i], admissible.count());
            }
        }
    }
}

#[test]
fn wide_open_propagate_matches_the_plain_relaxation() {
    use mmr_core::relax::{solve_relaxation, RelaxationSpec};
    let (inst, h) = on_grid_instance(7);
    let p = inst.problem(&h).unwrap();
    let mut cfg = MmrConfig::snl();
    cfg.solver_tol = 1e-7;
    cfg.max_iter = 20_000;
    let mut m = Mmr::new(&p, &h, &cfg, &[]).unwrap();
    let parts = m.initial_parts();
    // with u = 1 the bound is inactive
    let (_, sol) = m.propagate(&parts, 1.0, 0.05).unwrap();
    let mut coarse = mmr_core::model::CoarseCost::new(&p, &h, cfg.cost_cap);
    let costs = pairs(5)
        .map(|(i, j)| coarse.block(1, i, j, &parts.parts[i], &parts.parts[j]).unwrap())
        .collect();
    let spec = RelaxationSpec::general(parts.sizes(), costs);
    let (plain, _) = solve_relaxation(&spec, &SolverSettings::with_tol(1e-7), None).unwrap();
    assert!((plain.objective - sol.objective).abs() <= 1e-5);
}

#[test]
fn sampling_without_noise_returns_the_mmr_rounding() {
    let (inst, h) = on_grid_instance(1);
    let p = inst.problem(&h).unwrap();
    let cfg = MmrConfig::snl();
    let r = run(&p, &h, &cfg, &[]).unwrap();
    let costs = finest_costs(&p, &h, &r.active, cfg.cost_cap).unwrap();
    let settings = SolverSettings::with_tol(1e-6);
    for lambda in [0.0, 1e-9] {
        let s = sample_configuration(&p, &h, &r.active, &costs, &[], lambda, 3, cfg.forbid_above, &settings).unwrap();
        assert_eq!(s.points, r.rounded_points, "lambda {lambda}");
        assert_eq!(s.energy, p.energy(&r.configuration));
    }
}

#[test]
fn sampling_is_reproducible_and_uses_the_true_cost() {
    let (inst, h) = on_grid_instance(2);
    let p = inst.problem(&h).unwrap();
    let cfg = MmrConfig::snl();
    let r = run(&p, &h, &cfg, &[]).unwrap();
    let costs = finest_costs(&p, &h, &r.active, cfg.cost_cap).unwrap();
    let settings = SolverSettings::with_tol(1e-6);
    let a = sample_configuration(&p, &h, &r.active, &costs, &[], 0.5, 11, cfg.forbid_above, &settings).unwrap();
    let b = sample_configuration(&p, &h, &r.active, &costs, &[], 0.5, 11, cfg.forbid_above, &settings).unwrap();
    assert_eq!(a.points, b.points);
    assert_eq!(a.energy, p.energy(&a.configuration));
    assert!(a.min_eigenvector_entry >= -1e-8);
}

#[test]
fn presets_match_the_documented_schedules() {
    let s = MmrConfig::snl();
    assert_eq!(s.upper_schedule(6).unwrap(), vec![1.0; 6]);
    assert_eq!(s.eta_schedule(6).unwrap(), vec![0.05; 6]);
    assert_eq!((s.min_support, s.refine_iters, s.neighborhood), (3, 3, NeighborhoodPolicy::Moore));
    let l = MmrConfig::lj_symmetric();
    assert_eq!(l.upper_schedule(3).unwrap(), vec![0.1, 1.0, 1.0]);
    assert_eq!(l.eta_schedule(3).unwrap(), vec![0.002, 0.02, 0.02]);
    let a = MmrConfig::lj_asymmetric();
    let u = a.upper_schedule(3).unwrap();
    let eta = a.eta_schedule(3).unwrap();
    for k in 0..3 {
        assert!((eta[k] - 0.01 * u[k]).abs() < 1e-15);
    }
    assert_eq!(a.neighborhood, NeighborhoodPolicy::Neumann);
}
