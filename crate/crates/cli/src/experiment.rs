//! Orchestration of the four subcommands. Each seed's pipeline runs
//! sequentially; seeds run in parallel on the configured pool.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;
use mmr_core::baselines::{
    brute_force_discrete, continuous_bounds, local_refine, random_configuration, shortest_path, simulated_annealing,
    Bounds, ChainProblem, RefineSettings, SaSettings,
};
use mmr_core::conic::SolverSettings;
use mmr_core::grid::GridHierarchy;
use mmr_core::mmr::{finest_costs, run, MmrConfig, MmrResult, MmrTrace};
use mmr_core::model::{pair_index, Configuration, PairwiseProblem};
use mmr_core::problems::{generate_snl, position_error, refine_snl, success_rate, LjInstance, SnlInstance};
use mmr_core::relax::{solve_relaxation, RelaxationSpec};
use mmr_core::sampling::{default_lambda, sample_configuration};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Method, ProblemConfig, RunConfig};

/// Exact-recovery threshold on the mean position error.
pub const EXACT_RECOVERY: f64 = 1e-5;

pub struct Instance {
    pub problem: PairwiseProblem,
    /// Finest points fixed by anchors in the identical-particle form.
    pub pins: Vec<usize>,
    pub snl: Option<SnlInstance>,
    pub truth: Option<Configuration>,
    pub anchors: Vec<usize>,
    pub bounds: Vec<Bounds>,
}

pub fn build_instance(cfg: &RunConfig, h: &GridHierarchy, seed: u64) -> Result<Instance> {
    let domain = h.domain();
    let snl_instance = |inst: SnlInstance| -> Result<Instance> {
        Ok(Instance {
            problem: inst.problem(h)?,
            pins: Vec::new(),
            truth: inst.truth.clone().map(|t| Configuration::new(inst.dim, t)),
            anchors: inst.anchors.clone(),
            bounds: inst.bounds(domain),
            snl: Some(inst),
        })
    };
    let lj_instance = |inst: LjInstance| -> Result<Instance> {
        let (problem, pins) = inst.problem(h)?;
        Ok(Instance {
            bounds: continuous_bounds(&problem, h),
            problem,
            pins,
            snl: None,
            truth: None,
            anchors: Vec::new(),
        })
    };
    match &cfg.problem {
        &ProblemConfig::Snl {
            n,
            anchors,
            sigma,
            d_max,
        } => snl_instance(generate_snl(n, domain, sigma, d_max, anchors, seed)?),
        ProblemConfig::Cycle { truth } => {
            let n = truth.len();
            let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            edges.push((0, n - 1));
            let pts = truth.iter().map(|&x| [x, 0.0]).collect();
            snl_instance(SnlInstance::from_truth(pts, 1, &edges, vec![0, n - 1]))
        }
        &ProblemConfig::LjSymmetric { n, epsilon, r } => lj_instance(LjInstance::symmetric(n, epsilon, r)),
        &ProblemConfig::LjAsymmetric { n, epsilon } => lj_instance(LjInstance::asymmetric(n, epsilon, seed)),
    }
}

impl Instance {
    pub fn refine(&self, start: &Configuration, rounds: usize) -> Result<Configuration> {
        let settings = RefineSettings::default();
        let r = match &self.snl {
            Some(inst) => refine_snl(inst, start, &self.bounds, &settings, rounds)?,
            None => local_refine(&self.problem, start, &self.bounds, &settings)?,
        };
        Ok(r.configuration)
    }

    pub fn eps_p(&self, x: &Configuration) -> Option<f64> {
        self.truth.as_ref().map(|t| position_error(x, t, &self.anchors))
    }
}

/// Worker pool capped by `MMR_THREADS` when set.
pub fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("MMR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("MMR_THREADS={v:?} is not a count"))?;
        if n == 0 {
            bail!("MMR_THREADS must be at least 1");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn positions(x: &Configuration) -> Vec<Vec<f64>> {
    x.positions.iter().map(|p| p[..x.dim].to_vec()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub grid_positions: Vec<Vec<f64>>,
    pub grid_energy: f64,
    pub refined_positions: Vec<Vec<f64>>,
    pub refined_energy: f64,
    pub eps_p: Option<f64>,
    /// Energy of the reported (refined) configuration.
    pub eps_e: f64,
    pub success_rate: Option<f64>,
    pub exact_certificate: bool,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

pub struct SolveRun {
    pub record: RunRecord,
    pub trace: MmrTrace,
}

fn mmr_for(cfg: &RunConfig, h: &GridHierarchy, inst: &Instance) -> Result<MmrResult> {
    Ok(run(&inst.problem, h, &cfg.mmr(), &inst.pins)?)
}

fn record(seed: u64, h: &GridHierarchy, inst: &Instance, r: &MmrResult, rounds: usize, t: Instant) -> Result<RunRecord> {
    let refined = inst.refine(&r.configuration, rounds)?;
    let grid_energy = inst.problem.energy(&r.configuration);
    let refined_energy = inst.problem.energy(&refined);
    info!("seed {seed}: grid {grid_energy:.6} refined {refined_energy:.6}");
    Ok(RunRecord {
        seed,
        grid_positions: positions(&r.configuration),
        grid_energy,
        refined_positions: positions(&refined),
        refined_energy,
        eps_p: inst.eps_p(&refined),
        eps_e: refined_energy,
        success_rate: inst.truth.as_ref().map(|tr| success_rate(&refined, tr, h.spacing()[0])),
        exact_certificate: r.exact,
        warnings: r.trace.warnings.clone(),
        seconds: t.elapsed().as_secs_f64(),
    })
}

fn solve_one(cfg: &RunConfig, h: &GridHierarchy, seed: u64) -> Result<SolveRun> {
    let t = Instant::now();
    let inst = build_instance(cfg, h, seed)?;
    let r = mmr_for(cfg, h, &inst)?;
    Ok(SolveRun {
        record: record(seed, h, &inst, &r, cfg.baselines.refine_rounds, t)?,
        trace: r.trace,
    })
}

fn seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.run.seeds as u64).map(|k| cfg.run.seed + k).collect()
}

pub fn solve(cfg: &RunConfig, h: &GridHierarchy) -> Result<Vec<SolveRun>> {
    pool()?.install(|| seeds(cfg).into_par_iter().map(|s| solve_one(cfg, h, s)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub lambda: f64,
    pub grid_energy: f64,
    pub refined_energy: f64,
    pub exact: bool,
    pub grid_positions: Vec<Vec<f64>>,
    pub refined_positions: Vec<Vec<f64>>,
    pub seconds: f64,
}

pub struct SampleRun {
    pub base: SolveRun,
    pub lambda: f64,
    pub samples: Vec<SampleRecord>,
}

/// One MMR run on the instance of `run.seed`, then `sampling.seeds`
/// perturbed re-solves on its finest support.
pub fn sample(cfg: &RunConfig, h: &GridHierarchy, lambda: Option<f64>) -> Result<SampleRun> {
    let seed = cfg.run.seed;
    let t = Instant::now();
    let inst = build_instance(cfg, h, seed)?;
    let mmr: MmrConfig = cfg.mmr();
    let r = mmr_for(cfg, h, &inst)?;
    let costs = finest_costs(&inst.problem, h, &r.active, mmr.cost_cap)?;
    let symmetric = r.active.len() == 1;
    let local_pins: Vec<usize> = if symmetric {
        inst.pins
            .iter()
            .map(|q| r.active[0].binary_search(q).map_err(|_| anyhow::anyhow!("pin {q} left the support")))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let lambda = lambda.or(cfg.sampling.lambda).unwrap_or_else(|| default_lambda(&costs, symmetric));
    let settings = SolverSettings {
        max_iter: cfg.sampling.max_iter,
        ..SolverSettings::with_tol(cfg.sampling.solver_tol)
    };
    let base = SolveRun {
        record: record(seed, h, &inst, &r, cfg.baselines.refine_rounds, t)?,
        trace: r.trace.clone(),
    };
    let draws: Vec<u64> = (0..cfg.sampling.seeds as u64).collect();
    let samples = pool()?.install(|| {
        draws
            .into_par_iter()
            .map(|s| -> Result<SampleRecord> {
                let t = Instant::now();
                let x = sample_configuration(
                    &inst.problem,
                    h,
                    &r.active,
                    &costs,
                    &local_pins,
                    lambda,
                    s,
                    mmr.forbid_above,
                    &settings,
                )?;
                let refined = inst.refine(&x.configuration, cfg.baselines.refine_rounds)?;
                Ok(SampleRecord {
                    seed: s,
                    lambda,
                    grid_energy: x.energy,
                    refined_energy: inst.problem.energy(&refined),
                    exact: x.exact,
                    grid_positions: positions(&x.configuration),
                    refined_positions: positions(&refined),
                    seconds: t.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(SampleRun { base, lambda, samples })
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodRecord {
    pub seed: u64,
    pub method: &'static str,
    pub eps_p: Option<f64>,
    pub eps_e: f64,
    pub positions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: &'static str,
    pub runs: usize,
    pub eps_p_mean: Option<f64>,
    pub eps_p_std: Option<f64>,
    pub eps_e_mean: f64,
    pub eps_e_std: f64,
    pub exact_rate: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub fn summarize(records: &[MethodRecord], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&MethodRecord> = records.iter().filter(|r| r.method == m.name()).collect();
            let energies: Vec<f64> = rows.iter().map(|r| r.eps_e).collect();
            let errors: Option<Vec<f64>> = rows.iter().map(|r| r.eps_p).collect();
            let (e_mean, e_std) = mean_std(&energies);
            let p = errors.as_ref().map(|e| mean_std(e));
            MethodSummary {
                method: m.name(),
                runs: rows.len(),
                eps_p_mean: p.map(|x| x.0),
                eps_p_std: p.map(|x| x.1),
                eps_e_mean: e_mean,
                eps_e_std: e_std,
                exact_rate: errors
                    .map(|e| e.iter().filter(|&&x| x < EXACT_RECOVERY).count() as f64 / e.len() as f64),
            }
        })
        .collect()
}

fn compare_one(cfg: &RunConfig, h: &GridHierarchy, seed: u64, methods: &[Method]) -> Result<Vec<MethodRecord>> {
    let inst = build_instance(cfg, h, seed)?;
    let rounds = cfg.baselines.refine_rounds;
    let needs_mmr = methods.iter().any(|m| matches!(m, Method::Mmr | Method::MmrRefine));
    let grid = if needs_mmr {
        Some(mmr_for(cfg, h, &inst)?.configuration)
    } else {
        None
    };
    let mut out = Vec::new();
    for &m in methods {
        let x = match m {
            Method::Mmr => grid.clone().expect("mmr ran"),
            Method::MmrRefine => inst.refine(grid.as_ref().expect("mmr ran"), rounds)?,
            Method::Sa => {
                let s = SaSettings {
                    budget: cfg.baselines.sa_budget,
                    ..SaSettings::default()
                };
                simulated_annealing(&inst.problem, &inst.bounds, None, &s, seed)?.configuration
            }
            Method::LocalOnly => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
                let start = random_configuration(&inst.bounds, h.dim(), &mut rng);
                inst.refine(&start, rounds)?
            }
        };
        out.push(MethodRecord {
            seed,
            method: m.name(),
            eps_p: inst.eps_p(&x),
            eps_e: inst.problem.energy(&x),
            positions: positions(&x),
        });
    }
    Ok(out)
}

pub fn compare(cfg: &RunConfig, h: &GridHierarchy, methods: &[Method]) -> Result<Vec<MethodRecord>> {
    if methods.is_empty() {
        bail!("compare needs at least one method");
    }
    let per_seed: Vec<Vec<MethodRecord>> =
        pool()?.install(|| seeds(cfg).into_par_iter().map(|s| compare_one(cfg, h, s, methods)).collect::<Result<_>>())?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub states: u128,
    pub brute_force: f64,
    pub brute_force_positions: Vec<Vec<f64>>,
    /// Cycle problems only: the chain left after fixing both anchors.
    pub shortest_path: Option<f64>,
    pub relaxation: f64,
}

/// Exhaustive, dynamic-programming and relaxation values on the finest
/// grid of a small instance.
pub fn oracle(cfg: &RunConfig, h: &GridHierarchy) -> Result<OracleReport> {
    let inst = build_instance(cfg, h, cfg.run.seed)?;
    let p = &inst.problem;
    let n = p.n();
    if p.symmetric() {
        bail!("oracle works on distinguishable particles only");
    }
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..h.n_points()).filter(|&q| p.regions[i].admits(h, q)).collect())
        .collect();
    let sizes: Vec<usize> = active.iter().map(Vec::len).collect();
    let states = sizes.iter().map(|&s| s as u128).product();
    let costs = finest_costs(p, h, &active, cfg.mmr().cost_cap)?;
    let (idx, brute_force) = brute_force_discrete(&sizes, &costs)?;
    let best = Configuration::new(h.dim(), idx.iter().enumerate().map(|(i, &a)| h.point(active[i][a])).collect());
    let shortest = match &cfg.problem {
        ProblemConfig::Cycle { .. } => {
            let chain = ChainProblem::new((0..n - 1).map(|i| costs[pair_index(i, i + 1, n)].clone()).collect())?;
            let closing = costs[pair_index(0, n - 1, n)][(0, 0)];
            Some(shortest_path(&chain).1 + closing)
        }
        _ => None,
    };
    let spec = RelaxationSpec::general(sizes, costs);
    let (sol, _) = solve_relaxation(&spec, &SolverSettings::with_tol(1e-7), None)?;
    Ok(OracleReport {
        states,
        brute_force,
        brute_force_positions: positions(&best),
        shortest_path: shortest,
        relaxation: sol.objective,
    })
}
