//! Multiscale driver: per level, coarsen costs onto the selected parts,
//! solve the bounded relaxation and threshold its 1-marginals (propagate),
//! then widen to neighboring parts and re-solve until the selection settles
//! (refine). Selected parts expand to their children between levels.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{SolveReport, SolveStatus, SolverSettings, WarmStart};
use crate::error::{MmrError, Result};
use crate::grid::{GridHierarchy, NeighborhoodPolicy, SelectedParts};
use crate::model::{pairs, CoarseCost, Configuration, MarginalSolution, PairwiseProblem, DEFAULT_COST_CAP};
use crate::relax::{self, certify_exact, Certificate, Pin, RelaxationSpec};

/// Upper bounds `u^(k)` on the 2-marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum UpperBounds {
    /// Per-level values; the last one repeats.
    Levels(Vec<f64>),
    /// `u^(1) = u_min`, `u^(k+1) = u^(k) + alpha (1 - u^(k))`.
    Growth { u_min: f64, alpha: f64 },
}

/// Thresholds `eta^(k)` on the 1-marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Thresholds {
    /// Per-level values; the last one repeats.
    Levels(Vec<f64>),
    /// `eta^(k) = beta u^(k)`.
    Ratio { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmrConfig {
    pub upper: UpperBounds,
    pub eta: Thresholds,
    pub min_support: usize,
    pub refine_iters: usize,
    pub neighborhood: NeighborhoodPolicy,
    pub solver_tol: f64,
    pub max_iter: usize,
    /// Clamp for singular cost values.
    #[serde(default = "default_cap")]
    pub cost_cap: f64,
    /// Coarse cost entries at or above this value are excluded outright.
    #[serde(default = "default_cap")]
    pub forbid_above: f64,
    /// Exact-recovery tolerance at coarse levels and at the finest level.
    #[serde(default = "default_certify")]
    pub certify_tol: [f64; 2],
}

fn default_cap() -> f64 {
    DEFAULT_COST_CAP
}

fn default_certify() -> [f64; 2] {
    [1e-2, 1e-4]
}

impl MmrConfig {
    /// Sensor localization settings.
    pub fn snl() -> Self {
        Self {
            upper: UpperBounds::Levels(vec![1.0]),
            eta: Thresholds::Levels(vec![0.05]),
            min_support: 3,
            refine_iters: 3,
            neighborhood: NeighborhoodPolicy::Moore,
            solver_tol: 1e-3,
            max_iter: 5000,
            cost_cap: DEFAULT_COST_CAP,
            forbid_above: DEFAULT_COST_CAP,
            // marginals are only accurate to about the solver tolerance here
            certify_tol: [1e-2, 1e-2],
        }
    }

    /// Identical-particle cluster settings.
    pub fn lj_symmetric() -> Self {
        Self {
            upper: UpperBounds::Levels(vec![0.1, 1.0]),
            eta: Thresholds::Levels(vec![0.002, 0.02]),
            min_support: 3,
            refine_iters: 3,
            neighborhood: NeighborhoodPolicy::Neumann,
            solver_tol: 1e-4,
            max_iter: 2_000,
            cost_cap: DEFAULT_COST_CAP,
            forbid_above: 100.0,
            certify_tol: default_certify(),
        }
    }

    /// Distinct-particle cluster settings.
    pub fn lj_asymmetric() -> Self {
        Self {
            upper: UpperBounds::Growth {
                u_min: 0.2,
                alpha: 0.8,
            },
            eta: Thresholds::Ratio { beta: 0.01 },
            min_support: 1,
            refine_iters: 3,
            neighborhood: NeighborhoodPolicy::Neumann,
            solver_tol: 1e-4,
            max_iter: 2_000,
            cost_cap: DEFAULT_COST_CAP,
            forbid_above: 100.0,
            certify_tol: default_certify(),
        }
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        let u = self.upper_schedule(levels)?;
        let eta = self.eta_schedule(levels)?;
        if u.iter().any(|&v| !(v > 0.0 && v <= 1.0)) || u.windows(2).any(|w| w[1] < w[0]) {
            return Err(MmrError::InvalidArgument(format!("upper bounds {u:?} must be non-decreasing in (0, 1]")));
        }
        if eta.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(MmrError::InvalidArgument(format!("thresholds {eta:?} must lie in (0, 1)")));
        }
        if self.refine_iters == 0 || self.min_support == 0 {
            return Err(MmrError::InvalidArgument("refine_iters and min_support must be >= 1".into()));
        }
        if !(self.solver_tol > 0.0) || self.max_iter == 0 {
            return Err(MmrError::InvalidArgument("solver_tol and max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn upper_schedule(&self, levels: usize) -> Result<Vec<f64>> {
        match &self.upper {
            UpperBounds::Levels(v) => repeat_last(v, levels),
            UpperBounds::Growth { u_min, alpha } => upper_bound_schedule(*u_min, *alpha, levels),
        }
    }

    pub fn eta_schedule(&self, levels: usize) -> Result<Vec<f64>> {
        match &self.eta {
            Thresholds::Levels(v) => repeat_last(v, levels),
            Thresholds::Ratio { beta } => Ok(self.upper_schedule(levels)?.iter().map(|u| beta * u).collect()),
        }
    }

    fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.solver_tol,
            max_iter: self.max_iter,
            ..SolverSettings::default()
        }
    }
}

fn repeat_last(v: &[f64], levels: usize) -> Result<Vec<f64>> {
    let last = *v
        .last()
        .ok_or_else(|| MmrError::InvalidArgument("empty schedule".into()))?;
    Ok((0..levels).map(|k| v.get(k).copied().unwrap_or(last)).collect())
}

/// `u^(1) = u_min`, `u^(k+1) = u^(k) + alpha (1 - u^(k))`.
pub fn upper_bound_schedule(u_min: f64, alpha: f64, levels: usize) -> Result<Vec<f64>> {
    if !(u_min > 0.0 && u_min <= 1.0) || !(0.0..=1.0).contains(&alpha) {
        return Err(MmrError::InvalidArgument(format!("u_min {u_min}, alpha {alpha}")));
    }
    let mut u = Vec::with_capacity(levels);
    let mut cur = u_min;
    for _ in 0..levels {
        u.push(cur);
        cur += alpha * (1.0 - cur);
    }
    Ok(u)
}

/// Local indices with mass `>= eta`, topped up to the `floor` heaviest
/// entries; returned in ascending order.
pub fn threshold(mass: &DVector<f64>, eta: f64, floor: usize) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..mass.len()).filter(|&l| mass[l] >= eta).collect();
    let floor = floor.min(mass.len());
    if keep.len() < floor {
        keep = relax::top_k(mass, floor);
        keep.sort_unstable();
    }
    keep
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassTrace {
    /// `propagate` or `refine`.
    pub stage: String,
    /// Support sizes the program was solved over.
    pub solved_sizes: Vec<usize>,
    /// Sizes after thresholding.
    pub kept_sizes: Vec<usize>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelTrace {
    pub level: usize,
    pub upper_bound: f64,
    pub eta: f64,
    pub initial_sizes: Vec<usize>,
    pub passes: Vec<PassTrace>,
    /// Selected parts after refinement.
    pub selected: Vec<Vec<usize>>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MmrTrace {
    pub levels: Vec<LevelTrace>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MmrResult {
    /// Finest-level selected parts (singletons are grid points).
    pub parts: SelectedParts,
    /// Solution of the last finest-level solve.
    pub solution: MarginalSolution,
    /// Finest points the last solve ran over, per particle (one shared list
    /// in the symmetric form).
    pub active: Vec<Vec<usize>>,
    pub configuration: Configuration,
    /// Grid points of the rounded configuration.
    pub rounded_points: Vec<usize>,
    pub exact: bool,
    pub trace: MmrTrace,
}

/// Everything the per-level solves need.
pub struct Mmr<'a> {
    pub problem: &'a PairwiseProblem,
    pub h: &'a GridHierarchy,
    pub config: &'a MmrConfig,
    /// Finest points carrying `1/N` mass each (symmetric form only).
    pub pins: &'a [usize],
    coarse: CoarseCost<'a>,
    symmetric: bool,
}

struct Solved {
    solution: MarginalSolution,
    report: SolveReport,
    seconds: f64,
}

impl<'a> Mmr<'a> {
    pub fn new(
        problem: &'a PairwiseProblem,
        h: &'a GridHierarchy,
        config: &'a MmrConfig,
        pins: &'a [usize],
    ) -> Result<Self> {
        config.validate(h.levels())?;
        let symmetric = problem.symmetric();
        if !symmetric && !pins.is_empty() {
            return Err(MmrError::InvalidArgument("point pins apply to identical particles only".into()));
        }
        if let Some(&q) = pins.iter().find(|&&q| q >= h.n_points()) {
            return Err(MmrError::InvalidArgument(format!("pin {q} outside the grid")));
        }
        if symmetric && pins.len() > problem.n() {
            return Err(MmrError::InvalidArgument("more pins than particles".into()));
        }
        Ok(Self {
            problem,
            h,
            config,
            pins,
            coarse: CoarseCost::new(problem, h, config.cost_cap),
            symmetric,
        })
    }

    fn lists(&self) -> usize {
        if self.symmetric {
            1
        } else {
            self.problem.n()
        }
    }

    /// Level-1 selection: every part with an admissible point.
    pub fn initial_parts(&self) -> SelectedParts {
        let parts = (0..self.lists())
            .map(|i| {
                (0..self.h.n_parts(1))
                    .filter(|&l| self.coarse.admissible_box(i, 1, l).is_some())
                    .collect()
            })
            .collect();
        SelectedParts { level: 1, parts }
    }

    fn floor(&self) -> usize {
        if self.symmetric {
            self.config.min_support * self.problem.n()
        } else {
            self.config.min_support
        }
    }

    fn pinned_parts(&self, level: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.pins.iter().map(|&q| self.h.part_of(level, q)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Solve the bounded relaxation over `parts` at `parts.level`.
    fn solve(&mut self, parts: &SelectedParts, u: f64, warm: Option<&WarmStart>) -> Result<Solved> {
        let start = Instant::now();
        let level = parts.level;
        let spec = if self.symmetric {
            let p = &parts.parts[0];
            let cost = self.coarse.block(level, 0, 1, p, p)?;
            let pins = self
                .pins
                .iter()
                .map(|&q| {
                    let part = self.h.part_of(level, q);
                    let local = p.binary_search(&part).map_err(|_| {
                        MmrError::InvalidArgument(format!("pinned part {part} not selected"))
                    })?;
                    Ok(Pin { particle: 0, point: local })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut s = RelaxationSpec::symmetric(self.problem.n(), cost).with_pins(pins);
            s.upper_bound = u;
            s.forbid_above = self.config.forbid_above;
            s
        } else {
            let n = self.problem.n();
            let mut costs = Vec::with_capacity(n * (n - 1) / 2);
            for (i, j) in pairs(n) {
                costs.push(self.coarse.block(level, i, j, &parts.parts[i], &parts.parts[j])?);
            }
            let mut s = RelaxationSpec::general(parts.sizes(), costs);
            s.upper_bound = u;
            s.forbid_above = self.config.forbid_above;
            s
        };
        let (solution, report) = relax::solve_relaxation(&spec, &self.config.settings(), warm)?;
        Ok(Solved {
            solution,
            report,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn select(&self, parts: &SelectedParts, sol: &MarginalSolution, eta: f64) -> SelectedParts {
        let floor = self.floor();
        let pinned = if self.symmetric {
            self.pinned_parts(parts.level)
        } else {
            Vec::new()
        };
        let new = parts
            .parts
            .iter()
            .zip(&sol.marginals)
            .map(|(p, m)| {
                let mut keep: Vec<usize> = threshold(m, eta, floor).into_iter().map(|l| p[l]).collect();
                keep.extend(&pinned);
                keep.sort_unstable();
                keep.dedup();
                keep
            })
            .collect();
        SelectedParts {
            level: parts.level,
            parts: new,
        }
    }

    fn pass_trace(stage: &str, solved: &SelectedParts, kept: &SelectedParts, s: &Solved) -> PassTrace {
        log::info!(
            "level {} {stage}: sizes {:?} -> {:?}, {:?} after {} iterations, objective {:.6}, {:.1}s",
            solved.level,
            solved.sizes(),
            kept.sizes(),
            s.report.status,
            s.report.iterations,
            s.report.objective,
            s.seconds
        );
        PassTrace {
            stage: stage.into(),
            solved_sizes: solved.sizes(),
            kept_sizes: kept.sizes(),
            status: s.report.status,
            iterations: s.report.iterations,
            primal_residual: s.report.primal_residual,
            dual_residual: s.report.dual_residual,
            gap: s.report.gap,
            objective: s.report.objective,
            seconds: s.seconds,
        }
    }

    fn check_status(&self, s: &Solved, level: usize, stage: &str, trace: &mut MmrTrace) -> Result<()> {
        match s.report.status {
            SolveStatus::Solved => Ok(()),
            SolveStatus::MaxIter => {
                let msg = format!(
                    "level {level} {stage}: solver stopped at max_iter (primal {:.2e}, dual {:.2e}, gap {:.2e})",
                    s.report.primal_residual, s.report.dual_residual, s.report.gap
                );
                log::warn!("{msg}");
                trace.warnings.push(msg);
                Ok(())
            }
            SolveStatus::Infeasible => Err(MmrError::Infeasible {
                level,
                detail: format!("{stage} program reported infeasible"),
            }),
        }
    }

    /// Solve over `parts` and threshold: the propagate step.
    pub fn propagate(&mut self, parts: &SelectedParts, u: f64, eta: f64) -> Result<(SelectedParts, MarginalSolution)> {
        let s = self.solve(parts, u, None)?;
        let kept = self.select(parts, &s.solution, eta);
        Ok((kept, s.solution))
    }

    fn admissible_neighbors(&self, level: usize, i: usize, parts: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .h
            .neighbor_parts(level, parts, self.config.neighborhood)?
            .into_iter()
            .filter(|&l| self.coarse.admissible_box(i, level, l).is_some())
            .collect())
    }

    /// Widen to neighbors and re-solve until the selection repeats or the
    /// pass budget runs out.
    /// `previous` is the solve that produced `intermediate` and seeds the
    /// first pass.
    pub fn refine(
        &mut self,
        intermediate: SelectedParts,
        previous: Option<(&WarmStart, &SelectedParts)>,
        u: f64,
        eta: f64,
        passes: &mut Vec<PassTrace>,
        trace: &mut MmrTrace,
    ) -> Result<(SelectedParts, Option<(MarginalSolution, SelectedParts)>)> {
        let level = intermediate.level;
        let mut current = intermediate;
        let mut last = None;
        let mut seed: Option<(WarmStart, SelectedParts)> = previous.map(|(w, p)| (w.clone(), p.clone()));
        for _ in 0..self.config.refine_iters {
            let widened = SelectedParts {
                level,
                parts: (0..self.lists())
                    .map(|i| self.admissible_neighbors(level, i, &current.parts[i]))
                    .collect::<Result<_>>()?,
            };
            let warm = seed.as_ref().and_then(|(w, p)| remap_warm(w, p, &widened));
            let s = self.solve(&widened, u, warm.as_ref())?;
            self.check_status(&s, level, "refine", trace)?;
            seed = Some((s.report.warm.clone(), widened.clone()));
            let kept = self.select(&widened, &s.solution, eta);
            passes.push(Self::pass_trace("refine", &widened, &kept, &s));
            let unchanged = kept == current;
            current = kept;
            last = Some((s.solution, widened));
            if unchanged {
                break;
            }
        }
        Ok((current, last))
    }

    fn expand(&self, parts: &SelectedParts) -> Result<SelectedParts> {
        let level = parts.level + 1;
        let next = (0..self.lists())
            .map(|i| {
                Ok(self
                    .h
                    .children_of(parts.level, &parts.parts[i])?
                    .into_iter()
                    .filter(|&l| self.coarse.admissible_box(i, level, l).is_some())
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(SelectedParts { level, parts: next })
    }

    /// Point list of each selected part set (parts at the finest level are
    /// single points).
    fn finest_points(&self, parts: &SelectedParts) -> Vec<Vec<usize>> {
        parts
            .parts
            .iter()
            .map(|p| p.iter().map(|&l| self.h.part_points(parts.level, l)[0]).collect())
            .collect()
    }

    fn round(&self, sol: &MarginalSolution, parts: &SelectedParts) -> Vec<usize> {
        let level = parts.level;
        let to_point = |l: usize| {
            let c = self.h.part_centroid(level, l);
            self.h.nearest_point(&c).unwrap_or_else(|_| self.h.part_points(level, l)[0])
        };
        if self.symmetric {
            // Two entries whose pair was forbidden in the relaxation usually
            // carry the mass of one split particle; take only one of them.
            let cands: Vec<usize> = parts.parts[0].iter().map(|&l| to_point(l)).collect();
            let cap = self.config.forbid_above;
            let idx = relax::top_k_compatible(&sol.marginals[0], self.problem.n(), |a, b| {
                let c = self.problem.cost.cost(0, 1, &self.h.point(cands[a]), &self.h.point(cands[b]));
                !(c < cap)
            });
            idx.iter().map(|&a| cands[a]).collect()
        } else {
            relax::round_indices(sol).iter().enumerate().map(|(i, &a)| to_point(parts.parts[i][a])).collect()
        }
    }

    /// Coarse-to-fine run from the full level-1 selection.
    pub fn run(&mut self) -> Result<MmrResult> {
        let levels = self.h.levels();
        let u_sched = self.config.upper_schedule(levels)?;
        let eta_sched = self.config.eta_schedule(levels)?;
        let mut trace = MmrTrace::default();
        let mut parts = self.initial_parts();
        if let Some(i) = parts.parts.iter().position(Vec::is_empty) {
            return Err(MmrError::InvalidArgument(format!("particle {i} has no admissible point")));
        }
        if self.symmetric {
            let pinned = self.pinned_parts(1);
            if pinned.iter().any(|l| !parts.parts[0].contains(l)) {
                return Err(MmrError::InvalidArgument("pinned point is not admissible".into()));
            }
        }
        let mut previous_round: Option<Vec<usize>> = None;
        let mut finest: Option<(MarginalSolution, SelectedParts)> = None;

        for k in 1..=levels {
            let start = Instant::now();
            self.coarse.clear();
            let (u, eta) = (u_sched[k - 1], eta_sched[k - 1]);
            let initial_sizes = parts.sizes();
            let mut passes = Vec::new();

            let attempt = (|| -> Result<(SelectedParts, MarginalSolution, SelectedParts)> {
                let s = self.solve(&parts, u, None)?;
                self.check_status(&s, k, "propagate", &mut trace)?;
                let kept = self.select(&parts, &s.solution, eta);
                passes.push(Self::pass_trace("propagate", &parts, &kept, &s));
                let (refined, last) =
                    self.refine(kept, Some((&s.report.warm, &parts)), u, eta, &mut passes, &mut trace)?;
                let (sol, solved_over) = last.unwrap_or((s.solution, parts.clone()));
                Ok((refined, sol, solved_over))
            })();

            let (refined, sol, solved_over) = match attempt {
                Ok(v) => v,
                Err(MmrError::Infeasible { level, detail }) if k == levels && previous_round.is_some() => {
                    let msg = format!("level {level}: {detail}; falling back to level {} rounding", k - 1);
                    log::warn!("{msg}");
                    trace.warnings.push(msg);
                    let pts = previous_round.take().unwrap();
                    trace.levels.push(LevelTrace {
                        level: k,
                        upper_bound: u,
                        eta,
                        initial_sizes,
                        passes,
                        selected: parts.parts.clone(),
                        seconds: start.elapsed().as_secs_f64(),
                    });
                    let (solution, _) = finest.take().expect("coarser level solved");
                    return Ok(MmrResult {
                        configuration: Configuration::from_points(self.h, &pts),
                        rounded_points: pts,
                        active: parts.parts.clone(),
                        parts,
                        solution,
                        exact: false,
                        trace,
                    });
                }
                Err(e) => return Err(e),
            };

            previous_round = Some(self.round(&sol, &solved_over));
            trace.levels.push(LevelTrace {
                level: k,
                upper_bound: u,
                eta,
                initial_sizes,
                passes,
                selected: refined.parts.clone(),
                seconds: start.elapsed().as_secs_f64(),
            });
            finest = Some((sol, solved_over));
            if k < levels {
                parts = self.expand(&refined)?;
            } else {
                parts = refined;
            }
        }

        let (solution, solved_over) = finest.expect("at least one level");
        let active = self.finest_points(&solved_over);
        let rounded_points = self.round(&solution, &solved_over);
        let exact = certify_exact(&solution, self.config.certify_tol[1]) != Certificate::Inexact;
        Ok(MmrResult {
            configuration: Configuration::from_points(self.h, &rounded_points),
            rounded_points,
            parts,
            solution,
            active,
            exact,
            trace,
        })
    }
}

/// Carry a solver state over to a new selection at the same level: entries
/// whose parts appear in both selections are copied, the rest start at 0.
pub fn remap_warm(w: &WarmStart, old: &SelectedParts, new: &SelectedParts) -> Option<WarmStart> {
    if old.level != new.level || old.parts.len() != new.parts.len() || w.y.len() != 0 {
        return None;
    }
    let mut map = Vec::new();
    let mut base = 0;
    for (po, pn) in old.parts.iter().zip(&new.parts) {
        for l in pn {
            map.push(po.binary_search(l).ok().map(|a| base + a));
        }
        base += po.len();
    }
    if base != w.x.nrows() {
        return None;
    }
    let n = map.len();
    let pull = |m: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |r, c| match (map[r], map[c]) {
            (Some(a), Some(b)) => m[(a, b)],
            _ => 0.0,
        })
    };
    Some(WarmStart {
        x: pull(&w.x),
        y: w.y.clone(),
        cone_dual: pull(&w.cone_dual),
        box_dual: (pull(&w.box_dual.0), w.box_dual.1.clone()),
        rho: w.rho,
    })
}

/// Run the full coarse-to-fine pipeline.
pub fn run(
    problem: &PairwiseProblem,
    h: &GridHierarchy,
    config: &MmrConfig,
    pins: &[usize],
) -> Result<MmrResult> {
    Mmr::new(problem, h, config, pins)?.run()
}

/// Pair-cost blocks of `problem` on finest point lists, used by sampling
/// and by oracles that work on the final support.
pub fn finest_costs(
    problem: &PairwiseProblem,
    h: &GridHierarchy,
    active: &[Vec<usize>],
    cap: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if problem.symmetric() && active.len() == 1 {
        let mut b = crate::model::discretize_pair(problem, h, 0, 1, &active[0], &active[0], cap)?.values;
        for l in 0..b.nrows() {
            b[(l, l)] = 0.0;
        }
        return Ok(vec![b]);
    }
    let n = problem.n();
    pairs(n)
        .map(|(i, j)| Ok(crate::model::discretize_pair(problem, h, i, j, &active[i], &active[j], cap)?.values))
        .collect()
}
