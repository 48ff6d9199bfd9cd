//! Conic programs whose optimum is known in closed form.

use mmr_core::conic::{min_eigenvalue, solve, AuxVar, ConicProgram, LinearEquality, SolveStatus, SolverSettings};
use mmr_core::relax::{build_general, RelaxationSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-7;

pub struct Toy {
    pub name: String,
    pub program: ConicProgram,
    pub optimum: f64,
}

fn toy(name: impl Into<String>, program: ConicProgram, optimum: f64) -> Toy {
    Toy {
        name: name.into(),
        program,
        optimum,
    }
}

fn trace_eq(n: usize, rhs: f64) -> LinearEquality {
    LinearEquality::new((0..n).map(|i| (i, i, 1.0)).collect(), rhs)
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// min <C, X> over the spectraplex is the smallest eigenvalue of C.
fn spectraplex(n: usize, seed: u64) -> (ConicProgram, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_symmetric(n, &mut rng);
    let mut p = ConicProgram::new(n);
    p.cost = c.clone();
    p.equalities.push(trace_eq(n, 1.0));
    let lam = c.symmetric_eigenvalues().min();
    (p, lam)
}

fn unit_diagonal(n: usize) -> ConicProgram {
    let mut p = ConicProgram::new(n);
    for i in 0..n {
        p.equalities.push(LinearEquality::new(vec![(i, i, 1.0)], 1.0));
    }
    p
}

pub fn catalogue() -> Vec<Toy> {
    let mut out = Vec::new();
    for (k, n) in [2, 3, 3, 4, 5, 6, 8, 10].into_iter().enumerate() {
        let (p, v) = spectraplex(n, 100 + k as u64);
        out.push(toy(format!("spectraplex n={n} #{k}"), p, v));
    }

    // tr X = 3 scales the optimum
    let (mut p, v) = spectraplex(4, 7);
    p.equalities[0].rhs = 3.0;
    out.push(toy("scaled trace", p, 3.0 * v));

    // X11 fixed to 1 through its bounds, tr X = 2, C = diag(0, 1, 2)
    let mut p = ConicProgram::new(3);
    p.cost = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]));
    p.lower[(0, 0)] = 1.0;
    p.upper[(0, 0)] = 1.0;
    p.equalities.push(trace_eq(3, 2.0));
    out.push(toy("pinned diagonal", p, 1.0));

    // diag X = 1: min 2 c X12 over |X12| <= 1 gives -2|c|
    for c in [0.3, -0.7] {
        let mut p = unit_diagonal(2);
        p.cost[(0, 1)] = c;
        p.cost[(1, 0)] = c;
        out.push(toy(format!("unit diagonal c={c}"), p, -2.0 * f64::abs(c)));
    }

    // min sum_{i<j} X_ij with diag X = 1 attains -3/2 at (3/2) I - (1/2) 11^T
    let mut p = unit_diagonal(3);
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                p.cost[(i, j)] = 0.5;
            }
        }
    }
    out.push(toy("triangle", p, -1.5));

    // C = diag(0, 1, 2), tr X = 1, X11 <= 0.4: the remaining 0.6 goes to X22
    let mut p = ConicProgram::new(3);
    p.cost = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 2.0]));
    p.upper[(0, 0)] = 0.4;
    p.equalities.push(trace_eq(3, 1.0));
    out.push(toy("capped spectraplex", p, 0.6));

    // X >= 0 entrywise blocks negative X12: C = 11^T gives 1 at any diagonal split
    let mut p = ConicProgram::new(2);
    p.cost = DMatrix::from_element(2, 2, 1.0);
    p.lower = DMatrix::zeros(2, 2);
    p.equalities.push(trace_eq(2, 1.0));
    out.push(toy("nonnegative", p, 1.0));

    // y + tr X = 2, y in [0, 1], cost 0.5 y + X11 + 2 X22
    let mut p = ConicProgram::new(2);
    p.cost[(0, 0)] = 1.0;
    p.cost[(1, 1)] = 2.0;
    p.aux.push(AuxVar {
        cost: 0.5,
        lower: 0.0,
        upper: 1.0,
    });
    p.equalities.push(trace_eq(2, 2.0).with_aux(vec![(0, 1.0)]));
    out.push(toy("auxiliary trade-off", p, 1.5));

    let (mut p, v) = spectraplex(3, 11);
    p.offset = 4.25;
    out.push(toy("offset", p, v + 4.25));

    // unit diagonal with X12 >= 0.6 and a cost pushing X12 down
    let mut p = unit_diagonal(2);
    p.cost[(0, 1)] = 1.0;
    p.cost[(1, 0)] = 1.0;
    p.lower[(0, 1)] = 0.6;
    p.lower[(1, 0)] = 0.6;
    out.push(toy("correlation bound", p, 1.2));

    // diagonal cost: the smallest diagonal entry
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut p = ConicProgram::new(6);
    p.cost = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
    p.equalities.push(trace_eq(6, 1.0));
    out.push(toy("diagonal", p, d.iter().cloned().fold(f64::INFINITY, f64::min)));

    // two particles: the local polytope is the simplex over pairs
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let c = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));
    let p = build_general(&RelaxationSpec::general(vec![3, 4], vec![c.clone()])).unwrap();
    out.push(toy("two-particle relaxation", p, c.min()));

    out
}

/// Solve one toy and recheck feasibility directly. Returns the objective
/// error on success.
pub fn check(t: &Toy) -> Result<f64, String> {
    let p = &t.program;
    let r = solve(p, &SolverSettings::with_tol(TOL), None).map_err(|e| e.to_string())?;
    if r.status != SolveStatus::Solved {
        return Err(format!("status {:?}", r.status));
    }
    if r.primal_residual > TOL || r.dual_residual > TOL {
        return Err(format!("residuals {:.1e} {:.1e}", r.primal_residual, r.dual_residual));
    }
    let err = (r.objective - t.optimum).abs();
    if err > 1e-5 {
        return Err(format!("objective {} vs {}", r.objective, t.optimum));
    }
    let eq = p.equality_residual(&r.x, &r.y);
    let bd = p.bound_violation(&r.x, &r.y);
    let ev = min_eigenvalue(&r.x);
    if eq > 1e-5 || bd > 1e-5 || ev < -1e-5 {
        return Err(format!("equalities {eq:.1e} bounds {bd:.1e} min eigenvalue {ev:.1e}"));
    }
    Ok(err)
}
