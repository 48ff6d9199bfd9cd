//! First-order solver for programs of the form
//!
//! ```text
//! minimize    <C, X> + c_y . y + offset
//! subject to  linear equalities in (X, y)
//!             L <= X <= U,  l_y <= y <= u_y   (entrywise)
//!             X symmetric positive semidefinite
//! ```
//!
//! The solver is a two-block ADMM: the affine step projects onto the
//! equality set, the second block projects separately onto the PSD cone and
//! the box. Relaxations built by this crate have structured equality sets
//! whose projection has a closed form; anything else goes through a dense
//! pseudo-inverse.

mod affine;
mod anderson;
pub mod psd;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MmrError, Result};
use affine::AffineProjector;
use anderson::Anderson;

pub use psd::{eigenvalues, min_eigenvalue, project_psd, top_eigenpair};

/// `sum coef * X[r, c] + sum coef * y[k] = rhs`, with each off-diagonal
/// entry referenced once as `(r, c)` for `r <= c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub entries: Vec<(usize, usize, f64)>,
    pub aux: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearEquality {
    pub fn new(entries: Vec<(usize, usize, f64)>, rhs: f64) -> Self {
        let entries = entries
            .into_iter()
            .map(|(r, c, v)| (r.min(c), r.max(c), v))
            .collect();
        Self {
            entries,
            aux: Vec::new(),
            rhs,
        }
    }

    pub fn with_aux(mut self, aux: Vec<(usize, f64)>) -> Self {
        self.aux = aux;
        self
    }

    pub fn evaluate(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        self.entries.iter().map(|&(r, c, v)| v * x[(r, c)]).sum::<f64>()
            + self.aux.iter().map(|&(k, v)| v * y[k]).sum::<f64>()
    }
}

/// Scalar variable living outside the PSD matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxVar {
    pub cost: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Hint telling the solver which closed-form projection applies.
///
/// The hint must describe exactly the set spanned by `equalities`; the
/// equality list is still used for residuals.
#[derive(Debug, Clone, PartialEq)]
pub enum AffineStructure {
    Generic,
    /// Block layout with `offsets[i]..offsets[i+1]` belonging to particle
    /// `i`: diagonal blocks are diagonal, off-diagonal blocks have row and
    /// column sums equal to the adjacent diagonals, each diagonal sums to 1.
    Marginal { offsets: Vec<usize> },
    /// `X 1 = N diag(X)`, `tr X = 1`, and `X[l, l] = value` for pins.
    Symmetric {
        n_particles: usize,
        pinned: Vec<(usize, f64)>,
    },
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub dim: usize,
    /// Symmetric cost; the objective is the full inner product `<C, X>`.
    pub cost: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub equalities: Vec<LinearEquality>,
    pub aux: Vec<AuxVar>,
    pub structure: AffineStructure,
    pub offset: f64,
}

impl ConicProgram {
    /// Unconstrained-box program over `dim x dim` matrices.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            cost: DMatrix::zeros(dim, dim),
            lower: DMatrix::from_element(dim, dim, f64::NEG_INFINITY),
            upper: DMatrix::from_element(dim, dim, f64::INFINITY),
            equalities: Vec::new(),
            aux: Vec::new(),
            structure: AffineStructure::Generic,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        for (name, m) in [("cost", &self.cost), ("lower", &self.lower), ("upper", &self.upper)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(MmrError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if self.cost.iter().any(|v| !v.is_finite()) {
            return Err(MmrError::NonFinite("program cost".into()));
        }
        let a = psd::asymmetry(&self.cost);
        if a > 1e-10 * (1.0 + self.cost.amax()) {
            return Err(MmrError::NotSymmetric(a));
        }
        for eq in &self.equalities {
            if eq.entries.iter().any(|&(r, c, _)| r > c || c >= n)
                || eq.aux.iter().any(|&(k, _)| k >= self.aux.len())
                || !eq.rhs.is_finite()
            {
                return Err(MmrError::InvalidArgument("malformed equality".into()));
            }
        }
        if let AffineStructure::Marginal { offsets } = &self.structure {
            if offsets.first() != Some(&0) || offsets.last() != Some(&n) || offsets.windows(2).any(|w| w[1] <= w[0]) {
                return Err(MmrError::InvalidArgument("bad block offsets".into()));
            }
        }
        if let AffineStructure::Symmetric { n_particles, pinned } = &self.structure {
            if *n_particles < 2 || pinned.iter().any(|&(l, _)| l >= n) {
                return Err(MmrError::InvalidArgument("bad symmetric structure".into()));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        self.cost.dot(x) + self.aux.iter().zip(y.iter()).map(|(a, v)| a.cost * v).sum::<f64>() + self.offset
    }

    /// Largest absolute equality violation.
    pub fn equality_residual(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        self.equalities
            .iter()
            .map(|e| (e.evaluate(x, y) - e.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise bound violation.
    pub fn bound_violation(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for ((v, lo), hi) in x.iter().zip(self.lower.iter()).zip(self.upper.iter()) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for (v, a) in y.iter().zip(&self.aux) {
            worst = worst.max(a.lower - v).max(v - a.upper);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub rho: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub relaxation: f64,
    /// Iterations between penalty updates.
    pub adapt_every: usize,
    /// Anderson acceleration memory; 0 runs plain ADMM.
    pub anderson: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            rho: 1.0,
            relaxation: 1.6,
            adapt_every: 20,
            anderson: 0,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Primal point and scaled duals for restarting the iteration.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Multiplier of `X = Z` (unscaled).
    pub cone_dual: DMatrix<f64>,
    /// Multipliers of `(X, y) = W` (unscaled).
    pub box_dual: (DMatrix<f64>, DVector<f64>),
    pub rho: f64,
}

impl WarmStart {
    /// Primal-only warm start; duals start at zero.
    pub fn primal(x: DMatrix<f64>, y: DVector<f64>) -> Self {
        let n = x.nrows();
        let m = y.len();
        Self {
            x,
            y,
            cone_dual: DMatrix::zeros(n, n),
            box_dual: (DMatrix::zeros(n, n), DVector::zeros(m)),
            rho: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub objective: f64,
    /// Relative primal residual.
    pub primal_residual: f64,
    /// Relative dual residual.
    pub dual_residual: f64,
    /// Relative complementarity gap; reported, not used for stopping.
    pub gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub warm: WarmStart,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Solved
    }
}

fn infeasible_report(p: &ConicProgram) -> SolveReport {
    let n = p.dim;
    let m = p.aux.len();
    SolveReport {
        x: DMatrix::zeros(n, n),
        y: DVector::zeros(m),
        objective: f64::NAN,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        gap: f64::INFINITY,
        iterations: 0,
        status: SolveStatus::Infeasible,
        warm: WarmStart::primal(DMatrix::zeros(n, n), DVector::zeros(m)),
    }
}

fn clamp_box(v: &mut DMatrix<f64>, lo: &DMatrix<f64>, hi: &DMatrix<f64>) {
    for ((x, l), h) in v.iter_mut().zip(lo.iter()).zip(hi.iter()) {
        *x = x.max(*l).min(*h);
    }
}

/// Solve `p` to relative tolerance `settings.tol`.
pub fn solve(p: &ConicProgram, settings: &SolverSettings, warm: Option<&WarmStart>) -> Result<SolveReport> {
    p.validate()?;
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(MmrError::InvalidArgument("tol must be > 0 and max_iter >= 1".into()));
    }
    let n = p.dim;
    let m = p.aux.len();
    if p.lower.iter().zip(p.upper.iter()).any(|(l, u)| l > u)
        || p.aux.iter().any(|a| a.lower > a.upper)
    {
        return Ok(infeasible_report(p));
    }

    // Normalize the cost so the penalty has a scale-free meaning.
    let scale = p
        .cost
        .amax()
        .max(p.aux.iter().map(|a| a.cost.abs()).fold(0.0, f64::max))
        .max(1e-12);
    let c = &p.cost / scale;
    let cy = DVector::from_iterator(m, p.aux.iter().map(|a| a.cost / scale));
    let ylo = DVector::from_iterator(m, p.aux.iter().map(|a| a.lower));
    let yhi = DVector::from_iterator(m, p.aux.iter().map(|a| a.upper));
    let c_norm = (c.norm_squared() + cy.norm_squared()).sqrt();

    let proj = AffineProjector::new(p, 2.0, 1.0);
    let alpha = settings.relaxation;

    let mut rho = settings.rho;
    let st0 = match warm {
        Some(w) if w.x.nrows() == n && w.y.len() == m => {
            if w.rho > 0.0 {
                rho = w.rho;
            }
            State {
                z: w.x.clone(),
                wx: w.x.clone(),
                wy: w.y.clone(),
                u: &w.cone_dual / (rho * scale),
                tx: &w.box_dual.0 / (rho * scale),
                ty: &w.box_dual.1 / (rho * scale),
            }
        }
        _ => State {
            z: DMatrix::zeros(n, n),
            wx: DMatrix::zeros(n, n),
            wy: DVector::zeros(m),
            u: DMatrix::zeros(n, n),
            tx: DMatrix::zeros(n, n),
            ty: DVector::zeros(m),
        },
    };

    let mut st = st0;
    let mut vx = DMatrix::zeros(n, n);
    let mut vy = DVector::zeros(m);
    let mut status = SolveStatus::MaxIter;
    let mut best: Option<(f64, DMatrix<f64>, DVector<f64>, [f64; 3])> = None;
    let mut last = [f64::INFINITY; 3];
    let mut iterations = 0;
    let mut checkpoints: Vec<(f64, f64)> = Vec::new();
    let mut aa = Anderson::new(settings.anderson);
    // Plain successor of the previous point and its residual norm, kept
    // while the current point is an extrapolation.
    let mut pending: Option<(State, f64)> = None;
    let (mut n_acc, mut n_rej) = (0usize, 0usize);

    for it in 1..=settings.max_iter {
        iterations = it;
        let target_x = ((&st.z - &st.u) + (&st.wx - &st.tx)) * 0.5 - &c * (0.5 / rho);
        let target_y = &st.wy - &st.ty - &cy / rho;
        let (nvx, nvy) = proj.project(&target_x, &target_y);
        vx = nvx;
        vy = nvy;

        let hat_z = &vx * alpha + &st.z * (1.0 - alpha);
        let hat_wx = &vx * alpha + &st.wx * (1.0 - alpha);
        let hat_wy = &vy * alpha + &st.wy * (1.0 - alpha);

        let mut z_new = DMatrix::zeros(n, n);
        psd::project_psd_into(&(&hat_z + &st.u), &mut z_new);
        let mut wx_new = &hat_wx + &st.tx;
        clamp_box(&mut wx_new, &p.lower, &p.upper);
        let mut wy_new = &hat_wy + &st.ty;
        for k in 0..m {
            wy_new[k] = wy_new[k].max(ylo[k]).min(yhi[k]);
        }
        let next = State {
            u: &st.u + &hat_z - &z_new,
            tx: &st.tx + &hat_wx - &wx_new,
            ty: &st.ty + &hat_wy - &wy_new,
            z: z_new,
            wx: wx_new,
            wy: wy_new,
        };

        let r_pri = ((&vx - &next.z).norm_squared()
            + (&vx - &next.wx).norm_squared()
            + (&vy - &next.wy).norm_squared())
        .sqrt();
        let pri_scale = 1.0
            + (vx.norm_squared() + vy.norm_squared())
                .sqrt()
                .max(next.z.norm())
                .max((next.wx.norm_squared() + next.wy.norm_squared()).sqrt());
        let dz = &next.z - &st.z;
        let dwx = &next.wx - &st.wx;
        let dwy = &next.wy - &st.wy;
        let r_dual = rho * ((&dz + &dwx).norm_squared() + dwy.norm_squared()).sqrt();
        let ynorm = rho * ((&next.u + &next.tx).norm_squared() + next.ty.norm_squared()).sqrt();
        let dual_scale = 1.0 + ynorm.max(c_norm);
        let pri = r_pri / pri_scale;
        let dual = r_dual / dual_scale;
        let obj = c.dot(&vx) + cy.dot(&vy);
        let comp = rho
            * (next.u.dot(&(&vx - &next.z)) + next.tx.dot(&(&vx - &next.wx)) + next.ty.dot(&(&vy - &next.wy)));
        let gap = comp.abs() / (1.0 + obj.abs());
        last = [pri, dual, gap];

        let merit = pri.max(dual);
        if best.as_ref().map_or(true, |b| merit < b.0) {
            best = Some((merit, vx.clone(), vy.clone(), last));
        }
        if pri <= settings.tol && dual <= settings.tol {
            status = SolveStatus::Solved;
            break;
        }

        if it % 100 == 0 {
            log::trace!("iter {it}: primal {pri:.2e} dual {dual:.2e} gap {gap:.2e} rho {rho:.2e} aa {n_acc}/{n_rej}");
            checkpoints.push((r_pri, ynorm));
            if stalled_infeasible(&checkpoints, pri, settings.tol) {
                status = SolveStatus::Infeasible;
                break;
            }
        }

        let mut next = next;
        if settings.adapt_every > 0 && it % settings.adapt_every == 0 {
            let factor = if pri > 10.0 * dual {
                2.0
            } else if dual > 10.0 * pri {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                next.u /= factor;
                next.tx /= factor;
                next.ty /= factor;
                aa.reset();
                pending = None;
                st = next;
                continue;
            }
        }

        if !aa.enabled() {
            st = next;
            continue;
        }
        let s_vec = st.pack();
        let g = next.pack() - &s_vec;
        let g_norm = g.norm();
        if let Some((fallback, prev_norm)) = pending.take() {
            if g_norm > prev_norm {
                // extrapolation made things worse: resume from the plain step
                aa.reset();
                st = fallback;
                n_rej += 1;
                continue;
            }
        }
        match aa.extrapolate(&s_vec, &g) {
            Some(cand) => {
                st = State::unpack(&cand, n, m);
                pending = Some((next, g_norm));
                n_acc += 1;
            }
            None => st = next,
        }
    }

    let (x, y, res) = if status == SolveStatus::MaxIter {
        let (_, bx, by, r) = best.expect("at least one iteration");
        (bx, by, r)
    } else {
        (vx, vy, last)
    };
    let warm = WarmStart {
        x: x.clone(),
        y: y.clone(),
        cone_dual: &st.u * (rho * scale),
        box_dual: (&st.tx * (rho * scale), &st.ty * (rho * scale)),
        rho,
    };
    Ok(SolveReport {
        objective: p.objective(&x, &y),
        x,
        y,
        primal_residual: res[0],
        dual_residual: res[1],
        gap: res[2],
        iterations,
        status,
        warm,
    })
}

/// ADMM iterate: cone copy, box copy, and their scaled multipliers.
struct State {
    z: DMatrix<f64>,
    wx: DMatrix<f64>,
    wy: DVector<f64>,
    u: DMatrix<f64>,
    tx: DMatrix<f64>,
    ty: DVector<f64>,
}

impl State {
    /// Upper triangles of the matrices followed by the scalar parts.
    fn pack(&self) -> DVector<f64> {
        let n = self.z.nrows();
        let tri = n * (n + 1) / 2;
        let mut out = DVector::zeros(4 * tri + 2 * self.wy.len());
        let mut k = 0;
        for mat in [&self.z, &self.wx, &self.u, &self.tx] {
            for c in 0..n {
                for r in 0..=c {
                    out[k] = mat[(r, c)];
                    k += 1;
                }
            }
        }
        for v in [&self.wy, &self.ty] {
            for &x in v.iter() {
                out[k] = x;
                k += 1;
            }
        }
        out
    }

    fn unpack(v: &DVector<f64>, n: usize, m: usize) -> Self {
        let mut k = 0;
        let mut mats: Vec<DMatrix<f64>> = (0..4)
            .map(|_| {
                let mut a = DMatrix::zeros(n, n);
                for c in 0..n {
                    for r in 0..=c {
                        a[(r, c)] = v[k];
                        a[(c, r)] = v[k];
                        k += 1;
                    }
                }
                a
            })
            .collect();
        let wy = DVector::from_fn(m, |i, _| v[k + i]);
        let ty = DVector::from_fn(m, |i, _| v[k + m + i]);
        let tx = mats.pop().unwrap();
        let u = mats.pop().unwrap();
        let wx = mats.pop().unwrap();
        let z = mats.pop().unwrap();
        Self { z, wx, wy, u, tx, ty }
    }
}

/// Primal residual flat over the last checkpoints while the multipliers
/// keep growing at a steady rate.
fn stalled_infeasible(cp: &[(f64, f64)], pri_rel: f64, tol: f64) -> bool {
    if cp.len() < 5 || pri_rel < 1e3 * tol.max(1e-6) {
        return false;
    }
    let w = &cp[cp.len() - 5..];
    let r0 = w[0].0;
    let flat = w.iter().all(|&(r, _)| (r - r0).abs() <= 0.01 * r0);
    let growing = w.windows(2).all(|p| p[1].1 > p[0].1 * 1.02);
    flat && growing
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_one_toy() {
        // minimize X11 s.t. tr X = 1, X psd
        let mut p = ConicProgram::new(2);
        p.cost[(0, 0)] = 1.0;
        p.equalities.push(LinearEquality::new(vec![(0, 0, 1.0), (1, 1, 1.0)], 1.0));
        let r = solve(&p, &SolverSettings::with_tol(1e-8), None).unwrap();
        assert_eq!(r.status, SolveStatus::Solved);
        assert!(r.objective.abs() < 1e-6, "{}", r.objective);
        assert!((r.x[(1, 1)] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = ConicProgram::new(2);
        p.lower[(0, 0)] = 1.0;
        p.upper[(0, 0)] = 0.0;
        let r = solve(&p, &SolverSettings::default(), None).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_inconsistent_constraints() {
        // tr X = 1 with X <= 0 entrywise on the diagonal
        let mut p = ConicProgram::new(2);
        p.cost[(0, 1)] = 0.5;
        p.cost[(1, 0)] = 0.5;
        p.equalities.push(LinearEquality::new(vec![(0, 0, 1.0), (1, 1, 1.0)], 1.0));
        p.upper[(0, 0)] = 0.0;
        p.upper[(1, 1)] = 0.0;
        let r = solve(&p, &SolverSettings { max_iter: 5000, ..SolverSettings::with_tol(1e-7) }, None).unwrap();
        assert_ne!(r.status, SolveStatus::Solved);
    }
}
