//! Euclidean projections onto the affine constraint set of a program.
//!
//! The generic projector works for any equality list through a dense
//! pseudo-inverse of `A W^-1 A^T`. The two structured projectors exploit the
//! layout of the marginal relaxations and cost `O(n^2)` per call.

use nalgebra::{DMatrix, DVector};

use super::{AffineStructure, ConicProgram};

/// Index of upper-triangle entry `(r, c)`, `r <= c`, in packed order.
fn packed(r: usize, c: usize) -> usize {
    let (r, c) = if r <= c { (r, c) } else { (c, r) };
    c * (c + 1) / 2 + r
}

pub(crate) enum AffineProjector {
    Generic(GenericProjector),
    Marginal(MarginalProjector),
    Symmetric(SymmetricProjector),
}

impl AffineProjector {
    /// `x_weight` and `aux_weight` scale the squared distance of the
    /// matrix and auxiliary parts.
    pub fn new(p: &ConicProgram, x_weight: f64, aux_weight: f64) -> Self {
        match &p.structure {
            AffineStructure::Marginal { offsets } if p.aux.is_empty() => {
                AffineProjector::Marginal(MarginalProjector {
                    offsets: offsets.clone(),
                })
            }
            AffineStructure::Symmetric {
                n_particles,
                pinned,
            } if p.aux.is_empty() && SymmetricProjector::supported(p.dim, pinned) => {
                AffineProjector::Symmetric(SymmetricProjector {
                    n_particles: *n_particles,
                    pinned: pinned.clone(),
                })
            }
            _ => AffineProjector::Generic(GenericProjector::new(p, x_weight, aux_weight)),
        }
    }

    pub fn project(&self, x0: &DMatrix<f64>, y0: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        match self {
            AffineProjector::Generic(g) => g.project(x0, y0),
            AffineProjector::Marginal(m) => (m.project(x0), y0.clone()),
            AffineProjector::Symmetric(s) => match s.project(x0) {
                Some(x) => (x, y0.clone()),
                None => unreachable!("degenerate symmetric layouts use the generic projector"),
            },
        }
    }
}

pub(crate) struct GenericProjector {
    n: usize,
    n_aux: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: DVector<f64>,
    inv_weight: Vec<f64>,
    gram_pinv: DMatrix<f64>,
}

impl GenericProjector {
    pub fn new(p: &ConicProgram, x_weight: f64, aux_weight: f64) -> Self {
        let n = p.dim;
        let n_aux = p.aux.len();
        let nx = n * (n + 1) / 2;
        let mut inv_weight = vec![0.0; nx + n_aux];
        for c in 0..n {
            for r in 0..=c {
                let w = if r == c { 1.0 } else { 2.0 } * x_weight;
                inv_weight[packed(r, c)] = 1.0 / w;
            }
        }
        for k in 0..n_aux {
            inv_weight[nx + k] = 1.0 / aux_weight;
        }
        let mut rows = Vec::with_capacity(p.equalities.len());
        let mut rhs = DVector::zeros(p.equalities.len());
        for (e, eq) in p.equalities.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for &(r, c, v) in &eq.entries {
                row.push((packed(r, c), v));
            }
            for &(k, v) in &eq.aux {
                row.push((nx + k, v));
            }
            row.sort_by_key(|t| t.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (k, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == k => last.1 += v,
                    _ => merged.push((k, v)),
                }
            }
            rows.push(merged);
            rhs[e] = eq.rhs;
        }
        let m = rows.len();
        let mut gram = DMatrix::zeros(m, m);
        // column lists for sparse A W^-1 A^T
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nx + n_aux];
        for (e, row) in rows.iter().enumerate() {
            for &(k, v) in row {
                cols[k].push((e, v));
            }
        }
        for (k, col) in cols.iter().enumerate() {
            for &(a, va) in col {
                for &(b, vb) in col {
                    gram[(a, b)] += va * vb * inv_weight[k];
                }
            }
        }
        let gram_pinv = pseudo_inverse(&gram);
        Self {
            n,
            n_aux,
            rows,
            rhs,
            inv_weight,
            gram_pinv,
        }
    }

    pub fn project(&self, x0: &DMatrix<f64>, y0: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n;
        let nx = n * (n + 1) / 2;
        let mut v = vec![0.0; nx + self.n_aux];
        for c in 0..n {
            for r in 0..=c {
                v[packed(r, c)] = 0.5 * (x0[(r, c)] + x0[(c, r)]);
            }
        }
        for k in 0..self.n_aux {
            v[nx + k] = y0[k];
        }
        let resid = DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .zip(self.rhs.iter())
                .map(|(row, b)| row.iter().map(|&(k, a)| a * v[k]).sum::<f64>() - b),
        );
        let lambda = &self.gram_pinv * resid;
        for (row, l) in self.rows.iter().zip(lambda.iter()) {
            for &(k, a) in row {
                v[k] -= self.inv_weight[k] * a * l;
            }
        }
        let mut x = DMatrix::zeros(n, n);
        for c in 0..n {
            for r in 0..=c {
                x[(r, c)] = v[packed(r, c)];
                x[(c, r)] = v[packed(r, c)];
            }
        }
        let y = DVector::from_fn(self.n_aux, |k, _| v[nx + k]);
        (x, y)
    }
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let e = m.clone().symmetric_eigen();
    let top = e.eigenvalues.amax();
    let cut = 1e-11 * top.max(1e-300);
    let inv = e.eigenvalues.map(|v| if v.abs() > cut { 1.0 / v } else { 0.0 });
    &e.eigenvectors * DMatrix::from_diagonal(&inv) * e.eigenvectors.transpose()
}

/// Projection onto the general marginal set: diagonal blocks are
/// `diag(mu_i)`, off-diagonal blocks have row sums `mu_i` and column sums
/// `mu_j`, and every `mu_i` sums to one.
///
/// For fixed diagonals the block projection onto prescribed row and column
/// sums is `Y0 + a 1^T + 1 b^T`, whose squared distance separates into a
/// quadratic in `mu_i` and one in `mu_j`. The diagonal problem therefore
/// decouples per particle into a weighted mean followed by a shift onto the
/// unit-sum hyperplane.
pub(crate) struct MarginalProjector {
    offsets: Vec<usize>,
}

impl MarginalProjector {
    pub fn project(&self, x0: &DMatrix<f64>) -> DMatrix<f64> {
        let n_part = self.offsets.len() - 1;
        let size = |i: usize| self.offsets[i + 1] - self.offsets[i];
        let n = x0.nrows();
        let mut x = DMatrix::zeros(n, n);

        let mut diag: Vec<DVector<f64>> = Vec::with_capacity(n_part);
        for i in 0..n_part {
            let oi = self.offsets[i];
            let ni = size(i);
            let mut acc = DVector::from_fn(ni, |a, _| x0[(oi + a, oi + a)]);
            let mut wsum = 1.0;
            for j in 0..n_part {
                if j == i {
                    continue;
                }
                let oj = self.offsets[j];
                let nj = size(j);
                let w = 2.0 / nj as f64;
                for a in 0..ni {
                    let mut row = 0.0;
                    for b in 0..nj {
                        row += 0.5 * (x0[(oi + a, oj + b)] + x0[(oj + b, oi + a)]);
                    }
                    acc[a] += w * row;
                }
                wsum += w;
            }
            acc /= wsum;
            let shift = (1.0 - acc.sum()) / ni as f64;
            acc.add_scalar_mut(shift);
            for a in 0..ni {
                x[(oi + a, oi + a)] = acc[a];
            }
            diag.push(acc);
        }

        for i in 0..n_part {
            for j in i + 1..n_part {
                let (oi, oj) = (self.offsets[i], self.offsets[j]);
                let (p, q) = (size(i), size(j));
                let y0 = DMatrix::from_fn(p, q, |a, b| {
                    0.5 * (x0[(oi + a, oj + b)] + x0[(oj + b, oi + a)])
                });
                let s_r = &diag[i] - y0.column_sum();
                let s_c = &diag[j] - y0.row_sum().transpose();
                let total = s_r.sum();
                let a_vec = &s_r / q as f64;
                let b_vec = (s_c.add_scalar(-total / q as f64)) / p as f64;
                for a in 0..p {
                    for b in 0..q {
                        let v = y0[(a, b)] + a_vec[a] + b_vec[b];
                        x[(oi + a, oj + b)] = v;
                        x[(oj + b, oi + a)] = v;
                    }
                }
            }
        }
        x
    }
}

/// Projection onto `{X : X 1 = N diag(X), tr X = 1, X_ll = pi_l (pinned)}`,
/// the constraint set of the permutation-invariant relaxation written in
/// terms of `X = diag(rho) + (N-1) gamma` with `diag(gamma) = 0`.
///
/// Stationarity gives `X_lm = X0_lm + (lambda_l + lambda_m) / 2` off the
/// diagonal and `X_ll = X0_ll - (N-1) lambda_l + tau` on free diagonal
/// entries; each `lambda_l` is affine in the two scalars `(tau, sum lambda)`,
/// which solve a 2x2 system.
pub(crate) struct SymmetricProjector {
    n_particles: usize,
    pinned: Vec<(usize, f64)>,
}

impl SymmetricProjector {
    pub fn supported(n: usize, pinned: &[(usize, f64)]) -> bool {
        n > 2 || pinned.is_empty()
    }

    pub fn project(&self, x0: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let n = x0.nrows();
        let nm1 = self.n_particles as f64 - 1.0;
        let mut pin = vec![None; n];
        for &(l, v) in &self.pinned {
            pin[l] = Some(v);
        }
        let sym = |l: usize, m: usize| 0.5 * (x0[(l, m)] + x0[(m, l)]);
        let s: Vec<f64> = (0..n)
            .map(|l| (0..n).filter(|&m| m != l).map(|m| sym(l, m)).sum())
            .collect();
        let half_nm2 = (n as f64 - 2.0) / 2.0;
        let c_free = half_nm2 + nm1 * nm1;
        // lambda_l = alpha_l + beta_l * tau + g_l * big_lambda
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut g = vec![0.0; n];
        for l in 0..n {
            match pin[l] {
                None => {
                    alpha[l] = (nm1 * x0[(l, l)] - s[l]) / c_free;
                    beta[l] = nm1 / c_free;
                    g[l] = -0.5 / c_free;
                }
                Some(v) => {
                    if half_nm2 <= 0.0 {
                        return None;
                    }
                    alpha[l] = (nm1 * v - s[l]) / half_nm2;
                    beta[l] = 0.0;
                    g[l] = -0.5 / half_nm2;
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&l| pin[l].is_none()).collect();
        let (sa, sb, sg): (f64, f64, f64) = (alpha.iter().sum(), beta.iter().sum(), g.iter().sum());
        // (1 - G) L - B tau = A
        let (tau, big_l) = if free.is_empty() {
            if (1.0 - sg).abs() < 1e-14 {
                return None;
            }
            (0.0, sa / (1.0 - sg))
        } else {
            let fa: f64 = free.iter().map(|&l| alpha[l]).sum();
            let fb: f64 = free.iter().map(|&l| beta[l]).sum();
            let fg: f64 = free.iter().map(|&l| g[l]).sum();
            let fd: f64 = free.iter().map(|&l| x0[(l, l)]).sum();
            let pinned_mass: f64 = pin.iter().flatten().sum();
            // trace row: (|free| - (N-1) fb) tau - (N-1) fg L = 1 - pinned - fd + (N-1) fa
            let a11 = free.len() as f64 - nm1 * fb;
            let a12 = -nm1 * fg;
            let r1 = 1.0 - pinned_mass - fd + nm1 * fa;
            let a21 = -sb;
            let a22 = 1.0 - sg;
            let r2 = sa;
            let det = a11 * a22 - a12 * a21;
            if det.abs() < 1e-14 * (a11.abs() + a12.abs()) * (a21.abs() + a22.abs()) {
                return None;
            }
            ((r1 * a22 - a12 * r2) / det, (a11 * r2 - a21 * r1) / det)
        };
        let lambda: Vec<f64> = (0..n)
            .map(|l| alpha[l] + beta[l] * tau + g[l] * big_l)
            .collect();
        let mut x = DMatrix::zeros(n, n);
        for l in 0..n {
            x[(l, l)] = match pin[l] {
                Some(v) => v,
                None => x0[(l, l)] - nm1 * lambda[l] + tau,
            };
            for m in 0..l {
                let v = sym(l, m) + 0.5 * (lambda[l] + lambda[m]);
                x[(l, m)] = v;
                x[(m, l)] = v;
            }
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pairs;
    use crate::relax::{build_general, build_symmetric, Pin, RelaxationSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        0.5 * (&a + a.transpose())
    }

    #[test]
    fn marginal_projection_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sizes in [vec![1, 1], vec![2, 3], vec![3, 1, 4], vec![2, 2, 2, 5]] {
            let n = sizes.len();
            let costs = pairs(n).map(|(i, j)| DMatrix::zeros(sizes[i], sizes[j])).collect();
            let p = build_general(&RelaxationSpec::general(sizes, costs)).unwrap();
            let generic = GenericProjector::new(&p, 2.0, 1.0);
            let fast = AffineProjector::new(&p, 2.0, 1.0);
            assert!(matches!(fast, AffineProjector::Marginal(_)));
            for _ in 0..5 {
                let x0 = random_sym(&mut rng, p.dim);
                let (a, _) = generic.project(&x0, &DVector::zeros(0));
                let (b, _) = fast.project(&x0, &DVector::zeros(0));
                assert!((&a - &b).amax() < 1e-10, "{}", (&a - &b).amax());
                assert!(p.equality_residual(&b, &DVector::zeros(0)) < 1e-10);
                // idempotent
                let (c, _) = fast.project(&b, &DVector::zeros(0));
                assert!((&c - &b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_projection_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (m, n_particles, pins) in [
            (2, 2, vec![]),
            (4, 3, vec![]),
            (5, 4, vec![1]),
            (6, 7, vec![0, 2, 5]),
            (3, 3, vec![0, 1, 2]),
            (4, 5, vec![3, 3]),
        ] {
            let spec = RelaxationSpec::symmetric(n_particles, DMatrix::zeros(m, m))
                .with_pins(pins.iter().map(|&l| Pin { particle: 0, point: l }).collect());
            let p = build_symmetric(&spec).unwrap();
            let generic = GenericProjector::new(&p, 2.0, 1.0);
            let fast = AffineProjector::new(&p, 2.0, 1.0);
            assert!(matches!(fast, AffineProjector::Symmetric(_)));
            for _ in 0..5 {
                let x0 = random_sym(&mut rng, m);
                let (a, _) = generic.project(&x0, &DVector::zeros(0));
                let (b, _) = fast.project(&x0, &DVector::zeros(0));
                assert!((&a - &b).amax() < 1e-10, "m={m} {}", (&a - &b).amax());
                assert!(p.equality_residual(&b, &DVector::zeros(0)) < 1e-10);
            }
        }
    }

    #[test]
    fn generic_projection_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sizes = vec![2, 3, 2];
        let costs = pairs(3).map(|(i, j)| DMatrix::zeros(sizes[i], sizes[j])).collect();
        let p = build_general(&RelaxationSpec::general(sizes, costs)).unwrap();
        let g = GenericProjector::new(&p, 1.0, 1.0);
        let x0 = random_sym(&mut rng, p.dim);
        let (x, _) = g.project(&x0, &DVector::zeros(0));
        // any other feasible point is farther away
        for _ in 0..20 {
            let (other, _) = g.project(&random_sym(&mut rng, p.dim), &DVector::zeros(0));
            let t: f64 = rng.gen_range(0.0..1.0);
            let mixed = &x * (1.0 - t) + other * t;
            assert!((&mixed - &x0).norm() >= (&x - &x0).norm() - 1e-12);
        }
    }
}
