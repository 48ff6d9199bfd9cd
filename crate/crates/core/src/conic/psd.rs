//! Symmetric eigenvalue kernels: cone projection, extreme eigenpairs.

use faer::{Parallelism, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{MmrError, Result};

/// Largest entrywise asymmetry `max |S - S^T|`.
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(MmrError::ShapeMismatch(format!(
            "expected square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = 1.0 + s.amax();
    let a = asymmetry(s);
    if a > 1e-10 * scale {
        return Err(MmrError::NotSymmetric(a));
    }
    Ok(())
}

fn view(s: &DMatrix<f64>) -> faer::MatRef<'_, f64> {
    faer::mat::from_column_major_slice::<f64, _, _>(s.as_slice(), s.nrows(), s.ncols())
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s)?;
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    project_psd_into(s, &mut out);
    Ok(out)
}

/// Cone projection without the symmetry check. Reads the lower triangle of
/// `s` and writes a symmetric result into `out`. Returns the number of
/// positive eigenvalues kept.
pub fn project_psd_into(s: &DMatrix<f64>, out: &mut DMatrix<f64>) -> usize {
    let n = s.nrows();
    if n == 0 {
        return 0;
    }
    if n == 1 {
        out[(0, 0)] = s[(0, 0)].max(0.0);
        return usize::from(s[(0, 0)] > 0.0);
    }
    let evd = view(s).selfadjoint_eigendecomposition(Side::Lower);
    let vals = evd.s().column_vector();
    let vecs = evd.u();
    let pos: Vec<usize> = (0..n).filter(|&k| vals.read(k) > 0.0).collect();
    let neg: Vec<usize> = (0..n).filter(|&k| vals.read(k) < 0.0).collect();

    // Rebuild from whichever side has fewer eigenpairs.
    let (keep, negate) = if pos.len() <= neg.len() {
        (&pos, false)
    } else {
        (&neg, true)
    };
    let r = keep.len();
    let mut b = faer::Mat::<f64>::zeros(n, r);
    for (c, &k) in keep.iter().enumerate() {
        let w = vals.read(k).abs().sqrt();
        for i in 0..n {
            b.write(i, c, vecs.read(i, k) * w);
        }
    }
    let mut acc = faer::Mat::<f64>::zeros(n, n);
    if r > 0 {
        faer::linalg::matmul::matmul(
            acc.as_mut(),
            b.as_ref(),
            b.transpose(),
            None,
            1.0,
            Parallelism::None,
        );
    }
    for j in 0..n {
        for i in 0..n {
            let v = if negate {
                // S - V_- L_- V_-^T with L_- < 0, i.e. S + B B^T
                s[(i.max(j), i.min(j))] + acc.read(i, j)
            } else {
                acc.read(i, j)
            };
            out[(i, j)] = v;
        }
    }
    // exact symmetry
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    pos.len()
}

/// All eigenvalues, ascending. The input is symmetrized first.
pub fn eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    if s.nrows() == 0 {
        return Vec::new();
    }
    let sym = 0.5 * (s + s.transpose());
    let mut vals = view(&sym).selfadjoint_eigenvalues(Side::Lower);
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    eigenvalues(s).first().copied().unwrap_or(0.0)
}

/// Leading eigenpair plus the second-largest eigenvalue.
pub fn top_eigenpair(s: &DMatrix<f64>) -> (f64, DVector<f64>, f64) {
    let n = s.nrows();
    if n == 1 {
        return (s[(0, 0)], DVector::from_element(1, 1.0), f64::NEG_INFINITY);
    }
    let sym = 0.5 * (s + s.transpose());
    let evd = view(&sym).selfadjoint_eigendecomposition(Side::Lower);
    let vals = evd.s().column_vector();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals.read(b).total_cmp(&vals.read(a)));
    let top = order[0];
    let v = DVector::from_fn(n, |i, _| evd.u().read(i, top));
    (vals.read(top), v, vals.read(order[1]))
}
