//! Type-II Anderson acceleration for a fixed-point map `s -> F(s)`.

use nalgebra::{DMatrix, DVector};

pub(crate) struct Anderson {
    memory: usize,
    ds: Vec<DVector<f64>>,
    dg: Vec<DVector<f64>>,
    last: Option<(DVector<f64>, DVector<f64>)>,
}

impl Anderson {
    pub fn new(memory: usize) -> Self {
        Self {
            memory,
            ds: Vec::new(),
            dg: Vec::new(),
            last: None,
        }
    }

    pub fn enabled(&self) -> bool {
        self.memory > 0
    }

    pub fn reset(&mut self) {
        self.ds.clear();
        self.dg.clear();
        self.last = None;
    }

    /// Record `s` with residual `g = F(s) - s` and return the extrapolated
    /// next point, or `None` while the history is empty or degenerate.
    pub fn extrapolate(&mut self, s: &DVector<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some((ps, pg)) = self.last.take() {
            self.ds.push(s - ps);
            self.dg.push(g - pg);
            if self.ds.len() > self.memory {
                self.ds.remove(0);
                self.dg.remove(0);
            }
        }
        self.last = Some((s.clone(), g.clone()));
        let k = self.dg.len();
        if k == 0 {
            return None;
        }
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for i in 0..k {
            b[i] = self.dg[i].dot(g);
            for j in 0..=i {
                let v = self.dg[i].dot(&self.dg[j]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let reg = 1e-10 * a.diagonal().max().max(1e-300);
        for i in 0..k {
            a[(i, i)] += reg;
        }
        let gamma = a.cholesky()?.solve(&b);
        if gamma.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut out = s + g;
        for i in 0..k {
            out.axpy(-gamma[i], &self.ds[i], 1.0);
            out.axpy(-gamma[i], &self.dg[i], 1.0);
        }
        Some(out)
    }
}
