//! Tridiagonal linear algebra for the Newton and continuation solvers.
//!
//! P1 elements on a line produce symmetric tridiagonal forms; the solvers
//! need one general tridiagonal solve with partial pivoting (row swaps
//! introduce a second superdiagonal, handled explicitly).

/// Symmetric tridiagonal matrix: `diag` has length n, `off` length n-1.
#[derive(Clone, Debug)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn zeros(n: usize) -> Self {
        SymTridiag {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.diag.len();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = self.diag[i] * x[i];
            if i > 0 {
                y[i] += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                y[i] += self.off[i] * x[i + 1];
            }
        }
        y
    }

    /// Solve (self) x = b.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        solve_tridiag(&self.off, &self.diag, &self.off, b)
    }
}

/// Solve a general tridiagonal system by Gaussian elimination with
/// partial pivoting. `dl` is the subdiagonal (n-1), `d` the diagonal (n),
/// `du` the superdiagonal (n-1). Returns None on a singular pivot.
pub fn solve_tridiag(dl: &[f64], d: &[f64], du: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = d.len();
    assert_eq!(dl.len(), n.saturating_sub(1));
    assert_eq!(du.len(), n.saturating_sub(1));
    assert_eq!(b.len(), n);
    if n == 0 {
        return Some(Vec::new());
    }
    let mut d = d.to_vec();
    let mut du = du.to_vec();
    // Fill-in from row swaps: du2[i] is the (i, i+2) entry.
    let mut du2 = vec![0.0; n];
    let mut x = b.to_vec();

    for i in 0..n - 1 {
        let sub = dl[i];
        if d[i].abs() >= sub.abs() {
            if d[i] == 0.0 {
                return None;
            }
            let m = sub / d[i];
            d[i + 1] -= m * du[i];
            if i + 2 < n {
                // Row i carries fill at column i+2 only after an earlier
                // swap; it feeds the superdiagonal of row i+1.
                du[i + 1] -= m * du2[i];
            }
            x[i + 1] -= m * x[i];
        } else {
            let m = d[i] / sub;
            d[i] = sub;
            let old_d_next = d[i + 1];
            d[i + 1] = du[i] - m * old_d_next;
            du[i] = old_d_next;
            if i + 2 < n {
                let old_du_next = du[i + 1];
                du[i + 1] = du2[i] - m * old_du_next;
                du2[i] = old_du_next;
            }
            x.swap(i, i + 1);
            x[i + 1] -= m * x[i];
        }
    }

    if d[n - 1] == 0.0 {
        return None;
    }
    x[n - 1] /= d[n - 1];
    if n >= 2 {
        let i = n - 2;
        x[i] = (x[i] - du[i] * x[i + 1]) / d[i];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    Some(x)
}
