//! Compressed sparse row matrices and a Jacobi-preconditioned conjugate gradient solver.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix from triplets, summing duplicates. The summation order of
    /// duplicates follows the input order, so assembly is deterministic.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let k = next[i];
            cols[k] = j;
            vals[k] = v;
            next[i] += 1;
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut perm: Vec<usize> = Vec::new();
        for i in 0..n {
            let (s, e) = (counts[i], counts[i + 1]);
            perm.clear();
            perm.extend(s..e);
            // stable: duplicates keep input order
            perm.sort_by_key(|&k| cols[k]);
            let mut last = usize::MAX;
            for &k in &perm {
                if cols[k] == last {
                    *values.last_mut().expect("entry exists") += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = cols[k];
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    /// Largest `|a_ij - a_ji|` relative to the largest `|a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let mut max_abs: f64 = 0.0;
        let mut max_diff: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                max_abs = max_abs.max(v.abs());
                max_diff = max_diff.max((v - self.get(j, i)).abs());
            }
        }
        if max_abs == 0.0 {
            0.0
        } else {
            max_diff / max_abs
        }
    }

    /// Euclidean norm of all entries.
    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolveStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit.
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A` with diagonally preconditioned CG,
/// stopping once `||b - A x|| <= tol ||b||`. `x` holds the initial guess on entry.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, maxit: usize) -> Result<LinearSolveStats> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let n = a.nrows();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let bnorm = norm2(b);
    if !bnorm.is_finite() {
        return Err(Error::Numerical("right-hand side is not finite".into()));
    }
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(LinearSolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN })
        .collect();
    if inv_diag.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("matrix has a non-positive diagonal entry".into()));
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = norm2(&r);
    if rnorm <= tol * bnorm {
        return Ok(LinearSolveStats { iterations: 0, relative_residual: rnorm / bnorm });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dotv(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=maxit {
        a.matvec(&p, &mut ap);
        let pap = dotv(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!("matrix is not positive definite (p'Ap = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm2(&r);
        if !rnorm.is_finite() {
            return Err(Error::Numerical("non-finite residual in CG".into()));
        }
        if rnorm <= tol * bnorm {
            return Ok(LinearSolveStats { iterations: it, relative_residual: rnorm / bnorm });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dotv(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: maxit, residual: rnorm / bnorm })
}

/// Convenience wrapper starting from zero.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64, maxit: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    pcg(a, b, &mut x, tol, maxit)?;
    Ok(x)
}
