//! Sparse periodic linear systems.
//!
//! 1D systems are cyclic tridiagonal and are solved exactly (Thomas +
//! Sherman-Morrison). 2D systems use CG (symmetric) or BiCGSTAB. Reductions
//! run sequentially in index order so results do not depend on scheduling.

use rayon::prelude::*;

use crate::domain::TorusGrid;
use crate::error::{MfgcError, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists; repeated columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(rows)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                sums[j] += v;
            }
        }
        sums
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve the cyclic tridiagonal system
/// `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` (indices mod n).
pub fn solve_cyclic_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n < 3 || lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(MfgcError::LinearSolver(format!(
            "cyclic tridiagonal system needs n >= 3 and equal band lengths (n = {n})"
        )));
    }
    // A = T + u v^T with u = (gamma, 0.., upper[n-1]), v = (1, 0.., lower[0]/gamma).
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= lower[0] * upper[n - 1] / gamma;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let y = thomas(lower, &d, upper, rhs)?;
    let z = thomas(lower, &d, upper, &u)?;
    let vy = y[0] + lower[0] / gamma * y[n - 1];
    let vz = z[0] + lower[0] / gamma * z[n - 1];
    let denom = 1.0 + vz;
    if denom == 0.0 || !denom.is_finite() {
        return Err(MfgcError::LinearSolver("singular cyclic system".into()));
    }
    let factor = vy / denom;
    Ok(y.iter().zip(&z).map(|(a, b)| a - factor * b).collect())
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(MfgcError::LinearSolver("zero pivot".into()));
    }
    c[0] = upper[0] / pivot;
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(MfgcError::LinearSolver(format!("zero pivot at row {i}")));
        }
        c[i] = upper[i] / pivot;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterativeOptions {
    /// Relative residual target `|b - Ax| <= tol |b|`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 2000,
        }
    }
}

pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: IterativeOptions,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let target = opts.tolerance * norm2(b).max(f64::MIN_POSITIVE);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..opts.max_iterations {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(MfgcError::LinearSolver(
                "conjugate gradient met a non-positive curvature".into(),
            ));
        }
        let step = rr / pap;
        for i in 0..x.len() {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= target {
        return Ok(x);
    }
    Err(MfgcError::LinearSolver(format!(
        "conjugate gradient stalled at residual {:e} after {} iterations",
        rr.sqrt(),
        opts.max_iterations
    )))
}

pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    opts: IterativeOptions,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = x0.to_vec();
    let ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let target = opts.tolerance * norm2(b).max(f64::MIN_POSITIVE);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..opts.max_iterations {
        if norm2(&r) <= target {
            return Ok(x);
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = a.matvec(&p);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        let t = a.matvec(&s);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            break;
        }
    }
    let res = norm2(&r);
    if res <= target {
        return Ok(x);
    }
    Err(MfgcError::LinearSolver(format!(
        "BiCGSTAB stalled at residual {res:e}"
    )))
}

/// Solve `A x = b` for a nearest-neighbor operator on `grid`.
///
/// 1D uses the exact cyclic tridiagonal solve; 2D iterates from `x0`.
pub fn solve_periodic(
    grid: &TorusGrid,
    a: &CsrMatrix,
    b: &[f64],
    x0: &[f64],
    symmetric: bool,
    opts: IterativeOptions,
) -> Result<Vec<f64>> {
    if grid.dim() == 1 {
        let n = grid.num_nodes();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j == i {
                    diag[i] = v;
                } else if j == (i + n - 1) % n {
                    lower[i] = v;
                } else if j == (i + 1) % n {
                    upper[i] = v;
                } else {
                    return Err(MfgcError::LinearSolver(
                        "operator is not nearest-neighbor".into(),
                    ));
                }
            }
        }
        solve_cyclic_tridiagonal(&lower, &diag, &upper, b)
    } else if symmetric {
        conjugate_gradient(a, b, x0, opts)
    } else {
        bicgstab(a, b, x0, opts)
    }
}
