//! Sparse symmetric storage and preconditioned conjugate gradients.
//!
//! Every linear system in the crate is symmetric positive definite, or
//! positive semidefinite with the constants as kernel (periodic cell
//! problems). The latter is handled by mean deflation: the right-hand side
//! is projected onto the zero-sum subspace and every Krylov vector is kept
//! there.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl CsrMatrix {
    /// Builds from raw CSR arrays. Column indices inside a row must be
    /// strictly increasing and every row must store at least one entry.
    pub fn from_raw(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
        symmetric: bool,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1 || col_idx.len() != values.len() || row_ptr[n] != values.len() {
            return Err(Error::Format("inconsistent CSR array lengths".into()));
        }
        for i in 0..n {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if hi <= lo {
                return Err(Error::Format(format!("row {i} stores no entries")));
            }
            for k in lo..hi {
                if col_idx[k] >= n || (k > lo && col_idx[k] <= col_idx[k - 1]) {
                    return Err(Error::Format(format!("row {i}: unsorted or out-of-range column")));
                }
            }
        }
        let m = CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
            symmetric,
        };
        if symmetric {
            let defect = m.symmetry_defect();
            if defect >= 1e-12 {
                return Err(Error::Validation(format!(
                    "matrix flagged symmetric has defect {defect:.3e}"
                )));
            }
        }
        Ok(m)
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], symmetric: bool) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Format(format!("triplet ({i},{j}) outside {n}x{n}")));
            }
            rows[i].push((j, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(values.len());
        }
        Self::from_raw(n, row_ptr, col_idx, values, symmetric)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the stored values (pattern fixed).
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `max |A_ij − A_ji|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                d = d.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        d
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Adds `d[i]` to the (stored) diagonal entries.
    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, &di) in d.iter().enumerate().take(self.n) {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let k = lo + self.col_idx[lo..hi]
                .binary_search(&i)
                .expect("diagonal entry must be stored");
            self.values[k] += di;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    /// Semidefinite operator whose kernel is the constant vector.
    ZeroMean,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub tolerance: f64,
    /// `None` means `10 · unknowns`.
    pub max_iterations: Option<usize>,
    pub preconditioner: Preconditioner,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_iterations: None,
            preconditioner: Preconditioner::Diagonal,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "solver tolerance {} must lie in (0,1)",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖Ax − b‖ / ‖b‖` of the returned iterate (with the projected `b`
    /// under [`Constraint::ZeroMean`]).
    pub relative_residual: f64,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Solves `A x = b` by preconditioned conjugate gradients.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], cfg: &SolverConfig, constraint: Constraint) -> Result<Solution> {
    solve_spd_from(a, b, None, cfg, constraint)
}

/// As [`solve_spd`], starting from `x0` when given.
pub fn solve_spd_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    cfg: &SolverConfig,
    constraint: Constraint,
) -> Result<Solution> {
    cfg.validate()?;
    let n = a.n();
    if b.len() != n {
        return Err(Error::Alignment(format!("rhs length {} vs operator size {n}", b.len())));
    }
    let deflate = constraint == Constraint::ZeroMean;
    let mut rhs = b.to_vec();
    if deflate {
        remove_mean(&mut rhs);
    }
    let b_norm = norm2(&rhs);
    if b_norm == 0.0 {
        return Ok(Solution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let max_it = cfg.max_iterations.unwrap_or(10 * n.max(1));
    let inv_diag: Vec<f64> = match cfg.preconditioner {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Diagonal => a
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    if deflate {
        remove_mean(&mut x);
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0usize;

    // Outer loop restarts from the true residual so the returned iterate
    // honours the residual contract even when the recursion drifts.
    loop {
        a.mul_vec_into(&x, &mut r);
        for i in 0..n {
            r[i] = rhs[i] - r[i];
        }
        if deflate {
            remove_mean(&mut r);
        }
        let true_res = norm2(&r) / b_norm;
        if true_res <= cfg.tolerance {
            if deflate {
                remove_mean(&mut x);
            }
            return Ok(Solution {
                x,
                iterations,
                relative_residual: true_res,
            });
        }
        if iterations >= max_it {
            return Err(Error::NonConvergence {
                iterations,
                residual: true_res,
            });
        }

        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        if deflate {
            remove_mean(&mut z);
        }
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let target = 0.5 * cfg.tolerance * b_norm;
        while iterations < max_it {
            a.mul_vec_into(&p, &mut ap);
            if deflate {
                remove_mean(&mut ap);
            }
            let curvature = dot(&p, &ap);
            if curvature <= 0.0 {
                let pn = dot(&p, &p);
                if pn == 0.0 {
                    break;
                }
                return Err(Error::Indefinite {
                    iteration: iterations,
                    curvature: curvature / pn,
                });
            }
            let alpha = rz / curvature;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm2(&r) <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            if deflate {
                remove_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}
