//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Harmonic mean of `a` over `(0,1)` by the midpoint rule on `n` cells.
pub fn harmonic_mean(a: &dyn Fn(f64) -> f64, n: usize) -> f64 {
    let inv: f64 = (0..n).map(|i| 1.0 / a((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
    1.0 / inv
}

/// Dense 1D Dirichlet stiffness `(n−1)×(n−1)` for cellwise `a` on `(0, 1)`.
pub fn dense_stiffness_1d(a: &[f64]) -> DMatrix<f64> {
    let n = a.len();
    let h = 1.0 / n as f64;
    let m = n - 1;
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = (a[i] + a[i + 1]) / h;
        if i + 1 < m {
            k[(i, i + 1)] = -a[i + 1] / h;
            k[(i + 1, i)] = -a[i + 1] / h;
        }
    }
    k
}

/// Monolithic space-time solve of the periodic-in-`s` backward-Euler
/// scheme `cap·h(Φ^l − Φ^{l−1})/ds + K_l Φ^l = −F_l` on a 1D periodic
/// grid with `ny` cells and `ns` slabs, `a` sampled at cell and slab
/// midpoints. The constant mode is fixed by a Lagrange multiplier on the
/// total mean. Returns `a_hom = ∫∫ a (Φ' + 1)`.
pub fn monolithic_critical_1d(a: &dyn Fn(f64, f64) -> f64, ny: usize, ns: usize, cap: f64) -> f64 {
    let h = 1.0 / ny as f64;
    let ds = 1.0 / ns as f64;
    let n = ny * ns;
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut rhs = DVector::<f64>::zeros(n + 1);
    let idx = |l: usize, i: usize| l * ny + i;
    let coef: Vec<Vec<f64>> = (0..ns)
        .map(|l| {
            let s = (l as f64 + 0.5) * ds;
            (0..ny).map(|c| a((c as f64 + 0.5) * h, s)).collect()
        })
        .collect();
    for l in 0..ns {
        let prev = (l + ns - 1) % ns;
        for i in 0..ny {
            let row = idx(l, i);
            // node i sits between cell i−1 (left) and cell i (right)
            let left = coef[l][(i + ny - 1) % ny];
            let right = coef[l][i];
            m[(row, row)] += cap * h / ds + (left + right) / h;
            m[(row, idx(l, (i + ny - 1) % ny))] -= left / h;
            m[(row, idx(l, (i + 1) % ny))] -= right / h;
            m[(row, idx(prev, i))] -= cap * h / ds;
            rhs[row] = -(left - right);
            m[(row, n)] = 1.0;
            m[(n, row)] = 1.0;
        }
    }
    let x = m.lu().solve(&rhs).expect("monolithic system is regular");
    let mut ahom = 0.0;
    for l in 0..ns {
        for c in 0..ny {
            let g = (x[idx(l, (c + 1) % ny)] - x[idx(l, c)]) / h;
            ahom += coef[l][c] * (g + 1.0) * h * ds;
        }
    }
    ahom
}
