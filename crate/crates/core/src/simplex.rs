//! Dense bounded revised simplex for `min c.x  s.t.  A x = b, x >= 0`.
//!
//! Phase one starts from an all-artificial basis. In phase two the artificials
//! keep bounds `[0, 0]`, so the ones that stay basic on redundant rows are
//! harmless. The basis inverse is kept dense and updated by elementary row
//! operations, with a fresh inversion every `refactor_every` pivots.
//!
//! Pricing uses Devex reference weights with reduced costs updated from the
//! pivot row; ties go to the smallest column index. Columns whose weight
//! overflows are parked until the weights are reset. After
//! `degenerate_switch` consecutive degenerate pivots the solver falls back to
//! Bland's smallest-index rule until the objective moves again.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    pub tol_opt: f64,
    pub tol_feas: f64,
    pub tol_pivot: f64,
    pub max_iters: usize,
    pub refactor_every: usize,
    pub degenerate_switch: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            tol_opt: 1e-11,
            tol_feas: 1e-9,
            tol_pivot: 1e-7,
            max_iters: 200_000,
            refactor_every: 64,
            degenerate_switch: 1000,
        }
    }
}

/// Optimal basic solution with its dual certificate.
#[derive(Debug, Clone, Serialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Row duals `y` with `c - A^T y >= 0` up to `dual_infeasibility`.
    pub duals: Vec<f64>,
    pub dual_value: f64,
    pub duality_gap: f64,
    pub dual_infeasibility: f64,
    pub primal_residual: f64,
    pub iterations: usize,
    /// Structural columns in the final basis, ascending.
    pub basic_columns: Vec<usize>,
}

/// Read access to the constraint matrix, one column at a time.
pub trait ColumnSource: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn column(&self, j: usize, out: &mut [f64]);
    /// `out[j] = rho . a_j` for every column.
    fn row_times_columns(&self, rho: &[f64], out: &mut [f64]);
}

/// Dense column-major matrix with `rows` entries per column.
#[derive(Debug, Clone, Copy)]
pub struct DenseColumns<'a> {
    pub rows: usize,
    pub a: &'a [f64],
}

impl ColumnSource for DenseColumns<'_> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.a.len() / self.rows
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.a[j * self.rows..(j + 1) * self.rows]);
    }

    fn row_times_columns(&self, rho: &[f64], out: &mut [f64]) {
        for (slot, colj) in out.iter_mut().zip(self.a.chunks_exact(self.rows)) {
            *slot = dot(rho, colj);
        }
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

struct Tableau<'a> {
    cols: &'a dyn ColumnSource,
    m: usize,
    n: usize,
    sign: Vec<f64>,
    rhs: Vec<f64>,
    upper: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    xb: Vec<f64>,
    binv: Vec<f64>,
    opts: &'a SimplexOptions,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn column(&self, j: usize, out: &mut [f64]) {
        if j < self.n {
            self.cols.column(j, out);
            for (o, s) in out.iter_mut().zip(&self.sign) {
                *o *= s;
            }
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j - self.n] = 1.0;
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        // Gauss-Jordan on [B | I] with partial pivoting
        let mut bm = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..m {
                bm[i * m + k] = col[i];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let piv = (k..m)
                .max_by(|&a, &b| bm[a * m + k].abs().total_cmp(&bm[b * m + k].abs()))
                .unwrap();
            if bm[piv * m + k].abs() < 1e-14 {
                return Err(invalid("singular basis during refactorization"));
            }
            if piv != k {
                for c in 0..m {
                    bm.swap(k * m + c, piv * m + c);
                    inv.swap(k * m + c, piv * m + c);
                }
            }
            let d = 1.0 / bm[k * m + k];
            for c in 0..m {
                bm[k * m + c] *= d;
                inv[k * m + c] *= d;
            }
            for i in 0..m {
                if i == k {
                    continue;
                }
                let f = bm[i * m + k];
                if f == 0.0 {
                    continue;
                }
                for c in 0..m {
                    bm[i * m + c] -= f * bm[k * m + c];
                    inv[i * m + c] -= f * inv[k * m + c];
                }
            }
        }
        self.binv = inv;
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.xb[i] = row.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// `rho . a_j` for every column (sign-adjusted rows).
    fn row_times_columns(&self, rho: &[f64], out: &mut [f64]) {
        let srho: Vec<f64> = rho.iter().zip(&self.sign).map(|(r, s)| r * s).collect();
        self.cols.row_times_columns(&srho, &mut out[..self.n]);
        out[self.n..].copy_from_slice(rho);
    }

    fn reduced_costs(&self, cost: &[f64], d: &mut [f64]) {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &j) in self.basis.iter().enumerate() {
            let cb = cost[j];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for k in 0..m {
                    y[k] += cb * row[k];
                }
            }
        }
        self.row_times_columns(&y, d);
        for (j, v) in d.iter_mut().enumerate() {
            *v = if self.is_basic[j] { 0.0 } else { cost[j] - *v };
        }
    }

    /// Runs the simplex on `cost` until optimal.
    fn optimise(&mut self, cost: &[f64]) -> Result<()> {
        let m = self.m;
        let total = self.n + m;
        let mut d = vec![0.0; total];
        let mut weight = vec![1.0; total];
        let mut prow = vec![0.0; total];
        let mut col = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        self.reduced_costs(cost, &mut d);
        let mut fresh = true;
        loop {
            if self.iterations >= self.opts.max_iters {
                return Err(Error::NotConverged {
                    what: "simplex",
                    detail: format!("{} pivots", self.iterations),
                });
            }
            let bland = degenerate >= self.opts.degenerate_switch;
            let mut enter = usize::MAX;
            let mut parked = false;
            let mut best = 0.0;
            for j in 0..total {
                if self.is_basic[j] || self.upper[j] <= 0.0 || d[j] >= -self.opts.tol_opt {
                    continue;
                }
                if bland {
                    enter = j;
                    break;
                }
                // columns whose reference weight overflowed are parked until a reset
                let score = d[j] * d[j] / weight[j];
                if score > best {
                    best = score;
                    enter = j;
                } else if !(score > 0.0) {
                    parked = true;
                }
            }
            if enter == usize::MAX && parked {
                weight.iter_mut().for_each(|w| *w = 1.0);
                continue;
            }
            if enter == usize::MAX {
                if fresh {
                    return Ok(());
                }
                // confirm optimality on a fresh factorization
                self.refactor()?;
                since_refactor = 0;
                self.reduced_costs(cost, &mut d);
                fresh = true;
                continue;
            }
            self.column(enter, &mut col);
            for i in 0..m {
                let row = &self.binv[i * m..(i + 1) * m];
                alpha[i] = row.iter().zip(&col).map(|(a, b)| a * b).sum();
            }
            // ratio test, ignoring entries that are tiny relative to the column
            let amax = alpha.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let ptol = self.opts.tol_pivot * amax.max(1.0);
            let mut leave = usize::MAX;
            let mut theta = f64::INFINITY;
            for i in 0..m {
                let a = alpha[i];
                let limit = if a > ptol {
                    self.xb[i].max(0.0) / a
                } else if a < -ptol && self.upper[self.basis[i]].is_finite() {
                    (self.upper[self.basis[i]] - self.xb[i]).max(0.0) / -a
                } else {
                    continue;
                };
                let better = if leave == usize::MAX || limit < theta - 1e-12 {
                    true
                } else if limit <= theta + 1e-12 {
                    if bland {
                        self.basis[i] < self.basis[leave]
                    } else {
                        a.abs() > alpha[leave].abs()
                    }
                } else {
                    false
                };
                if better {
                    leave = i;
                    theta = limit;
                }
            }
            if leave == usize::MAX {
                return Err(Error::Unbounded { column: enter });
            }
            // pivot row of B^-1 A before the basis change
            let rho: Vec<f64> = self.binv[leave * m..(leave + 1) * m].to_vec();
            self.row_times_columns(&rho, &mut prow);
            let ar = alpha[leave];
            let dq = d[enter];
            let wq = weight[enter];
            for j in 0..total {
                if self.is_basic[j] || j == enter || prow[j] == 0.0 {
                    continue;
                }
                let ratio = prow[j] / ar;
                d[j] -= dq * ratio;
                weight[j] = weight[j].max(ratio * ratio * wq);
            }
            for i in 0..m {
                self.xb[i] -= theta * alpha[i];
            }
            self.xb[leave] = theta;
            let out = self.basis[leave];
            self.is_basic[out] = false;
            self.is_basic[enter] = true;
            self.basis[leave] = enter;
            d[enter] = 0.0;
            d[out] = -dq / ar;
            weight[out] = (wq / (ar * ar)).max(1.0);
            let pr = 1.0 / ar;
            for k in 0..m {
                self.binv[leave * m + k] *= pr;
            }
            let pivot_row: Vec<f64> = self.binv[leave * m..(leave + 1) * m].to_vec();
            for i in 0..m {
                if i == leave || alpha[i] == 0.0 {
                    continue;
                }
                let f = alpha[i];
                let row = &mut self.binv[i * m..(i + 1) * m];
                for k in 0..m {
                    row[k] -= f * pivot_row[k];
                }
            }
            self.iterations += 1;
            fresh = false;
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };
            since_refactor += 1;
            if since_refactor >= self.opts.refactor_every {
                self.refactor()?;
                self.reduced_costs(cost, &mut d);
                fresh = true;
                since_refactor = 0;
            }
        }
    }
}

/// Solves `min c.x  s.t.  A x = b, x >= 0` to optimality.
pub fn solve(cols: &dyn ColumnSource, b: &[f64], c: &[f64], opts: &SimplexOptions) -> Result<LpSolution> {
    let m = cols.rows();
    let n = cols.cols();
    if m == 0 || b.len() != m || c.len() != n {
        return Err(invalid("inconsistent linear program dimensions"));
    }
    if b.iter().chain(c).any(|v| !v.is_finite()) {
        return Err(invalid("linear program has non-finite data"));
    }
    let sign: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let rhs: Vec<f64> = b.iter().map(|v| v.abs()).collect();
    let mut t = Tableau {
        cols,
        m,
        n,
        sign,
        xb: rhs.clone(),
        rhs,
        upper: vec![f64::INFINITY; n + m],
        basis: (n..n + m).collect(),
        is_basic: (0..n + m).map(|j| j >= n).collect(),
        binv: (0..m * m).map(|k| if k / m == k % m { 1.0 } else { 0.0 }).collect(),
        opts,
        iterations: 0,
    };
    let phase1: Vec<f64> = (0..n + m).map(|j| if j < n { 0.0 } else { 1.0 }).collect();
    t.optimise(&phase1)?;
    t.refactor()?;
    let infeas: f64 = t
        .basis
        .iter()
        .zip(&t.xb)
        .filter(|(j, _)| **j >= n)
        .map(|(_, v)| v.max(0.0))
        .sum();
    let scale = 1.0 + t.rhs.iter().fold(0.0f64, |a, v| a.max(*v));
    if infeas > opts.tol_feas * scale {
        return Err(Error::Infeasible { residual: infeas });
    }
    for j in n..n + m {
        t.upper[j] = 0.0;
    }
    let phase2: Vec<f64> = (0..n + m).map(|j| if j < n { c[j] } else { 0.0 }).collect();
    t.optimise(&phase2)?;
    t.refactor()?;

    let mut x = vec![0.0; n];
    for (i, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = t.xb[i].max(0.0);
        }
    }
    let mut y = vec![0.0; m];
    for (i, &j) in t.basis.iter().enumerate() {
        let cb = phase2[j];
        for k in 0..m {
            y[k] += cb * t.binv[i * m + k];
        }
    }
    let duals: Vec<f64> = y.iter().zip(&t.sign).map(|(a, s)| a * s).collect();
    let mut ay = vec![0.0; n];
    cols.row_times_columns(&duals, &mut ay);
    let dual_infeasibility = c.iter().zip(&ay).map(|(c, a)| a - c).fold(0.0, f64::max);
    let mut primal = vec![0.0; m];
    let mut col = vec![0.0; m];
    for (j, xj) in x.iter().enumerate() {
        if *xj != 0.0 {
            cols.column(j, &mut col);
            for i in 0..m {
                primal[i] += col[i] * xj;
            }
        }
    }
    let primal_residual = primal.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let value: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
    let dual_value: f64 = duals.iter().zip(b).map(|(a, b)| a * b).sum();
    let mut basic_columns: Vec<usize> = t.basis.iter().copied().filter(|&j| j < n).collect();
    basic_columns.sort_unstable();
    Ok(LpSolution {
        x,
        value,
        duals,
        dual_value,
        duality_gap: (value - dual_value).abs(),
        dual_infeasibility,
        primal_residual,
        iterations: t.iterations,
        basic_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn colmajor(rows: &[&[f64]]) -> Vec<f64> {
        let m = rows.len();
        let n = rows[0].len();
        let mut a = vec![0.0; m * n];
        for (i, r) in rows.iter().enumerate() {
            for j in 0..n {
                a[j * m + i] = r[j];
            }
        }
        a
    }

    #[test]
    fn small_textbook_program() {
        // min -x - 2y, x + y + s1 = 4, x + 3y + s2 = 6
        let a = colmajor(&[&[1.0, 1.0, 1.0, 0.0], &[1.0, 3.0, 0.0, 1.0]]);
        let s = solve(&DenseColumns { rows: 2, a: &a }, &[4.0, 6.0], &[-1.0, -2.0, 0.0, 0.0], &SimplexOptions::default()).unwrap();
        assert!((s.value + 5.0).abs() < 1e-12);
        assert!((s.x[0] - 3.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!(s.duality_gap < 1e-12);
    }

    #[test]
    fn redundant_rows_and_negative_rhs() {
        // x + y = 1 twice, -x = -0.25
        let a = colmajor(&[&[1.0, 1.0], &[1.0, 1.0], &[-1.0, 0.0]]);
        let s = solve(&DenseColumns { rows: 3, a: &a }, &[1.0, 1.0, -0.25], &[2.0, 1.0], &SimplexOptions::default()).unwrap();
        assert!((s.value - 1.25).abs() < 1e-12);
        assert!(s.primal_residual < 1e-12);
        assert!(s.duality_gap < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let a = colmajor(&[&[1.0, 1.0]]);
        let r = solve(&DenseColumns { rows: 1, a: &a }, &[-1.0], &[1.0, 1.0], &SimplexOptions::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
        let a = colmajor(&[&[1.0, -1.0]]);
        let r = solve(&DenseColumns { rows: 1, a: &a }, &[1.0], &[0.0, -1.0], &SimplexOptions::default());
        assert!(matches!(r, Err(Error::Unbounded { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // transportation-like programs are always feasible and bounded
        #[test]
        fn strong_duality_on_random_assignment(costs in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let k = 4;
            let mut rows = vec![vec![0.0; k * k]; 2 * k];
            for i in 0..k {
                for j in 0..k {
                    rows[i][i * k + j] = 1.0;
                    rows[k + j][i * k + j] = 1.0;
                }
            }
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let a = colmajor(&refs);
            let b = vec![1.0; 2 * k];
            let s = solve(&DenseColumns { rows: 2 * k, a: &a }, &b, &costs, &SimplexOptions::default()).unwrap();
            prop_assert!(s.duality_gap < 1e-9);
            prop_assert!(s.dual_infeasibility < 1e-9);
            prop_assert!(s.primal_residual < 1e-9);
            // brute force over permutations
            let mut best = f64::INFINITY;
            let mut perm: Vec<usize> = (0..k).collect();
            permute(&mut perm, 0, &mut |p| {
                let v: f64 = (0..k).map(|i| costs[i * k + p[i]]).sum();
                best = best.min(v);
            });
            prop_assert!((s.value - best).abs() < 1e-9);
        }
    }

    fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
        if i == p.len() {
            f(p);
            return;
        }
        for j in i..p.len() {
            p.swap(i, j);
            permute(p, i + 1, f);
            p.swap(i, j);
        }
    }
}
