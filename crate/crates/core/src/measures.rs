//! Closed probability measures on velocity-space-time nodes and the linear
//! program that minimizes the action over them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::form::OneForm;
use crate::grid::{wrap_unit, NodeSet, Point, SpaceTimeGrid};
use crate::simplex::{self, dot, ColumnSource, LpSolution, SimplexOptions};
use crate::system::{LagrangianSystem, State, TrigKind, TrigPolynomial};

/// Nonnegative weights on `(x, v, t)` nodes with unit mass.
///
/// Index layout: `(t * space_len + x) * velocity_len + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    grid: SpaceTimeGrid,
    weights: Vec<f64>,
}

/// One atom of a discrete measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: Point,
    pub v: Point,
    pub t: f64,
    pub weight: f64,
}

impl DiscreteMeasure {
    pub fn variable_count(grid: &SpaceTimeGrid) -> usize {
        grid.node_count() * grid.velocity_len()
    }

    /// Validates nonnegativity and unit mass (to 1e-12).
    pub fn new(grid: &SpaceTimeGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != Self::variable_count(grid) {
            return Err(invalid(format!(
                "measure has {} weights, grid has {} nodes",
                weights.len(),
                Self::variable_count(grid)
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("measure weights must be finite and nonnegative"));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("measure has mass {mass}, expected 1")));
        }
        Ok(Self { grid: grid.clone(), weights })
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(grid: &SpaceTimeGrid, mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if *w < 0.0 && *w > -1e-12 {
                *w = 0.0;
            }
        }
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return Err(invalid("measure has no mass"));
        }
        weights.iter_mut().for_each(|w| *w /= mass);
        Self::new(grid, weights)
    }

    pub fn index(grid: &SpaceTimeGrid, x: usize, iv: usize, t: usize) -> usize {
        (t * grid.space_len() + x) * grid.velocity_len() + iv
    }

    /// Point mass at one node.
    pub fn dirac(grid: &SpaceTimeGrid, x: usize, iv: usize, t: usize) -> Self {
        let mut w = vec![0.0; Self::variable_count(grid)];
        w[Self::index(grid, x, iv, t)] = 1.0;
        Self { grid: grid.clone(), weights: w }
    }

    /// Point mass in `(x, v)` spread uniformly over all time slices.
    pub fn time_uniform_dirac(grid: &SpaceTimeGrid, x: usize, iv: usize) -> Self {
        let mut w = vec![0.0; Self::variable_count(grid)];
        let share = 1.0 / grid.nt() as f64;
        for t in 0..grid.nt() {
            w[Self::index(grid, x, iv, t)] = share;
        }
        Self { grid: grid.clone(), weights: w }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn atom_at(&self, j: usize) -> Atom {
        let g = &self.grid;
        let nvl = g.velocity_len();
        let iv = j % nvl;
        let node = g.node_of(j / nvl);
        Atom { x: g.x_of(node.x), v: g.v_of(iv), t: g.t_of(node.t), weight: self.weights[j] }
    }

    /// Atoms with weight above `threshold`.
    pub fn atoms(&self, threshold: f64) -> Vec<Atom> {
        (0..self.weights.len())
            .filter(|&j| self.weights[j] > threshold)
            .map(|j| self.atom_at(j))
            .collect()
    }

    pub fn integrate(&self, f: impl Fn(Point, Point, f64) -> f64) -> f64 {
        self.atoms(0.0).iter().map(|a| a.weight * f(a.x, a.v, a.t)).sum()
    }

    /// Space-time projection of the atoms heavier than `threshold`.
    pub fn space_time_support(&self, threshold: f64) -> NodeSet {
        let g = &self.grid;
        let nvl = g.velocity_len();
        let mut set = NodeSet::empty(g);
        for (j, w) in self.weights.iter().enumerate() {
            if *w > threshold {
                set.insert(g.node_of(j / nvl));
            }
        }
        set
    }

    /// `sup_A |mu(A) - nu(A)|`.
    pub fn total_variation(&self, other: &DiscreteMeasure) -> f64 {
        0.5 * self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Comma-separated `x0,[x1,]v0,[v1,]t,weight` rows for atoms with positive weight.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut out = String::new();
        let axes = |p: &str| (0..d).map(|a| format!("{p}{a}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "{},{},t,weight", axes("x"), axes("v"));
        for a in self.atoms(0.0) {
            for i in 0..d {
                let _ = write!(out, "{:.16e},", a.x[i]);
            }
            for i in 0..d {
                let _ = write!(out, "{:.16e},", a.v[i]);
            }
            let _ = writeln!(out, "{:.16e},{:.16e}", a.t, a.weight);
        }
        out
    }
}

/// Splits mass `w` at the continuous point `(x, v, t)` onto the surrounding
/// nodes, multilinear in every coordinate. Space and time are periodic;
/// velocities are clamped to the box.
pub fn deposit(grid: &SpaceTimeGrid, weights: &mut [f64], x: Point, v: Point, t: f64, w: f64) {
    let d = grid.dim();
    let nx = grid.nx();
    let nv = grid.nv();
    let mut axes: Vec<[(usize, f64); 2]> = Vec::with_capacity(2 * d + 1);
    for a in 0..d {
        let s = wrap_unit(x[a]) * nx as f64;
        let lo = s.floor();
        let f = s - lo;
        let i = (lo as usize) % nx;
        axes.push([(i, 1.0 - f), ((i + 1) % nx, f)]);
    }
    for a in 0..d {
        let s = ((v[a] + grid.v_max()) / grid.dv()).clamp(0.0, (nv - 1) as f64);
        let lo = s.floor().min((nv - 2) as f64);
        let f = s - lo;
        let i = lo as usize;
        axes.push([(i, 1.0 - f), (i + 1, f)]);
    }
    let s = wrap_unit(t) * grid.nt() as f64;
    let lo = s.floor();
    let f = s - lo;
    let k = (lo as usize) % grid.nt();
    axes.push([(k, 1.0 - f), ((k + 1) % grid.nt(), f)]);
    for corner in 0..(1usize << axes.len()) {
        let mut share = w;
        let mut xi = [0usize; 2];
        let mut vi = [0usize; 2];
        let mut ti = 0;
        for (b, ax) in axes.iter().enumerate() {
            let (idx, wt) = ax[(corner >> b) & 1];
            share *= wt;
            if b < d {
                xi[b] = idx;
            } else if b < 2 * d {
                vi[b - d] = idx;
            } else {
                ti = idx;
            }
        }
        if share == 0.0 {
            continue;
        }
        let xs = xi[0] + if d == 2 { xi[1] * nx } else { 0 };
        let vs = vi[0] + if d == 2 { vi[1] * nv } else { 0 };
        weights[DiscreteMeasure::index(grid, xs, vs, ti)] += share;
    }
}

/// Trigonometric test functions `cos` and `sin` of `2 pi (k.x + m t)` for
/// `|k|_inf <= K`, `|m| <= M_t`, `(k, m) != 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionBasis {
    pub dim: usize,
    pub k_max: i32,
    pub m_max: i32,
    modes: Vec<([i32; 2], i32)>,
}

impl TestFunctionBasis {
    pub fn new(dim: usize, k_max: i32, m_max: i32) -> Result<Self> {
        if !(1..=2).contains(&dim) || k_max < 0 || m_max < 0 || k_max + m_max == 0 {
            return Err(invalid("basis needs dim in {1, 2} and K + M_t >= 1"));
        }
        let mut modes = Vec::new();
        let k1 = if dim == 2 { k_max } else { 0 };
        for m in -m_max..=m_max {
            for b in -k1..=k1 {
                for a in -k_max..=k_max {
                    if a == 0 && b == 0 && m == 0 {
                        continue;
                    }
                    modes.push(([a, b], m));
                }
            }
        }
        Ok(Self { dim, k_max, m_max, modes })
    }

    pub fn modes(&self) -> &[([i32; 2], i32)] {
        &self.modes
    }

    pub fn row_count(&self) -> usize {
        1 + 2 * self.modes.len()
    }

    /// The basis element as a trigonometric polynomial.
    pub fn function(&self, mode: usize, kind: TrigKind) -> TrigPolynomial {
        let (k, m) = self.modes[mode];
        let term = match kind {
            TrigKind::Cos => crate::system::TrigTerm::cos(1.0, k, m),
            TrigKind::Sin => crate::system::TrigTerm::sin(1.0, k, m),
        };
        TrigPolynomial { constant: 0.0, terms: vec![term] }
    }

    /// `(df_cos . (v, 1), df_sin . (v, 1))` for one mode, from the analytic gradient.
    pub fn pairing(&self, mode: usize, x: Point, v: Point, t: f64) -> (f64, f64) {
        let (k, m) = self.modes[mode];
        let mut phase = m as f64 * t;
        let mut s = m as f64;
        for a in 0..self.dim {
            phase += k[a] as f64 * x[a];
            s += k[a] as f64 * v[a];
        }
        let (sn, cs) = (2.0 * PI * phase).sin_cos();
        (-2.0 * PI * sn * s, 2.0 * PI * cs * s)
    }
}

/// `int df . (v, 1) dmu`.
pub fn closedness_defect(mu: &DiscreteMeasure, f: &TrigPolynomial) -> f64 {
    let d = mu.grid().dim();
    mu.integrate(|x, v, t| {
        let (gx, gt) = f.gradient(x, t, d);
        let mut s = gt;
        for a in 0..d {
            s += gx[a] * v[a];
        }
        s
    })
}

/// Largest closedness defect over every basis element.
pub fn max_closedness_defect(mu: &DiscreteMeasure, basis: &TestFunctionBasis) -> f64 {
    let mut acc = vec![(0.0, 0.0); basis.modes().len()];
    for a in mu.atoms(0.0) {
        for (q, slot) in acc.iter_mut().enumerate() {
            let (c, s) = basis.pairing(q, a.x, a.v, a.t);
            slot.0 += a.weight * c;
            slot.1 += a.weight * s;
        }
    }
    acc.iter().map(|(c, s)| c.abs().max(s.abs())).fold(0.0, f64::max)
}

/// Equality-form program over measure weights.
///
/// Every column is affine in the velocity of its variable: at a space-time
/// node the column of velocity `v` is `B_0 + sum_a v_a B_{1+a}`, so the matrix
/// is stored as `1 + dim` blocks of `rows` entries per node.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub grid: SpaceTimeGrid,
    pub basis: TestFunctionBasis,
    pub objective: Vec<f64>,
    pub rhs: Vec<f64>,
    pub rows: usize,
    /// Cohomology class of the form the objective was tilted by.
    pub cohomology: (Point, f64),
    node_blocks: Vec<f64>,
}

impl LinearProgram {
    pub fn variable_count(&self) -> usize {
        self.objective.len()
    }

    fn block(&self, node: usize, b: usize) -> &[f64] {
        let w = (1 + self.grid.dim()) * self.rows;
        let base = node * w + b * self.rows;
        &self.node_blocks[base..base + self.rows]
    }

    pub fn column(&self, j: usize, out: &mut [f64]) {
        let nvl = self.grid.velocity_len();
        let v = self.grid.v_of(j % nvl);
        out.copy_from_slice(self.block(j / nvl, 0));
        for a in 0..self.grid.dim() {
            for (o, q) in out.iter_mut().zip(self.block(j / nvl, 1 + a)) {
                *o += v[a] * q;
            }
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let nvl = self.grid.velocity_len();
        let v = self.grid.v_of(j % nvl);
        let mut e = self.block(j / nvl, 0)[i];
        for a in 0..self.grid.dim() {
            e += v[a] * self.block(j / nvl, 1 + a)[i];
        }
        e
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.variable_count()).map(|j| self.entry(i, j)).collect()
    }

    /// Text export in the CPLEX LP format: objective, equality rows, bounds.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::from("\\ closed-measure program\nMinimize\n obj:");
        for (j, c) in self.objective.iter().enumerate() {
            let _ = write!(out, " {} {:.16e} x{j}", if *c < 0.0 { '-' } else { '+' }, c.abs());
            if j % 4 == 3 {
                out.push_str("\n   ");
            }
        }
        out.push_str("\nSubject To\n");
        for i in 0..self.rows {
            let _ = write!(out, " r{i}:");
            let mut terms = 0;
            for (j, a) in self.row(i).into_iter().enumerate() {
                if a != 0.0 {
                    let _ = write!(out, " {} {:.16e} x{j}", if a < 0.0 { '-' } else { '+' }, a.abs());
                    terms += 1;
                    if terms % 4 == 0 {
                        out.push_str("\n   ");
                    }
                }
            }
            if terms == 0 {
                out.push_str(" 0 x0");
            }
            let _ = writeln!(out, " = {:.16e}", self.rhs[i]);
        }
        out.push_str("Bounds\n");
        for j in 0..self.variable_count() {
            let _ = writeln!(out, " x{j} >= 0");
        }
        out.push_str("End\n");
        out
    }
}

/// Row subset of a program, seen by the simplex.
struct KeptRows<'a> {
    lp: &'a LinearProgram,
    rows: usize,
    /// `1 + dim` blocks of `rows` entries per node, restricted to kept rows.
    blocks: Vec<f64>,
}

impl<'a> KeptRows<'a> {
    fn new(lp: &'a LinearProgram, kept: &[usize]) -> Self {
        let nb = 1 + lp.grid.dim();
        let mut blocks = Vec::with_capacity(lp.grid.node_count() * nb * kept.len());
        for node in 0..lp.grid.node_count() {
            for b in 0..nb {
                let full = lp.block(node, b);
                blocks.extend(kept.iter().map(|&i| full[i]));
            }
        }
        Self { lp, rows: kept.len(), blocks }
    }
}

impl ColumnSource for KeptRows<'_> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.lp.variable_count()
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        let g = &self.lp.grid;
        let nvl = g.velocity_len();
        let nb = 1 + g.dim();
        let v = g.v_of(j % nvl);
        let base = (j / nvl) * nb * self.rows;
        out.copy_from_slice(&self.blocks[base..base + self.rows]);
        for a in 0..g.dim() {
            let q = &self.blocks[base + (1 + a) * self.rows..base + (2 + a) * self.rows];
            for (o, q) in out.iter_mut().zip(q) {
                *o += v[a] * q;
            }
        }
    }

    fn row_times_columns(&self, rho: &[f64], out: &mut [f64]) {
        let g = &self.lp.grid;
        let nvl = g.velocity_len();
        let nb = 1 + g.dim();
        let vels: Vec<Point> = (0..nvl).map(|iv| g.v_of(iv)).collect();
        for (node, chunk) in self.blocks.chunks_exact(nb * self.rows).enumerate() {
            let p = dot(rho, &chunk[..self.rows]);
            let mut q = [0.0; 2];
            for a in 0..g.dim() {
                q[a] = dot(rho, &chunk[(1 + a) * self.rows..(2 + a) * self.rows]);
            }
            for (iv, v) in vels.iter().enumerate() {
                out[node * nvl + iv] = p + v[0] * q[0] + v[1] * q[1];
            }
        }
    }
}

/// Parsed form of the LP subset written by [`LinearProgram::to_lp_format`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpText {
    pub objective: Vec<f64>,
    /// Sparse rows as `(column, coefficient)` lists.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: Vec<f64>,
}

/// Reads the documented LP subset: one `Minimize` objective, `=` rows and
/// nonnegativity bounds.
pub fn parse_lp_format(text: &str) -> Result<LpText> {
    let body: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('\\'))
        .collect::<Vec<_>>()
        .join(" ");
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let mut section = "";
    let mut objective: Vec<(usize, f64)> = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs = Vec::new();
    let mut current: Vec<(usize, f64)> = Vec::new();
    let mut sign = 1.0;
    let mut coeff: Option<f64> = None;
    let mut i = 0;
    let var = |s: &str| -> Result<usize> {
        s.strip_prefix('x')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| invalid(format!("bad LP variable `{s}`")))
    };
    while i < tokens.len() {
        let tok = tokens[i];
        match tok {
            "Minimize" | "Subject" | "Bounds" | "End" => {
                section = tok;
                if tok == "Subject" {
                    i += 1; // "To"
                }
            }
            _ if tok.ends_with(':') => {}
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            "=" => {
                let v: f64 = tokens
                    .get(i + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| invalid("LP row without right-hand side"))?;
                rows.push(std::mem::take(&mut current));
                rhs.push(v);
                i += 1;
            }
            ">=" => i += 1,
            _ => match section {
                "Minimize" | "Subject" => {
                    if let Ok(v) = tok.parse::<f64>() {
                        coeff = Some(sign * v);
                    } else {
                        let j = var(tok)?;
                        let c = coeff.take().unwrap_or(sign);
                        if c != 0.0 || section == "Minimize" {
                            if section == "Minimize" {
                                objective.push((j, c));
                            } else {
                                current.push((j, c));
                            }
                        }
                        sign = 1.0;
                    }
                }
                "Bounds" => {
                    var(tok)?;
                }
                _ => return Err(invalid(format!("unexpected LP token `{tok}`"))),
            },
        }
        i += 1;
    }
    let n = objective.iter().map(|(j, _)| j + 1).max().unwrap_or(0);
    let mut obj = vec![0.0; n];
    for (j, c) in objective {
        obj[j] = c;
    }
    Ok(LpText { objective: obj, rows, rhs })
}

/// Objective `L - omega(v, 1)` and closedness rows against every basis element.
pub fn build_lp(
    system: &LagrangianSystem,
    omega: &OneForm,
    basis: &TestFunctionBasis,
    grid: &SpaceTimeGrid,
) -> Result<LinearProgram> {
    if system.dim() != grid.dim() || omega.dim() != grid.dim() || basis.dim != grid.dim() {
        return Err(invalid("system, form, basis and grid dimensions differ"));
    }
    let rows = basis.row_count();
    let n = DiscreteMeasure::variable_count(grid);
    let nvl = grid.velocity_len();
    let d = grid.dim();
    let nb = 1 + d;
    let mut objective = vec![0.0; n];
    objective.par_chunks_mut(nvl).enumerate().for_each(|(node, obj)| {
        let nd = grid.node_of(node);
        let x = grid.x_of(nd.x);
        let t = grid.t_of(nd.t);
        for (iv, o) in obj.iter_mut().enumerate() {
            let v = grid.v_of(iv);
            *o = system.lagrangian(x, v, t) - omega.pair(x, v, t);
        }
    });
    let mut node_blocks = vec![0.0; grid.node_count() * nb * rows];
    node_blocks.par_chunks_mut(nb * rows).enumerate().for_each(|(node, blk)| {
        let nd = grid.node_of(node);
        let x = grid.x_of(nd.x);
        let t = grid.t_of(nd.t);
        blk[0] = 1.0;
        for (q, &(k, m)) in basis.modes().iter().enumerate() {
            let mut phase = m as f64 * t;
            for a in 0..d {
                phase += k[a] as f64 * x[a];
            }
            let (sn, cs) = (2.0 * PI * phase).sin_cos();
            // d cos = -2 pi sin (k.v + m), d sin = 2 pi cos (k.v + m)
            let (rc, rs) = (1 + 2 * q, 2 + 2 * q);
            blk[rc] = -2.0 * PI * sn * m as f64;
            blk[rs] = 2.0 * PI * cs * m as f64;
            for a in 0..d {
                blk[(1 + a) * rows + rc] = -2.0 * PI * sn * k[a] as f64;
                blk[(1 + a) * rows + rs] = 2.0 * PI * cs * k[a] as f64;
            }
        }
    });
    let mut rhs = vec![0.0; rows];
    rhs[0] = 1.0;
    Ok(LinearProgram {
        grid: grid.clone(),
        basis: basis.clone(),
        objective,
        rhs,
        rows,
        cohomology: omega.cohomology(),
        node_blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
}

#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub value: f64,
    pub mu: DiscreteMeasure,
    pub status: LpStatus,
    pub solution: LpSolution,
    /// Rows removed as zero or as duplicates (up to sign) of earlier rows.
    pub dropped_rows: usize,
}

/// Drops rows that vanish or repeat an earlier row up to sign, so that the
/// basis is not padded with artificials. Returns kept row indices.
///
/// Rows are compared through their node blocks, which determine them because
/// every velocity axis carries at least three distinct values.
fn presolve(lp: &LinearProgram) -> Result<Vec<usize>> {
    let m = lp.rows;
    let nb = 1 + lp.grid.dim();
    let width = lp.grid.node_count() * nb;
    let entry = |i: usize, e: usize| lp.block(e / nb, e % nb)[i];
    let mut fp = vec![0.0f64; m];
    let mut norm = vec![0.0f64; m];
    for e in 0..width {
        let w = ((e as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5;
        let blk = lp.block(e / nb, e % nb);
        for i in 0..m {
            fp[i] += w * blk[i];
            norm[i] = norm[i].max(blk[i].abs());
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut by_fp: HashMap<u64, Vec<usize>> = HashMap::new();
    let key = |v: f64| (v.abs() * 1e6).round() as u64;
    'rows: for i in 0..m {
        if norm[i] <= 1e-12 {
            if lp.rhs[i].abs() > 1e-12 {
                return Err(Error::Infeasible { residual: lp.rhs[i].abs() });
            }
            continue;
        }
        for &cand in by_fp.get(&key(fp[i])).into_iter().flatten() {
            for s in [1.0, -1.0] {
                let tol = 1e-12 * norm[i].max(1.0);
                if (0..width).all(|e| (entry(i, e) - s * entry(cand, e)).abs() <= tol) {
                    let r = (lp.rhs[i] - s * lp.rhs[cand]).abs();
                    if r > 1e-12 {
                        return Err(Error::Infeasible { residual: r });
                    }
                    continue 'rows;
                }
            }
        }
        by_fp.entry(key(fp[i])).or_default().push(i);
        kept.push(i);
    }
    Ok(kept)
}

/// Optimal basic solution of the program and its dual certificate.
pub fn solve_lp(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpOutcome> {
    let kept = presolve(lp)?;
    let m = lp.rows;
    let view = KeptRows::new(lp, &kept);
    let b: Vec<f64> = kept.iter().map(|&i| lp.rhs[i]).collect();
    let mut sol = simplex::solve(&view, &b, &lp.objective, opts)?;
    let mut duals = vec![0.0; m];
    for (k, &i) in kept.iter().enumerate() {
        duals[i] = sol.duals[k];
    }
    sol.duals = duals;
    let mu = DiscreteMeasure::normalized(&lp.grid, sol.x.clone())?;
    Ok(LpOutcome {
        value: sol.value,
        mu,
        status: LpStatus::Optimal,
        solution: sol,
        dropped_rows: m - kept.len(),
    })
}

/// LP estimate of `alpha(c)` for a form of class `(c, tau)`: `-value - tau`.
pub fn alpha_from_lp(outcome: &LpOutcome, lp: &LinearProgram) -> f64 {
    -outcome.value - lp.cohomology.1
}

/// Builds and solves in one go, returning `(alpha, outcome)`.
pub fn lp_alpha(
    system: &LagrangianSystem,
    omega: &OneForm,
    basis: &TestFunctionBasis,
    grid: &SpaceTimeGrid,
    opts: &SimplexOptions,
) -> Result<(f64, LpOutcome)> {
    let lp = build_lp(system, omega, basis, grid)?;
    let out = solve_lp(&lp, opts)?;
    Ok((alpha_from_lp(&out, &lp), out))
}

/// Pushes every atom through the Euler-Lagrange flow for time `dt` (steps of
/// at most a eighth of the grid time step), re-bins multilinearly, and returns
/// the total-variation distance to `mu`.
pub fn invariance_defect(system: &LagrangianSystem, mu: &DiscreteMeasure, dt: f64) -> Result<f64> {
    let g = mu.grid();
    let mut pushed = vec![0.0; mu.weights().len()];
    for a in mu.atoms(0.0) {
        let s = system.flow(State { x: a.x, v: a.v, t: a.t }, dt, g.dt() / 8.0, g.v_max())?;
        deposit(g, &mut pushed, s.x, s.v, s.t, a.weight);
    }
    let pushed = DiscreteMeasure { grid: g.clone(), weights: pushed };
    Ok(pushed.total_variation(mu))
}

/// Time average along an Euler-Lagrange orbit of `periods` periods, sampled
/// at steps of a eighth of the grid time step with trapezoid weights and
/// re-binned onto the grid.
pub fn occupation_measure(
    system: &LagrangianSystem,
    grid: &SpaceTimeGrid,
    start: State,
    periods: usize,
) -> Result<DiscreteMeasure> {
    let mut w = vec![0.0; DiscreteMeasure::variable_count(grid)];
    let duration = periods as f64;
    let steps = (duration / (grid.dt() / 8.0)).ceil() as usize;
    let mut i = 0usize;
    system.flow_with(start, duration, grid.dt() / 8.0, grid.v_max(), |s, h| {
        let share = if i == 0 || i == steps { 0.5 * h } else { h };
        deposit(grid, &mut w, s.x, s.v, s.t, share / duration);
        i += 1;
    })?;
    DiscreteMeasure::normalized(grid, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::TrigTerm;
    use proptest::prelude::*;

    fn lp_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 16, 4, 17, 2.0).unwrap()
    }

    fn iv_of(g: &SpaceTimeGrid, v: f64) -> usize {
        ((v + g.v_max()) / g.dv()).round() as usize
    }

    #[test]
    fn closedness_of_simple_measures() {
        let g = SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap();
        let f = TrigPolynomial { constant: 0.0, terms: vec![TrigTerm::sin(1.0, [1, 0], 0)] };
        let mu = DiscreteMeasure::dirac(&g, 5, iv_of(&g, 0.0), 3);
        assert_eq!(closedness_defect(&mu, &f), 0.0);
        let x0 = g.x_of(5)[0];
        let mu = DiscreteMeasure::dirac(&g, 5, iv_of(&g, 1.0), 3);
        let expect = 2.0 * PI * (2.0 * PI * x0).cos();
        assert!((closedness_defect(&mu, &f) - expect).abs() < 1e-12);
    }

    #[test]
    fn rotation_orbit_is_closed() {
        // velocity 0.25 moves one cell per step on this grid
        let g = SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap();
        let c = 0.25;
        let mut w = vec![0.0; DiscreteMeasure::variable_count(&g)];
        for t in 0..g.nt() {
            for x0 in 0..4 {
                let x = (x0 * 16 + t) % 64;
                w[DiscreteMeasure::index(&g, x, iv_of(&g, c), t)] += 1.0;
            }
        }
        let mu = DiscreteMeasure::normalized(&g, w).unwrap();
        let basis = TestFunctionBasis::new(1, 3, 2).unwrap();
        for q in 0..basis.modes().len() {
            for kind in [TrigKind::Cos, TrigKind::Sin] {
                let f = basis.function(q, kind);
                assert!(closedness_defect(&mu, &f).abs() <= 1e-10 * g.nt() as f64);
            }
        }
    }

    #[test]
    fn row_count_and_objective() {
        let g = lp_grid();
        let basis = TestFunctionBasis::new(1, 1, 1).unwrap();
        let omega = OneForm::constant(1, [0.3, 0.0], 0.7);
        let sys = LagrangianSystem::free(1);
        let lp = build_lp(&sys, &omega, &basis, &g).unwrap();
        assert_eq!(lp.rows, 17);
        for j in [0, 40, 333] {
            let node = g.node_of(j / g.velocity_len());
            let v = g.v_of(j % g.velocity_len());
            let expect = sys.lagrangian(g.x_of(node.x), v, g.t_of(node.t)) - 0.3 * v[0] - 0.7;
            assert!((lp.objective[j] - expect).abs() < 1e-15);
        }
        assert!((0..lp.rows).all(|i| lp.row(i).iter().all(|v| v.is_finite())));
    }

    #[test]
    fn flat_values_and_tilt() {
        let g = lp_grid();
        let basis = TestFunctionBasis::new(1, 2, 2).unwrap();
        let sys = LagrangianSystem::free(1);
        let opts = SimplexOptions::default();
        let (a0, out) = lp_alpha(&sys, &OneForm::zero(1), &basis, &g, &opts).unwrap();
        assert!(a0.abs() < 1e-9);
        assert!(out.mu.atoms(1e-12).iter().all(|a| a.v[0] == 0.0));
        let (a, out) = lp_alpha(&sys, &OneForm::constant(1, [0.5, 0.0], 0.0), &basis, &g, &opts).unwrap();
        assert!((a - 0.125).abs() < 1e-9, "{a}");
        assert!(out.solution.duality_gap < 1e-9);
        let (a, _) = lp_alpha(&sys, &OneForm::constant(1, [0.0, 0.0], 0.4), &basis, &g, &opts).unwrap();
        assert!(a.abs() < 1e-9);
    }

    #[test]
    fn exact_forms_do_not_move_the_value() {
        let g = lp_grid();
        let basis = TestFunctionBasis::new(1, 2, 2).unwrap();
        let sys = LagrangianSystem::pendulum();
        let opts = SimplexOptions::default();
        let f = TrigPolynomial {
            constant: 0.0,
            terms: vec![TrigTerm::cos(0.3, [1, 0], 1), TrigTerm::sin(-0.2, [2, 0], 0)],
        };
        let w = OneForm::constant(1, [0.4, 0.0], 0.0);
        let (a, _) = lp_alpha(&sys, &w, &basis, &g, &opts).unwrap();
        let (b, _) = lp_alpha(&sys, &w.clone().plus(OneForm::exact(1, f)), &basis, &g, &opts).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn more_modes_never_lower_the_value() {
        let g = lp_grid();
        let sys = LagrangianSystem::pendulum();
        let w = OneForm::constant(1, [0.9, 0.0], 0.0);
        let opts = SimplexOptions::default();
        let v1 = solve_lp(&build_lp(&sys, &w, &TestFunctionBasis::new(1, 1, 2).unwrap(), &g).unwrap(), &opts).unwrap();
        let v2 = solve_lp(&build_lp(&sys, &w, &TestFunctionBasis::new(1, 2, 2).unwrap(), &g).unwrap(), &opts).unwrap();
        assert!(v2.value >= v1.value - 1e-12);
    }

    #[test]
    fn lp_text_round_trip() {
        let g = SpaceTimeGrid::new(1, 4, 2, 3, 2.0).unwrap();
        let basis = TestFunctionBasis::new(1, 1, 1).unwrap();
        let lp = build_lp(&LagrangianSystem::pendulum(), &OneForm::zero(1), &basis, &g).unwrap();
        let parsed = parse_lp_format(&lp.to_lp_format()).unwrap();
        assert_eq!(parsed.objective, lp.objective);
        assert_eq!(parsed.rhs, lp.rhs);
        for (i, row) in parsed.rows.iter().enumerate() {
            let dense = lp.row(i);
            for &(j, a) in row {
                assert_eq!(a, dense[j]);
            }
            assert_eq!(row.len(), dense.iter().filter(|v| **v != 0.0).count());
        }
    }

    #[test]
    fn fixed_point_lift_is_invariant_and_moving_atoms_are_not() {
        let g = SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap();
        let sys = LagrangianSystem::pendulum();
        let mu = DiscreteMeasure::time_uniform_dirac(&g, 0, iv_of(&g, 0.0));
        assert!(invariance_defect(&sys, &mu, g.dt()).unwrap() < 1e-12);
        let mu = DiscreteMeasure::dirac(&g, 10, iv_of(&g, 1.0), 2);
        assert!(invariance_defect(&sys, &mu, g.dt()).unwrap() > 0.99);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn deposit_preserves_mass_and_linear_moments(x in -2.0f64..2.0, v in -3.9f64..3.9, t in 0.0f64..3.0) {
            let g = SpaceTimeGrid::new(1, 16, 8, 17, 4.0).unwrap();
            let mut w = vec![0.0; DiscreteMeasure::variable_count(&g)];
            deposit(&g, &mut w, [x, 0.0], [v, 0.0], t, 1.0);
            let mu = DiscreteMeasure::new(&g, w).unwrap();
            prop_assert!((mu.integrate(|_, v, _| v[0]) - v).abs() < 1e-12);
            let f = |x: Point, _: Point, _: f64| (2.0 * PI * x[0]).cos();
            let exact = (2.0 * PI * x).cos();
            prop_assert!((mu.integrate(f) - exact).abs() < (2.0 * PI / 16.0).powi(2));
        }

        #[test]
        fn lp_is_below_feasible_closed_measures(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let g = lp_grid();
            let sys = LagrangianSystem::pendulum();
            let basis = TestFunctionBasis::new(1, 2, 2).unwrap();
            let lp = build_lp(&sys, &OneForm::zero(1), &basis, &g).unwrap();
            let out = solve_lp(&lp, &SimplexOptions::default()).unwrap();
            // v = 0 atoms with uniform time marginal are closed
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut w = vec![0.0; DiscreteMeasure::variable_count(&g)];
            let iv = iv_of(&g, 0.0);
            for x in 0..g.nx() {
                let mass: f64 = rng.gen_range(0.0..1.0);
                for t in 0..g.nt() {
                    w[DiscreteMeasure::index(&g, x, iv, t)] = mass;
                }
            }
            let mu = DiscreteMeasure::normalized(&g, w).unwrap();
            prop_assert!(max_closedness_defect(&mu, &basis) < 1e-12);
            let action = mu.integrate(|x, v, t| sys.lagrangian(x, v, t));
            prop_assert!(out.value <= action + 1e-12);
        }
    }
}
