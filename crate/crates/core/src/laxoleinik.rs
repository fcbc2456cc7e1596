//! Discrete Lax-Oleinik semigroup on a periodic space-time grid.
//!
//! One backward step maps a slice at time `t` to the slice at `t + dt`:
//!
//! ```text
//! u'(y) = min_x  u(x) + dt * L((x + y)/2, (y - x)/dt, t)
//! ```
//!
//! where `x` ranges over grid nodes whose lifted displacement `y - x` stays in
//! the velocity box. The forward step is the adjoint `max` of differences and
//! runs backward in time. Composing `nt` steps gives the full-period operators
//! from which the critical value, weak KAM solutions, minimal actions `h_n`
//! and the Peierls barrier are computed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Node, NodeSet, Point, SpaceTimeGrid, ValueField};
use crate::system::LagrangianSystem;

/// Kernel tables larger than this many entries are evaluated on the fly.
const KERNEL_CAP: usize = 1 << 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

/// Windows, iteration caps and tolerances of the dynamic programme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSettings {
    /// First horizon (in periods) of the liminf window.
    pub n_lo: usize,
    /// Last horizon (in periods) of the liminf window.
    pub n_hi: usize,
    /// Cap on full periods of value iteration.
    pub max_iters: usize,
    /// Width of the bracket on the critical value at which iteration stops.
    pub tol_alpha: f64,
    /// Allowed decrease of the running minimum over the last quarter window.
    pub tol_h: f64,
    /// Slack in the one-step domination inequality.
    pub tol_dom: f64,
    /// Aubry threshold; `None` derives it from the flat-system consistency error.
    pub eps_a: Option<f64>,
    /// Lower bound for the derived Aubry threshold.
    pub eps_a_floor: f64,
    /// Restrict diagonal barrier evaluation to nodes that the weak KAM pair
    /// does not already exclude.
    pub prune_aubry: bool,
}

impl Default for DpSettings {
    fn default() -> Self {
        Self {
            n_lo: 8,
            n_hi: 64,
            max_iters: 20_000,
            tol_alpha: 1e-9,
            tol_h: 1e-6,
            tol_dom: 1e-6,
            eps_a: None,
            eps_a_floor: 1e-6,
            prune_aubry: true,
        }
    }
}

impl DpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_lo == 0 || self.n_hi < 2 * self.n_lo {
            return Err(invalid(format!(
                "window must satisfy 1 <= n_lo and n_hi >= 2 n_lo, got [{}, {}]",
                self.n_lo, self.n_hi
            )));
        }
        for (name, v) in [
            ("tol_alpha", self.tol_alpha),
            ("tol_h", self.tol_h),
            ("tol_dom", self.tol_dom),
            ("eps_a_floor", self.eps_a_floor),
        ] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Statistics of one tracked step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub finite: usize,
    pub saturated: usize,
}

/// Result of value iteration.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalValue {
    /// Midpoint estimate of the critical value.
    pub alpha: f64,
    /// Rigorous bracket `[lower, upper]` on the discrete critical value.
    pub lower: f64,
    pub upper: f64,
    pub periods: usize,
    /// Fraction of nodes whose last-step minimizer touches the velocity box.
    pub saturated_fraction: f64,
    #[serde(skip)]
    last_iterate: Vec<f64>,
}

/// `h_n` and its window minimum for one (source, target) pair.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierValue {
    pub h: f64,
    /// Horizon achieving the window minimum (smallest on ties).
    pub n_star: usize,
    /// `max - min` of `h_n` over the last quarter of the window.
    pub oscillation: f64,
    /// Decrease of the running minimum over the last quarter of the window.
    pub late_decrease: f64,
}

/// All `h_n((src), (y, s))`, `1 <= n <= n_hi`, from one source node.
#[derive(Debug, Clone)]
pub struct SourceActions {
    pub source: Node,
    n_hi: usize,
    node_count: usize,
    /// `values[(n - 1) * node_count + node_index]`
    values: Vec<f64>,
}

impl SourceActions {
    pub fn h_n(&self, target_index: usize, n: usize) -> f64 {
        self.values[(n - 1) * self.node_count + target_index]
    }

    pub fn n_hi(&self) -> usize {
        self.n_hi
    }

    /// Window minimum over `[n_lo, n_hi]` with diagnostics.
    pub fn barrier(&self, target_index: usize, n_lo: usize) -> BarrierValue {
        window_barrier(|n| self.h_n(target_index, n), n_lo, self.n_hi)
    }
}

fn window_barrier(h_n: impl Fn(usize) -> f64, n_lo: usize, n_hi: usize) -> BarrierValue {
    let quarter_start = n_hi - n_hi / 4;
    let mut best = f64::INFINITY;
    let mut n_star = n_lo;
    let mut early = f64::INFINITY;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for n in n_lo..=n_hi {
        let v = h_n(n);
        if v < best {
            best = v;
            n_star = n;
        }
        if n < quarter_start.max(n_lo + 1) {
            early = early.min(v);
        }
        if n >= quarter_start {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let late_decrease = if early.is_finite() && best.is_finite() { early - best } else { 0.0 };
    BarrierValue {
        h: best,
        n_star,
        oscillation: if hi.is_finite() { hi - lo } else { 0.0 },
        late_decrease,
    }
}

/// A table of Peierls barriers between sources and targets.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierTable {
    pub n_window: (usize, usize),
    pub entries: Vec<BarrierEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierEntry {
    pub source: Node,
    pub target: Node,
    #[serde(flatten)]
    pub value: BarrierValue,
}

/// Weak KAM pair, critical value and Aubry estimate of one system.
#[derive(Debug, Clone)]
pub struct WeakKamAnalysis {
    pub critical: CriticalValue,
    pub u_minus: ValueField,
    pub u_plus: ValueField,
    pub aubry: NodeSet,
    pub eps_a: f64,
    /// Diagonal barriers of the nodes that were evaluated.
    pub diagonal: Vec<(Node, f64)>,
}

impl WeakKamAnalysis {
    pub fn alpha(&self) -> f64 {
        self.critical.alpha
    }

    /// `u_- - u_+`.
    pub fn gap(&self) -> ValueField {
        self.u_minus.zip_with(&self.u_plus, |a, b| a - b)
    }
}

/// The discrete Lax-Oleinik engine for one system on one grid.
#[derive(Debug, Clone)]
pub struct LaxOleinik {
    system: LagrangianSystem,
    grid: SpaceTimeGrid,
    /// Lifted cell displacements `y - x`.
    offsets: Vec<[i64; 2]>,
    saturated: Vec<bool>,
    /// `src[y * nc + o]`: source node of target `y` along offset `o`.
    src: Vec<u32>,
    /// `dst[x * nc + o]`: target node of source `x` along offset `o`.
    dst: Vec<u32>,
    /// `kernel[(k * space + y) * nc + o]`: backward step cost into `y`.
    kernel: Option<Vec<f64>>,
}

impl LaxOleinik {
    pub fn new(system: &LagrangianSystem, grid: &SpaceTimeGrid) -> Result<Self> {
        if system.dim() != grid.dim() {
            return Err(invalid(format!(
                "system dimension {} differs from grid dimension {}",
                system.dim(),
                grid.dim()
            )));
        }
        let jmax = (grid.v_max() * grid.dt() / grid.hx() + 1e-9).floor() as i64;
        let mut offsets = Vec::new();
        let mut saturated = Vec::new();
        let r1 = if grid.dim() == 2 { jmax } else { 0 };
        for j1 in -r1..=r1 {
            for j0 in -jmax..=jmax {
                offsets.push([j0, j1]);
                saturated.push(j0.abs() == jmax || (grid.dim() == 2 && j1.abs() == jmax));
            }
        }
        let s = grid.space_len();
        let nc = offsets.len();
        let mut src = Vec::with_capacity(s * nc);
        let mut dst = Vec::with_capacity(s * nc);
        for y in 0..s {
            let c = grid.space_coords(y);
            for o in &offsets {
                src.push(grid.space_index([c[0] as i64 - o[0], c[1] as i64 - o[1]]) as u32);
            }
            for o in &offsets {
                dst.push(grid.space_index([c[0] as i64 + o[0], c[1] as i64 + o[1]]) as u32);
            }
        }
        let mut engine = Self {
            system: system.clone(),
            grid: grid.clone(),
            offsets,
            saturated,
            src,
            dst,
            kernel: None,
        };
        let total = grid.nt() * s * nc;
        if total <= KERNEL_CAP {
            let mut kern = Vec::with_capacity(total);
            for k in 0..grid.nt() {
                for y in 0..s {
                    for o in 0..nc {
                        kern.push(engine.cost(k, y, o));
                    }
                }
            }
            engine.kernel = Some(kern);
        }
        Ok(engine)
    }

    pub fn system(&self) -> &LagrangianSystem {
        &self.system
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn offsets(&self) -> &[[i64; 2]] {
        &self.offsets
    }

    /// `dt * L` along offset `o` into node `y`, evaluated at the midpoint of
    /// the segment and the middle of the step.
    pub fn cost(&self, k: usize, y: usize, o: usize) -> f64 {
        let g = &self.grid;
        let h = g.hx();
        let dt = g.dt();
        let xy = g.x_of(y);
        let j = self.offsets[o];
        let mut mid: Point = [0.0; 2];
        let mut v: Point = [0.0; 2];
        for a in 0..g.dim() {
            mid[a] = xy[a] - 0.5 * j[a] as f64 * h;
            v[a] = j[a] as f64 * h / dt;
        }
        dt * self.system.lagrangian(mid, v, g.t_of(k) + 0.5 * dt)
    }

    #[inline]
    fn kernel_row(&self, k: usize, y: usize) -> Option<&[f64]> {
        let nc = self.offsets.len();
        let s = self.grid.space_len();
        self.kernel
            .as_ref()
            .map(|kern| &kern[(k * s + y) * nc..(k * s + y + 1) * nc])
    }

    fn backward_into(&self, input: &[f64], k: usize, out: &mut [f64]) {
        let nc = self.offsets.len();
        for (y, slot) in out.iter_mut().enumerate() {
            let srcs = &self.src[y * nc..(y + 1) * nc];
            let mut best = f64::INFINITY;
            match self.kernel_row(k, y) {
                Some(costs) => {
                    for (s, c) in srcs.iter().zip(costs) {
                        let v = input[*s as usize] + c;
                        if v < best {
                            best = v;
                        }
                    }
                }
                None => {
                    for (o, s) in srcs.iter().enumerate() {
                        let u = input[*s as usize];
                        if u == f64::INFINITY {
                            continue;
                        }
                        let v = u + self.cost(k, y, o);
                        if v < best {
                            best = v;
                        }
                    }
                }
            }
            *slot = best;
        }
    }

    fn forward_into(&self, input: &[f64], k: usize, out: &mut [f64]) {
        let nc = self.offsets.len();
        for (x, slot) in out.iter_mut().enumerate() {
            let dsts = &self.dst[x * nc..(x + 1) * nc];
            let mut best = f64::NEG_INFINITY;
            for (o, d) in dsts.iter().enumerate() {
                let y = *d as usize;
                let c = match self.kernel_row(k, y) {
                    Some(row) => row[o],
                    None => self.cost(k, y, o),
                };
                let v = input[y] - c;
                if v > best {
                    best = v;
                }
            }
            *slot = best;
        }
    }

    /// Backward step with argmin tracking. Ties go to the smallest source index.
    fn backward_tracked(&self, input: &[f64], k: usize, out: &mut [f64], arg: &mut [u32]) -> StepStats {
        let nc = self.offsets.len();
        let mut stats = StepStats::default();
        for y in 0..out.len() {
            let srcs = &self.src[y * nc..(y + 1) * nc];
            let mut best = f64::INFINITY;
            let mut best_o = 0usize;
            for (o, s) in srcs.iter().enumerate() {
                let u = input[*s as usize];
                if u == f64::INFINITY {
                    continue;
                }
                let c = match self.kernel_row(k, y) {
                    Some(row) => row[o],
                    None => self.cost(k, y, o),
                };
                let v = u + c;
                if v < best || (v == best && srcs[o] < srcs[best_o]) {
                    best = v;
                    best_o = o;
                }
            }
            out[y] = best;
            arg[y] = best_o as u32;
            if best.is_finite() {
                stats.finite += 1;
                if self.saturated[best_o] {
                    stats.saturated += 1;
                }
            }
        }
        stats
    }

    fn forward_tracked(&self, input: &[f64], k: usize, out: &mut [f64]) -> StepStats {
        let nc = self.offsets.len();
        let mut stats = StepStats::default();
        for x in 0..out.len() {
            let dsts = &self.dst[x * nc..(x + 1) * nc];
            let mut best = f64::NEG_INFINITY;
            let mut best_o = 0usize;
            for (o, d) in dsts.iter().enumerate() {
                let y = *d as usize;
                let c = match self.kernel_row(k, y) {
                    Some(row) => row[o],
                    None => self.cost(k, y, o),
                };
                let v = input[y] - c;
                if v > best || (v == best && dsts[o] < dsts[best_o]) {
                    best = v;
                    best_o = o;
                }
            }
            out[x] = best;
            if best.is_finite() {
                stats.finite += 1;
                if self.saturated[best_o] {
                    stats.saturated += 1;
                }
            }
        }
        stats
    }

    /// One Lax-Oleinik step of the slice at time index `k`. Backward steps
    /// return the slice at `k + 1`, forward steps take the slice at `k + 1`
    /// and return the slice at `k`.
    pub fn lax_oleinik_step(&self, u: &[f64], k: usize, direction: Direction) -> Result<Vec<f64>> {
        let s = self.grid.space_len();
        if u.len() != s {
            return Err(invalid(format!("slice has {} values, grid has {s}", u.len())));
        }
        let k = k % self.grid.nt();
        let mut out = vec![0.0; s];
        let stats = match direction {
            Direction::Backward => {
                let mut arg = vec![0u32; s];
                self.backward_tracked(u, k, &mut out, &mut arg)
            }
            Direction::Forward => self.forward_tracked(u, k, &mut out),
        };
        if stats.finite > 0 && stats.saturated == stats.finite {
            return Err(Error::BoxSaturation { slice: k });
        }
        Ok(out)
    }

    /// Full-period backward operator on the slice at time 0 (no drift shift).
    pub fn period_backward(&self, u0: &[f64]) -> Vec<f64> {
        let mut a = u0.to_vec();
        let mut b = vec![0.0; a.len()];
        for k in 0..self.grid.nt() {
            self.backward_into(&a, k, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    /// Full-period forward operator on the slice at time 1 (no drift shift).
    pub fn period_forward(&self, u1: &[f64]) -> Vec<f64> {
        let mut a = u1.to_vec();
        let mut b = vec![0.0; a.len()];
        for k in (0..self.grid.nt()).rev() {
            self.forward_into(&a, k, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    /// Critical value by value iteration of the full-period backward operator.
    ///
    /// For a monotone operator commuting with constants, the per-period gain
    /// `g = -alpha` satisfies `min (T^m v - v)/m <= g <= max (T^m v - v)/m` for
    /// every `v` and `m`. Iteration keeps the tightest bracket from one-period
    /// increments and from Cesaro windows over the latter half of the run, and
    /// stops once it is narrower than `tol_alpha`.
    pub fn critical_value_vi(&self, settings: &DpSettings) -> Result<CriticalValue> {
        let s = self.grid.space_len();
        let mut u = vec![0.0; s];
        let mut snap_iter = 0usize;
        let mut snap = u.clone();
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for it in 1..=settings.max_iters {
            let next = self.period_backward(&u);
            let (lo, hi) = min_max_diff(&next, &u);
            lower = lower.max(lo);
            upper = upper.min(hi);
            let m = it - snap_iter;
            if m >= 2 {
                let (lo, hi) = min_max_diff(&next, &snap);
                lower = lower.max(lo / m as f64);
                upper = upper.min(hi / m as f64);
            }
            if it.is_power_of_two() {
                snap_iter = it;
                snap.copy_from_slice(&next);
            }
            u = next;
            if upper - lower <= settings.tol_alpha {
                let alpha = -0.5 * (lower + upper);
                // normalise the iterate so it is comparable to a fixed point
                for v in &mut u {
                    *v += it as f64 * alpha;
                }
                let mut out = vec![0.0; s];
                let mut arg = vec![0u32; s];
                let stats = self.backward_tracked(&u, 0, &mut out, &mut arg);
                return Ok(CriticalValue {
                    alpha,
                    lower: -upper,
                    upper: -lower,
                    periods: it,
                    saturated_fraction: stats.saturated as f64 / stats.finite.max(1) as f64,
                    last_iterate: u,
                });
            }
        }
        Err(Error::NotConverged {
            what: "value iteration",
            detail: format!(
                "bracket on alpha [{}, {}] after {} periods",
                -upper, -lower, settings.max_iters
            ),
        })
    }

    /// Backward weak KAM solution (drift removed), all time slices.
    fn backward_solution(&self, crit: &CriticalValue, settings: &DpSettings) -> Result<ValueField> {
        let g = &self.grid;
        let alpha = crit.alpha;
        let tol = settings.tol_dom + (crit.upper - crit.lower);
        let mut w = crit.last_iterate.clone();
        let mut history: Vec<Vec<f64>> = Vec::new();
        let mut converged = false;
        for _ in 0..settings.max_iters {
            let mut next = self.period_backward(&w);
            for v in &mut next {
                *v += alpha;
            }
            let res = sup_diff(&next, &w);
            w = next;
            if res <= tol {
                converged = true;
                break;
            }
            history.push(w.clone());
            if history.len() > 64 {
                history.remove(0);
            }
        }
        if !converged {
            // cyclic regime: the pointwise minimum over one cycle is a fixed point
            let mut v = w.clone();
            for h in &history {
                for (a, b) in v.iter_mut().zip(h) {
                    *a = a.min(*b);
                }
            }
            let mut next = self.period_backward(&v);
            for x in &mut next {
                *x += alpha;
            }
            let res = sup_diff(&next, &v);
            if res > tol {
                return Err(Error::NotConverged {
                    what: "backward weak KAM solution",
                    detail: format!("fixed-point residual {res:e}"),
                });
            }
            w = v;
        }
        let mut field = ValueField::zeros(g);
        field.slice_mut(0).copy_from_slice(&w);
        let dta = g.dt() * alpha;
        for k in 0..g.nt() - 1 {
            let (a, b) = field.data_mut().split_at_mut((k + 1) * g.space_len());
            let prev = &a[k * g.space_len()..];
            let next = &mut b[..g.space_len()];
            self.backward_into(prev, k, next);
            for v in next.iter_mut() {
                *v += dta;
            }
        }
        Ok(field)
    }

    /// Forward weak KAM solution conjugate to `u_minus` (drift removed).
    fn forward_solution(
        &self,
        u_minus: &ValueField,
        crit: &CriticalValue,
        settings: &DpSettings,
    ) -> Result<ValueField> {
        let g = &self.grid;
        let alpha = crit.alpha;
        let tol = settings.tol_dom + (crit.upper - crit.lower);
        let mut w = u_minus.slice(0).to_vec();
        let mut res = f64::INFINITY;
        for _ in 0..settings.max_iters {
            let mut next = self.period_forward(&w);
            for v in &mut next {
                *v -= alpha;
            }
            res = sup_diff(&next, &w);
            w = next;
            if res <= tol {
                break;
            }
        }
        if res > tol {
            return Err(Error::NotConverged {
                what: "forward weak KAM solution",
                detail: format!("fixed-point residual {res:e}"),
            });
        }
        let mut field = ValueField::zeros(g);
        field.slice_mut(0).copy_from_slice(&w);
        let s = g.space_len();
        let dta = g.dt() * alpha;
        let mut next_slice = w.clone();
        let mut cur = vec![0.0; s];
        for k in (1..g.nt()).rev() {
            self.forward_into(&next_slice, k, &mut cur);
            for v in cur.iter_mut() {
                *v -= dta;
            }
            field.slice_mut(k).copy_from_slice(&cur);
            std::mem::swap(&mut next_slice, &mut cur);
        }
        Ok(field)
    }

    /// `h_n` from `src` to every node for `1 <= n <= n_hi`, shifted by `n alpha`.
    pub fn source_actions(&self, src: Node, alpha: f64, n_hi: usize) -> SourceActions {
        let g = &self.grid;
        let s = g.space_len();
        let nt = g.nt();
        let nc = g.node_count();
        let mut values = vec![f64::INFINITY; n_hi * nc];
        let mut a = vec![f64::INFINITY; s];
        a[src.x] = 0.0;
        let mut b = vec![0.0; s];
        let total = n_hi * nt + (nt - 1 - src.t);
        for step in 1..=total {
            let k = (src.t + step - 1) % nt;
            self.backward_into(&a, k, &mut b);
            std::mem::swap(&mut a, &mut b);
            let slice = (src.t + step) % nt;
            let n = (step as i64 - (slice as i64 - src.t as i64)) / nt as i64;
            if n >= 1 && n as usize <= n_hi {
                let n = n as usize;
                let base = (n - 1) * nc + slice * s;
                for (dst, v) in values[base..base + s].iter_mut().zip(&a) {
                    *dst = v + n as f64 * alpha;
                }
            }
        }
        SourceActions { source: src, n_hi, node_count: nc, values }
    }

    /// Only the diagonal `h_n((x,t),(x,t))`, `1 <= n <= n_hi`.
    fn diagonal_actions(&self, src: Node, alpha: f64, n_hi: usize) -> Vec<f64> {
        let g = &self.grid;
        let s = g.space_len();
        let nt = g.nt();
        let mut out = Vec::with_capacity(n_hi);
        let mut a = vec![f64::INFINITY; s];
        a[src.x] = 0.0;
        let mut b = vec![0.0; s];
        for n in 1..=n_hi {
            for i in 0..nt {
                let k = (src.t + i) % nt;
                self.backward_into(&a, k, &mut b);
                std::mem::swap(&mut a, &mut b);
            }
            out.push(a[src.x] + n as f64 * alpha);
        }
        out
    }

    /// Discrete minimal action from `src` to `dst` over `n` periods plus `n alpha`.
    pub fn finite_action(&self, src: Node, dst: Node, n: usize, alpha: f64) -> Result<f64> {
        if n == 0 {
            return Err(invalid("horizon n must be >= 1"));
        }
        let g = &self.grid;
        let nt = g.nt() as i64;
        let steps = n as i64 * nt + dst.t as i64 - src.t as i64;
        let s = g.space_len();
        let mut a = vec![f64::INFINITY; s];
        a[src.x] = 0.0;
        let mut b = vec![0.0; s];
        let mut arg = vec![0u32; s];
        for i in 0..steps {
            let k = ((src.t as i64 + i) % nt) as usize;
            let stats = self.backward_tracked(&a, k, &mut b, &mut arg);
            if stats.finite > 0 && stats.saturated == stats.finite && i > 0 {
                return Err(Error::BoxSaturation { slice: k });
            }
            std::mem::swap(&mut a, &mut b);
        }
        Ok(a[dst.x] + n as f64 * alpha)
    }

    /// A grid path realising `finite_action`: positions in the universal
    /// cover (ending at the representative of `dst.x`) and absolute times.
    pub fn minimizing_path(&self, src: Node, dst: Node, n: usize) -> Result<(Vec<Point>, Vec<f64>)> {
        if n == 0 {
            return Err(invalid("horizon n must be >= 1"));
        }
        let g = &self.grid;
        let nt = g.nt() as i64;
        let steps = (n as i64 * nt + dst.t as i64 - src.t as i64) as usize;
        let s = g.space_len();
        let mut a = vec![f64::INFINITY; s];
        a[src.x] = 0.0;
        let mut b = vec![0.0; s];
        let mut args = vec![vec![0u32; s]; steps];
        for (i, arg) in args.iter_mut().enumerate() {
            let k = (src.t + i) % g.nt();
            self.backward_tracked(&a, k, &mut b, arg);
            std::mem::swap(&mut a, &mut b);
        }
        if !a[dst.x].is_finite() {
            return Err(invalid("target unreachable in the given horizon"));
        }
        let h = g.hx();
        let mut pos = g.x_of(dst.x);
        let mut node = dst.x;
        let mut points = vec![pos];
        for arg in args.iter().rev() {
            let o = arg[node] as usize;
            let j = self.offsets[o];
            for ax in 0..g.dim() {
                pos[ax] -= j[ax] as f64 * h;
            }
            node = self.src[node * self.offsets.len() + o] as usize;
            points.push(pos);
        }
        points.reverse();
        let t0 = g.t_of(src.t);
        let times = (0..=steps).map(|i| t0 + i as f64 * g.dt()).collect();
        Ok((points, times))
    }

    /// Window-minimum Peierls barrier between two nodes.
    pub fn peierls_barrier(&self, src: Node, dst: Node, alpha: f64, settings: &DpSettings) -> Result<BarrierValue> {
        settings.validate()?;
        let acts = self.source_actions(src, alpha, settings.n_hi);
        let b = acts.barrier(self.grid.node_index(dst), settings.n_lo);
        check_barrier(&b, settings)?;
        Ok(b)
    }

    /// Barrier table for explicit (source, target) pairs; sources are shared.
    pub fn barrier_table(&self, pairs: &[(Node, Node)], alpha: f64, settings: &DpSettings) -> Result<BarrierTable> {
        settings.validate()?;
        let mut sources: Vec<Node> = pairs.iter().map(|p| p.0).collect();
        sources.sort();
        sources.dedup();
        let acts: Vec<SourceActions> = sources
            .par_iter()
            .map(|&s| self.source_actions(s, alpha, settings.n_hi))
            .collect();
        let mut entries = Vec::with_capacity(pairs.len());
        for &(src, dst) in pairs {
            let i = sources.binary_search(&src).expect("source present");
            let value = acts[i].barrier(self.grid.node_index(dst), settings.n_lo);
            check_barrier(&value, settings)?;
            entries.push(BarrierEntry { source: src, target: dst, value });
        }
        Ok(BarrierTable { n_window: (settings.n_lo, settings.n_hi), entries })
    }

    /// Diagonal barrier `h((x,t),(x,t))`.
    pub fn diagonal_barrier(&self, node: Node, alpha: f64, settings: &DpSettings) -> Result<BarrierValue> {
        let diag = self.diagonal_actions(node, alpha, settings.n_hi);
        let b = window_barrier(|n| diag[n - 1], settings.n_lo, settings.n_hi);
        check_barrier(&b, settings)?;
        Ok(b)
    }

    /// Nodes whose diagonal barrier is at most `eps_a`.
    ///
    /// With a weak KAM pair at hand, nodes where `u_- - u_+` (measured from its
    /// minimum) already exceeds `eps_a` are skipped: the barrier dominates that
    /// gap, so they cannot qualify.
    pub fn aubry_set(
        &self,
        eps_a: f64,
        alpha: f64,
        pair: Option<(&ValueField, &ValueField)>,
        settings: &DpSettings,
    ) -> Result<(NodeSet, Vec<(Node, f64)>)> {
        let g = &self.grid;
        let candidates: Vec<Node> = match pair {
            Some((um, up)) if settings.prune_aubry => {
                let gap: Vec<f64> = um.data().iter().zip(up.data()).map(|(a, b)| a - b).collect();
                let base = gap.iter().copied().fold(f64::INFINITY, f64::min);
                let slack = settings.tol_dom + settings.tol_h;
                (0..g.node_count())
                    .filter(|&i| gap[i] - base <= eps_a + slack)
                    .map(|i| g.node_of(i))
                    .collect()
            }
            _ => (0..g.node_count()).map(|i| g.node_of(i)).collect(),
        };
        let diag: Vec<Result<(Node, f64)>> = candidates
            .par_iter()
            .map(|&n| self.diagonal_barrier(n, alpha, settings).map(|b| (n, b.h)))
            .collect();
        let diag = diag.into_iter().collect::<Result<Vec<_>>>()?;
        let mut set = NodeSet::empty(g);
        for &(n, h) in &diag {
            if h <= eps_a {
                set.insert(n);
            }
        }
        Ok((set, diag))
    }

    /// Diagonal barrier of the free system on the same grid, the empirical
    /// grid-consistency error. The free system is invariant under grid
    /// translations in space and time, so one node represents all of them.
    pub fn consistency_error(grid: &SpaceTimeGrid, settings: &DpSettings) -> Result<f64> {
        let flat = LaxOleinik::new(&LagrangianSystem::free(grid.dim()), grid)?;
        let b = flat.diagonal_barrier(Node { x: 0, t: 0 }, 0.0, settings)?;
        Ok(b.h.abs())
    }

    /// Weak KAM pair `(u_+, u_-)` with its critical value; `u_+` is normalised
    /// so that `min (u_- - u_+)` over `aubry` is zero.
    pub fn weak_kam_pair(&self, aubry: Option<&NodeSet>, settings: &DpSettings) -> Result<(ValueField, ValueField, CriticalValue)> {
        let crit = self.critical_value_vi(settings)?;
        let u_minus = self.backward_solution(&crit, settings)?;
        let mut u_plus = self.forward_solution(&u_minus, &crit, settings)?;
        normalise_pair(&u_minus, &mut u_plus, aubry);
        Ok((u_plus, u_minus, crit))
    }

    /// Critical value, weak KAM pair and Aubry estimate in one pass.
    pub fn analyze(&self, settings: &DpSettings) -> Result<WeakKamAnalysis> {
        settings.validate()?;
        let crit = self.critical_value_vi(settings)?;
        let u_minus = self.backward_solution(&crit, settings)?;
        let mut u_plus = self.forward_solution(&u_minus, &crit, settings)?;
        let mut eps_a = match settings.eps_a {
            Some(e) => e,
            None => (10.0 * Self::consistency_error(&self.grid, settings)?).max(settings.eps_a_floor),
        };
        let mut attempt = 0;
        let (aubry, diagonal) = loop {
            let (set, diag) = self.aubry_set(eps_a, crit.alpha, Some((&u_minus, &u_plus)), settings)?;
            if !set.is_empty() {
                break (set, diag);
            }
            if attempt == 3 {
                return Err(Error::EmptyAubry { eps_a });
            }
            attempt += 1;
            eps_a *= 2.0;
        };
        normalise_pair(&u_minus, &mut u_plus, Some(&aubry));
        Ok(WeakKamAnalysis {
            critical: crit,
            u_minus,
            u_plus,
            aubry,
            eps_a,
            diagonal,
        })
    }

    /// Largest violation of
    /// `u(y, t+dt) - u(x, t) <= dt L((x+y)/2, (y-x)/dt, t) + dt alpha`.
    pub fn domination_defect(&self, u: &ValueField, alpha: f64) -> f64 {
        let g = &self.grid;
        let nt = g.nt();
        let nc = self.offsets.len();
        let mut worst = f64::NEG_INFINITY;
        for k in 0..nt {
            let cur = u.slice(k);
            let next = u.slice((k + 1) % nt);
            for y in 0..g.space_len() {
                for o in 0..nc {
                    let x = self.src[y * nc + o] as usize;
                    let c = match self.kernel_row(k, y) {
                        Some(row) => row[o],
                        None => self.cost(k, y, o),
                    };
                    worst = worst.max(next[y] - cur[x] - c - g.dt() * alpha);
                }
            }
        }
        worst
    }
}

fn normalise_pair(u_minus: &ValueField, u_plus: &mut ValueField, aubry: Option<&NodeSet>) {
    let g = u_minus.grid().clone();
    let shift = match aubry {
        Some(set) if !set.is_empty() => set
            .iter()
            .map(|n| u_minus.get(n) - u_plus.get(n))
            .fold(f64::INFINITY, f64::min),
        _ => (0..g.node_count())
            .map(|i| u_minus.data()[i] - u_plus.data()[i])
            .fold(f64::INFINITY, f64::min),
    };
    for v in u_plus.data_mut() {
        *v += shift;
    }
}

fn check_barrier(b: &BarrierValue, settings: &DpSettings) -> Result<()> {
    if b.late_decrease > settings.tol_h {
        return Err(Error::NotConverged {
            what: "Peierls barrier window",
            detail: format!(
                "running minimum fell by {:e} over the last quarter window",
                b.late_decrease
            ),
        });
    }
    Ok(())
}

fn min_max_diff(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap()
    }

    fn small() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 32, 8, 33, 4.0).unwrap()
    }

    #[test]
    fn flat_zero_field_is_fixed() {
        let g = reference();
        let e = LaxOleinik::new(&LagrangianSystem::free(1), &g).unwrap();
        let u = vec![0.0; g.space_len()];
        for dir in [Direction::Backward, Direction::Forward] {
            let out = e.lax_oleinik_step(&u, 3, dir).unwrap();
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn calibrated_linear_field_loses_half_c_squared() {
        // u = c.x in the cover; its periodic part evolves under L - c.v
        let g = reference();
        let c = 0.5;
        let e = LaxOleinik::new(&LagrangianSystem::free(1).with_tilt([c, 0.0]), &g).unwrap();
        let u = vec![0.0; g.space_len()];
        let out = e.lax_oleinik_step(&u, 0, Direction::Backward).unwrap();
        for v in out {
            assert!((v + 0.5 * c * c * g.dt()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_commutes_with_constants_and_is_monotone() {
        let g = small();
        let e = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: Vec<f64> = (0..g.space_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = u.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
            let a = rng.gen_range(-3.0..3.0);
            let k = rng.gen_range(0..g.nt());
            for dir in [Direction::Backward, Direction::Forward] {
                let su = e.lax_oleinik_step(&u, k, dir).unwrap();
                let sw = e.lax_oleinik_step(&w, k, dir).unwrap();
                let shifted: Vec<f64> = u.iter().map(|v| v + a).collect();
                let ss = e.lax_oleinik_step(&shifted, k, dir).unwrap();
                let du = sup_diff(&u, &w);
                let ds = sup_diff(&su, &sw);
                assert!(ds <= du + 1e-12);
                for i in 0..g.space_len() {
                    assert!(su[i] <= sw[i] + 1e-12);
                    assert!((ss[i] - su[i] - a).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn flat_finite_actions() {
        let g = reference();
        let e = LaxOleinik::new(&LagrangianSystem::free(1), &g).unwrap();
        let o = Node { x: 0, t: 0 };
        assert_eq!(e.finite_action(o, o, 1, 0.0).unwrap(), 0.0);
        let half = Node { x: 32, t: 0 };
        let h = e.finite_action(o, half, 1, 0.0).unwrap();
        assert!((h - 0.125).abs() < 1e-12, "{h}");
    }

    #[test]
    fn triangle_inequality_of_finite_actions() {
        let g = small();
        let e = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = g.space_len();
        for _ in 0..50 {
            let a = Node { x: rng.gen_range(0..s), t: rng.gen_range(0..g.nt()) };
            let m = Node { x: rng.gen_range(0..s), t: a.t };
            let b = Node { x: rng.gen_range(0..s), t: a.t };
            let n = rng.gen_range(1..4);
            let lhs = e.finite_action(a, b, n + 1, 0.0).unwrap();
            let rhs = e.finite_action(a, m, n, 0.0).unwrap() + e.finite_action(m, b, 1, 0.0).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn critical_values_of_builtin_families() {
        let g = reference();
        let s = DpSettings::default();
        let flat = LaxOleinik::new(&LagrangianSystem::free(1), &g).unwrap();
        assert!(flat.critical_value_vi(&s).unwrap().alpha.abs() < 1e-9);
        let shifted = LaxOleinik::new(&LagrangianSystem::free(1).with_shift(3.0), &g).unwrap();
        assert!((shifted.critical_value_vi(&s).unwrap().alpha + 3.0).abs() < 1e-9);
        let pend = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let cv = pend.critical_value_vi(&s).unwrap();
        assert!(cv.alpha.abs() < 1e-9, "{cv:?}");
        assert!(cv.lower <= 0.0 && 0.0 <= cv.upper + 1e-15);
    }

    #[test]
    fn flat_weak_kam_pair_is_constant() {
        let g = small();
        let e = LaxOleinik::new(&LagrangianSystem::free(1), &g).unwrap();
        let (up, um, cv) = e.weak_kam_pair(None, &DpSettings::default()).unwrap();
        assert!(cv.alpha.abs() < 1e-12);
        assert!(um.max() - um.min() < 1e-12);
        assert!(up.max() - up.min() < 1e-12);
        assert!((um.max() - up.max()).abs() < 1e-12);
    }

    #[test]
    fn aubry_rejects_negative_threshold() {
        let g = small();
        let e = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let settings = DpSettings { eps_a: Some(-1.0), ..DpSettings::default() };
        let err = e.analyze(&settings).unwrap_err();
        assert!(matches!(err, Error::EmptyAubry { .. }));
    }

    #[test]
    fn window_must_be_wide_enough() {
        let s = DpSettings { n_lo: 8, n_hi: 10, ..DpSettings::default() };
        assert!(s.validate().is_err());
    }

    /// Brute force over every grid path: each step picks one of the lifted
    /// displacements, the cost is the midpoint rule.
    fn exhaustive(sys: &LagrangianSystem, g: &SpaceTimeGrid, src: Node, dst: Node, n: usize) -> f64 {
        let jmax = (g.v_max() * g.dt() / g.hx() + 1e-9).floor() as i64;
        let steps = n * g.nt() + dst.t - src.t;
        let h = g.hx();
        let mut best = f64::INFINITY;
        let width = (2 * jmax + 1) as usize;
        let total = width.pow(steps as u32);
        for code in 0..total {
            let mut c = code;
            let mut x = src.x as f64 * h;
            let mut cost = 0.0;
            for i in 0..steps {
                let j = (c % width) as i64 - jmax;
                c /= width;
                let v = j as f64 * h / g.dt();
                let t = g.t_of((src.t + i) % g.nt()) + 0.5 * g.dt();
                cost += g.dt() * sys.lagrangian([x + 0.5 * j as f64 * h, 0.0], [v, 0.0], t);
                x += j as f64 * h;
            }
            let cell = (x / h).round() as i64;
            if cell.rem_euclid(g.nx() as i64) as usize == dst.x {
                best = best.min(cost);
            }
        }
        best
    }

    #[test]
    fn finite_action_matches_exhaustive_enumeration() {
        let g = SpaceTimeGrid::new(1, 8, 4, 9, 1.0).unwrap();
        for sys in [LagrangianSystem::pendulum(), LagrangianSystem::free(1).with_tilt([0.3, 0.0])] {
            let e = LaxOleinik::new(&sys, &g).unwrap();
            for (a, b) in [(0, 0), (0, 3), (5, 2), (7, 7)] {
                let src = Node { x: a, t: 1 };
                let dst = Node { x: b, t: 1 };
                let dp = e.finite_action(src, dst, 2, 0.0).unwrap();
                let bf = exhaustive(&sys, &g, src, dst, 2);
                assert!((dp - bf).abs() < 1e-12, "{dp} vs {bf}");
            }
        }
    }

    #[test]
    fn flat_barrier_is_the_discrete_cell_cost() {
        // moving d cells costs at least d one-cell steps of hx^2 / (2 dt)
        let g = reference();
        let e = LaxOleinik::new(&LagrangianSystem::free(1), &g).unwrap();
        let s = DpSettings::default();
        for (d, t) in [(0usize, 0usize), (1, 3), (5, 7), (32, 0)] {
            let b = e.peierls_barrier(Node { x: 0, t: 0 }, Node { x: d, t }, 0.0, &s).unwrap();
            let expect = d as f64 * g.hx() * g.hx() / (2.0 * g.dt());
            assert!((b.h - expect).abs() < 1e-12, "d={d}: {} vs {expect}", b.h);
        }
    }

    #[test]
    fn pendulum_barriers_and_aubry_tube() {
        let g = reference();
        let e = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let s = DpSettings::default();
        let a = e.analyze(&s).unwrap();
        assert!(a.alpha().abs() < 1e-9);
        assert_eq!(a.aubry.len(), g.nt());
        assert!(a.aubry.iter().all(|n| n.x == 0));
        for t in 0..g.nt() {
            let on = e.diagonal_barrier(Node { x: 0, t }, a.alpha(), &s).unwrap();
            assert!(on.h.abs() < 1e-9);
        }
        let off = e.diagonal_barrier(Node { x: 32, t: 0 }, a.alpha(), &s).unwrap();
        assert!(off.h > 10.0 * s.tol_h);
        // pruning never changes the answer
        let full = DpSettings { prune_aubry: false, ..s.clone() };
        let (set, diag) = e.aubry_set(a.eps_a, a.alpha(), None, &full).unwrap();
        assert_eq!(set, a.aubry);
        assert!(diag.iter().all(|(_, h)| *h >= -1e-9));
        assert!(e.domination_defect(&a.u_minus, a.alpha()) <= s.tol_dom);
        let gap = a.gap();
        assert!(gap.min() >= -1e-9);
        assert!(a.aubry.iter().all(|n| gap.get(n).abs() < 1e-9));
    }

    #[test]
    fn barrier_dominates_weak_kam_differences() {
        let g = small();
        let e = LaxOleinik::new(&LagrangianSystem::pendulum(), &g).unwrap();
        let s = DpSettings::default();
        let a = e.analyze(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(Node, Node)> = (0..200)
            .map(|_| {
                let p = Node { x: rng.gen_range(0..g.space_len()), t: rng.gen_range(0..g.nt()) };
                let q = Node { x: rng.gen_range(0..g.space_len()), t: rng.gen_range(0..g.nt()) };
                (p, q)
            })
            .collect();
        let table = e.barrier_table(&pairs, a.alpha(), &s).unwrap();
        for entry in &table.entries {
            let lower = a.u_minus.get(entry.target) - a.u_plus.get(entry.source);
            assert!(entry.value.h >= lower - 1e-9);
        }
    }

    #[test]
    fn minimizing_path_reproduces_its_action() {
        let g = small();
        let sys = LagrangianSystem::pendulum();
        let e = LaxOleinik::new(&sys, &g).unwrap();
        let src = Node { x: 3, t: 2 };
        let dst = Node { x: 20, t: 5 };
        let (pts, times) = e.minimizing_path(src, dst, 2).unwrap();
        let mut action = 0.0;
        for i in 0..pts.len() - 1 {
            let v = (pts[i + 1][0] - pts[i][0]) / g.dt();
            let mid = 0.5 * (pts[i][0] + pts[i + 1][0]);
            action += g.dt() * sys.lagrangian([mid, 0.0], [v, 0.0], times[i] + 0.5 * g.dt());
        }
        let h = e.finite_action(src, dst, 2, 0.0).unwrap();
        assert!((action - h).abs() < 1e-12);
    }

}
