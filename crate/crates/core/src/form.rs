//! Closed one-forms on `T^d x T` with an explicit cohomology class `(c, tau)`.

use crate::error::{invalid, Result};
use crate::grid::{wrap_unit, Node, Point, SpaceTimeGrid, ValueField};
use crate::system::TrigPolynomial;

#[derive(Debug, Clone)]
enum Term {
    /// `c.dx + tau dt`
    Constant { c: Point, tau: f64 },
    /// `amplitude * b((x_axis - lo) / (hi - lo)) dx_axis` with a smooth bump `b`
    /// supported in `(0, 1)`.
    Bump { axis: usize, lo: f64, hi: f64, amplitude: f64 },
    /// `df` for a trigonometric polynomial `f`.
    Exact(TrigPolynomial),
    /// Components sampled on a grid (interpolated between nodes).
    Sampled { x: Vec<ValueField>, t: ValueField },
}

/// A closed one-form `omega_x(x,t).dx + omega_t(x,t) dt`.
#[derive(Debug, Clone)]
pub struct OneForm {
    dim: usize,
    terms: Vec<Term>,
    c: Point,
    tau: f64,
}

/// `exp(-1 / (1 - s^2))` on `(-1, 1)` with `s = 2u - 1`, zero elsewhere.
fn bump(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let s = 2.0 * u - 1.0;
    (-1.0 / (1.0 - s * s)).exp()
}

/// Integral of `bump` over `[0, 1]` (composite Simpson, 2^16 panels).
fn bump_mass() -> f64 {
    let n = 1usize << 16;
    let h = 1.0 / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * bump(i as f64 * h);
    }
    s * h / 3.0
}

impl OneForm {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new(), c: [0.0; 2], tau: 0.0 }
    }

    pub fn constant(dim: usize, c: Point, tau: f64) -> Self {
        let mut c = c;
        if dim == 1 {
            c[1] = 0.0;
        }
        Self { dim, terms: vec![Term::Constant { c, tau }], c, tau }
    }

    /// `amplitude * bump(x_axis) dx_axis` with the bump supported in `[lo, hi]`.
    pub fn bump(dim: usize, axis: usize, lo: f64, hi: f64, amplitude: f64) -> Result<Self> {
        if axis >= dim || !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(invalid(format!("bad bump axis {axis} or support [{lo}, {hi}]")));
        }
        let mut c = [0.0; 2];
        c[axis] = amplitude * (hi - lo) * bump_mass();
        Ok(Self {
            dim,
            terms: vec![Term::Bump { axis, lo, hi, amplitude }],
            c,
            tau: 0.0,
        })
    }

    /// The exact form `df`.
    pub fn exact(dim: usize, f: TrigPolynomial) -> Self {
        Self { dim, terms: vec![Term::Exact(f)], c: [0.0; 2], tau: 0.0 }
    }

    /// A form given by its node values. The class is measured by loop
    /// integrals through the origin.
    pub fn sampled(grid: &SpaceTimeGrid, x: Vec<ValueField>, t: ValueField) -> Result<Self> {
        if x.len() != grid.dim() || x.iter().any(|f| f.grid() != grid) || t.grid() != grid {
            return Err(invalid("sampled form components do not match the grid"));
        }
        let mut form = Self {
            dim: grid.dim(),
            terms: vec![Term::Sampled { x, t }],
            c: [0.0; 2],
            tau: 0.0,
        };
        let (c, tau) = form.discrete_loop_integrals(grid, Node { x: 0, t: 0 });
        form.c = c;
        form.tau = tau;
        Ok(form)
    }

    pub fn plus(mut self, other: OneForm) -> Self {
        assert_eq!(self.dim, other.dim);
        self.terms.extend(other.terms);
        for a in 0..2 {
            self.c[a] += other.c[a];
        }
        self.tau += other.tau;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|term| match term {
                Term::Constant { c, tau } => Term::Constant { c: [s * c[0], s * c[1]], tau: s * tau },
                Term::Bump { axis, lo, hi, amplitude } => Term::Bump {
                    axis: *axis,
                    lo: *lo,
                    hi: *hi,
                    amplitude: s * amplitude,
                },
                Term::Exact(f) => {
                    let mut f = f.clone();
                    f.constant *= s;
                    for t in &mut f.terms {
                        t.coeff *= s;
                    }
                    Term::Exact(f)
                }
                Term::Sampled { x, t } => Term::Sampled {
                    x: x.iter().map(|f| f.map(|v| s * v)).collect(),
                    t: t.map(|v| s * v),
                },
            })
            .collect();
        Self {
            dim: self.dim,
            terms,
            c: [s * self.c[0], s * self.c[1]],
            tau: s * self.tau,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared cohomology class `(c, tau)`.
    pub fn cohomology(&self) -> (Point, f64) {
        (self.c, self.tau)
    }

    pub fn omega_x(&self, x: Point, t: f64) -> Point {
        let mut w = [0.0; 2];
        for term in &self.terms {
            match term {
                Term::Constant { c, .. } => {
                    for a in 0..self.dim {
                        w[a] += c[a];
                    }
                }
                Term::Bump { axis, lo, hi, amplitude } => {
                    let u = (wrap_unit(x[*axis]) - lo) / (hi - lo);
                    w[*axis] += amplitude * bump(u);
                }
                Term::Exact(f) => {
                    let (g, _) = f.gradient(x, t, self.dim);
                    for a in 0..self.dim {
                        w[a] += g[a];
                    }
                }
                Term::Sampled { x: fx, .. } => {
                    for a in 0..self.dim {
                        w[a] += fx[a].interpolate_st(x, t);
                    }
                }
            }
        }
        w
    }

    pub fn omega_t(&self, x: Point, t: f64) -> f64 {
        let mut w = 0.0;
        for term in &self.terms {
            match term {
                Term::Constant { tau, .. } => w += tau,
                Term::Bump { .. } => {}
                Term::Exact(f) => w += f.gradient(x, t, self.dim).1,
                Term::Sampled { t: ft, .. } => w += ft.interpolate_st(x, t),
            }
        }
        w
    }

    /// `omega_(x,t)(v, 1)`.
    pub fn pair(&self, x: Point, v: Point, t: f64) -> f64 {
        let wx = self.omega_x(x, t);
        let mut s = self.omega_t(x, t);
        for a in 0..self.dim {
            s += wx[a] * v[a];
        }
        s
    }

    /// `max_{|v|_inf <= v_max} |omega(v, 1)|` at `(x, t)`.
    pub fn box_norm(&self, x: Point, t: f64, v_max: f64) -> f64 {
        let wx = self.omega_x(x, t);
        let mut s = self.omega_t(x, t).abs();
        for a in 0..self.dim {
            s += wx[a].abs() * v_max;
        }
        s
    }

    fn has_sampled(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Sampled { .. }))
    }

    /// Trapezoid loop integrals along each coordinate circle through `(x0, t0)`
    /// using `n` points per loop.
    pub fn loop_integrals(&self, x0: Point, t0: f64, n: usize) -> (Point, f64) {
        let h = 1.0 / n as f64;
        let mut c = [0.0; 2];
        for a in 0..self.dim {
            let mut s = 0.0;
            for i in 0..n {
                let mut x = x0;
                x[a] += i as f64 * h;
                s += self.omega_x(x, t0)[a];
            }
            c[a] = s * h;
        }
        let mut tau = 0.0;
        for i in 0..n {
            tau += self.omega_t(x0, t0 + i as f64 * h);
        }
        (c, tau * h)
    }

    fn discrete_loop_integrals(&self, grid: &SpaceTimeGrid, base: Node) -> (Point, f64) {
        let x0 = grid.x_of(base.x);
        let t0 = grid.t_of(base.t);
        let mut c = [0.0; 2];
        for a in 0..self.dim {
            let mut s = 0.0;
            for i in 0..grid.nx() {
                let mut x = x0;
                x[a] += i as f64 * grid.hx();
                s += self.omega_x(x, t0)[a];
            }
            c[a] = s * grid.hx();
        }
        let mut tau = 0.0;
        for k in 0..grid.nt() {
            tau += self.omega_t(x0, t0 + k as f64 * grid.dt());
        }
        (c, tau * grid.dt())
    }

    /// Largest exterior-derivative component over the grid nodes.
    ///
    /// Analytic forms are differenced with a fixed small step; sampled forms
    /// use centered grid differences, whose curl of a discrete gradient
    /// vanishes identically.
    pub fn closedness_defect(&self, grid: &SpaceTimeGrid) -> f64 {
        let (hx, ht) = if self.has_sampled() {
            (grid.hx(), grid.dt())
        } else {
            (1e-5, 1e-5)
        };
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..grid.nt() {
            let t = grid.t_of(k);
            for i in 0..grid.space_len() {
                let x = grid.x_of(i);
                for a in 0..d {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += hx;
                    xm[a] -= hx;
                    let dx_wt = (self.omega_t(xp, t) - self.omega_t(xm, t)) / (2.0 * hx);
                    let dt_wx =
                        (self.omega_x(x, t + ht)[a] - self.omega_x(x, t - ht)[a]) / (2.0 * ht);
                    worst = worst.max((dt_wx - dx_wt).abs());
                    for b in 0..d {
                        if b == a {
                            continue;
                        }
                        let mut yp = x;
                        let mut ym = x;
                        yp[b] += hx;
                        ym[b] -= hx;
                        let db_wa = (self.omega_x(yp, t)[a] - self.omega_x(ym, t)[a]) / (2.0 * hx);
                        let da_wb = (self.omega_x(xp, t)[b] - self.omega_x(xm, t)[b]) / (2.0 * hx);
                        worst = worst.max((db_wa - da_wb).abs());
                    }
                }
            }
        }
        worst
    }

    /// Nodes where either component exceeds `1e-12` in magnitude.
    pub fn support(&self, grid: &SpaceTimeGrid) -> crate::grid::NodeSet {
        crate::grid::NodeSet::from_predicate(grid, |n| {
            let x = grid.x_of(n.x);
            let t = grid.t_of(n.t);
            let wx = self.omega_x(x, t);
            (0..self.dim).any(|a| wx[a].abs() > 1e-12) || self.omega_t(x, t).abs() > 1e-12
        })
    }
}

/// Centered periodic differences of a field: `(d/dx_a u)_a` and `d/dt u`.
pub fn centered_differential(u: &ValueField) -> (Vec<ValueField>, ValueField) {
    let g = u.grid().clone();
    let s = g.space_len();
    let nt = g.nt();
    let mut xs = Vec::with_capacity(g.dim());
    for a in 0..g.dim() {
        let mut f = ValueField::zeros(&g);
        for k in 0..nt {
            for i in 0..s {
                let c = g.space_coords(i);
                let mut cp = [c[0] as i64, c[1] as i64];
                let mut cm = cp;
                cp[a] += 1;
                cm[a] -= 1;
                let up = u.get(Node { x: g.space_index(cp), t: k });
                let um = u.get(Node { x: g.space_index(cm), t: k });
                f.set(Node { x: i, t: k }, (up - um) / (2.0 * g.hx()));
            }
        }
        xs.push(f);
    }
    let mut ft = ValueField::zeros(&g);
    for k in 0..nt {
        for i in 0..s {
            let up = u.get(Node { x: i, t: (k + 1) % nt });
            let um = u.get(Node { x: i, t: (k + nt - 1) % nt });
            ft.set(Node { x: i, t: k }, (up - um) / (2.0 * g.dt()));
        }
    }
    (xs, ft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::system::TrigTerm;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap()
    }

    #[test]
    fn constant_form_loops() {
        let f = OneForm::constant(1, [0.5, 0.0], -0.25);
        let (c, tau) = f.loop_integrals([0.3, 0.0], 0.2, 256);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((tau + 0.25).abs() < 1e-12);
        assert!(f.closedness_defect(&grid()) < 1e-6);
        assert!((f.pair([0.1, 0.0], [2.0, 0.0], 0.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bump_form_declares_its_class() {
        let f = OneForm::bump(1, 0, 0.3, 0.7, 1.0).unwrap();
        let (c_dec, _) = f.cohomology();
        let (c, tau) = f.loop_integrals([0.0, 0.0], 0.0, 4096);
        assert!((c[0] - c_dec[0]).abs() < 1e-8, "{} vs {}", c[0], c_dec[0]);
        assert_eq!(tau, 0.0);
        assert!(f.closedness_defect(&grid()) < 1e-6);
        // support inside [0.3, 0.7]
        assert_eq!(f.omega_x([0.29, 0.0], 0.0)[0], 0.0);
        assert_eq!(f.omega_x([0.71, 0.0], 0.0)[0], 0.0);
        assert!(f.omega_x([0.5, 0.0], 0.0)[0] > 0.0);
    }

    #[test]
    fn exact_form_is_closed_with_zero_class() {
        let f = TrigPolynomial {
            constant: 0.0,
            terms: vec![TrigTerm::sin(0.3, [1, 0], 1), TrigTerm::cos(0.2, [2, 0], -1)],
        };
        let w = OneForm::exact(1, f);
        let (c, tau) = w.loop_integrals([0.17, 0.0], 0.4, 512);
        assert!(c[0].abs() < 1e-8 && tau.abs() < 1e-8);
        assert!(w.closedness_defect(&grid()) < 1e-6);
    }

    #[test]
    fn subtracting_a_discrete_differential_keeps_the_class() {
        let g = grid();
        let u = ValueField::from_fn(&g, |x, t| (2.0 * PI * x[0]).sin() * (1.0 + t) + x[0] * x[0]);
        let (dx, dt) = centered_differential(&u);
        let wx = vec![dx[0].map(|v| 0.3 - v)];
        let wt = dt.map(|v| -0.1 - v);
        let form = OneForm::sampled(&g, wx, wt).unwrap();
        let (c, tau) = form.cohomology();
        assert!((c[0] - 0.3).abs() < 1e-8);
        assert!((tau + 0.1).abs() < 1e-8);
        assert!(form.closedness_defect(&g) < 1e-6);
    }
}
