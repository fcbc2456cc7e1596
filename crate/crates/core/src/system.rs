//! Time-periodic Lagrangians `L(x, v, t) = |v|^2/2 - c.v - V(x, t) + s - W(x, t)`
//! on `T^d x T`, their Legendre-dual Hamiltonians and the Euler-Lagrange flow.
//!
//! `V` is a trigonometric polynomial given by coefficients, `c` a tilt by a
//! constant one-form, `s` a constant shift and `W` an optional non-negative
//! perturbation sampled on a grid. The dual Hamiltonian is
//! `H(x, p, t) = |p + c|^2/2 + V(x, t) - s + W(x, t)`, so the pair is an exact
//! Legendre pair for every member of the family.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{wrap_unit, Point, SpaceTimeGrid, ValueField};

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigKind {
    Cos,
    Sin,
}

/// `coeff * cos(2 pi (k.x + m t))` or the `sin` counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub coeff: f64,
    pub k: [i32; 2],
    #[serde(default)]
    pub m: i32,
    pub kind: TrigKind,
}

impl TrigTerm {
    pub fn cos(coeff: f64, k: [i32; 2], m: i32) -> Self {
        Self { coeff, k, m, kind: TrigKind::Cos }
    }

    pub fn sin(coeff: f64, k: [i32; 2], m: i32) -> Self {
        Self { coeff, k, m, kind: TrigKind::Sin }
    }

    fn phase(&self, x: Point, t: f64, dim: usize) -> f64 {
        let mut s = self.m as f64 * t;
        for a in 0..dim {
            s += self.k[a] as f64 * x[a];
        }
        TAU * s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigPolynomial {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn value(&self, x: Point, t: f64, dim: usize) -> f64 {
        let mut v = self.constant;
        for term in &self.terms {
            let th = term.phase(x, t, dim);
            v += term.coeff
                * match term.kind {
                    TrigKind::Cos => th.cos(),
                    TrigKind::Sin => th.sin(),
                };
        }
        v
    }

    /// Spatial gradient and time derivative.
    pub fn gradient(&self, x: Point, t: f64, dim: usize) -> (Point, f64) {
        let mut gx = [0.0; 2];
        let mut gt = 0.0;
        for term in &self.terms {
            let th = term.phase(x, t, dim);
            // d/dtheta of the term
            let d = term.coeff
                * match term.kind {
                    TrigKind::Cos => -th.sin(),
                    TrigKind::Sin => th.cos(),
                };
            for a in 0..dim {
                gx[a] += TAU * term.k[a] as f64 * d;
            }
            gt += TAU * term.m as f64 * d;
        }
        (gx, gt)
    }
}

/// Non-negative potential perturbation sampled on a grid.
#[derive(Debug, Clone)]
struct GridPotential {
    field: Arc<ValueField>,
    scale: f64,
}

impl GridPotential {
    fn value(&self, x: Point, t: f64) -> f64 {
        self.scale * self.field.interpolate_st(x, t)
    }

    fn gradient(&self, x: Point, t: f64, dim: usize) -> Point {
        let h = 1e-7;
        let mut g = [0.0; 2];
        for a in 0..dim {
            let mut xp = x;
            let mut xm = x;
            xp[a] += h;
            xm[a] -= h;
            g[a] = (self.value(xp, t) - self.value(xm, t)) / (2.0 * h);
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct LagrangianSystem {
    name: String,
    dim: usize,
    potential: TrigPolynomial,
    tilt: Point,
    shift: f64,
    perturbation: Option<GridPotential>,
}

impl LagrangianSystem {
    /// `L = |v|^2 / 2 - V(x, t)` for a user potential.
    pub fn custom(name: impl Into<String>, dim: usize, potential: TrigPolynomial) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(invalid(format!("dim must be 1 or 2, got {dim}")));
        }
        for term in &potential.terms {
            if dim == 1 && term.k[1] != 0 {
                return Err(invalid("second wave number must be 0 in dimension 1"));
            }
            if !term.coeff.is_finite() {
                return Err(invalid("non-finite potential coefficient"));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            potential,
            tilt: [0.0; 2],
            shift: 0.0,
            perturbation: None,
        })
    }

    /// Free motion `L = |v|^2 / 2`.
    pub fn free(dim: usize) -> Self {
        Self::custom("flat", dim, TrigPolynomial::zero()).expect("valid dimension")
    }

    /// `L = v^2/2 - V` with `V(x,t) = (cos 2 pi x - 1)(1 + sin(2 pi t)/2)`.
    ///
    /// `V <= 0` and vanishes exactly on `x = 0`, so `L >= 0` with equality only
    /// on the invariant curve `x = 0, v = 0`.
    pub fn pendulum() -> Self {
        // (cos a - 1)(1 + sin(b)/2)
        //   = -1 + cos a - sin(b)/2 + [sin(a+b) - sin(a-b)]/4
        let potential = TrigPolynomial {
            constant: -1.0,
            terms: vec![
                TrigTerm::cos(1.0, [1, 0], 0),
                TrigTerm::sin(-0.5, [0, 0], 1),
                TrigTerm::sin(0.25, [1, 0], 1),
                TrigTerm::sin(-0.25, [1, 0], -1),
            ],
        };
        Self::custom("pendulum", 1, potential).expect("valid dimension")
    }

    /// Autonomous `L = v^2/2 - cos 2 pi x`.
    pub fn autonomous_pendulum() -> Self {
        let potential = TrigPolynomial {
            constant: 0.0,
            terms: vec![TrigTerm::cos(1.0, [1, 0], 0)],
        };
        Self::custom("autonomous-pendulum", 1, potential).expect("valid dimension")
    }

    /// `L - c.v`, i.e. `L` minus the constant one-form `c.dx`.
    pub fn with_tilt(&self, c: Point) -> Self {
        let mut s = self.clone();
        s.tilt = [self.tilt[0] + c[0], self.tilt[1] + c[1]];
        if self.dim == 1 {
            s.tilt[1] = 0.0;
        }
        s
    }

    /// `L + shift`.
    pub fn with_shift(&self, shift: f64) -> Self {
        let mut s = self.clone();
        s.shift += shift;
        s
    }

    /// `L - scale * W` with `W` sampled on a grid (replaces any previous `W`).
    pub fn with_perturbation(&self, w: Arc<ValueField>, scale: f64) -> Self {
        let mut s = self.clone();
        s.perturbation = Some(GridPotential { field: w, scale });
        s
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn potential(&self) -> &TrigPolynomial {
        &self.potential
    }
    pub fn tilt(&self) -> Point {
        self.tilt
    }
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Lower bound on the eigenvalues of the velocity Hessian (identity here).
    pub fn convexity_modulus(&self) -> f64 {
        1.0
    }

    /// The spatially varying part `V(x,t) + W(x,t)` of the Hamiltonian.
    fn potential_energy(&self, x: Point, t: f64) -> f64 {
        let mut e = self.potential.value(x, t, self.dim);
        if let Some(w) = &self.perturbation {
            e += w.value(x, t);
        }
        e
    }

    pub fn lagrangian(&self, x: Point, v: Point, t: f64) -> f64 {
        let mut kin = 0.0;
        for a in 0..self.dim {
            kin += 0.5 * v[a] * v[a] - self.tilt[a] * v[a];
        }
        kin - self.potential_energy(x, t) + self.shift
    }

    /// Momentum `dL/dv`.
    pub fn dl_dv(&self, _x: Point, v: Point, _t: f64) -> Point {
        let mut p = [0.0; 2];
        for a in 0..self.dim {
            p[a] = v[a] - self.tilt[a];
        }
        p
    }

    /// Force `dL/dx`.
    pub fn dl_dx(&self, x: Point, _v: Point, t: f64) -> Point {
        let (gv, _) = self.potential.gradient(x, t, self.dim);
        let mut f = [0.0; 2];
        for a in 0..self.dim {
            f[a] = -gv[a];
        }
        if let Some(w) = &self.perturbation {
            let gw = w.gradient(x, t, self.dim);
            for a in 0..self.dim {
                f[a] -= gw[a];
            }
        }
        f
    }

    pub fn hamiltonian_view(&self) -> HamiltonianView<'_> {
        HamiltonianView { system: self }
    }

    /// Legendre transform at `(x, v, t)`: momentum and energy `p.v - L`.
    pub fn legendre(&self, x: Point, v: Point, t: f64) -> (Point, f64) {
        let p = self.dl_dv(x, v, t);
        let mut pv = 0.0;
        for a in 0..self.dim {
            pv += p[a] * v[a];
        }
        (p, pv - self.lagrangian(x, v, t))
    }

    /// Smallest subgradient gap `L(w) - L(v) - dL/dv(v).(w - v)` over random
    /// pairs in the box; positive means strict convexity was observed.
    pub fn convexity_gap<R: Rng>(&self, rng: &mut R, samples: usize, v_max: f64) -> f64 {
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let t = rng.gen::<f64>();
            let mut v = [0.0; 2];
            let mut w = [0.0; 2];
            for a in 0..self.dim {
                v[a] = rng.gen_range(-v_max..=v_max);
                w[a] = rng.gen_range(-v_max..=v_max);
            }
            let p = self.dl_dv(x, v, t);
            let mut lin = 0.0;
            let mut dist2 = 0.0;
            for a in 0..self.dim {
                lin += p[a] * (w[a] - v[a]);
                dist2 += (w[a] - v[a]).powi(2);
            }
            if dist2 == 0.0 {
                continue;
            }
            let gap = self.lagrangian(x, w, t) - self.lagrangian(x, v, t) - lin;
            worst = worst.min(gap / dist2);
        }
        worst
    }

    /// `min L(x,v,t)/|v|` over grid nodes with `|v|_inf = v_max`.
    pub fn superlinearity_witness(&self, grid: &SpaceTimeGrid) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 0..grid.nt() {
            let t = grid.t_of(k);
            for i in 0..grid.space_len() {
                let x = grid.x_of(i);
                for iv in 0..grid.velocity_len() {
                    let c = grid.velocity_coords(iv);
                    let on_boundary = (0..grid.dim()).any(|a| c[a] == 0 || c[a] == grid.nv() - 1);
                    if !on_boundary {
                        continue;
                    }
                    let v = grid.v_of(iv);
                    let norm = (0..grid.dim()).map(|a| v[a] * v[a]).sum::<f64>().sqrt();
                    worst = worst.min(self.lagrangian(x, v, t) / norm);
                }
            }
        }
        worst
    }
}

/// The Hamiltonian dual to a [`LagrangianSystem`].
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianView<'a> {
    system: &'a LagrangianSystem,
}

impl HamiltonianView<'_> {
    pub fn h(&self, x: Point, p: Point, t: f64) -> f64 {
        let s = self.system;
        let mut kin = 0.0;
        for a in 0..s.dim {
            let q = p[a] + s.tilt[a];
            kin += 0.5 * q * q;
        }
        kin + s.potential_energy(x, t) - s.shift
    }

    pub fn dh_dp(&self, _x: Point, p: Point, _t: f64) -> Point {
        let s = self.system;
        let mut v = [0.0; 2];
        for a in 0..s.dim {
            v[a] = p[a] + s.tilt[a];
        }
        v
    }
}

/// Phase-space state. Positions are kept in the universal cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: Point,
    pub v: Point,
    pub t: f64,
}

impl LagrangianSystem {
    fn el_rhs(&self, x: Point, v: Point, t: f64) -> (Point, Point) {
        // d/dt dL/dv = dL/dx with dL/dv = v - c, so dv/dt = dL/dx
        (v, self.dl_dx(x, v, t))
    }

    fn rk4(&self, s: State, dt: f64) -> State {
        let d = self.dim;
        let add = |a: Point, b: Point, h: f64| {
            let mut r = a;
            for i in 0..d {
                r[i] += h * b[i];
            }
            r
        };
        let (k1x, k1v) = self.el_rhs(s.x, s.v, s.t);
        let (k2x, k2v) = self.el_rhs(add(s.x, k1x, dt / 2.0), add(s.v, k1v, dt / 2.0), s.t + dt / 2.0);
        let (k3x, k3v) = self.el_rhs(add(s.x, k2x, dt / 2.0), add(s.v, k2v, dt / 2.0), s.t + dt / 2.0);
        let (k4x, k4v) = self.el_rhs(add(s.x, k3x, dt), add(s.v, k3v, dt), s.t + dt);
        let mut x = s.x;
        let mut v = s.v;
        for i in 0..d {
            x[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        State { x, v, t: s.t + dt }
    }

    fn check_box(&self, s: &State, v_max: f64) -> Result<()> {
        let speed = (0..self.dim).map(|a| s.v[a].abs()).fold(0.0, f64::max);
        if speed > v_max {
            return Err(Error::VelocityEscape { speed, v_max, t: s.t });
        }
        Ok(())
    }

    /// One classical fourth-order step of the Euler-Lagrange flow. The returned
    /// position is wrapped to `T^d` and the time to `[0, 1)`.
    pub fn euler_lagrange_step(&self, state: State, dt: f64, v_max: f64) -> Result<State> {
        if !(dt > 0.0) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        let mut s = self.rk4(state, dt);
        self.check_box(&s, v_max)?;
        for a in 0..self.dim {
            s.x[a] = wrap_unit(s.x[a]);
        }
        s.t = wrap_unit(s.t);
        Ok(s)
    }

    /// Flows for `duration` with steps no longer than `max_step`, keeping
    /// positions and time unwrapped. `visit` sees every intermediate state.
    pub fn flow_with(
        &self,
        state: State,
        duration: f64,
        max_step: f64,
        v_max: f64,
        mut visit: impl FnMut(&State, f64),
    ) -> Result<State> {
        let steps = (duration / max_step).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        let mut s = state;
        visit(&s, h);
        for _ in 0..steps {
            s = self.rk4(s, h);
            self.check_box(&s, v_max)?;
            visit(&s, h);
        }
        Ok(s)
    }

    pub fn flow(&self, state: State, duration: f64, max_step: f64, v_max: f64) -> Result<State> {
        self.flow_with(state, duration, max_step, v_max, |_, _| {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_legendre_pair() {
        let s = LagrangianSystem::free(1);
        let (p, h) = s.legendre([0.3, 0.0], [2.0, 0.0], 0.0);
        assert_eq!(p[0], 2.0);
        assert_eq!(h, 2.0);
        let (p, h) = s.legendre([0.7, 0.0], [0.0, 0.0], 0.4);
        assert_eq!((p[0], h), (0.0, 0.0));
    }

    #[test]
    fn pendulum_potential_matches_closed_form() {
        let s = LagrangianSystem::pendulum();
        let v_closed = |x: f64, t: f64| ((TAU * x).cos() - 1.0) * (1.0 + 0.5 * (TAU * t).sin());
        for &(x, t) in &[(0.0, 0.25), (0.3, 0.1), (0.5, 0.75), (0.91, 0.6)] {
            let lv = s.lagrangian([x, 0.0], [0.0, 0.0], t);
            assert!((lv + v_closed(x, t)).abs() < 1e-13);
        }
        let (p, h) = s.legendre([0.0, 0.0], [0.0, 0.0], 0.25);
        assert_eq!(p[0], 0.0);
        assert!(h.abs() < 1e-15);
        assert!((h - s.hamiltonian_view().h([0.0, 0.0], p, 0.25)).abs() < 1e-15);
    }

    #[test]
    fn fenchel_identity_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let systems = [
            LagrangianSystem::free(2),
            LagrangianSystem::pendulum().with_tilt([0.3, 0.0]).with_shift(1.5),
            LagrangianSystem::autonomous_pendulum(),
        ];
        for s in &systems {
            let hv = s.hamiltonian_view();
            for _ in 0..1000 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                let t = rng.gen::<f64>();
                let v = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let (p, h) = s.legendre(x, v, t);
                assert!((hv.h(x, p, t) - h).abs() < 1e-8);
                let back = hv.dh_dp(x, p, t);
                for a in 0..s.dim() {
                    assert!((back[a] - v[a]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn subgradient_inequality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in [LagrangianSystem::free(1), LagrangianSystem::pendulum()] {
            assert!(s.convexity_gap(&mut rng, 1000, 4.0) > 0.0);
        }
    }

    #[test]
    fn superlinearity_on_box_boundary() {
        let g = SpaceTimeGrid::new(1, 16, 4, 9, 4.0).unwrap();
        assert!(LagrangianSystem::pendulum().superlinearity_witness(&g) >= 2.0);
        assert!((LagrangianSystem::free(1).superlinearity_witness(&g) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn free_motion_step() {
        let s = LagrangianSystem::free(1);
        let st = State { x: [0.0, 0.0], v: [0.5, 0.0], t: 0.0 };
        let n = s.euler_lagrange_step(st, 0.1, 4.0).unwrap();
        assert!((n.x[0] - 0.05).abs() < 1e-15);
        assert_eq!(n.v[0], 0.5);
        assert!((n.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn pendulum_fixed_point_is_fixed() {
        let s = LagrangianSystem::pendulum();
        for &t in &[0.0, 0.3, 0.95] {
            let st = State { x: [0.0, 0.0], v: [0.0, 0.0], t };
            let n = s.euler_lagrange_step(st, 0.2, 4.0).unwrap();
            assert_eq!(n.x[0], 0.0);
            assert_eq!(n.v[0], 0.0);
            assert!((n.t - wrap_unit(t + 0.2)).abs() < 1e-15);
        }
    }

    #[test]
    fn velocity_escape_is_reported() {
        let s = LagrangianSystem::free(1);
        let st = State { x: [0.0, 0.0], v: [3.0, 0.0], t: 0.0 };
        let e = s.euler_lagrange_step(st, 0.1, 2.0).unwrap_err();
        assert!(matches!(e, Error::VelocityEscape { .. }));
    }

    #[test]
    fn energy_drift_of_autonomous_pendulum() {
        let s = LagrangianSystem::autonomous_pendulum();
        let hv = s.hamiltonian_view();
        let energy = |st: &State| hv.h(st.x, s.dl_dv(st.x, st.v, st.t), st.t);
        let st = State { x: [0.2, 0.0], v: [1.0, 0.0], t: 0.0 };
        let e0 = energy(&st);
        let end = s.flow(st, 1.0, 1e-3, 4.0).unwrap();
        assert!((energy(&end) - e0).abs() <= 1e-6);
        // fourth order: halving the step shrinks the drift ~16x
        let coarse = s.flow(st, 1.0, 0.04, 4.0).unwrap();
        let fine = s.flow(st, 1.0, 0.02, 4.0).unwrap();
        let ratio = (energy(&coarse) - e0).abs() / (energy(&fine) - e0).abs();
        assert!(ratio > 8.0, "ratio {ratio}");
    }
}
