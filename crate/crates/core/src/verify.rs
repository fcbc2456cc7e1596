//! Estimate harness around the Peierls barrier: `N(eps)`, `A_eps`, the `chi`
//! field, and the curve inequalities they feed.
//!
//! `N(eps)` is measured on a finite probe set of node pairs, so every value in
//! an [`EpsilonTable`] is relative to that set. The barrier of a probe is the
//! minimum of `h_n` over the last quarter of the window `[1, n_hi]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{Node, NodeSet, Point, SpaceTimeGrid, ValueField};
use crate::laxoleinik::{DpSettings, LaxOleinik, WeakKamAnalysis};
use crate::system::{LagrangianSystem, State};

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub source: Node,
    pub target: Node,
    pub h: f64,
    #[serde(skip)]
    h_n: Vec<f64>,
}

impl Probe {
    /// `h_n` for `1 <= n <= n_hi`.
    pub fn actions(&self) -> &[f64] {
        &self.h_n
    }

    /// Whether `h_m - h >= -eps` for every `m` in `[n, n_hi]`.
    fn holds_from(&self, n: usize, eps: f64) -> bool {
        self.h_n[n - 1..].iter().all(|&v| v - self.h >= -eps)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpsilonEntry {
    pub level: u32,
    pub eps: f64,
    pub n_eps: usize,
    pub chi_cap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonTable {
    pub entries: Vec<EpsilonEntry>,
    pub probe_count: usize,
    pub n_hi: usize,
}

/// Where a [`CurveSample`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveSource {
    Orbit,
    RandomSpline,
    DpMinimizer,
    Constant,
}

/// A polygonal curve in the universal cover, `points[i]` at `times[i]`.
#[derive(Debug, Clone, Serialize)]
pub struct CurveSample {
    pub id: usize,
    pub source: CurveSource,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

impl CurveSample {
    pub fn new(id: usize, source: CurveSource, times: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        if times.len() != points.len() || times.len() < 2 {
            return Err(invalid("a curve needs at least two matching time/point samples"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("curve times must be strictly increasing"));
        }
        Ok(Self { id, source, times, points })
    }

    /// A curve sitting at `x` on `[a, b]`.
    pub fn constant(id: usize, x: Point, a: f64, b: f64, segments: usize) -> Result<Self> {
        let segments = segments.max(1);
        let times = (0..=segments).map(|i| a + (b - a) * i as f64 / segments as f64).collect();
        Self::new(id, CurveSource::Constant, times, vec![x; segments + 1])
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Largest segment speed `|dx/dt|_inf`.
    pub fn max_speed(&self, dim: usize) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.times.len() - 1 {
            let dt = self.times[i + 1] - self.times[i];
            for a in 0..dim {
                s = s.max(((self.points[i + 1][a] - self.points[i][a]) / dt).abs());
            }
        }
        s
    }

    /// `self` followed by `other`, which must start where `self` ends.
    pub fn concat(&self, other: &CurveSample) -> Result<CurveSample> {
        if (other.start() - self.end()).abs() > 1e-12 {
            return Err(invalid("curves do not join in time"));
        }
        let mut times = self.times.clone();
        let mut points = self.points.clone();
        times.extend_from_slice(&other.times[1..]);
        points.extend_from_slice(&other.points[1..]);
        CurveSample::new(self.id, self.source, times, points)
    }

    /// Midpoint-secant action `sum dt L(mid, dx/dt, t_mid)` over segments `stride` apart.
    fn action_with_stride(&self, system: &LagrangianSystem, stride: usize) -> f64 {
        let dim = system.dim();
        let last = self.times.len() - 1;
        let mut i = 0;
        let mut sum = 0.0;
        while i < last {
            let j = (i + stride).min(last);
            let dt = self.times[j] - self.times[i];
            let mut mid = [0.0; 2];
            let mut v = [0.0; 2];
            for a in 0..dim {
                mid[a] = 0.5 * (self.points[i][a] + self.points[j][a]);
                v[a] = (self.points[j][a] - self.points[i][a]) / dt;
            }
            sum += dt * system.lagrangian(mid, v, 0.5 * (self.times[i] + self.times[j]));
            i = j;
        }
        sum
    }

    /// Action on the given partition and a Richardson estimate of its
    /// quadrature error from the partition with every other point dropped.
    pub fn action(&self, system: &LagrangianSystem) -> (f64, f64) {
        let fine = self.action_with_stride(system, 1);
        if self.times.len() < 3 {
            return (fine, 0.0);
        }
        let coarse = self.action_with_stride(system, 2);
        (fine, (fine - coarse).abs() / 3.0)
    }

    /// Time spent in `set`, segment by segment, at the node nearest each
    /// segment midpoint.
    pub fn time_in(&self, set: &NodeSet) -> f64 {
        let g = set.grid();
        let mut mu = 0.0;
        for i in 0..self.times.len() - 1 {
            let mut mid = [0.0; 2];
            for a in 0..g.dim() {
                mid[a] = 0.5 * (self.points[i][a] + self.points[i + 1][a]);
            }
            let tm = 0.5 * (self.times[i] + self.times[i + 1]);
            if set.contains(g.nearest_node(mid, tm)) {
                mu += self.times[i + 1] - self.times[i];
            }
        }
        mu
    }

    /// Time integral of a field along the curve (midpoint per segment).
    pub fn integrate_field(&self, f: &ValueField) -> f64 {
        let dim = f.grid().dim();
        let mut sum = 0.0;
        for i in 0..self.times.len() - 1 {
            let mut mid = [0.0; 2];
            for a in 0..dim {
                mid[a] = 0.5 * (self.points[i][a] + self.points[i + 1][a]);
            }
            let tm = 0.5 * (self.times[i] + self.times[i + 1]);
            sum += (self.times[i + 1] - self.times[i]) * f.interpolate_st(mid, tm);
        }
        sum
    }
}

/// Periodic Catmull-Rom curve through `knots` random offsets over
/// `periods` periods starting at `t0`, plus a random integer winding; the
/// displacement is scaled down until the speed stays below `v_cap`.
pub fn random_spline_curve(
    id: usize,
    rng: &mut ChaCha8Rng,
    dim: usize,
    t0: f64,
    periods: usize,
    knots: usize,
    substeps_per_period: usize,
    v_cap: f64,
) -> Result<CurveSample> {
    if knots < 3 || periods == 0 || substeps_per_period == 0 {
        return Err(invalid("spline curve needs >= 3 knots, >= 1 period and >= 1 substep"));
    }
    let duration = periods as f64;
    let mut start = [0.0; 2];
    let mut ctrl = vec![[0.0; 2]; knots];
    let mut winding = [0.0; 2];
    for a in 0..dim {
        start[a] = rng.gen::<f64>();
        for c in ctrl.iter_mut() {
            c[a] = rng.gen_range(-0.5..0.5);
        }
        winding[a] = rng.gen_range(-1i32..=1) as f64;
    }
    let n = periods * substeps_per_period;
    let eval = |tau: f64, scale: f64| -> (Point, Point) {
        let u = tau / duration * knots as f64;
        let i = (u.floor() as usize).min(knots - 1);
        let s = u - i as f64;
        let at = |j: i64| ctrl[j.rem_euclid(knots as i64) as usize];
        let (p0, p1, p2, p3) = (at(i as i64 - 1), at(i as i64), at(i as i64 + 1), at(i as i64 + 2));
        let mut x = [0.0; 2];
        let mut v = [0.0; 2];
        for a in 0..dim {
            let c1 = -p0[a] + p2[a];
            let c2 = 2.0 * p0[a] - 5.0 * p1[a] + 4.0 * p2[a] - p3[a];
            let c3 = -p0[a] + 3.0 * p1[a] - 3.0 * p2[a] + p3[a];
            // closes periodically, so subtract the value at tau = 0
            let val = 0.5 * (2.0 * p1[a] + c1 * s + c2 * s * s + c3 * s * s * s);
            let ds = 0.5 * (c1 + 2.0 * c2 * s + 3.0 * c3 * s * s) * knots as f64 / duration;
            x[a] = start[a] + scale * (val - ctrl[0][a]) + winding[a] * tau / duration;
            v[a] = scale * ds + winding[a] / duration;
        }
        (x, v)
    };
    let mut scale = 1.0;
    for _ in 0..60 {
        let speed = (0..=4 * n)
            .map(|i| eval(duration * i as f64 / (4 * n) as f64, scale).1)
            .map(|v| (0..dim).map(|a| v[a].abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if speed <= v_cap {
            break;
        }
        scale *= 0.8;
    }
    let times: Vec<f64> = (0..=n).map(|i| t0 + duration * i as f64 / n as f64).collect();
    let points: Vec<Point> = (0..=n).map(|i| eval(duration * i as f64 / n as f64, scale).0).collect();
    let curve = CurveSample::new(id, CurveSource::RandomSpline, times, points)?;
    if curve.max_speed(dim) > v_cap + 1e-9 {
        return Err(invalid("could not bring the spline below the speed cap"));
    }
    Ok(curve)
}

/// Euler-Lagrange orbit segment sampled every `1 / substeps_per_period`.
pub fn orbit_curve(
    id: usize,
    system: &LagrangianSystem,
    start: State,
    periods: usize,
    substeps_per_period: usize,
    v_max: f64,
) -> Result<CurveSample> {
    let n = periods * substeps_per_period;
    let h = 1.0 / substeps_per_period as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut points = Vec::with_capacity(n + 1);
    times.push(start.t);
    points.push(start.x);
    let mut s = start;
    for _ in 0..n {
        s = system.flow(s, h, h / 8.0, v_max)?;
        times.push(s.t);
        points.push(s.x);
    }
    CurveSample::new(id, CurveSource::Orbit, times, points)
}

/// The grid path realising `finite_action(src, dst, n)`.
pub fn dp_minimizer_curve(id: usize, engine: &LaxOleinik, src: Node, dst: Node, n: usize) -> Result<CurveSample> {
    let (points, times) = engine.minimizing_path(src, dst, n)?;
    CurveSample::new(id, CurveSource::DpMinimizer, times, points)
}

/// One Lemma-style check on one curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveReport {
    pub curve_id: usize,
    pub source: CurveSource,
    pub eps: f64,
    pub n_eps: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Time spent in `A_eps` (zero for the chi inequality).
    pub mu: f64,
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// The harness: an analysed system plus its probe barriers.
#[derive(Debug, Clone)]
pub struct VerifyHarness {
    engine: LaxOleinik,
    analysis: WeakKamAnalysis,
    settings: DpSettings,
    probes: Vec<Probe>,
    seed: u64,
    dom_slack: f64,
    tol_floor: f64,
}

impl VerifyHarness {
    /// Analyse `system` and measure barriers on `random_pairs` seeded random
    /// pairs plus the diagonal of every Aubry node.
    pub fn new(
        system: &LagrangianSystem,
        grid: &SpaceTimeGrid,
        settings: &DpSettings,
        random_pairs: usize,
        seed: u64,
    ) -> Result<Self> {
        let engine = LaxOleinik::new(system, grid)?;
        let analysis = engine.analyze(settings)?;
        Self::from_analysis(engine, analysis, settings, random_pairs, seed)
    }

    pub fn from_analysis(
        engine: LaxOleinik,
        analysis: WeakKamAnalysis,
        settings: &DpSettings,
        random_pairs: usize,
        seed: u64,
    ) -> Result<Self> {
        settings.validate()?;
        let g = engine.grid().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nc = g.node_count();
        let mut pairs: Vec<(Node, Node)> = (0..random_pairs)
            .map(|_| (g.node_of(rng.gen_range(0..nc)), g.node_of(rng.gen_range(0..nc))))
            .collect();
        pairs.extend(analysis.aubry.iter().map(|n| (n, n)));
        let alpha = analysis.alpha();
        let n_hi = settings.n_hi;
        let tail = n_hi - n_hi / 4;
        let probes = pairs
            .par_iter()
            .map(|&(s, t)| {
                let acts = engine.source_actions(s, alpha, n_hi);
                let ti = g.node_index(t);
                let h_n: Vec<f64> = (1..=n_hi).map(|n| acts.h_n(ti, n)).collect();
                let h = h_n[tail - 1..].iter().copied().fold(f64::INFINITY, f64::min);
                Probe { source: s, target: t, h, h_n }
            })
            .collect();
        let dom_slack = engine.domination_defect(&analysis.u_plus, alpha).max(0.0);
        Ok(Self {
            engine,
            analysis,
            settings: settings.clone(),
            probes,
            seed,
            dom_slack,
            tol_floor: 1e-12,
        })
    }

    /// Constant added to every curve tolerance (default `1e-12`).
    pub fn with_tolerance_floor(mut self, floor: f64) -> Self {
        self.tol_floor = floor;
        self
    }

    pub fn engine(&self) -> &LaxOleinik {
        &self.engine
    }

    pub fn analysis(&self) -> &WeakKamAnalysis {
        &self.analysis
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Largest one-step domination violation of `u_+` on the grid.
    pub fn domination_slack(&self) -> f64 {
        self.dom_slack
    }

    /// Whether `h_m - h >= -eps` holds on every probe for all `m >= n`.
    pub fn condition_holds(&self, n: usize, eps: f64) -> bool {
        self.probes.iter().all(|p| p.holds_from(n, eps))
    }

    /// Smallest `n` from which every probe satisfies `h_m >= h - eps`.
    ///
    /// The answer is `WindowExhausted` when it falls inside the tail window
    /// used to measure `h` itself.
    pub fn n_epsilon(&self, eps: f64) -> Result<usize> {
        if !(eps > 0.0) {
            return Err(invalid("eps must be > 0"));
        }
        let n_hi = self.settings.n_hi;
        let tail = n_hi - n_hi / 4;
        let mut n = n_hi;
        while n > 1 && self.condition_holds(n - 1, eps) {
            n -= 1;
        }
        if n >= tail {
            return Err(Error::WindowExhausted { eps, n_hi });
        }
        Ok(n)
    }

    /// `{ u_- - u_+ >= 2 eps }`.
    pub fn a_epsilon(&self, eps: f64) -> Result<NodeSet> {
        if !(eps > 0.0) {
            return Err(invalid("eps must be > 0"));
        }
        let gap = self.analysis.gap();
        Ok(NodeSet::from_predicate(self.engine.grid(), |n| gap.get(n) >= 2.0 * eps))
    }

    /// `N(2^-n)` and `chi` caps for `n = 0..=n_max`.
    pub fn epsilon_table(&self, n_max: u32) -> Result<EpsilonTable> {
        let entries = (0..=n_max)
            .map(|level| {
                let eps = 0.5f64.powi(level as i32);
                let n_eps = self.n_epsilon(eps)?;
                Ok(EpsilonEntry { level, eps, n_eps, chi_cap: eps / n_eps as f64 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EpsilonTable { entries, probe_count: self.probes.len(), n_hi: self.settings.n_hi })
    }

    /// Node-wise `sup_n cap_n 1[A_{2^-n}]`.
    pub fn chi_field(&self, table: &EpsilonTable) -> Result<ValueField> {
        let mut chi = ValueField::zeros(self.engine.grid());
        for e in &table.entries {
            let a = self.a_epsilon(e.eps)?;
            for n in a.iter() {
                let v = chi.get(n).max(e.chi_cap);
                chi.set(n, v);
            }
        }
        Ok(chi)
    }

    fn u_plus_increment(&self, curve: &CurveSample) -> f64 {
        let up = &self.analysis.u_plus;
        let last = curve.points.len() - 1;
        up.interpolate_st(curve.points[last], curve.end()) - up.interpolate_st(curve.points[0], curve.start())
    }

    /// Tolerance: five quadrature error estimates plus the grid domination
    /// slack of `u_+` accumulated over the curve's time steps.
    fn tolerance(&self, curve: &CurveSample, quad_err: f64) -> f64 {
        let steps = ((curve.end() - curve.start()) / self.engine.grid().dt()).ceil();
        5.0 * quad_err + steps * self.dom_slack + self.tol_floor
    }

    /// `int L >= u_+(end) - u_+(start) + eps floor(mu / N(eps)) - tol`.
    pub fn check_lemma_formule(&self, curve: &CurveSample, eps: f64) -> Result<CurveReport> {
        let n_eps = self.n_epsilon(eps)?;
        let a = self.a_epsilon(eps)?;
        Ok(self.lemma_with(curve, eps, n_eps, &a))
    }

    /// [`Self::check_lemma_formule`] with `N(eps)` and `A_eps` precomputed.
    pub fn lemma_with(&self, curve: &CurveSample, eps: f64, n_eps: usize, a_eps: &NodeSet) -> CurveReport {
        let (lhs, quad) = curve.action(self.engine.system());
        let alpha = self.analysis.alpha();
        let lhs = lhs + alpha * (curve.end() - curve.start());
        let mu = curve.time_in(a_eps);
        let rhs = self.u_plus_increment(curve) + eps * (mu / n_eps as f64).floor();
        let tol = self.tolerance(curve, quad);
        CurveReport {
            curve_id: curve.id,
            source: curve.source,
            eps,
            n_eps,
            lhs,
            rhs,
            mu,
            margin: lhs - rhs,
            tol,
            pass: lhs >= rhs - tol,
        }
    }

    /// `int L >= u_+(end) - u_+(start) + int chi - 1 - tol`.
    pub fn check_chi_inequality(&self, curve: &CurveSample, chi: &ValueField) -> CurveReport {
        let (lhs, quad) = curve.action(self.engine.system());
        let lhs = lhs + self.analysis.alpha() * (curve.end() - curve.start());
        let rhs = self.u_plus_increment(curve) + curve.integrate_field(chi) - 1.0;
        let tol = self.tolerance(curve, quad);
        CurveReport {
            curve_id: curve.id,
            source: curve.source,
            eps: 0.0,
            n_eps: 0,
            lhs,
            rhs,
            mu: 0.0,
            margin: lhs - rhs,
            tol,
            pass: lhs >= rhs - tol,
        }
    }

    /// Seeded random spline curves of `periods` periods starting at grid times.
    pub fn random_curves(&self, count: usize, periods: usize, seed: u64) -> Result<Vec<CurveSample>> {
        let g = self.engine.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|id| {
                let t0 = g.t_of(rng.gen_range(0..g.nt()));
                let knots = rng.gen_range(3..=8);
                random_spline_curve(id, &mut rng, g.dim(), t0, periods, knots, 8 * g.nt(), 0.9 * g.v_max())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> DpSettings {
        DpSettings { n_lo: 4, n_hi: 16, ..DpSettings::default() }
    }

    fn pendulum() -> VerifyHarness {
        let g = SpaceTimeGrid::new(1, 32, 8, 33, 4.0).unwrap();
        VerifyHarness::new(&LagrangianSystem::pendulum(), &g, &settings(), 24, 7).unwrap()
    }

    #[test]
    fn flat_sets_are_empty_and_n_is_small() {
        let g = SpaceTimeGrid::new(1, 32, 8, 33, 4.0).unwrap();
        let h = VerifyHarness::new(&LagrangianSystem::free(1), &g, &settings(), 16, 1).unwrap();
        for level in 0..6 {
            let eps = 0.5f64.powi(level);
            assert!(h.a_epsilon(eps).unwrap().is_empty());
            assert!(h.n_epsilon(eps).unwrap() <= 4);
        }
        let table = h.epsilon_table(6).unwrap();
        assert_eq!(h.chi_field(&table).unwrap().max(), 0.0);
        assert!(h.a_epsilon(0.0).is_err());
    }

    #[test]
    fn huge_eps_gives_one() {
        assert_eq!(pendulum().n_epsilon(10.0).unwrap(), 1);
    }

    #[test]
    fn n_epsilon_is_minimal_on_the_probe_set() {
        let h = pendulum();
        for level in 0..7 {
            let eps = 0.5f64.powi(level);
            let n = h.n_epsilon(eps).unwrap();
            assert!(h.condition_holds(n, eps));
            for m in n..=settings().n_hi {
                assert!(h.condition_holds(m, eps));
            }
            if n > 1 {
                assert!(!h.condition_holds(n - 1, eps));
            }
        }
    }

    #[test]
    fn a_epsilon_is_monotone_and_avoids_aubry() {
        let h = pendulum();
        let mut prev = h.a_epsilon(1.0 / 64.0).unwrap();
        assert!(!prev.intersects(&h.analysis().aubry));
        for level in (0..6).rev() {
            let a = h.a_epsilon(0.5f64.powi(level)).unwrap();
            assert!(a.is_subset(&prev));
            prev = a;
        }
    }

    #[test]
    fn chi_vanishes_on_aubry_and_shrinks_with_fewer_levels() {
        let h = pendulum();
        let full = h.epsilon_table(6).unwrap();
        let chi = h.chi_field(&full).unwrap();
        for n in h.analysis().aubry.iter() {
            assert_eq!(chi.get(n), 0.0);
        }
        assert!(chi.max() > 0.0);
        let fewer = EpsilonTable { entries: full.entries[..6].to_vec(), ..full.clone() };
        let chi5 = h.chi_field(&fewer).unwrap();
        assert!(chi5.data().iter().zip(chi.data()).all(|(a, b)| a <= b));
    }

    #[test]
    fn constant_aubry_curve_passes() {
        let h = pendulum();
        let node = h.analysis().aubry.iter().next().unwrap();
        let g = h.engine().grid();
        let c = CurveSample::constant(0, g.x_of(node.x), g.t_of(node.t), g.t_of(node.t) + 2.0, 32).unwrap();
        let r = h.check_lemma_formule(&c, 0.125).unwrap();
        assert_eq!(r.mu, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn random_and_minimizing_curves_pass() {
        let h = pendulum();
        let eps = 0.125;
        let n_eps = h.n_epsilon(eps).unwrap();
        let a = h.a_epsilon(eps).unwrap();
        let chi = h.chi_field(&h.epsilon_table(6).unwrap()).unwrap();
        for c in h.random_curves(20, 2, 3).unwrap() {
            assert!(c.max_speed(1) <= 0.9 * 4.0 + 1e-9);
            let r = h.lemma_with(&c, eps, n_eps, &a);
            assert!(r.pass, "{r:?}");
            assert!(h.check_chi_inequality(&c, &chi).pass);
        }
        let g = h.engine().grid().clone();
        for (s, t) in [(0usize, 16usize), (8, 24), (16, 16)] {
            let c = dp_minimizer_curve(0, h.engine(), Node { x: s, t: 0 }, Node { x: t, t: 3 }, 2).unwrap();
            let r = h.lemma_with(&c, eps, n_eps, &a);
            assert!(r.pass, "{r:?}");
            let direct = h.engine().finite_action(Node { x: s, t: 0 }, Node { x: t, t: 3 }, 2, h.analysis().alpha()).unwrap();
            assert!((r.lhs - direct).abs() < 1e-9 * (1.0 + direct.abs()), "{} vs {direct}", r.lhs);
            assert!(c.max_speed(1) <= g.v_max() + 1e-9);
        }
    }

    #[test]
    fn orbit_curves_are_sampled_from_the_flow() {
        let sys = LagrangianSystem::pendulum();
        let c = orbit_curve(0, &sys, State { x: [0.3, 0.0], v: [0.2, 0.0], t: 0.0 }, 2, 32, 4.0).unwrap();
        assert_eq!(c.times.len(), 65);
        assert!((c.end() - 2.0).abs() < 1e-12);
        let h = pendulum();
        let r = h.check_lemma_formule(&c, 0.125).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn mu_is_additive_under_concatenation() {
        let h = pendulum();
        let a = h.a_epsilon(0.125).unwrap();
        let curves = h.random_curves(6, 1, 11).unwrap();
        for w in curves.windows(2) {
            let first = &w[0];
            let shift = first.end() - w[1].start();
            let offset: Vec<Point> = {
                let d = [first.points.last().unwrap()[0] - w[1].points[0][0], 0.0];
                w[1].points.iter().map(|p| [p[0] + d[0], p[1]]).collect()
            };
            let second = CurveSample::new(1, w[1].source, w[1].times.iter().map(|t| t + shift).collect(), offset).unwrap();
            let joined = first.concat(&second).unwrap();
            assert!((joined.time_in(&a) - first.time_in(&a) - second.time_in(&a)).abs() < 1e-12);
        }
    }
}
