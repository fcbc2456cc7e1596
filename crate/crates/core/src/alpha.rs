//! The alpha-function over cohomology: both evaluation routes, face probes
//! along segments, and the two witness constructions that connect faces with
//! forms vanishing on the Aubry set.
//!
//! Face work uses alpha normalised so that `alpha(0) = 0`, route by route.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::form::{centered_differential, OneForm};
use crate::grid::{NodeSet, Point, SpaceTimeGrid, ValueField};
use crate::laxoleinik::{DpSettings, LaxOleinik};
use crate::measures::{lp_alpha, TestFunctionBasis};
use crate::simplex::SimplexOptions;
use crate::system::LagrangianSystem;
use crate::verify::VerifyHarness;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaSettings {
    /// Spatial wave-number bound of the LP test functions.
    pub k_max: i32,
    /// Temporal wave-number bound of the LP test functions.
    pub m_max: i32,
    pub tol_cross: f64,
    pub tol_face: f64,
    pub tol_g0: f64,
}

impl Default for AlphaSettings {
    fn default() -> Self {
        Self { k_max: 2, m_max: 2, tol_cross: 1e-2, tol_face: 3e-2, tol_g0: 5e-2 }
    }
}

impl AlphaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 || self.m_max < 0 {
            return Err(invalid("need k_max >= 1 and m_max >= 0"));
        }
        for (name, v) in [("tol_cross", self.tol_cross), ("tol_face", self.tol_face), ("tol_g0", self.tol_g0)] {
            if !(v > 0.0) {
                return Err(invalid(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// `alpha(c)` by value iteration on `L - c.v` and by the closed-measure LP
/// with `omega = c.dx`.
#[derive(Debug, Clone, Serialize)]
pub struct AlphaSample {
    pub c: Point,
    pub tau: f64,
    pub alpha_lp: f64,
    pub alpha_vi: f64,
    pub consistent: bool,
    pub lp_iterations: usize,
    pub duality_gap: f64,
    pub support_size: usize,
    #[serde(skip)]
    pub minimizer_support: NodeSet,
}

impl AlphaSample {
    pub fn mean(&self) -> f64 {
        0.5 * (self.alpha_lp + self.alpha_vi)
    }
}

/// One row of a face probe: `alpha(+delta e)` and `alpha(-delta e)`, normalised.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub delta: f64,
    pub plus_lp: f64,
    pub plus_vi: f64,
    pub minus_lp: f64,
    pub minus_vi: f64,
    pub certified: bool,
}

impl ProbeRow {
    pub fn sum_lp(&self) -> f64 {
        self.plus_lp + self.minus_lp
    }
    pub fn sum_vi(&self) -> f64 {
        self.plus_vi + self.minus_vi
    }
    fn plus(&self) -> f64 {
        0.5 * (self.plus_lp + self.plus_vi)
    }
    fn minus(&self) -> f64 {
        0.5 * (self.minus_lp + self.minus_vi)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceProbe {
    pub direction: Point,
    pub rows: Vec<ProbeRow>,
    /// Largest delta such that it and every smaller probed delta certify.
    pub delta_star: f64,
    /// `-(alpha(d e) - alpha(-d e)) / 2d` at `delta_star` (0 if none certify).
    pub slope_tau: f64,
    /// Whether `alpha(+-d e) = -+ tau d` within `tol_face` on every certified row.
    pub slope_consistent: bool,
    /// Smallest `alpha(d e) + alpha(-d e)` seen; convexity keeps it `>= -tol_face`.
    pub min_sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceDirection {
    pub e: Point,
    pub delta_star: f64,
    pub slope_tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FaceReport {
    pub center: Point,
    pub directions: Vec<FaceDirection>,
    /// Dimension of the span of the certified directions.
    pub vect_dim: usize,
}

/// Unit directions over a half circle (`e` and `-e` probe the same segment).
pub fn direction_fan(dim: usize, count: usize) -> Vec<Point> {
    if dim == 1 {
        return vec![[1.0, 0.0]];
    }
    (0..count.max(1))
        .map(|k| {
            let th = std::f64::consts::PI * k as f64 / count.max(1) as f64;
            [th.cos(), th.sin()]
        })
        .collect()
}

fn span_dim(dim: usize, dirs: &[Point]) -> usize {
    let mut first: Option<Point> = None;
    for d in dirs {
        match first {
            None => first = Some(*d),
            Some(f) if dim == 2 && (f[0] * d[1] - f[1] * d[0]).abs() > 1e-9 => return 2,
            _ => {}
        }
    }
    usize::from(first.is_some())
}

#[derive(Debug, Clone, Serialize)]
pub struct E0Report {
    pub class: (Point, f64),
    pub support_nodes: usize,
    pub eps: f64,
    pub n_eps: usize,
    /// `max |omega(v, 1)|` over the support and the velocity box.
    pub box_max: f64,
    pub delta: f64,
    pub plus: Option<AlphaSample>,
    pub minus: Option<AlphaSample>,
    /// LP on the form `+-delta omega` itself, normalised.
    pub direct_plus: f64,
    pub direct_minus: f64,
    /// Worst deviation from `alpha(+-delta c) = -+ delta tau` over all routes.
    pub affinity_defect: f64,
    pub certified: bool,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct G0Witness {
    #[serde(skip)]
    pub form: OneForm,
    pub expected_class: (Point, f64),
    pub class: (Point, f64),
    pub class_error: f64,
    pub residual: f64,
    pub pass: bool,
}

/// Alpha evaluations for one system on one grid.
#[derive(Debug, Clone)]
pub struct AlphaExplorer {
    system: LagrangianSystem,
    grid: SpaceTimeGrid,
    basis: TestFunctionBasis,
    dp: DpSettings,
    simplex: SimplexOptions,
    settings: AlphaSettings,
    origin: AlphaSample,
}

impl AlphaExplorer {
    pub fn new(
        system: &LagrangianSystem,
        grid: &SpaceTimeGrid,
        dp: &DpSettings,
        simplex: &SimplexOptions,
        settings: &AlphaSettings,
    ) -> Result<Self> {
        settings.validate()?;
        dp.validate()?;
        let basis = TestFunctionBasis::new(grid.dim(), settings.k_max, settings.m_max)?;
        let mut ex = Self {
            system: system.clone(),
            grid: grid.clone(),
            basis,
            dp: dp.clone(),
            simplex: simplex.clone(),
            settings: settings.clone(),
            origin: placeholder(grid),
        };
        ex.origin = ex.alpha_eval([0.0; 2])?;
        Ok(ex)
    }

    pub fn system(&self) -> &LagrangianSystem {
        &self.system
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn settings(&self) -> &AlphaSettings {
        &self.settings
    }

    /// `alpha(0)` by both routes, the normalisation constant for face work.
    pub fn origin(&self) -> &AlphaSample {
        &self.origin
    }

    pub fn alpha_eval(&self, c: Point) -> Result<AlphaSample> {
        let dim = self.grid.dim();
        let mut c = c;
        if dim == 1 {
            c[1] = 0.0;
        }
        let omega = OneForm::constant(dim, c, 0.0);
        let (alpha_lp, out) = lp_alpha(&self.system, &omega, &self.basis, &self.grid, &self.simplex)?;
        let engine = LaxOleinik::new(&self.system.with_tilt(c), &self.grid)?;
        let alpha_vi = engine.critical_value_vi(&self.dp)?.alpha;
        let support = out.mu.space_time_support(1e-9);
        Ok(AlphaSample {
            c,
            tau: 0.0,
            alpha_lp,
            alpha_vi,
            consistent: (alpha_lp - alpha_vi).abs() <= self.settings.tol_cross,
            lp_iterations: out.solution.iterations,
            duality_gap: out.solution.duality_gap,
            support_size: support.len(),
            minimizer_support: support,
        })
    }

    /// Independent evaluations, run concurrently.
    pub fn alpha_many(&self, cs: &[Point]) -> Result<Vec<AlphaSample>> {
        cs.par_iter().map(|&c| self.alpha_eval(c)).collect()
    }

    /// `(lp, vi)` minus the same route's `alpha(0)`.
    pub fn normalised(&self, s: &AlphaSample) -> (f64, f64) {
        (s.alpha_lp - self.origin.alpha_lp, s.alpha_vi - self.origin.alpha_vi)
    }

    /// Segment probe through the origin along `e`. A delta certifies when
    /// `|alpha(de) + alpha(-de)| <= tol_face` on both routes.
    pub fn face_probe(&self, e: Point, deltas: &[f64]) -> Result<FaceProbe> {
        let mut deltas: Vec<f64> = deltas.to_vec();
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("probe deltas must be > 0"));
        }
        deltas.sort_by(f64::total_cmp);
        let points: Vec<Point> = deltas
            .iter()
            .flat_map(|&d| [[d * e[0], d * e[1]], [-d * e[0], -d * e[1]]])
            .collect();
        let samples = self.alpha_many(&points)?;
        let tol = self.settings.tol_face;
        let rows: Vec<ProbeRow> = deltas
            .iter()
            .enumerate()
            .map(|(i, &delta)| {
                let (plus_lp, plus_vi) = self.normalised(&samples[2 * i]);
                let (minus_lp, minus_vi) = self.normalised(&samples[2 * i + 1]);
                let mut row = ProbeRow { delta, plus_lp, plus_vi, minus_lp, minus_vi, certified: false };
                row.certified = row.sum_lp().abs() <= tol && row.sum_vi().abs() <= tol;
                row
            })
            .collect();
        let certified = rows.iter().take_while(|r| r.certified).count();
        let (delta_star, slope_tau) = match certified {
            0 => (0.0, 0.0),
            n => {
                let r = &rows[n - 1];
                (r.delta, -(r.plus() - r.minus()) / (2.0 * r.delta))
            }
        };
        let slope_consistent = rows[..certified].iter().all(|r| {
            let d = r.delta;
            [r.plus_lp, r.plus_vi].iter().all(|a| (a + slope_tau * d).abs() <= tol)
                && [r.minus_lp, r.minus_vi].iter().all(|a| (a - slope_tau * d).abs() <= tol)
        });
        let min_sum = rows
            .iter()
            .flat_map(|r| [r.sum_lp(), r.sum_vi()])
            .fold(f64::INFINITY, f64::min);
        Ok(FaceProbe { direction: e, rows, delta_star, slope_tau, slope_consistent, min_sum })
    }

    /// Probes every direction and reduces to a [`FaceReport`].
    pub fn face_report(&self, directions: &[Point], deltas: &[f64]) -> Result<(FaceReport, Vec<FaceProbe>)> {
        let probes = directions
            .iter()
            .map(|&e| self.face_probe(e, deltas))
            .collect::<Result<Vec<_>>>()?;
        let certified: Vec<Point> = probes.iter().filter(|p| p.delta_star > 0.0).map(|p| p.direction).collect();
        let report = FaceReport {
            center: [0.0; 2],
            directions: probes
                .iter()
                .map(|p| FaceDirection { e: p.direction, delta_star: p.delta_star, slope_tau: p.slope_tau })
                .collect(),
            vect_dim: span_dim(self.grid.dim(), &certified),
        };
        Ok((report, probes))
    }

    /// For `omega` supported away from the Aubry estimate: picks the largest
    /// `eps = 2^-n` (`n <= n_max`) whose `A_eps` covers the support, sets
    /// `delta = (eps / N(eps)) / max |omega(v,1)|`, and checks that
    /// `alpha(+-delta c) = -+ delta tau` on both routes and on the LP posed
    /// with `+-delta omega` directly.
    pub fn e0_witness_test(&self, omega: &OneForm, aubry: &NodeSet, harness: &VerifyHarness, n_max: u32) -> Result<E0Report> {
        let g = &self.grid;
        let support = omega.support(g);
        let overlap = support.intersection_len(&aubry.dilate(1));
        if overlap > 0 {
            return Err(Error::SupportOverlap { nodes: overlap });
        }
        let class = omega.cohomology();
        let mut report = E0Report {
            class,
            support_nodes: support.len(),
            eps: 0.0,
            n_eps: 0,
            box_max: 0.0,
            delta: 0.0,
            plus: None,
            minus: None,
            direct_plus: 0.0,
            direct_minus: 0.0,
            affinity_defect: 0.0,
            certified: false,
            note: String::new(),
        };
        if support.is_empty() {
            report.delta = 1.0;
            report.certified = true;
            report.note = "zero form".into();
            return Ok(report);
        }
        let mut level = None;
        for n in 0..=n_max {
            let eps = 0.5f64.powi(n as i32);
            if support.is_subset(&harness.a_epsilon(eps)?) {
                level = Some(eps);
                break;
            }
        }
        let Some(eps) = level else {
            report.note = format!("support not inside A_eps for eps >= 2^-{n_max}");
            return Ok(report);
        };
        let n_eps = harness.n_epsilon(eps)?;
        let box_max = support
            .iter()
            .map(|n| omega.box_norm(g.x_of(n.x), g.t_of(n.t), g.v_max()))
            .fold(0.0, f64::max);
        let delta = eps / n_eps as f64 / box_max;
        let (c, tau) = class;
        let both = self.alpha_many(&[[delta * c[0], delta * c[1]], [-delta * c[0], -delta * c[1]]])?;
        let basis = &self.basis;
        let direct: Vec<f64> = [delta, -delta]
            .par_iter()
            .map(|&s| lp_alpha(&self.system, &omega.scaled(s), basis, g, &self.simplex).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let direct_plus = direct[0] - self.origin.alpha_lp;
        let direct_minus = direct[1] - self.origin.alpha_lp;
        let (pl, pv) = self.normalised(&both[0]);
        let (ml, mv) = self.normalised(&both[1]);
        let defect = [pl, pv, direct_plus]
            .iter()
            .map(|a| (a + delta * tau).abs())
            .chain([ml, mv, direct_minus].iter().map(|a| (a - delta * tau).abs()))
            .fold(0.0, f64::max);
        report.eps = eps;
        report.n_eps = n_eps;
        report.box_max = box_max;
        report.delta = delta;
        report.plus = Some(both[0].clone());
        report.minus = Some(both[1].clone());
        report.direct_plus = direct_plus;
        report.direct_minus = direct_minus;
        report.affinity_defect = defect;
        report.certified = defect <= self.settings.tol_face;
        Ok(report)
    }
}

fn placeholder(grid: &SpaceTimeGrid) -> AlphaSample {
    AlphaSample {
        c: [0.0; 2],
        tau: 0.0,
        alpha_lp: 0.0,
        alpha_vi: 0.0,
        consistent: true,
        lp_iterations: 0,
        duality_gap: 0.0,
        support_size: 0,
        minimizer_support: NodeSet::empty(grid),
    }
}

/// `(c.dx + (alpha0 - alpha_c) dt) - d(u0 - u1)` with centered grid
/// differences; the residual is its largest box norm over `aubry`.
///
/// `u0` and `u1` are critical subsolutions of `L` and `L - c.dx`. The residual
/// bound stands in for exact vanishing on the Aubry set.
pub fn g0_witness_build(
    c: Point,
    alpha0: f64,
    alpha_c: f64,
    u0: &ValueField,
    u1: &ValueField,
    aubry: &NodeSet,
    tol_g0: f64,
) -> Result<G0Witness> {
    let g = u0.grid().clone();
    if u1.grid() != &g || aubry.grid() != &g {
        return Err(invalid("fields and Aubry estimate live on different grids"));
    }
    let diff = u1.zip_with(u0, |a, b| a - b);
    let (dx, dt) = centered_differential(&diff);
    let expected = (c, alpha0 - alpha_c);
    let form = OneForm::constant(g.dim(), c, alpha0 - alpha_c).plus(OneForm::sampled(&g, dx, dt)?);
    let residual = aubry
        .iter()
        .map(|n| form.box_norm(g.x_of(n.x), g.t_of(n.t), g.v_max()))
        .fold(0.0, f64::max);
    let class = form.cohomology();
    let class_error = (0..g.dim())
        .map(|a| (class.0[a] - expected.0[a]).abs())
        .fold((class.1 - expected.1).abs(), f64::max);
    Ok(G0Witness {
        form,
        expected_class: expected,
        class,
        class_error,
        residual,
        pass: residual <= tol_g0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 32, 8, 33, 4.0).unwrap()
    }

    fn dp() -> DpSettings {
        DpSettings { n_lo: 4, n_hi: 16, ..DpSettings::default() }
    }

    fn explorer(sys: &LagrangianSystem) -> AlphaExplorer {
        AlphaExplorer::new(sys, &small_grid(), &dp(), &SimplexOptions::default(), &AlphaSettings::default()).unwrap()
    }

    #[test]
    fn flat_values_match_half_c_squared_on_lattice_velocities() {
        // velocity lattice of the DP is hx / dt = 0.25 on this grid
        let ex = explorer(&LagrangianSystem::free(1));
        for c in [0.0, 0.25, 0.5, 1.0] {
            let s = ex.alpha_eval([c, 0.0]).unwrap();
            assert!((s.alpha_vi - 0.5 * c * c).abs() < 1e-9, "{s:?}");
            assert!((s.alpha_lp - 0.5 * c * c).abs() < 1e-9, "{s:?}");
            assert!(s.consistent);
        }
    }

    #[test]
    fn flat_has_no_face_and_pendulum_has_one() {
        let flat = explorer(&LagrangianSystem::free(1));
        let p = flat.face_probe([1.0, 0.0], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(p.delta_star, 0.0);
        assert!(p.min_sum >= -flat.settings().tol_face);
        let pend = explorer(&LagrangianSystem::pendulum());
        let p = pend.face_probe([1.0, 0.0], &[0.1, 0.3, 0.5]).unwrap();
        assert!(p.delta_star >= 0.5, "{p:?}");
        assert!(p.slope_consistent);
        assert!(p.slope_tau.abs() < 1e-6);
    }

    #[test]
    fn convexity_on_random_triples() {
        let ex = explorer(&LagrangianSystem::pendulum().with_tilt([0.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cs = Vec::new();
        for _ in 0..8 {
            let c1: f64 = rng.gen_range(-2.0..2.0);
            let c2: f64 = rng.gen_range(-2.0..2.0);
            let l: f64 = rng.gen_range(0.0..1.0);
            cs.push((c1, c2, l));
        }
        let pts: Vec<Point> = cs
            .iter()
            .flat_map(|&(a, b, l)| [[a, 0.0], [b, 0.0], [l * a + (1.0 - l) * b, 0.0]])
            .collect();
        let s = ex.alpha_many(&pts).unwrap();
        for (i, &(_, _, l)) in cs.iter().enumerate() {
            for f in [|s: &AlphaSample| s.alpha_lp, |s: &AlphaSample| s.alpha_vi] {
                let (a, b, m) = (f(&s[3 * i]), f(&s[3 * i + 1]), f(&s[3 * i + 2]));
                assert!(m <= l * a + (1.0 - l) * b + ex.settings().tol_face);
            }
        }
    }

    #[test]
    fn fan_and_span() {
        assert_eq!(direction_fan(1, 16).len(), 1);
        let fan = direction_fan(2, 16);
        assert_eq!(fan.len(), 16);
        assert!(fan.iter().all(|e| ((e[0] * e[0] + e[1] * e[1]) - 1.0).abs() < 1e-12));
        assert_eq!(span_dim(2, &[]), 0);
        assert_eq!(span_dim(2, &[[1.0, 0.0], [-1.0, 0.0]]), 1);
        assert_eq!(span_dim(2, &[[1.0, 0.0], fan[3]]), 2);
    }

    #[test]
    fn e0_witness_on_pendulum() {
        let sys = LagrangianSystem::pendulum();
        let ex = explorer(&sys);
        let h = VerifyHarness::new(&sys, &small_grid(), &dp(), 16, 3).unwrap();
        let aubry = h.analysis().aubry.clone();
        let zero = ex.e0_witness_test(&OneForm::zero(1), &aubry, &h, 6).unwrap();
        assert!(zero.certified);
        let bump = OneForm::bump(1, 0, 0.3, 0.7, 1.0).unwrap();
        let r = ex.e0_witness_test(&bump, &aubry, &h, 6).unwrap();
        assert!(r.delta > 0.0 && r.certified, "{r:?}");
        let bad = OneForm::bump(1, 0, 0.0, 0.4, 1.0).unwrap();
        assert!(matches!(ex.e0_witness_test(&bad, &aubry, &h, 6), Err(Error::SupportOverlap { .. })));
    }

    #[test]
    fn g0_trivial_and_pendulum() {
        let g = small_grid();
        let sys = LagrangianSystem::pendulum();
        let a0 = LaxOleinik::new(&sys, &g).unwrap().analyze(&dp()).unwrap();
        let w = g0_witness_build([0.0; 2], 0.0, 0.0, &a0.u_minus, &a0.u_minus, &a0.aubry, 5e-2).unwrap();
        assert_eq!(w.residual, 0.0);
        let c = [0.3, 0.0];
        let a1 = LaxOleinik::new(&sys.with_tilt(c), &g).unwrap().analyze(&dp()).unwrap();
        let w = g0_witness_build(c, a0.alpha(), a1.alpha(), &a0.u_minus, &a1.u_minus, &a0.aubry, 5e-2).unwrap();
        assert!(w.class_error < 1e-8, "{w:?}");
        assert!(w.pass, "{w:?}");
        assert!(a1.aubry.equal_up_to(&a0.aubry, 1));
    }
}
