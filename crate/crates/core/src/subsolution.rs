//! Discrete critical subsolutions and the `W` perturbation that vanishes on
//! the Aubry estimate.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{Node, NodeSet, SpaceTimeGrid, ValueField};
use crate::laxoleinik::{DpSettings, LaxOleinik};
use crate::system::LagrangianSystem;

/// `u` with its node-wise defect `du/dt + H(x, du/dx, t) - level`.
#[derive(Debug, Clone)]
pub struct SubsolutionCertificate {
    pub u: ValueField,
    pub level: f64,
    pub defect: ValueField,
    pub strictness: ValueField,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DefectSummary {
    pub level: f64,
    pub max_defect: f64,
    pub min_defect: f64,
    /// Strictness quantiles at 0, 10, 50, 90 and 100 percent.
    pub strictness_quantiles: [f64; 5],
}

impl SubsolutionCertificate {
    /// Defect of `u` for `system` at `level`.
    ///
    /// Time derivatives are centered. Each spatial partial is one-sided,
    /// taken against the sign of `dH/dp` at the centered gradient.
    pub fn certify(system: &LagrangianSystem, u: &ValueField, level: f64) -> Result<Self> {
        if system.dim() != u.grid().dim() {
            return Err(invalid("system and field dimensions differ"));
        }
        let g = u.grid().clone();
        let nt = g.nt();
        let hx = g.hx();
        let dt = g.dt();
        let ham = system.hamiltonian_view();
        let data: Vec<f64> = (0..g.node_count())
            .into_par_iter()
            .map(|idx| {
                let Node { x: i, t: k } = g.node_of(idx);
                let here = u.get(Node { x: i, t: k });
                let later = u.get(Node { x: i, t: (k + 1) % nt });
                let earlier = u.get(Node { x: i, t: (k + nt - 1) % nt });
                let ut = (later - earlier) / (2.0 * dt);
                let c = g.space_coords(i);
                let mut fwd = [0.0; 2];
                let mut bwd = [0.0; 2];
                let mut mid = [0.0; 2];
                for a in 0..g.dim() {
                    let mut cp = [c[0] as i64, c[1] as i64];
                    let mut cm = cp;
                    cp[a] += 1;
                    cm[a] -= 1;
                    let up = u.get(Node { x: g.space_index(cp), t: k });
                    let um = u.get(Node { x: g.space_index(cm), t: k });
                    fwd[a] = (up - here) / hx;
                    bwd[a] = (here - um) / hx;
                    mid[a] = 0.5 * (fwd[a] + bwd[a]);
                }
                let x = g.x_of(i);
                let t = g.t_of(k);
                let flow = ham.dh_dp(x, mid, t);
                let mut p = [0.0; 2];
                for a in 0..g.dim() {
                    p[a] = if flow[a] > 0.0 { bwd[a] } else { fwd[a] };
                }
                ut + ham.h(x, p, t) - level
            })
            .collect();
        let defect = ValueField::from_data(&g, data)?;
        let strictness = defect.map(|d| -d);
        Ok(Self { u: u.clone(), level, defect, strictness })
    }

    /// The same `u` read at another level.
    pub fn at_level(&self, level: f64) -> Self {
        let shift = level - self.level;
        let defect = self.defect.map(|d| d - shift);
        let strictness = defect.map(|d| -d);
        Self { u: self.u.clone(), level, defect, strictness }
    }

    pub fn max_defect(&self) -> f64 {
        self.defect.max()
    }

    pub fn is_valid(&self, tol_sub: f64) -> bool {
        self.max_defect() <= tol_sub
    }

    pub fn summary(&self) -> DefectSummary {
        let mut s: Vec<f64> = self.strictness.data().to_vec();
        s.sort_by(f64::total_cmp);
        let q = |f: f64| s[((s.len() - 1) as f64 * f).round() as usize];
        DefectSummary {
            level: self.level,
            max_defect: self.defect.max(),
            min_defect: self.defect.min(),
            strictness_quantiles: [q(0.0), q(0.1), q(0.5), q(0.9), q(1.0)],
        }
    }
}

/// Periodic Gaussian smoothing in space with standard deviation
/// `sigma_cells` grid cells per axis, truncated at four deviations. Time
/// slices are smoothed independently.
pub fn mollify(u: &ValueField, sigma_cells: f64) -> Result<ValueField> {
    if !(sigma_cells >= 0.0) {
        return Err(invalid("sigma must be >= 0"));
    }
    if sigma_cells == 0.0 {
        return Ok(u.clone());
    }
    let reach = (4.0 * sigma_cells).floor() as i64;
    let mut w: Vec<f64> = (-reach..=reach)
        .map(|j| (-0.5 * (j as f64 / sigma_cells).powi(2)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let g = u.grid().clone();
    let mut cur = u.clone();
    for axis in 0..g.dim() {
        let src = cur.clone();
        let data: Vec<f64> = (0..g.node_count())
            .into_par_iter()
            .map(|idx| {
                let n = g.node_of(idx);
                let c = g.space_coords(n.x);
                let mut acc = 0.0;
                for (wi, j) in w.iter().zip(-reach..=reach) {
                    let mut cc = [c[0] as i64, c[1] as i64];
                    cc[axis] += j;
                    acc += wi * src.get(Node { x: g.space_index(cc), t: n.t });
                }
                acc
            })
            .collect();
        cur = ValueField::from_data(&g, data)?;
    }
    Ok(cur)
}

/// A nonnegative potential vanishing on an Aubry estimate.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub w: Arc<ValueField>,
    pub cap: f64,
    /// Distance (torus units) at which the unclipped profile reaches `cap`.
    pub radius: f64,
    /// Smallest `k` with `W > 0` at every node outside the `k`-cell dilation
    /// of the Aubry estimate (`None` if no such `k` up to `nx / 2`).
    pub zero_tube_cells: Option<usize>,
}

impl Perturbation {
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        Self { w: Arc::new(ValueField::zeros(grid)), cap: 0.0, radius: 0.0, zero_tube_cells: None }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            w: Arc::new(self.w.map(|v| s * v)),
            cap: s * self.cap,
            radius: self.radius,
            zero_tube_cells: self.zero_tube_cells,
        }
    }

    /// Smallest `W` outside the `cells` dilation of `aubry` (`+inf` if none).
    pub fn floor_outside(&self, aubry: &NodeSet, cells: usize) -> f64 {
        let tube = aubry.dilate(cells);
        let g = self.w.grid();
        (0..g.node_count())
            .map(|i| g.node_of(i))
            .filter(|&n| !tube.contains(n))
            .map(|n| self.w.get(n))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `3u^2 - 2u^3` clamped to `[0, 1]`.
fn smooth_clamp(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// `W = min(cap s(d / radius)^2, chi)` with `d` the torus distance to `aubry`.
pub fn build_perturbation(aubry: &NodeSet, chi: &ValueField, cap: f64, radius: f64) -> Result<Perturbation> {
    let g = aubry.grid().clone();
    if aubry.is_empty() {
        return Err(invalid("Aubry estimate is empty"));
    }
    if chi.grid() != &g {
        return Err(invalid("chi lives on another grid"));
    }
    if !(cap >= 0.0) || !(radius > 0.0) {
        return Err(invalid("need cap >= 0 and radius > 0"));
    }
    let members: Vec<Node> = aubry.iter().collect();
    let data: Vec<f64> = (0..g.node_count())
        .into_par_iter()
        .map(|idx| {
            let n = g.node_of(idx);
            if aubry.contains(n) {
                return 0.0;
            }
            let d = members.iter().map(|&m| g.node_distance(n, m)).fold(f64::INFINITY, f64::min);
            let s = smooth_clamp(d / radius);
            (cap * s * s).min(chi.get(n)).max(0.0)
        })
        .collect();
    let w = ValueField::from_data(&g, data)?;
    let zero_tube_cells = (0..=g.nx() / 2).find(|&k| {
        let tube = aubry.dilate(k);
        (0..g.node_count()).all(|i| tube.contains(g.node_of(i)) || w.data()[i] > 0.0)
    });
    Ok(Perturbation { w: Arc::new(w), cap, radius, zero_tube_cells })
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceCase {
    pub scale: f64,
    pub alpha: f64,
    pub alpha_shift: f64,
    pub aubry_nodes: usize,
    pub symmetric_difference: usize,
    pub alpha_ok: bool,
    pub aubry_ok: bool,
}

impl InvarianceCase {
    pub fn pass(&self) -> bool {
        self.alpha_ok && self.aubry_ok
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub alpha: f64,
    pub aubry_nodes: usize,
    /// `W` itself and the halved `W / 2`; both are gated.
    pub gated: Vec<InvarianceCase>,
    /// `10 W`, beyond the chi cap; reported only.
    pub oversized: InvarianceCase,
}

impl InvarianceReport {
    pub fn pass(&self) -> bool {
        self.gated.iter().all(InvarianceCase::pass)
    }
}

/// Compares alpha and the Aubry estimate of `L` with those of `L - s W` for
/// `s` in `{1, 1/2}` (gated) and `s = 10` (reported).
pub fn perturbation_invariance_check(
    system: &LagrangianSystem,
    grid: &SpaceTimeGrid,
    w: &Perturbation,
    settings: &DpSettings,
    tol_cross: f64,
) -> Result<InvarianceReport> {
    let base = LaxOleinik::new(system, grid)?.analyze(settings)?;
    let cases = [1.0, 0.5, 10.0]
        .par_iter()
        .map(|&scale| {
            let sys = system.with_perturbation(w.w.clone(), scale);
            let a = LaxOleinik::new(&sys, grid)?.analyze(settings)?;
            let shift = a.alpha() - base.alpha();
            Ok(InvarianceCase {
                scale,
                alpha: a.alpha(),
                alpha_shift: shift,
                aubry_nodes: a.aubry.len(),
                symmetric_difference: a.aubry.symmetric_difference(&base.aubry).len(),
                alpha_ok: shift.abs() <= tol_cross,
                aubry_ok: a.aubry.equal_up_to(&base.aubry, 2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceReport {
        alpha: base.alpha(),
        aubry_nodes: base.aubry.len(),
        gated: cases[..2].to_vec(),
        oversized: cases[2].clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsolutionReport {
    pub sigma: f64,
    pub alpha: f64,
    pub summary: DefectSummary,
    /// Worst `strictness - (W/2 - tol_sub)` outside the dilated Aubry estimate.
    pub strictness_margin: f64,
    /// Largest strictness on the Aubry estimate.
    pub aubry_strictness: f64,
    pub dilation: usize,
    pub pass: bool,
}

/// Mollified `u_-` of `L - W`, certified for the original `H` at `alpha(L)`.
///
/// Fails with `MollificationTooCoarse` when the smoothed field violates the
/// inequality by more than `tol_sub` somewhere.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_from_weak_kam(
    system: &LagrangianSystem,
    grid: &SpaceTimeGrid,
    w: &Perturbation,
    aubry: &NodeSet,
    alpha: f64,
    smooth_sigma: f64,
    settings: &DpSettings,
    tol_sub: f64,
) -> Result<(SubsolutionCertificate, SubsolutionReport)> {
    let perturbed = system.with_perturbation(w.w.clone(), 1.0);
    let engine = LaxOleinik::new(&perturbed, grid)?;
    let (_, u_minus, _) = engine.weak_kam_pair(None, settings)?;
    let u = mollify(&u_minus, smooth_sigma)?;
    let cert = SubsolutionCertificate::certify(system, &u, alpha)?;
    let max_defect = cert.max_defect();
    if max_defect > tol_sub {
        return Err(Error::MollificationTooCoarse { max_defect, tol: tol_sub });
    }
    let dilation = 1;
    let tube = aubry.dilate(dilation);
    let mut margin = f64::INFINITY;
    let mut on_aubry = f64::NEG_INFINITY;
    for i in 0..grid.node_count() {
        let n = grid.node_of(i);
        let s = cert.strictness.data()[i];
        if aubry.contains(n) {
            on_aubry = on_aubry.max(s);
        }
        if !tube.contains(n) {
            margin = margin.min(s - (0.5 * w.w.data()[i] - tol_sub));
        }
    }
    let report = SubsolutionReport {
        sigma: smooth_sigma,
        alpha,
        summary: cert.summary(),
        strictness_margin: margin,
        aubry_strictness: on_aubry,
        dilation,
        pass: margin >= 0.0,
    };
    Ok((cert, report))
}

/// [`subsolution_from_weak_kam`] starting at `sigma` and halving on
/// `MollificationTooCoarse` down to `min_sigma`, then once without smoothing.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_with_retry(
    system: &LagrangianSystem,
    grid: &SpaceTimeGrid,
    w: &Perturbation,
    aubry: &NodeSet,
    alpha: f64,
    sigma: f64,
    min_sigma: f64,
    settings: &DpSettings,
    tol_sub: f64,
) -> Result<(SubsolutionCertificate, SubsolutionReport)> {
    let mut s = sigma;
    loop {
        match subsolution_from_weak_kam(system, grid, w, aubry, alpha, s, settings, tol_sub) {
            Err(Error::MollificationTooCoarse { .. }) if s > 0.0 => {
                s = if s / 2.0 < min_sigma { 0.0 } else { s / 2.0 };
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::VerifyHarness;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 32, 8, 33, 4.0).unwrap()
    }

    fn dp() -> DpSettings {
        DpSettings { n_lo: 4, n_hi: 16, ..DpSettings::default() }
    }

    #[test]
    fn zero_field_certificates() {
        let g = grid();
        let flat = SubsolutionCertificate::certify(&LagrangianSystem::free(1), &ValueField::zeros(&g), 0.0).unwrap();
        assert_eq!(flat.max_defect(), 0.0);
        assert_eq!(flat.defect.min(), 0.0);
        let sys = LagrangianSystem::pendulum();
        let c = SubsolutionCertificate::certify(&sys, &ValueField::zeros(&g), 0.0).unwrap();
        for i in 0..g.node_count() {
            let n = g.node_of(i);
            let v = sys.potential().value(g.x_of(n.x), g.t_of(n.t), 1);
            assert!((c.strictness.get(n) + v).abs() < 1e-10);
        }
        assert!(c.max_defect() <= 1e-12);
        let up = c.at_level(0.1);
        assert!(up.defect.data().iter().zip(c.defect.data()).all(|(a, b)| (a - (b - 0.1)).abs() < 1e-15));
    }

    #[test]
    fn mollify_preserves_constants_and_mean() {
        let g = grid();
        let u = ValueField::constant(&g, 2.5);
        let m = mollify(&u, 2.0).unwrap();
        assert!(m.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
        let f = ValueField::from_fn(&g, |x, t| (2.0 * std::f64::consts::PI * x[0]).sin() * (1.0 + t));
        let m = mollify(&f, 1.5).unwrap();
        let mean = |v: &ValueField| v.data().iter().sum::<f64>() / v.data().len() as f64;
        assert!((mean(&m) - mean(&f)).abs() < 1e-12);
        assert!(m.max() < f.max());
        assert_eq!(mollify(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn perturbation_shape() {
        let g = grid();
        let full = NodeSet::full(&g);
        let chi = ValueField::constant(&g, 1.0);
        let w = build_perturbation(&full, &chi, 1.0, 0.1).unwrap();
        assert_eq!(w.w.max(), 0.0);
        let line = NodeSet::from_predicate(&g, |n| n.x == 0);
        let w = build_perturbation(&line, &chi, 1.0, 0.1).unwrap();
        for i in 0..g.node_count() {
            let n = g.node_of(i);
            let v = w.w.get(n);
            assert!(v >= 0.0);
            if n.x == 0 {
                assert_eq!(v, 0.0);
            }
            if line.distance_to(n) >= 0.1 {
                assert!(v >= 0.5);
            }
        }
        assert_eq!(w.zero_tube_cells, Some(0));
    }

    #[test]
    fn pendulum_perturbation_and_certificate() {
        let g = SpaceTimeGrid::new(1, 64, 16, 65, 4.0).unwrap();
        let sys = LagrangianSystem::pendulum();
        let h = VerifyHarness::new(&sys, &g, &dp(), 16, 9).unwrap();
        let chi = h.chi_field(&h.epsilon_table(6).unwrap()).unwrap();
        let aubry = h.analysis().aubry.clone();
        let w = build_perturbation(&aubry, &chi, 1.0, 4.0 * g.hx()).unwrap();
        assert!(w.w.data().iter().zip(chi.data()).all(|(a, b)| a <= b));
        for n in aubry.iter() {
            assert!(w.w.get(n) <= 1e-12);
        }
        assert!(w.zero_tube_cells.is_some());
        let rep = perturbation_invariance_check(&sys, &g, &w, &dp(), 1e-2).unwrap();
        assert!(rep.pass(), "{rep:?}");
        let zero = perturbation_invariance_check(&sys, &g, &Perturbation::zero(&g), &dp(), 1e-2).unwrap();
        assert!(zero.gated.iter().all(|c| c.alpha_shift == 0.0 && c.symmetric_difference == 0));
        let (cert, r) = subsolution_with_retry(&sys, &g, &w, &aubry, h.analysis().alpha(), 2.0, 0.25, &dp(), 1e-2).unwrap();
        assert!(cert.is_valid(1e-2));
        assert!(r.pass, "{r:?}");
        assert!(r.aubry_strictness <= 1e-2);
    }

    #[test]
    fn perturbed_certificate_transfers_to_original() {
        let g = grid();
        let sys = LagrangianSystem::pendulum();
        let chi = ValueField::constant(&g, 0.2);
        let aubry = NodeSet::from_predicate(&g, |n| n.x == 0);
        let w = build_perturbation(&aubry, &chi, 1.0, 0.2).unwrap();
        let perturbed = sys.with_perturbation(w.w.clone(), 1.0);
        let u = ValueField::zeros(&g);
        let a = SubsolutionCertificate::certify(&perturbed, &u, 0.0).unwrap();
        let b = SubsolutionCertificate::certify(&sys, &u, 0.0).unwrap();
        for i in 0..g.node_count() {
            let d = b.strictness.data()[i] - a.strictness.data()[i] - w.w.data()[i];
            assert!(d.abs() < 1e-12);
        }
    }
}
