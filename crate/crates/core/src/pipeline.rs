//! Stage orchestration for the command-line front end.
//!
//! Each stage writes its artifacts under `<out>/<stage>/` and records hard
//! gates as [`Check`]s. Numeric payloads depend only on the configuration;
//! wall-clock data lives in `manifest.json` alone.
//!
//! Exit codes: 0 all gates pass, 2 configuration or input error, 3 numerical
//! failure, 4 failed gate, 1 i/o failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::alpha::{direction_fan, g0_witness_build, AlphaExplorer};
use crate::config::{point_of, ExperimentConfig};
use crate::error::{Error, Result};
use crate::form::OneForm;
use crate::grid::{Node, SpaceTimeGrid, ValueField};
use crate::io;
use crate::laxoleinik::{DpSettings, LaxOleinik, WeakKamAnalysis};
use crate::measures::{invariance_defect, lp_alpha, max_closedness_defect, occupation_measure, TestFunctionBasis};
use crate::simplex::SimplexOptions;
use crate::subsolution::{
    build_perturbation, perturbation_invariance_check, subsolution_with_retry, SubsolutionCertificate,
};
use crate::system::{LagrangianSystem, State};
use crate::verify::{dp_minimizer_curve, CurveReport, VerifyHarness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Alpha,
    Aubry,
    Barrier,
    Faces,
    Subsolution,
    VerifyLemma,
    ClosedLp,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Aubry,
        Stage::Alpha,
        Stage::Barrier,
        Stage::Faces,
        Stage::Subsolution,
        Stage::VerifyLemma,
        Stage::ClosedLp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Alpha => "alpha",
            Stage::Aubry => "aubry",
            Stage::Barrier => "barrier",
            Stage::Faces => "faces",
            Stage::Subsolution => "subsolution",
            Stage::VerifyLemma => "verify-lemma",
            Stage::ClosedLp => "closed-lp",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub stage: String,
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub stage: Option<String>,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub stages: Vec<StageTiming>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
    pub pass: bool,
    pub error: Option<ErrorReport>,
    pub exit_code: i32,
}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::SupportOverlap { .. } => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid-input",
        Error::VelocityEscape { .. } => "velocity-escape",
        Error::BoxSaturation { .. } => "box-saturation",
        Error::NotConverged { .. } => "not-converged",
        Error::EmptyAubry { .. } => "empty-aubry",
        Error::Infeasible { .. } => "infeasible",
        Error::Unbounded { .. } => "unbounded",
        Error::WindowExhausted { .. } => "window-exhausted",
        Error::SupportOverlap { .. } => "support-overlap",
        Error::MollificationTooCoarse { .. } => "mollification-too-coarse",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
    }
}

pub fn error_report(stage: Option<Stage>, e: &Error) -> ErrorReport {
    ErrorReport {
        stage: stage.map(|s| s.name().to_string()),
        kind: error_kind(e).to_string(),
        message: e.to_string(),
        exit_code: exit_code_for(e),
    }
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Shared state of one run; expensive intermediates are computed once.
pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    system: LagrangianSystem,
    grid: SpaceTimeGrid,
    dp: DpSettings,
    simplex: SimplexOptions,
    engine: Option<LaxOleinik>,
    analysis: Option<WeakKamAnalysis>,
    harness: Option<VerifyHarness>,
    explorer: Option<AlphaExplorer>,
    checks: Vec<Check>,
    artifacts: Vec<Artifact>,
    timings: Vec<StageTiming>,
    current: Option<Stage>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let system = cfg.system.build()?;
        let grid = cfg.build_grid()?;
        let dp = cfg.dp_settings();
        Ok(Self {
            out: out.to_path_buf(),
            system,
            grid,
            dp,
            simplex: SimplexOptions::default(),
            engine: None,
            analysis: None,
            harness: None,
            explorer: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
            current: None,
            cfg,
        })
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        self.current = Some(stage);
        let start = Instant::now();
        match stage {
            Stage::Alpha => self.alpha()?,
            Stage::Aubry => self.aubry()?,
            Stage::Barrier => self.barrier()?,
            Stage::Faces => self.faces()?,
            Stage::Subsolution => self.subsolution()?,
            Stage::VerifyLemma => self.verify_lemma()?,
            Stage::ClosedLp => self.closed_lp()?,
        }
        self.timings.push(StageTiming { stage: stage.name().into(), wall_seconds: start.elapsed().as_secs_f64() });
        self.current = None;
        Ok(())
    }

    pub fn current_stage(&self) -> Option<Stage> {
        self.current
    }

    fn check(&mut self, name: impl Into<String>, value: f64, relation: Relation, threshold: f64) {
        let pass = match relation {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
        };
        self.checks.push(Check {
            stage: self.current.map_or("cross", |s| s.name()).to_string(),
            name: name.into(),
            value,
            relation,
            threshold,
            pass,
        });
    }

    fn write(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let stage = self.current.map_or("cross", |s| s.name());
        let rel = format!("{stage}/{file}");
        io::write_atomic(&self.out.join(&rel), bytes)?;
        self.artifacts.push(Artifact {
            stage: stage.to_string(),
            path: rel,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn write_json(&mut self, file: &str, value: &serde_json::Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        self.write(file, s.as_bytes())
    }

    fn engine(&mut self) -> Result<&LaxOleinik> {
        if self.engine.is_none() {
            self.engine = Some(LaxOleinik::new(&self.system, &self.grid)?);
        }
        Ok(self.engine.as_ref().expect("set above"))
    }

    fn analysis(&mut self) -> Result<&WeakKamAnalysis> {
        if self.analysis.is_none() {
            let dp = self.dp.clone();
            let a = self.engine()?.analyze(&dp)?;
            self.analysis = Some(a);
        }
        Ok(self.analysis.as_ref().expect("set above"))
    }

    fn harness(&mut self) -> Result<&VerifyHarness> {
        if self.harness.is_none() {
            let analysis = self.analysis()?.clone();
            let engine = self.engine()?.clone();
            let h = VerifyHarness::from_analysis(engine, analysis, &self.dp, self.cfg.verify.probe_pairs, self.cfg.seed)?
                .with_tolerance_floor(self.cfg.tolerances.tol_lem);
            self.harness = Some(h);
        }
        Ok(self.harness.as_ref().expect("set above"))
    }

    fn explorer(&mut self) -> Result<&AlphaExplorer> {
        if self.explorer.is_none() {
            let ex = AlphaExplorer::new(&self.system, &self.grid, &self.dp, &self.simplex, &self.cfg.alpha_settings())?;
            self.explorer = Some(ex);
        }
        Ok(self.explorer.as_ref().expect("set above"))
    }

    fn alpha(&mut self) -> Result<()> {
        let cs: Vec<_> = self.cfg.alpha.c_values.iter().map(|c| point_of(c)).collect();
        let samples = self.explorer()?.alpha_many(&cs)?;
        let dim = self.grid.dim();
        let mut header: Vec<&str> = ["c0", "c1"][..dim].to_vec();
        header.extend(["alpha_lp", "alpha_vi", "duality_gap"]);
        let rows: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let mut r = s.c[..dim].to_vec();
                r.extend([s.alpha_lp, s.alpha_vi, s.duality_gap]);
                r
            })
            .collect();
        self.write("alpha.csv", io::table_csv(&header, &rows).as_bytes())?;
        self.write_json("alpha.json", &json!({ "seed": self.cfg.seed, "samples": samples }))?;
        let (tol_cross, tol_lp) = (self.cfg.tolerances.tol_cross, self.cfg.tolerances.tol_lp);
        for s in &samples {
            let label: Vec<String> = s.c[..dim].iter().map(|v| format!("{v}")).collect();
            self.check(format!("routes_agree[c={}]", label.join(",")), (s.alpha_lp - s.alpha_vi).abs(), Relation::AtMost, tol_cross);
        }
        let gap = samples.iter().map(|s| s.duality_gap.abs()).fold(0.0, f64::max);
        self.check("lp_duality_gap", gap, Relation::AtMost, tol_lp);
        Ok(())
    }

    fn aubry(&mut self) -> Result<()> {
        let seed = self.cfg.seed;
        let a = self.analysis()?.clone();
        let dom = self.engine()?.domination_defect(&a.u_plus, a.alpha());
        let g = self.grid.clone();
        let mask = ValueField::from_data(&g, a.aubry.mask().iter().map(|&b| f64::from(u8::from(b))).collect())?;
        let gap = a.gap();
        let layers = [("u_minus", &a.u_minus), ("u_plus", &a.u_plus), ("gap", &gap), ("aubry", &mask)];
        self.write("fields.csv", io::fields_csv(&g, &layers)?.as_bytes())?;
        self.write("fields.bin", &io::encode_snapshot(&[&a.u_minus, &a.u_plus, &gap, &mask])?)?;
        let nodes: Vec<Node> = a.aubry.iter().collect();
        self.write_json(
            "aubry.json",
            &json!({
                "seed": seed,
                "critical": a.critical,
                "eps_a": a.eps_a,
                "aubry_nodes": nodes.len(),
                "aubry": nodes,
                "domination_defect_u_plus": dom,
            }),
        )?;
        self.check("aubry_nonempty", nodes.len() as f64, Relation::AtLeast, 1.0);
        self.check("domination_u_plus", dom, Relation::AtMost, self.cfg.tolerances.tol_dom);
        if let Some(expected) = self.cfg.aubry.expect_alpha {
            self.check("alpha_expected", (a.alpha() - expected).abs(), Relation::AtMost, self.cfg.tolerances.tol_cross);
        }
        Ok(())
    }

    fn barrier(&mut self) -> Result<()> {
        let a = self.analysis()?.clone();
        let g = self.grid.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let nc = g.node_count();
        let mut pairs: Vec<(Node, Node)> = (0..self.cfg.barrier.random_pairs)
            .map(|_| (g.node_of(rng.gen_range(0..nc)), g.node_of(rng.gen_range(0..nc))))
            .collect();
        pairs.extend(a.aubry.iter().map(|n| (n, n)));
        let dp = self.dp.clone();
        let table = self.engine()?.barrier_table(&pairs, a.alpha(), &dp)?;
        self.write("barrier.csv", io::barrier_csv(&table).as_bytes())?;
        let diag_max = table
            .entries
            .iter()
            .filter(|e| e.source == e.target)
            .map(|e| e.value.h)
            .fold(f64::NEG_INFINITY, f64::max);
        let diag_min = table
            .entries
            .iter()
            .filter(|e| e.source == e.target)
            .map(|e| e.value.h)
            .fold(f64::INFINITY, f64::min);
        self.write_json(
            "barrier.json",
            &json!({
                "seed": self.cfg.seed,
                "n_window": table.n_window,
                "entries": table.entries.len(),
                "random_pairs": self.cfg.barrier.random_pairs,
                "aubry_diagonals": a.aubry.len(),
                "aubry_diagonal_max": diag_max,
                "aubry_diagonal_min": diag_min,
            }),
        )?;
        self.check("aubry_diagonal_barrier", diag_max, Relation::AtMost, a.eps_a);
        self.check("aubry_diagonal_nonnegative", diag_min, Relation::AtLeast, -a.eps_a);
        Ok(())
    }

    fn faces(&mut self) -> Result<()> {
        let fc = self.cfg.faces.clone();
        let dim = self.grid.dim();
        let dirs = direction_fan(dim, fc.directions);
        let (report, probes) = self.explorer()?.face_report(&dirs, &fc.deltas)?;
        let mut rows = Vec::new();
        for p in &probes {
            for r in &p.rows {
                let mut row = p.direction[..dim].to_vec();
                row.extend([r.delta, r.plus_lp, r.plus_vi, r.minus_lp, r.minus_vi, f64::from(u8::from(r.certified))]);
                rows.push(row);
            }
        }
        let mut header: Vec<&str> = ["e0", "e1"][..dim].to_vec();
        header.extend(["delta", "alpha_plus_lp", "alpha_plus_vi", "alpha_minus_lp", "alpha_minus_vi", "certified"]);
        self.write("faces.csv", io::table_csv(&header, &rows).as_bytes())?;

        let e0 = match &fc.e0_bump {
            Some(b) => {
                let omega = OneForm::bump(dim, b.axis, b.lo, b.hi, b.amplitude)?;
                let aubry = self.analysis()?.aubry.clone();
                let n_max = self.cfg.verify.n_max;
                self.harness()?;
                let (ex, h) = (self.explorer.as_ref().expect("built"), self.harness.as_ref().expect("built"));
                Some(ex.e0_witness_test(&omega, &aubry, h, n_max)?)
            }
            None => None,
        };
        let g0 = match &fc.g0_c {
            Some(c) => {
                let c = point_of(c);
                let a0 = self.analysis()?.clone();
                let a1 = LaxOleinik::new(&self.system.with_tilt(c), &self.grid)?.analyze(&self.dp)?;
                Some(g0_witness_build(c, a0.alpha(), a1.alpha(), &a0.u_minus, &a1.u_minus, &a0.aubry, self.cfg.tolerances.tol_g0)?)
            }
            None => None,
        };
        self.write_json(
            "faces.json",
            &json!({ "seed": self.cfg.seed, "report": report, "probes": probes, "e0": e0, "g0": g0 }),
        )?;
        let smallest = fc.deltas.iter().copied().fold(f64::INFINITY, f64::min);
        match fc.expect_face {
            Some(true) => {
                let worst = report.directions.iter().map(|d| d.delta_star).fold(f64::INFINITY, f64::min);
                self.check("face_certified_min_delta_star", worst, Relation::AtLeast, smallest);
                let slopes = probes.iter().all(|p| p.slope_consistent);
                self.check("face_slope_consistent", f64::from(u8::from(slopes)), Relation::AtLeast, 1.0);
            }
            Some(false) => {
                let worst = report.directions.iter().map(|d| d.delta_star).fold(0.0, f64::max);
                self.check("no_face_max_delta_star", worst, Relation::AtMost, 0.0);
            }
            None => {}
        }
        if let Some(r) = &e0 {
            self.check("e0_affinity_defect", r.affinity_defect, Relation::AtMost, self.cfg.tolerances.tol_face);
            self.check("e0_certified", f64::from(u8::from(r.certified)), Relation::AtLeast, 1.0);
        }
        if let Some(w) = &g0 {
            self.check("g0_residual", w.residual, Relation::AtMost, self.cfg.tolerances.tol_g0);
        }
        Ok(())
    }

    fn subsolution(&mut self) -> Result<()> {
        let sc = self.cfg.subsolution.clone();
        let tol = self.cfg.tolerances.clone();
        let g = self.grid.clone();
        let n_max = self.cfg.verify.n_max;
        let h = self.harness()?;
        let table = h.epsilon_table(n_max)?;
        let chi = h.chi_field(&table)?;
        let a = h.analysis().clone();
        let w = build_perturbation(&a.aubry, &chi, sc.cap, sc.radius_cells * g.hx())?;
        let invariance = perturbation_invariance_check(&self.system, &g, &w, &self.dp, tol.tol_cross)?;
        let (cert, report) = subsolution_with_retry(
            &self.system,
            &g,
            &w,
            &a.aubry,
            a.alpha(),
            sc.sigma,
            sc.min_sigma,
            &self.dp,
            tol.tol_sub,
        )?;
        let trivial = SubsolutionCertificate::certify(&self.system, &ValueField::zeros(&g), 0.0)?;
        let hv = self.system.hamiltonian_view();
        let trivial_err = (0..g.node_count())
            .map(|i| {
                let n = g.node_of(i);
                (trivial.strictness.data()[i] + hv.h(g.x_of(n.x), [0.0; 2], g.t_of(n.t))).abs()
            })
            .fold(0.0, f64::max);
        let layers = [
            ("u", &cert.u),
            ("defect", &cert.defect),
            ("strictness", &cert.strictness),
            ("w", w.w.as_ref()),
            ("chi", &chi),
        ];
        self.write("layers.csv", io::fields_csv(&g, &layers)?.as_bytes())?;
        self.write("layers.bin", &io::encode_snapshot(&layers.map(|l| l.1))?)?;
        self.write_json(
            "subsolution.json",
            &json!({
                "seed": self.cfg.seed,
                "report": report,
                "epsilon_table": table,
                "perturbation": { "cap": w.cap, "radius": w.radius, "zero_tube_cells": w.zero_tube_cells, "max": w.w.max() },
                "invariance": invariance,
                "trivial_certificate_error": trivial_err,
            }),
        )?;
        self.check("max_defect", cert.max_defect(), Relation::AtMost, tol.tol_sub);
        self.check("strictness_margin", report.strictness_margin, Relation::AtLeast, 0.0);
        self.check("trivial_certificate", trivial_err, Relation::AtMost, 1e-10);
        for case in &invariance.gated {
            self.check(format!("invariance_alpha[scale={}]", case.scale), case.alpha_shift.abs(), Relation::AtMost, tol.tol_cross);
            self.check(
                format!("invariance_aubry[scale={}]", case.scale),
                f64::from(u8::from(case.aubry_ok)),
                Relation::AtLeast,
                1.0,
            );
        }
        Ok(())
    }

    fn verify_lemma(&mut self) -> Result<()> {
        let vc = self.cfg.verify.clone();
        let seed = self.cfg.seed;
        let h = self.harness()?;
        let table = h.epsilon_table(vc.n_max)?;
        let minimal: Vec<bool> = table
            .entries
            .iter()
            .map(|e| e.n_eps <= 1 || !h.condition_holds(e.n_eps - 1, e.eps))
            .collect();
        let mut curves = h.random_curves(vc.curves, vc.periods, seed.wrapping_add(1))?;
        let aubry: Vec<Node> = h.analysis().aubry.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        for i in 0..vc.minimizer_curves.min(aubry.len()) {
            let src = aubry[rng.gen_range(0..aubry.len())];
            let dst = aubry[rng.gen_range(0..aubry.len())];
            curves.push(dp_minimizer_curve(vc.curves + i, h.engine(), src, dst, vc.periods)?);
        }
        let mut lemma: Vec<CurveReport> = Vec::new();
        for &eps in &vc.eps {
            let n_eps = h.n_epsilon(eps)?;
            let a_eps = h.a_epsilon(eps)?;
            let reports: Vec<CurveReport> = curves.par_iter().map(|c| h.lemma_with(c, eps, n_eps, &a_eps)).collect();
            lemma.extend(reports);
        }
        let chi = h.chi_field(&table)?;
        let chi_reports: Vec<CurveReport> = curves.par_iter().map(|c| h.check_chi_inequality(c, &chi)).collect();
        let probe_count = h.probes().len();
        self.write_json("lemma.json", &serde_json::to_value(&lemma).map_err(|e| Error::Io(e.to_string()))?)?;
        self.write_json("chi.json", &serde_json::to_value(&chi_reports).map_err(|e| Error::Io(e.to_string()))?)?;
        self.write_json(
            "epsilon.json",
            &json!({
                "seed": seed,
                "probe_count": probe_count,
                "probe_pairs_random": vc.probe_pairs,
                "table": table,
                "minimal": minimal,
            }),
        )?;
        let rate = |r: &[CurveReport]| if r.is_empty() { 1.0 } else { r.iter().filter(|c| c.pass).count() as f64 / r.len() as f64 };
        self.check("lemma_pass_rate", rate(&lemma), Relation::AtLeast, 1.0);
        self.check("chi_pass_rate", rate(&chi_reports), Relation::AtLeast, 1.0);
        for (e, ok) in table.entries.iter().zip(&minimal) {
            self.check(format!("n_eps_minimal[eps=2^-{}]", e.level), f64::from(u8::from(*ok)), Relation::AtLeast, 1.0);
        }
        Ok(())
    }

    fn closed_lp(&mut self) -> Result<()> {
        let lc = self.cfg.closed_lp.clone();
        let tol_lp = self.cfg.tolerances.tol_lp;
        let g = self.grid.clone();
        let dim = g.dim();
        let m_max = lc.m_max.unwrap_or((g.nt() / 2) as i32);
        let basis = TestFunctionBasis::new(dim, lc.k_max, m_max)?;
        let refined = TestFunctionBasis::new(dim, lc.k_refined, m_max)?;
        // Binning aliases the temporal Nyquist mode, so orbits are tested
        // against the coarser temporal bound of `[basis]`.
        let orbit_basis = TestFunctionBasis::new(dim, lc.k_max, self.cfg.basis.m_max.min(m_max))?;
        let omega = OneForm::zero(dim);
        let runs = [&basis, &refined]
            .par_iter()
            .map(|b| lp_alpha(&self.system, &omega, b, &g, &self.simplex))
            .collect::<Result<Vec<_>>>()?;
        let (alpha, out) = &runs[0];
        let (alpha_refined, out_refined) = &runs[1];
        let inv = invariance_defect(&self.system, &out.mu, g.dt())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(3));
        let starts: Vec<State> = (0..lc.orbits)
            .map(|_| {
                let mut x = [0.0; 2];
                let mut v = [0.0; 2];
                for a in 0..dim {
                    x[a] = rng.gen::<f64>();
                    v[a] = rng.gen_range(-lc.orbit_speed..=lc.orbit_speed);
                }
                State { x, v, t: 0.0 }
            })
            .collect();
        let defects = starts
            .par_iter()
            .map(|&s| {
                let mu = occupation_measure(&self.system, &g, s, lc.orbit_periods)?;
                Ok(max_closedness_defect(&mu, &orbit_basis))
            })
            .collect::<Result<Vec<f64>>>()?;
        let orbits: Vec<_> = starts
            .iter()
            .zip(&defects)
            .map(|(s, d)| json!({ "x0": &s.x[..dim], "v0": &s.v[..dim], "closedness_defect": d }))
            .collect();
        self.write("measure.csv", out.mu.to_csv().as_bytes())?;
        if lc.export_lp {
            let lp = crate::measures::build_lp(&self.system, &omega, &basis, &g)?;
            self.write("program.lp", lp.to_lp_format().as_bytes())?;
        }
        let gap = out.solution.duality_gap.abs().max(out_refined.solution.duality_gap.abs());
        self.write_json(
            "closed_lp.json",
            &json!({
                "seed": self.cfg.seed,
                "basis": { "k_max": lc.k_max, "k_refined": lc.k_refined, "m_max": m_max, "rows": basis.row_count() },
                "orbit_basis_m_max": self.cfg.basis.m_max.min(m_max),
                "alpha": alpha,
                "alpha_refined": alpha_refined,
                "duality_gap": gap,
                "iterations": [out.solution.iterations, out_refined.solution.iterations],
                "support_atoms": out.mu.atoms(1e-12).len(),
                "invariance_defect": inv,
                "orbit_periods": lc.orbit_periods,
                "orbits": orbits,
            }),
        )?;
        self.check("lp_duality_gap", gap, Relation::AtMost, tol_lp);
        if lc.gate_invariance {
            self.check("invariance_defect", inv, Relation::AtMost, lc.invariance_gate);
        }
        self.check("refinement_change", (alpha - alpha_refined).abs(), Relation::AtMost, lc.refine_gate);
        let worst = defects.iter().copied().fold(0.0, f64::max);
        self.check("occupation_closedness", worst, Relation::AtMost, lc.closedness_gate);
        if let Some(a) = &self.analysis {
            let va = a.alpha();
            self.current = None;
            self.check("closed_lp_vs_value_iteration", (alpha - va).abs(), Relation::AtMost, self.cfg.tolerances.tol_cross);
            self.current = Some(Stage::ClosedLp);
        }
        Ok(())
    }

    /// Checks that compare stages with each other.
    fn cross_checks(&mut self) {
        let pair = match (&self.explorer, &self.analysis) {
            (Some(ex), Some(a)) => Some((ex.origin().alpha_lp, a.alpha())),
            _ => None,
        };
        if let Some((lp, vi)) = pair {
            self.check("alpha_origin_lp_vs_value_iteration", (lp - vi).abs(), Relation::AtMost, self.cfg.tolerances.tol_cross);
        }
    }
}

/// `all` or a single stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    All,
    Stage(Stage),
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::All => "all",
            Command::Stage(s) => s.name(),
        }
    }

    fn stages(self) -> Vec<Stage> {
        match self {
            Command::All => Stage::ALL.to_vec(),
            Command::Stage(s) => vec![s],
        }
    }
}

/// Runs `command` and writes `manifest.json` (and `error.json` on failure)
/// under `out`. Returns the manifest, whose `exit_code` is the process status.
pub fn run(command: Command, cfg: ExperimentConfig, out: &Path) -> RunManifest {
    let started = unix_now();
    let mut manifest = RunManifest {
        toolkit: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        started_unix: started,
        finished_unix: started,
        stages: Vec::new(),
        checks: Vec::new(),
        artifacts: Vec::new(),
        pass: false,
        error: None,
        exit_code: 0,
    };
    let mut failure: Option<(Option<Stage>, Error)> = None;
    let mut pipeline = match Pipeline::new(cfg, out) {
        Ok(p) => Some(p),
        Err(e) => {
            failure = Some((None, e));
            None
        }
    };
    if let Some(p) = pipeline.as_mut() {
        for stage in command.stages() {
            if let Err(e) = p.run_stage(stage) {
                failure = Some((Some(stage), e));
                break;
            }
        }
        if failure.is_none() && command == Command::All {
            p.cross_checks();
        }
        manifest.stages = std::mem::take(&mut p.timings);
        manifest.checks = std::mem::take(&mut p.checks);
        manifest.artifacts = std::mem::take(&mut p.artifacts);
    }
    let gates_pass = manifest.checks.iter().all(|c| c.pass);
    manifest.pass = failure.is_none() && gates_pass;
    manifest.exit_code = match &failure {
        Some((_, e)) => exit_code_for(e),
        None if !gates_pass => 4,
        None => 0,
    };
    if let Some((stage, e)) = &failure {
        let report = error_report(*stage, e);
        let _ = io::write_json(&out.join("error.json"), &report);
        manifest.error = Some(report);
    }
    manifest.finished_unix = unix_now();
    if let Err(e) = io::write_json(&out.join("manifest.json"), &manifest) {
        manifest.error.get_or_insert_with(|| error_report(None, &e));
        if manifest.exit_code == 0 {
            manifest.exit_code = exit_code_for(&e);
        }
    }
    manifest
}
