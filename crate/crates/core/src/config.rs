//! Experiment configuration: one TOML file per run.
//!
//! Only `[system]` and `[grid]` are required. Every other section falls back
//! to the reference defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alpha::AlphaSettings;
use crate::error::{Error, Result};
use crate::grid::{Point, SpaceTimeGrid};
use crate::laxoleinik::DpSettings;
use crate::system::{LagrangianSystem, TrigPolynomial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Flat,
    Pendulum,
    AutonomousPendulum,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub tilt: Point,
    /// Required for `custom`, rejected otherwise.
    #[serde(default)]
    pub potential: Option<TrigPolynomial>,
}

fn one() -> usize {
    1
}

impl SystemSpec {
    pub fn build(&self) -> Result<LagrangianSystem> {
        let base = match (self.kind, &self.potential) {
            (SystemKind::Custom, Some(p)) => LagrangianSystem::custom("custom", self.dim, p.clone())?,
            (SystemKind::Custom, None) => return Err(config_err("system.potential", "required for kind = \"custom\"")),
            (_, Some(_)) => return Err(config_err("system.potential", "only allowed for kind = \"custom\"")),
            (SystemKind::Flat, None) => {
                if !(1..=2).contains(&self.dim) {
                    return Err(config_err("system.dim", "must be 1 or 2"));
                }
                LagrangianSystem::free(self.dim)
            }
            (SystemKind::Pendulum, None) => LagrangianSystem::pendulum(),
            (SystemKind::AutonomousPendulum, None) => LagrangianSystem::autonomous_pendulum(),
        };
        if base.dim() != self.dim {
            return Err(config_err("system.dim", format!("{:?} systems are {}-dimensional", self.kind, base.dim())));
        }
        let mut sys = base;
        if self.tilt != [0.0; 2] {
            sys = sys.with_tilt(self.tilt);
        }
        if self.shift != 0.0 {
            sys = sys.with_shift(self.shift);
        }
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub nt: usize,
    pub nv: usize,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Bracket width on the critical value in value iteration.
    pub tol_alpha: f64,
    /// Largest accepted LP duality gap.
    pub tol_lp: f64,
    /// Largest accepted disagreement between the LP and value-iteration routes.
    pub tol_cross: f64,
    pub tol_sub: f64,
    pub tol_face: f64,
    /// Floor added to the curve-quadrature tolerance of the lemma harness.
    pub tol_lem: f64,
    pub tol_h: f64,
    pub tol_g0: f64,
    pub tol_dom: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_alpha: 1e-9,
            tol_lp: 1e-9,
            tol_cross: 2e-2,
            tol_sub: 1e-2,
            tol_face: 3e-2,
            tol_lem: 1e-12,
            tol_h: 1e-6,
            tol_g0: 5e-2,
            tol_dom: 1e-6,
        }
    }
}

impl Tolerances {
    fn named(&self) -> [(&'static str, f64); 9] {
        [
            ("tol_alpha", self.tol_alpha),
            ("tol_lp", self.tol_lp),
            ("tol_cross", self.tol_cross),
            ("tol_sub", self.tol_sub),
            ("tol_face", self.tol_face),
            ("tol_lem", self.tol_lem),
            ("tol_h", self.tol_h),
            ("tol_g0", self.tol_g0),
            ("tol_dom", self.tol_dom),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    pub n_lo: usize,
    pub n_hi: usize,
    pub max_iters: usize,
}

impl Default for Windows {
    fn default() -> Self {
        let d = DpSettings::default();
        Self { n_lo: d.n_lo, n_hi: d.n_hi, max_iters: d.max_iters }
    }
}

/// LP test functions for the alpha and face stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub k_max: i32,
    pub m_max: i32,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { k_max: 2, m_max: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaStage {
    /// Cohomology classes; one or two components each.
    pub c_values: Vec<Vec<f64>>,
}

impl Default for AlphaStage {
    fn default() -> Self {
        Self { c_values: vec![vec![0.0], vec![0.25], vec![0.5], vec![1.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AubryStage {
    /// Hard gate `|alpha(0) - expected| <= tol_cross` when set.
    pub expect_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierStage {
    pub random_pairs: usize,
}

impl Default for BarrierStage {
    fn default() -> Self {
        Self { random_pairs: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    #[serde(default)]
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacesStage {
    pub deltas: Vec<f64>,
    /// Directions of the half-circle fan in 2D; ignored in 1D.
    pub directions: usize,
    /// Hard gate: every probed direction must certify a face of at least
    /// the smallest delta (`true`) or none at all (`false`).
    pub expect_face: Option<bool>,
    pub e0_bump: Option<BumpSpec>,
    pub g0_c: Option<Vec<f64>>,
}

impl Default for FacesStage {
    fn default() -> Self {
        Self { deltas: vec![0.2, 0.3, 0.5], directions: 4, expect_face: None, e0_bump: None, g0_c: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyStage {
    pub eps: Vec<f64>,
    pub curves: usize,
    pub periods: usize,
    pub probe_pairs: usize,
    /// Table levels `eps = 2^-n` for `n = 0..=n_max`.
    pub n_max: u32,
    /// DP-minimizer curves between random Aubry nodes.
    pub minimizer_curves: usize,
}

impl Default for VerifyStage {
    fn default() -> Self {
        Self { eps: vec![0.125], curves: 100, periods: 2, probe_pairs: 64, n_max: 6, minimizer_curves: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsolutionStage {
    pub sigma: f64,
    pub min_sigma: f64,
    pub cap: f64,
    pub radius_cells: f64,
}

impl Default for SubsolutionStage {
    fn default() -> Self {
        Self { sigma: 2.0, min_sigma: 0.5, cap: 1.0, radius_cells: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLpStage {
    pub k_max: i32,
    /// Temporal modes; `None` means `nt / 2`.
    pub m_max: Option<i32>,
    pub k_refined: i32,
    pub invariance_gate: f64,
    /// Off when LP minimizers are not unique: a vertex of the truncated
    /// program then need not be invariant.
    pub gate_invariance: bool,
    pub refine_gate: f64,
    pub orbits: usize,
    pub orbit_periods: usize,
    pub orbit_speed: f64,
    pub closedness_gate: f64,
    pub export_lp: bool,
}

impl Default for ClosedLpStage {
    fn default() -> Self {
        Self {
            k_max: 2,
            m_max: None,
            k_refined: 3,
            invariance_gate: 0.1,
            gate_invariance: true,
            refine_gate: 1e-2,
            orbits: 10,
            orbit_periods: 50,
            orbit_speed: 1.0,
            closedness_gate: 5e-2,
            export_lp: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub windows: Windows,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub alpha: AlphaStage,
    #[serde(default)]
    pub aubry: AubryStage,
    #[serde(default)]
    pub barrier: BarrierStage,
    #[serde(default)]
    pub faces: FacesStage,
    #[serde(default)]
    pub verify: VerifyStage,
    #[serde(default)]
    pub subsolution: SubsolutionStage,
    #[serde(default)]
    pub closed_lp: ClosedLpStage,
}

pub(crate) fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            if path == "." {
                path.clear();
            }
            let message = e.inner().message().to_string();
            if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.strip_suffix('`')) {
                path = if path.is_empty() { field.to_string() } else { format!("{path}.{field}") };
            }
            config_err(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err("", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.tolerances.named() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err(&format!("tolerances.{name}"), "must be finite and > 0"));
            }
        }
        self.build_grid()?;
        self.system.build()?;
        self.dp_settings()
            .validate()
            .map_err(|e| config_err("windows", e.to_string()))?;
        let dim = self.system.dim;
        for (i, c) in self.alpha.c_values.iter().enumerate() {
            if c.len() != dim || c.iter().any(|v| !v.is_finite()) {
                return Err(config_err(&format!("alpha.c_values[{i}]"), format!("needs {dim} finite component(s)")));
            }
        }
        if let Some(c) = &self.faces.g0_c {
            if c.len() != dim {
                return Err(config_err("faces.g0_c", format!("needs {dim} component(s)")));
            }
        }
        if self.faces.deltas.is_empty() || self.faces.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(config_err("faces.deltas", "needs at least one delta > 0"));
        }
        if self.verify.eps.iter().any(|e| !(*e > 0.0)) {
            return Err(config_err("verify.eps", "every eps must be > 0"));
        }
        if self.verify.periods == 0 {
            return Err(config_err("verify.periods", "must be >= 1"));
        }
        let s = &self.subsolution;
        if !(s.sigma >= 0.0) || !(s.min_sigma >= 0.0) || !(s.cap > 0.0) || !(s.radius_cells > 0.0) {
            return Err(config_err("subsolution", "sigma, min_sigma >= 0 and cap, radius_cells > 0"));
        }
        let l = &self.closed_lp;
        if l.k_max < 1 || l.k_refined < l.k_max || l.m_max.is_some_and(|m| m < 0) {
            return Err(config_err("closed_lp", "need 1 <= k_max <= k_refined and m_max >= 0"));
        }
        self.alpha_settings()
            .validate()
            .map_err(|e| config_err("basis", e.to_string()))?;
        Ok(())
    }

    pub fn build_grid(&self) -> Result<SpaceTimeGrid> {
        let g = &self.grid;
        SpaceTimeGrid::new(self.system.dim, g.nx, g.nt, g.nv, g.v_max).map_err(|e| config_err("grid", e.to_string()))
    }

    pub fn dp_settings(&self) -> DpSettings {
        DpSettings {
            n_lo: self.windows.n_lo,
            n_hi: self.windows.n_hi,
            max_iters: self.windows.max_iters,
            tol_alpha: self.tolerances.tol_alpha,
            tol_h: self.tolerances.tol_h,
            tol_dom: self.tolerances.tol_dom,
            ..DpSettings::default()
        }
    }

    pub fn alpha_settings(&self) -> AlphaSettings {
        AlphaSettings {
            k_max: self.basis.k_max,
            m_max: self.basis.m_max,
            tol_cross: self.tolerances.tol_cross,
            tol_face: self.tolerances.tol_face,
            tol_g0: self.tolerances.tol_g0,
        }
    }

    /// SHA-256 of the canonical JSON form, after command-line overrides.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }
}

pub fn point_of(c: &[f64]) -> Point {
    [c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[system]\nkind = \"flat\"\n[grid]\nnx = 16\nnt = 4\nnv = 17\nv_max = 4.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.verify.curves, 100);
        assert_eq!(c.build_grid().unwrap().nx(), 16);
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn missing_grid_names_the_field() {
        let err = ExperimentConfig::from_toml("[system]\nkind = \"flat\"\n").unwrap_err();
        let Error::Config { path, message } = err else { panic!("{err:?}") };
        assert_eq!(path, "grid");
        assert!(message.contains("missing field"), "{message}");
        let no_nt = "[system]\nkind = \"flat\"\n[grid]\nnx = 16\nnv = 17\nv_max = 4.0\n";
        let Error::Config { path, .. } = ExperimentConfig::from_toml(no_nt).unwrap_err() else { panic!() };
        assert_eq!(path, "grid.nt");
    }

    #[test]
    fn nested_errors_carry_paths() {
        let bad = format!("{MINIMAL}[tolerances]\ntol_sub = \"x\"\n");
        let Error::Config { path, .. } = ExperimentConfig::from_toml(&bad).unwrap_err() else { panic!() };
        assert_eq!(path, "tolerances.tol_sub");
        let neg = format!("{MINIMAL}[tolerances]\ntol_lem = 0.0\n");
        let Error::Config { path, .. } = ExperimentConfig::from_toml(&neg).unwrap_err() else { panic!() };
        assert_eq!(path, "tolerances.tol_lem");
        let unknown = format!("{MINIMAL}[grid2]\n");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
        let custom = "[system]\nkind = \"custom\"\n[grid]\nnx = 16\nnt = 4\nnv = 17\nv_max = 4.0\n";
        let Error::Config { path, .. } = ExperimentConfig::from_toml(custom).unwrap_err() else { panic!() };
        assert_eq!(path, "system.potential");
    }

    #[test]
    fn custom_potential_parses() {
        let text = "[system]\nkind = \"custom\"\n[system.potential]\nconstant = -1.0\n\
                    terms = [{ coeff = 1.0, k = [1, 0], kind = \"cos\" }]\n\
                    [grid]\nnx = 16\nnt = 4\nnv = 17\nv_max = 4.0\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        let sys = c.system.build().unwrap();
        assert!((sys.potential().value([0.0; 2], 0.0, 1)).abs() < 1e-15);
    }
}
