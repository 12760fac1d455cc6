//! JSON run configuration and the runner behind the `clpv` tool.
//!
//! A configuration is loaded in two passes. [`Config::load`] checks the
//! JSON shape; [`Plan::build`] parses every expression and checks every
//! dimension. Nothing is simulated or certified before both succeed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::casestudy;
use crate::certify::{self, CertReport, CertifyError, Condition, Goal, SymbolicMatrixFn, Verdict};
use crate::expr::{self, ExprMatrix, ExprVector, ParseError, VarRole, VarSpace};
use crate::geometry::{GeodesicSettings, GeometryError, Metric};
use crate::grid::{Grid, DEFAULT_POINTS_PER_AXIS};
use crate::lpv::{EquilibriumFamily, FamilyDef, GainScheduledController, LpvError, SchedulingMode};
use crate::model::{ModelError, SystemModel};
use crate::realization::{CcmController, RealizationError, DEFAULT_SUBSTEPS};
use crate::sim::{self, Controller, ReferenceSignal, SimOptions, SimResult, Summary, Target};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("expression: {0}")]
    Expression(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl ConfigError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Schema(_) => 2,
            ConfigError::Expression(_) => 3,
            ConfigError::Io { .. } | ConfigError::Runtime(_) => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ConfigError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn schema(msg: impl fmt::Display) -> ConfigError {
    ConfigError::Schema(msg.to_string())
}

fn parse_error(path: &str, e: &ParseError) -> ConfigError {
    ConfigError::Expression(format!("{path}: {e}"))
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Parse { path, source } => parse_error(&format!("model.{path}"), &source),
            ModelError::Eval(m) => ConfigError::Runtime(m),
            other => schema(other),
        }
    }
}

impl From<LpvError> for ConfigError {
    fn from(e: LpvError) -> Self {
        match e {
            LpvError::Parse { path, source } => parse_error(&path, &source),
            LpvError::Model(m) => m.into(),
            LpvError::OutOfDomain { .. } | LpvError::RateOutOfBounds { .. } | LpvError::Linalg(_) => {
                ConfigError::Runtime(e.to_string())
            }
            other => schema(other),
        }
    }
}

impl From<CertifyError> for ConfigError {
    fn from(e: CertifyError) -> Self {
        match e {
            CertifyError::Parse { path, source } => parse_error(&path, &source),
            CertifyError::Dimension { .. } | CertifyError::Asymmetric(_) | CertifyError::NonPositive(..) => schema(e),
            other => ConfigError::Runtime(other.to_string()),
        }
    }
}

impl From<GeometryError> for ConfigError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Eval(m) => ConfigError::Runtime(m),
            other => schema(other),
        }
    }
}

impl From<RealizationError> for ConfigError {
    fn from(e: RealizationError) -> Self {
        match e {
            RealizationError::Geometry(g) => g.into(),
            RealizationError::Lpv(l) => l.into(),
            RealizationError::Eval(m) => ConfigError::Runtime(m),
            other => schema(other),
        }
    }
}

/// Matrix entry: an expression string or a plain number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    pub fn text(&self) -> String {
        match self {
            Entry::Number(v) => format!("{v}"),
            Entry::Text(s) => s.clone(),
        }
    }
}

impl From<&str> for Entry {
    fn from(s: &str) -> Self {
        Entry::Text(s.to_string())
    }
}

pub type MatrixSpec = Vec<Vec<Entry>>;

/// Inclusive bounds `[lo, hi]`; `null` leaves a side open.
pub type Bound = (Option<f64>, Option<f64>);

fn within(v: f64, b: &Bound) -> bool {
    b.0.is_none_or(|lo| v >= lo) && b.1.is_none_or(|hi| v <= hi)
}

fn show_bound(b: &Bound) -> String {
    let side = |v: Option<f64>| v.map_or("_".to_string(), |v| format!("{v}"));
    format!("[{}, {}]", side(b.0), side(b.1))
}

/// Either `{"builtin": name}` or an inline plant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub h: Vec<String>,
}

/// Either `{"builtin": name}` or an inline family (see [`FamilyDef`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_e: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_e: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_e: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_map: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bounds: Option<Vec<(f64, f64)>>,
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// LPV gain over σ, scheduled by the reference.
    Gsc1 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        gain: MatrixSpec,
    },
    /// LPV gain over σ, scheduled by the state.
    Gsc2 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        gain: MatrixSpec,
    },
    /// Differential gain over the plant variables and a metric over the
    /// states.
    Ccm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        gain: MatrixSpec,
        metric: MatrixSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric_bounds: Option<(f64, f64)>,
        #[serde(default)]
        geodesic: GeodesicSettings,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
    /// `u = law(...)` over the states, `t`, the reference `w`, its
    /// derivative `<w>_dot`, and the target `<x>_star`, `<u>_star`.
    Custom { name: String, law: Vec<String> },
}

impl ControllerSpec {
    pub fn name(&self) -> &str {
        match self {
            ControllerSpec::Gsc1 { name, .. } => name.as_deref().unwrap_or("gsc1"),
            ControllerSpec::Gsc2 { name, .. } => name.as_deref().unwrap_or("gsc2"),
            ControllerSpec::Ccm { name, .. } => name.as_deref().unwrap_or("ccm"),
            ControllerSpec::Custom { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Follow the equilibrium family through the reference map.
    Family,
    Fixed { x: Vec<f64>, u: Vec<f64> },
}

/// Acceptance predicates on one simulation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimExpect {
    /// When absent, divergence is a failure of its own kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_fit: Option<Bound>,
    /// Bounds on `sup |x − x*|` (or one component of it) for `t ≥ steady_from`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_error: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_component: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_error: Option<Bound>,
}

fn default_t_end() -> f64 {
    sim::DEFAULT_T_END
}

fn default_dt() -> f64 {
    sim::DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub reference: ReferenceSignal,
    pub x0: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Controllers to run; all of them when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controllers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<ReferenceSignal>,
    /// Predicates keyed by controller name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub expect: BTreeMap<String, SimExpect>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertExpect {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Bounds on the bisected scalar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<Bound>,
}

fn default_points() -> usize {
    DEFAULT_POINTS_PER_AXIS
}

fn default_bisect_tol() -> f64 {
    1e-3
}

/// One certification request.
///
/// LPV conditions run over σ with the family's box and rate box unless
/// `params` and `bounds` declare a space of their own. CCM conditions need
/// one `bounds` entry per plant variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertSpec {
    pub name: String,
    pub condition: Condition,
    /// Gain-scheduled controller closing the loop, or the CCM controller
    /// supplying metric and gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    /// Explicit closed-loop matrix (stability only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acl: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<MatrixSpec>,
    /// λ or α to check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Bisection bracket instead of a single value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
    #[serde(default = "default_bisect_tol")]
    pub tol: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<CertExpect>,
}

fn default_jac_points() -> usize {
    5
}

fn default_jac_h() -> f64 {
    1e-6
}

fn default_jac_tol() -> f64 {
    1e-5
}

/// Finite-difference checks: model Jacobians, hidden coupling of
/// state-scheduled controllers, exactness of CCM realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacCheckSpec {
    /// Box over the plant variables; `[-2, 2]` on every axis by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
    #[serde(default = "default_jac_points")]
    pub points: usize,
    #[serde(default = "default_jac_h")]
    pub h: f64,
    #[serde(default = "default_jac_tol")]
    pub tol: f64,
}

impl Default for JacCheckSpec {
    fn default() -> Self {
        Self {
            bounds: None,
            points: default_jac_points(),
            h: default_jac_h(),
            tol: default_jac_tol(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default)]
    pub controllers: Vec<ControllerSpec>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default)]
    pub certifications: Vec<CertSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaccheck: Option<JacCheckSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(schema)
    }

    /// Reads a configuration; a relative `output_dir` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The benchmark: both scenarios, all three controllers, and the
    /// acceptance predicates on GSC2 and CCM.
    pub fn casestudy() -> Self {
        let row = |r: [&str; 2]| vec![r.iter().map(|s| Entry::from(*s)).collect::<Vec<_>>()];
        let m = casestudy::ccm_metric_matrix();
        let metric = (0..2).map(|i| (0..2).map(|j| Entry::Number(m[(i, j)])).collect()).collect();
        let controllers = vec![
            ControllerSpec::Gsc1 {
                name: None,
                gain: row(casestudy::LPV_GAIN),
            },
            ControllerSpec::Gsc2 {
                name: None,
                gain: row(casestudy::LPV_GAIN),
            },
            ControllerSpec::Ccm {
                name: None,
                gain: row(casestudy::CCM_GAIN),
                metric,
                metric_bounds: None,
                geodesic: GeodesicSettings::default(),
                substeps: DEFAULT_SUBSTEPS,
            },
        ];
        let scenario = |s: casestudy::Scenario, expect: BTreeMap<String, SimExpect>| ScenarioSpec {
            name: s.name().to_string(),
            reference: s.reference(),
            x0: casestudy::X0.to_vec(),
            t_end: sim::DEFAULT_T_END,
            dt: sim::DEFAULT_DT,
            controllers: Vec::new(),
            target: Some(TargetSpec::Family),
            disturbance: None,
            expect,
        };
        let step = BTreeMap::from([
            (
                "gsc2".to_string(),
                SimExpect {
                    lambda_fit: Some((Some(0.4), Some(0.6))),
                    ..Default::default()
                },
            ),
            (
                "ccm".to_string(),
                SimExpect {
                    lambda_fit: Some((Some(casestudy::CCM_LAMBDA), None)),
                    ..Default::default()
                },
            ),
        ]);
        let steady = |b: Bound| SimExpect {
            steady_error: Some(b),
            steady_from: Some(10.0),
            steady_component: Some(1),
            ..Default::default()
        };
        let sine = BTreeMap::from([
            ("gsc2".to_string(), steady((Some(0.1), None))),
            ("ccm".to_string(), steady((None, Some(1e-3)))),
        ]);
        Config {
            model: ModelSpec {
                builtin: Some("rugh1991".into()),
                ..Default::default()
            },
            family: Some(FamilySpec {
                builtin: Some("rugh1991".into()),
                ..Default::default()
            }),
            controllers,
            scenarios: vec![
                scenario(casestudy::Scenario::Step, step),
                scenario(casestudy::Scenario::Sine, sine),
            ],
            certifications: vec![CertSpec {
                name: "gsc_decay".into(),
                condition: Condition::Stability,
                controller: Some("gsc1".into()),
                acl: None,
                metric: Some(vec![vec!["1".into(), "0".into()], vec!["0".into(), "1".into()]]),
                w: None,
                l: None,
                value: None,
                bracket: Some((0.5, 1.5)),
                tol: 1e-3,
                points: 11,
                params: None,
                bounds: None,
                rate_bounds: None,
                expect: Some(CertExpect {
                    verdict: None,
                    scalar: Some((Some(0.99), Some(1.01))),
                }),
            }],
            jaccheck: Some(JacCheckSpec::default()),
            output_dir: default_output_dir(),
        }
    }
}

fn parse_matrix(space: &Arc<VarSpace>, rows: &MatrixSpec, path: &str) -> Result<ExprMatrix, ConfigError> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows[0].len()) || rows[0].is_empty() {
        return Err(schema(format!("{path}: matrix rows must be non-empty and of equal length")));
    }
    let mut entries = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for (j, e) in r.iter().enumerate() {
            let ex = expr::parse(&e.text(), space).map_err(|err| parse_error(&format!("{path}[{i}][{j}]"), &err))?;
            entries.push(ex);
        }
    }
    Ok(ExprMatrix::new(space.clone(), rows.len(), rows[0].len(), entries))
}

/// A configured controller, ready to simulate.
#[derive(Debug, Clone)]
pub struct NamedController {
    pub name: String,
    pub controller: Controller,
}

/// Fully parsed and dimension-checked configuration.
#[derive(Debug)]
pub struct Plan {
    pub config: Config,
    pub model: SystemModel,
    pub family: Option<EquilibriumFamily>,
    pub controllers: Vec<NamedController>,
}

impl Plan {
    pub fn build(config: Config) -> Result<Self, ConfigError> {
        let model = build_model(&config.model)?;
        let family = match &config.family {
            Some(f) => Some(build_family(f, &model)?),
            None => None,
        };
        let mut controllers: Vec<NamedController> = Vec::new();
        for (i, spec) in config.controllers.iter().enumerate() {
            let name = spec.name().to_string();
            if controllers.iter().any(|c| c.name == name) {
                return Err(schema(format!("controllers[{i}]: duplicate name `{name}`")));
            }
            let controller = build_controller(spec, &model, family.as_ref(), &format!("controllers[{i}]"))?;
            controllers.push(NamedController { name, controller });
        }
        let plan = Plan {
            config,
            model,
            family,
            controllers,
        };
        plan.check_scenarios()?;
        for (i, c) in plan.config.certifications.iter().enumerate() {
            plan.prepare_cert(c, &format!("certifications[{i}]"))?;
        }
        if let Some(j) = &plan.config.jaccheck {
            plan.jac_grid(j)?;
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::build(Config::load(path)?)
    }

    fn controller(&self, name: &str, path: &str) -> Result<&NamedController, ConfigError> {
        self.controllers
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| schema(format!("{path}: unknown controller `{name}`")))
    }

    fn family(&self, path: &str) -> Result<&EquilibriumFamily, ConfigError> {
        self.family
            .as_ref()
            .ok_or_else(|| schema(format!("{path}: needs an equilibrium family")))
    }

    fn check_scenarios(&self) -> Result<(), ConfigError> {
        let mut names = Vec::new();
        for (i, s) in self.config.scenarios.iter().enumerate() {
            let path = format!("scenarios[{i}]");
            if names.contains(&s.name) {
                return Err(schema(format!("{path}: duplicate name `{}`", s.name)));
            }
            names.push(s.name.clone());
            s.reference.validate().map_err(|e| schema(format!("{path}.reference: {e}")))?;
            let dims = [
                ("x0", self.model.n_x(), s.x0.len()),
                ("reference", self.model.n_w(), s.reference.dim()),
            ];
            for (what, expected, found) in dims {
                if expected != found {
                    return Err(schema(format!("{path}.{what}: expected dimension {expected}, found {found}")));
                }
            }
            if let Some(d) = &s.disturbance {
                d.validate().map_err(|e| schema(format!("{path}.disturbance: {e}")))?;
                if d.dim() != self.model.n_w() {
                    return Err(schema(format!("{path}.disturbance: expected dimension {}", self.model.n_w())));
                }
            }
            if !(s.dt > 0.0 && s.dt <= s.t_end) {
                return Err(schema(format!("{path}: need 0 < dt <= t_end")));
            }
            match &s.target {
                Some(TargetSpec::Fixed { x, u }) => {
                    if x.len() != self.model.n_x() || u.len() != self.model.n_u() {
                        return Err(schema(format!("{path}.target: dimension mismatch")));
                    }
                }
                _ => {
                    self.family(&format!("{path}.target"))?;
                }
            }
            for c in self.scenario_controllers(s, &path)? {
                if let Controller::GainScheduled { .. } = c.controller {
                    self.family(&path)?;
                }
            }
            for (name, e) in &s.expect {
                self.controller(name, &format!("{path}.expect"))?;
                if let Some(k) = e.steady_component {
                    if k >= self.model.n_x() {
                        return Err(schema(format!("{path}.expect.{name}.steady_component: out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    fn scenario_controllers(&self, s: &ScenarioSpec, path: &str) -> Result<Vec<&NamedController>, ConfigError> {
        if s.controllers.is_empty() {
            return Ok(self.controllers.iter().collect());
        }
        s.controllers.iter().map(|n| self.controller(n, path)).collect()
    }

    fn target(&self, s: &ScenarioSpec) -> Target {
        match &s.target {
            Some(TargetSpec::Fixed { x, u }) => Target::fixed(x, u),
            _ => Target::Family(self.family.clone().expect("checked at build")),
        }
    }
}

fn build_model(spec: &ModelSpec) -> Result<SystemModel, ConfigError> {
    if let Some(b) = &spec.builtin {
        let inline = !spec.states.is_empty() || !spec.f.is_empty() || !spec.h.is_empty();
        if inline {
            return Err(schema("model: give either `builtin` or an inline definition"));
        }
        return Ok(SystemModel::builtin(b)?);
    }
    if spec.states.is_empty() || spec.f.is_empty() || spec.h.is_empty() {
        return Err(schema("model: inline definition needs `states`, `f` and `h`"));
    }
    fn refs(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }
    Ok(SystemModel::parse(
        spec.name.as_deref().unwrap_or("model"),
        &refs(&spec.states),
        &refs(&spec.inputs),
        &refs(&spec.disturbances),
        &spec.f,
        &spec.h,
    )?)
}

fn build_family(spec: &FamilySpec, model: &SystemModel) -> Result<EquilibriumFamily, ConfigError> {
    let inline = [&spec.params, &spec.x_e, &spec.u_e, &spec.w_e, &spec.g].iter().any(|v| v.is_some())
        || spec.bounds.is_some()
        || spec.rate_bounds.is_some()
        || spec.reference_map.is_some();
    if let Some(b) = &spec.builtin {
        if inline {
            return Err(schema("family: give either `builtin` or an inline definition"));
        }
        return Ok(EquilibriumFamily::builtin(b, model)?);
    }
    let need = |v: &Option<Vec<String>>, what: &str| v.clone().ok_or_else(|| schema(format!("family: missing `{what}`")));
    let def = FamilyDef {
        params: need(&spec.params, "params")?,
        x_e: need(&spec.x_e, "x_e")?,
        u_e: need(&spec.u_e, "u_e")?,
        w_e: need(&spec.w_e, "w_e")?,
        g: need(&spec.g, "g")?,
        reference_map: spec.reference_map.clone(),
        bounds: spec.bounds.clone().ok_or_else(|| schema("family: missing `bounds`"))?,
        rate_bounds: spec.rate_bounds.clone().ok_or_else(|| schema("family: missing `rate_bounds`"))?,
    };
    Ok(EquilibriumFamily::parse(spec.name.as_deref().unwrap_or("family"), model, &def)?)
}

fn build_controller(
    spec: &ControllerSpec,
    model: &SystemModel,
    family: Option<&EquilibriumFamily>,
    path: &str,
) -> Result<Controller, ConfigError> {
    let need_family = || family.ok_or_else(|| schema(format!("{path}: gain scheduling needs an equilibrium family")));
    match spec {
        ControllerSpec::Gsc1 { gain, .. } | ControllerSpec::Gsc2 { gain, .. } => {
            let family = need_family()?;
            let mode = if matches!(spec, ControllerSpec::Gsc1 { .. }) {
                SchedulingMode::ReferenceScheduled
            } else {
                SchedulingMode::StateScheduled
            };
            let k = parse_matrix(family.sigma_space(), gain, &format!("{path}.gain"))?;
            let controller = GainScheduledController::new(spec.name(), family, k, mode)?;
            Ok(Controller::GainScheduled {
                controller,
                family: family.clone(),
            })
        }
        ControllerSpec::Ccm {
            gain,
            metric,
            metric_bounds,
            geodesic,
            substeps,
            ..
        } => {
            let k = parse_matrix(model.space(), gain, &format!("{path}.gain"))?;
            let metric = build_metric(model, metric, *metric_bounds, &format!("{path}.metric"))?;
            Ok(Controller::Ccm(CcmController::new(model, k, metric, *geodesic, *substeps)?))
        }
        ControllerSpec::Custom { law, .. } => custom_controller(model, law, path),
    }
}

fn build_metric(model: &SystemModel, rows: &MatrixSpec, bounds: Option<(f64, f64)>, path: &str) -> Result<Metric, ConfigError> {
    let states = model.state_names();
    let space = Arc::new(VarSpace::from_names(&states, VarRole::State));
    let m = parse_matrix(&space, rows, path)?;
    let slots: Vec<usize> = (0..states.len()).collect();
    let field = SymbolicMatrixFn::new(m, &slots, true)?;
    Ok(Metric::new(field, bounds)?)
}

fn custom_controller(model: &SystemModel, law: &[String], path: &str) -> Result<Controller, ConfigError> {
    if law.len() != model.n_u() {
        return Err(schema(format!("{path}.law: expected {} entries, found {}", model.n_u(), law.len())));
    }
    let mut space = VarSpace::new();
    let (xs, us, ws) = (model.state_names(), model.input_names(), model.disturbance_names());
    for x in &xs {
        space.push(x, VarRole::State);
    }
    space.push("t", VarRole::Free);
    for w in &ws {
        space.push(w, VarRole::Disturbance);
    }
    for w in &ws {
        space.push(&format!("{w}_dot"), VarRole::Free);
    }
    for x in &xs {
        space.push(&format!("{x}_star"), VarRole::Free);
    }
    for u in &us {
        space.push(&format!("{u}_star"), VarRole::Free);
    }
    let expected = 1 + 2 * xs.len() + us.len() + 2 * ws.len();
    if space.len() != expected {
        return Err(schema(format!("{path}: generated variable names clash with plant names")));
    }
    let space = Arc::new(space);
    let law = ExprVector::parse(space.clone(), law).map_err(|e| parse_error(&format!("{path}.law"), &e))?;
    let f = move |inp: &sim::ControlInput| -> Result<DVector<f64>, String> {
        let mut p = Vec::with_capacity(space.len());
        p.extend(inp.x.iter());
        p.push(inp.t);
        p.extend(inp.target.w.iter());
        p.extend(inp.target.w_dot.iter());
        p.extend(inp.target.x.iter());
        p.extend(inp.target.u.iter());
        law.eval(&p).map_err(|e| e.describe(&space))
    };
    Ok(Controller::Custom(Arc::new(f)))
}

/// Outcome of one acceptance predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub value: Option<f64>,
    pub expected: String,
    pub pass: bool,
}

/// Per-run record written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub summary: Summary,
    pub csv: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<Predicate>,
    /// Divergence nobody asked for.
    pub unexpected_divergence: bool,
}

/// Result of one certification request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertRecord {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<CertReport>,
    /// Both end reports when the bisection bracket was invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_bracket: Option<(CertReport, CertReport)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSample {
    pub sigma: Vec<f64>,
    pub k_h: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub controller: String,
    /// Family whose σ the gain is written over; `K_h` depends on it.
    pub parameterization: String,
    pub samples: Vec<CouplingSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacCheckRecord {
    pub model: String,
    pub fd_max: f64,
    pub tol: f64,
    pub hidden_coupling: Vec<CouplingRecord>,
    /// Largest hidden coupling of each CCM realization.
    pub exactness: BTreeMap<String, f64>,
    pub predicates: Vec<Predicate>,
}

/// Everything one invocation produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub runs: Vec<RunRecord>,
    pub certifications: Vec<CertRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jaccheck: Option<JacCheckRecord>,
}

impl RunReport {
    pub fn failed_predicates(&self) -> Vec<String> {
        let runs = self
            .runs
            .iter()
            .flat_map(|r| r.predicates.iter().map(move |p| (format!("{}/{}", r.summary.scenario, r.summary.controller), p)));
        let certs = self
            .certifications
            .iter()
            .flat_map(|c| c.predicates.iter().map(move |p| (c.name.clone(), p)));
        let jac = self.jaccheck.iter().flat_map(|j| j.predicates.iter().map(|p| ("jaccheck".to_string(), p)));
        runs.chain(certs)
            .chain(jac)
            .filter(|(_, p)| !p.pass)
            .map(|(owner, p)| format!("{owner}: {} = {:?}, expected {}", p.name, p.value, p.expected))
            .collect()
    }

    /// 4 for unexpected divergence or an invalid bracket, 1 for a failed
    /// predicate, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        let hard = self.runs.iter().any(|r| r.unexpected_divergence)
            || self.certifications.iter().any(|c| c.invalid_bracket.is_some());
        if hard {
            4
        } else if !self.failed_predicates().is_empty() {
            1
        } else {
            0
        }
    }
}

/// Which parts of the plan to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub simulations: bool,
    pub certifications: bool,
    pub jaccheck: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        simulations: true,
        certifications: true,
        jaccheck: true,
    };
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ConfigError> {
    fs::write(path, bytes).map_err(|e| ConfigError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ConfigError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| ConfigError::Runtime(e.to_string()))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn check_bound(name: &str, value: f64, b: &Bound) -> Predicate {
    Predicate {
        name: name.to_string(),
        value: Some(value),
        expected: show_bound(b),
        pass: within(value, b),
    }
}

fn sim_predicates(result: &SimResult, summary: &Summary, e: &SimExpect, t_end: f64) -> Vec<Predicate> {
    let mut out = Vec::new();
    if let Some(d) = e.diverged {
        out.push(Predicate {
            name: "diverged".into(),
            value: Some(if result.diverged { 1.0 } else { 0.0 }),
            expected: format!("{d}"),
            pass: result.diverged == d,
        });
    }
    if let Some(b) = &e.lambda_fit {
        out.push(match summary.lambda_fit {
            Some(v) => check_bound("lambda_fit", v, b),
            None => Predicate {
                name: "lambda_fit".into(),
                value: None,
                expected: show_bound(b),
                pass: false,
            },
        });
    }
    if let Some(b) = &e.steady_error {
        let from = e.steady_from.unwrap_or(0.5 * t_end);
        let v = match e.steady_component {
            Some(k) => result.component_error_sup(k, from),
            None => result.error_sup(from),
        };
        let v = if result.diverged { f64::INFINITY } else { v };
        out.push(check_bound("steady_error", v, b));
    }
    if let Some(b) = &e.final_error {
        let v = if result.diverged { f64::INFINITY } else { result.final_error() };
        out.push(check_bound("final_error", v, b));
    }
    out
}

/// Lowest σ-space grid of a certification: its own `params` or the family's.
struct CertSpace {
    space: Arc<VarSpace>,
    grid: Grid,
    rates: Vec<(f64, f64)>,
}

enum CertJob<'a> {
    Stability {
        m: SymbolicMatrixFn,
        acl: Box<dyn Fn(&[f64]) -> Result<DMatrix<f64>, CertifyError> + Sync + 'a>,
        cs: CertSpace,
    },
    Synthesis {
        w: SymbolicMatrixFn,
        l: SymbolicMatrixFn,
        cs: CertSpace,
    },
    Performance {
        m: SymbolicMatrixFn,
        controller: &'a GainScheduledController,
        cs: CertSpace,
    },
    Ccm {
        m: SymbolicMatrixFn,
        k: ExprMatrix,
        grid: Grid,
    },
}

impl Plan {
    fn cert_space(&self, c: &CertSpec, path: &str) -> Result<CertSpace, ConfigError> {
        let (space, bounds, rates) = match &c.params {
            Some(names) => {
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                let space = VarSpace::from_names(&refs, VarRole::Scheduling);
                if space.len() != names.len() {
                    return Err(schema(format!("{path}.params: duplicate names")));
                }
                let bounds = c.bounds.clone().unwrap_or_default();
                let rates = c.rate_bounds.clone().unwrap_or_else(|| vec![(0.0, 0.0); names.len()]);
                (Arc::new(space), bounds, rates)
            }
            None => {
                let f = self.family(path)?;
                let bounds = c.bounds.clone().unwrap_or_else(|| f.bounds().to_vec());
                let rates = c.rate_bounds.clone().unwrap_or_else(|| f.rate_bounds().to_vec());
                (f.sigma_space().clone(), bounds, rates)
            }
        };
        if bounds.len() != space.len() || rates.len() != space.len() {
            return Err(schema(format!(
                "{path}: need one bound and one rate bound per scheduling parameter ({})",
                space.len()
            )));
        }
        Ok(CertSpace {
            grid: Grid::uniform(&bounds, c.points),
            space,
            rates,
        })
    }

    fn gs_controller(&self, c: &CertSpec, path: &str) -> Result<&GainScheduledController, ConfigError> {
        let name = c.controller.as_deref().ok_or_else(|| schema(format!("{path}: needs `controller`")))?;
        match &self.controller(name, path)?.controller {
            Controller::GainScheduled { controller, .. } => Ok(controller),
            _ => Err(schema(format!("{path}: `{name}` is not gain scheduled"))),
        }
    }

    fn prepare_cert(&self, c: &CertSpec, path: &str) -> Result<CertJob<'_>, ConfigError> {
        if c.value.is_some() == c.bracket.is_some() {
            return Err(schema(format!("{path}: give exactly one of `value` and `bracket`")));
        }
        if c.points == 0 {
            return Err(schema(format!("{path}.points: must be positive")));
        }
        let sigma_matrix = |rows: &Option<MatrixSpec>, what: &str, cs: &CertSpace, symmetric: bool| {
            let rows = rows.as_ref().ok_or_else(|| schema(format!("{path}: needs `{what}`")))?;
            let e = parse_matrix(&cs.space, rows, &format!("{path}.{what}"))?;
            let slots: Vec<usize> = (0..cs.space.len()).collect();
            Ok::<_, ConfigError>(SymbolicMatrixFn::new(e, &slots, symmetric)?)
        };
        match c.condition {
            Condition::Stability => {
                let cs = self.cert_space(c, path)?;
                let m = sigma_matrix(&c.metric, "metric", &cs, true)?;
                let acl: Box<dyn Fn(&[f64]) -> Result<DMatrix<f64>, CertifyError> + Sync> = match &c.acl {
                    Some(rows) => {
                        let e = parse_matrix(&cs.space, rows, &format!("{path}.acl"))?;
                        Box::new(move |s| e.eval(s).map_err(|err| CertifyError::Eval(err.describe(e.space()))))
                    }
                    None => {
                        let k = self.gs_controller(c, path)?;
                        let family = self.family(path)?;
                        let cl = certify::lpv_closed_loop(&self.model, family, k);
                        Box::new(move |s| cl(s).map(|l| l.a))
                    }
                };
                Ok(CertJob::Stability { m, acl, cs })
            }
            Condition::ConvexSynthesis => {
                self.family(path)?;
                let cs = self.cert_space(c, path)?;
                if c.params.is_some() {
                    return Err(schema(format!("{path}: convex synthesis runs over the family's σ")));
                }
                let w = sigma_matrix(&c.w, "w", &cs, true)?;
                let l = sigma_matrix(&c.l, "l", &cs, false)?;
                Ok(CertJob::Synthesis { w, l, cs })
            }
            Condition::Performance => {
                self.family(path)?;
                if c.params.is_some() {
                    return Err(schema(format!("{path}: performance runs over the family's σ")));
                }
                let cs = self.cert_space(c, path)?;
                let m = sigma_matrix(&c.metric, "metric", &cs, true)?;
                let controller = self.gs_controller(c, path)?;
                Ok(CertJob::Performance { m, controller, cs })
            }
            Condition::Ccm | Condition::CcmPerformance => {
                let n = self.model.space().len();
                let bounds = c.bounds.clone().ok_or_else(|| schema(format!("{path}: needs `bounds` over the plant variables")))?;
                if bounds.len() != n {
                    return Err(schema(format!("{path}.bounds: expected {n} entries, found {}", bounds.len())));
                }
                let grid = Grid::uniform(&bounds, c.points);
                let (metric, k) = match (&c.controller, &c.metric) {
                    (Some(name), None) => match &self.controller(name, path)?.controller {
                        Controller::Ccm(cc) => (cc.metric().clone(), cc.gain_expr().clone()),
                        _ => return Err(schema(format!("{path}: `{name}` is not a CCM controller"))),
                    },
                    (None, Some(rows)) => {
                        let metric = build_metric(&self.model, rows, None, &format!("{path}.metric"))?;
                        let k = match &c.l {
                            Some(rows) => parse_matrix(self.model.space(), rows, &format!("{path}.l"))?,
                            None => ExprMatrix::constant(
                                self.model.space().clone(),
                                &DMatrix::zeros(self.model.n_u(), self.model.n_x()),
                            ),
                        };
                        (metric, k)
                    }
                    _ => return Err(schema(format!("{path}: give either `controller` or `metric`"))),
                };
                let m = metric.to_model_field(&self.model)?;
                Ok(CertJob::Ccm { m, k, grid })
            }
        }
    }

    fn run_cert(&self, c: &CertSpec, path: &str) -> Result<CertRecord, ConfigError> {
        let job = self.prepare_cert(c, path)?;
        let model = &self.model;
        let check = |v: f64| -> Result<CertReport, CertifyError> {
            match &job {
                CertJob::Stability { m, acl, cs } => certify::check_stability_lmi(m, acl, v, &cs.grid, &cs.rates),
                CertJob::Synthesis { w, l, cs } => {
                    let family = self.family.as_ref().expect("checked");
                    certify::check_convex_synthesis(w, l, certify::lpv_plant(model, family), v, &cs.grid, &cs.rates)
                        .map(|s| s.report)
                }
                CertJob::Performance { m, controller, cs } => {
                    let family = self.family.as_ref().expect("checked");
                    certify::check_performance_lmi(m, certify::lpv_closed_loop(model, family, controller), v, &cs.grid, &cs.rates)
                }
                CertJob::Ccm { m, k, grid } => match c.condition {
                    Condition::Ccm => certify::check_ccm(m, model, k, v, grid),
                    _ => certify::check_ccm_performance(m, model, k, v, grid),
                },
            }
        };
        let goal = match c.condition {
            Condition::Performance | Condition::CcmPerformance => Goal::Minimize,
            _ => Goal::Maximize,
        };
        let outcome = match (c.value, c.bracket) {
            (Some(v), _) => check(v),
            (None, Some(b)) => certify::bisect(check, goal, b, c.tol),
            _ => unreachable!("checked at build"),
        };
        let mut rec = CertRecord {
            name: c.name.clone(),
            report: None,
            invalid_bracket: None,
            predicates: Vec::new(),
        };
        match outcome {
            Ok(r) => rec.report = Some(r),
            Err(CertifyError::InvalidBracket { reports, .. }) => {
                rec.invalid_bracket = Some(*reports);
                return Ok(rec);
            }
            Err(e) => return Err(e.into()),
        }
        let report = rec.report.as_ref().expect("set above");
        if let Some(e) = &c.expect {
            if let Some(v) = e.verdict {
                rec.predicates.push(Predicate {
                    name: "verdict".into(),
                    value: None,
                    expected: format!("{v:?}"),
                    pass: report.verdict == v,
                });
            }
            if let Some(b) = &e.scalar {
                rec.predicates.push(match report.certified_scalar {
                    Some(s) => check_bound("certified_scalar", s, b),
                    None => Predicate {
                        name: "certified_scalar".into(),
                        value: None,
                        expected: show_bound(b),
                        pass: false,
                    },
                });
            }
        }
        Ok(rec)
    }

    fn jac_grid(&self, j: &JacCheckSpec) -> Result<Grid, ConfigError> {
        let n = self.model.space().len();
        let bounds = j.bounds.clone().unwrap_or_else(|| vec![(-2.0, 2.0); n]);
        if bounds.len() != n {
            return Err(schema(format!("jaccheck.bounds: expected {n} entries, found {}", bounds.len())));
        }
        if !(j.h > 0.0) || j.points == 0 {
            return Err(schema("jaccheck: need h > 0 and points > 0"));
        }
        Ok(Grid::uniform(&bounds, j.points))
    }

    fn run_jaccheck(&self, j: &JacCheckSpec) -> Result<JacCheckRecord, ConfigError> {
        let grid = self.jac_grid(j)?;
        let (nx, nu) = (self.model.n_x(), self.model.n_u());
        let mut fd_max = 0.0f64;
        for p in grid.points() {
            fd_max = fd_max.max(self.model.fd_check(&p[..nx], &p[nx..nx + nu], &p[nx + nu..], j.h)?);
        }
        let mut rec = JacCheckRecord {
            model: self.model.name().to_string(),
            fd_max,
            tol: j.tol,
            hidden_coupling: Vec::new(),
            exactness: BTreeMap::new(),
            predicates: vec![check_bound("fd_max", fd_max, &(None, Some(j.tol)))],
        };
        let Some(family) = &self.family else {
            return Ok(rec);
        };
        let sigma_grid = Grid::uniform(family.bounds(), j.points);
        for nc in &self.controllers {
            match &nc.controller {
                Controller::GainScheduled { controller, .. } if controller.mode() == SchedulingMode::StateScheduled => {
                    let mut samples = Vec::new();
                    for s in sigma_grid.points() {
                        let kh = controller.hidden_coupling(family, &s)?;
                        let k_h = kh.row_iter().map(|r| r.iter().copied().collect()).collect();
                        samples.push(CouplingSample { sigma: s, k_h });
                    }
                    rec.hidden_coupling.push(CouplingRecord {
                        controller: nc.name.clone(),
                        parameterization: family.name().to_string(),
                        samples,
                    });
                }
                Controller::Ccm(cc) => {
                    let e = cc.exactness_check(family, &sigma_grid, j.h)?;
                    rec.predicates.push(check_bound(&format!("exactness[{}]", nc.name), e, &(None, Some(j.tol))));
                    rec.exactness.insert(nc.name.clone(), e);
                }
                _ => {}
            }
        }
        Ok(rec)
    }

    /// Simulates one (scenario, controller) pair and writes its CSV and
    /// summary JSON.
    fn run_sim(&self, s: &ScenarioSpec, nc: &NamedController, out: &Path) -> Result<RunRecord, ConfigError> {
        let options = SimOptions {
            dt: s.dt,
            t_end: s.t_end,
            disturbance: s.disturbance.clone(),
            ..Default::default()
        };
        let result = sim::simulate(&self.model, &nc.controller, &self.target(s), &s.reference, &s.x0, &options)
            .map_err(|e| ConfigError::Runtime(format!("{}/{}: {e}", s.name, nc.name)))?;
        let summary = Summary::build(&s.name, &nc.name, &result, &s.reference);
        let expect = s.expect.get(&nc.name).cloned().unwrap_or_default();
        let stem = format!("{}_{}", s.name, nc.name);
        let csv = format!("{stem}.csv");
        let mut bytes = Vec::new();
        result.write_csv(&mut bytes).map_err(|e| ConfigError::Runtime(e.to_string()))?;
        write_file(&out.join(&csv), &bytes)?;
        let rec = RunRecord {
            predicates: sim_predicates(&result, &summary, &expect, s.t_end),
            unexpected_divergence: result.diverged && expect.diverged != Some(true),
            summary,
            csv,
        };
        write_json(&out.join(format!("{stem}.json")), &rec)?;
        Ok(rec)
    }

    /// Runs the selected stages, writes every artifact under `out`, and
    /// writes `summary.json` last.
    pub fn execute(&self, out: &Path, stages: Stages) -> Result<RunReport, ConfigError> {
        fs::create_dir_all(out).map_err(|e| ConfigError::io(out, e))?;
        let mut report = RunReport::default();
        if stages.certifications {
            for (i, c) in self.config.certifications.iter().enumerate() {
                let rec = self.run_cert(c, &format!("certifications[{i}]"))?;
                write_json(&out.join(format!("cert_{}.json", c.name)), &rec)?;
                report.certifications.push(rec);
            }
        }
        if stages.jaccheck {
            let spec = self.config.jaccheck.clone().unwrap_or_default();
            let rec = self.run_jaccheck(&spec)?;
            write_json(&out.join("jaccheck.json"), &rec)?;
            report.jaccheck = Some(rec);
        }
        if stages.simulations {
            let mut jobs = Vec::new();
            for (i, s) in self.config.scenarios.iter().enumerate() {
                for nc in self.scenario_controllers(s, &format!("scenarios[{i}]"))? {
                    jobs.push((s, nc));
                }
            }
            let runs: Vec<Result<RunRecord, ConfigError>> = jobs.par_iter().map(|(s, nc)| self.run_sim(s, nc, out)).collect();
            report.runs = runs.into_iter().collect::<Result<_, _>>()?;
        }
        write_json(&out.join("summary.json"), &report)?;
        Ok(report)
    }
}
