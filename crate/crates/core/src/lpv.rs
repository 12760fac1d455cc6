//! Equilibrium families, LPV linearization along them, gain-scheduled
//! controller realizations and the two diagnostics that explain where
//! gain scheduling goes wrong: hidden coupling and the residual term.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, ExprMatrix, ExprVector, ParseError, VarRole, VarSpace};
use crate::grid::Grid;
use crate::linalg;
use crate::model::{Jacobians, ModelError, SystemModel};

/// Central-difference step used by the numerical hidden-coupling route.
pub const HIDDEN_COUPLING_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpvError {
    #[error("scheduling parameter {sigma:?} outside the design region {bounds:?}")]
    OutOfDomain {
        sigma: Vec<f64>,
        bounds: Vec<(f64, f64)>,
    },
    #[error("parameter rate {rate:?} outside the rate box {bounds:?}")]
    RateOutOfBounds {
        rate: Vec<f64>,
        bounds: Vec<(f64, f64)>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("scheduling map depends on `{0}`; a state-scheduled realization needs g = g(x)")]
    ScheduleNotStateOnly(String),
    #[error("family has no reference map σ = r(w)")]
    NoReferenceMap,
    #[error("unknown built-in family `{0}`")]
    UnknownFamily(String),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Text form of an equilibrium family, as found in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDef {
    /// Names of the scheduling variables σ.
    pub params: Vec<String>,
    pub x_e: Vec<String>,
    pub u_e: Vec<String>,
    pub w_e: Vec<String>,
    /// Scheduling map `σ = g(x)` over the plant's variable names.
    pub g: Vec<String>,
    /// Optional map `σ = r(w)` from the exogenous reference.
    #[serde(default)]
    pub reference_map: Option<Vec<String>>,
    pub bounds: Vec<(f64, f64)>,
    pub rate_bounds: Vec<(f64, f64)>,
}

/// Equilibrium point of the family at one σ.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

/// `σ ↦ (x_e, u_e, w_e, z_e)` together with the scheduling map `g` and the
/// parameter and rate boxes.
#[derive(Debug, Clone)]
pub struct EquilibriumFamily {
    name: String,
    sigma_space: Arc<VarSpace>,
    model_space: Arc<VarSpace>,
    n_x: usize,
    n_u: usize,
    n_w: usize,
    x_e: ExprVector,
    u_e: ExprVector,
    w_e: ExprVector,
    z_e: ExprVector,
    dx_e: ExprMatrix,
    du_e: ExprMatrix,
    g: ExprVector,
    reference_map: Option<ExprVector>,
    /// `∂r/∂w`.
    reference_jac: Option<ExprMatrix>,
    bounds: Vec<(f64, f64)>,
    rate_bounds: Vec<(f64, f64)>,
}

pub const BUILTIN_FAMILIES: &[&str] = &["rugh1991", "rugh1991_w"];

impl EquilibriumFamily {
    pub fn parse(name: &str, model: &SystemModel, def: &FamilyDef) -> Result<Self, LpvError> {
        let mut sigma_space = VarSpace::new();
        for p in &def.params {
            sigma_space.push(p, VarRole::Scheduling);
        }
        if sigma_space.len() != def.params.len() {
            return Err(LpvError::Dimension {
                what: "distinct scheduling names".into(),
                expected: def.params.len(),
                found: sigma_space.len(),
            });
        }
        let sigma_space = Arc::new(sigma_space);
        let n_sigma = sigma_space.len();
        let vec_over = |path: &str, space: &Arc<VarSpace>, texts: &[String], len: usize| {
            if texts.len() != len {
                return Err(LpvError::Dimension {
                    what: path.to_string(),
                    expected: len,
                    found: texts.len(),
                });
            }
            let entries = texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    crate::expr::parse(t, space).map_err(|source| LpvError::Parse {
                        path: format!("{path}[{i}]"),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ExprVector::new(space.clone(), entries))
        };
        let x_e = vec_over("x_e", &sigma_space, &def.x_e, model.n_x())?;
        let u_e = vec_over("u_e", &sigma_space, &def.u_e, model.n_u())?;
        let w_e = vec_over("w_e", &sigma_space, &def.w_e, model.n_w())?;
        let g = vec_over("g", model.space(), &def.g, n_sigma)?;
        let reference_map = def
            .reference_map
            .as_ref()
            .map(|r| vec_over("reference_map", model.space(), r, n_sigma))
            .transpose()?;
        for (what, b) in [("bounds", &def.bounds), ("rate_bounds", &def.rate_bounds)] {
            if b.len() != n_sigma {
                return Err(LpvError::Dimension {
                    what: what.into(),
                    expected: n_sigma,
                    found: b.len(),
                });
            }
        }
        // z_e(σ) = h(x_e(σ), u_e(σ), w_e(σ))
        let mut with: Vec<Expr> = Vec::new();
        with.extend(x_e.entries().iter().cloned());
        with.extend(u_e.entries().iter().cloned());
        with.extend(w_e.entries().iter().cloned());
        let z_e = model.h().substitute(sigma_space.clone(), &with);
        let sigma_slots: Vec<usize> = (0..n_sigma).collect();
        let w_slots: Vec<usize> = (model.n_x() + model.n_u()..model.space().len()).collect();
        let reference_jac = reference_map.as_ref().map(|r| r.jacobian(&w_slots));
        Ok(Self {
            reference_jac,
            name: name.to_string(),
            dx_e: x_e.jacobian(&sigma_slots),
            du_e: u_e.jacobian(&sigma_slots),
            sigma_space,
            model_space: model.space().clone(),
            n_x: model.n_x(),
            n_u: model.n_u(),
            n_w: model.n_w(),
            x_e,
            u_e,
            w_e,
            z_e,
            g,
            reference_map,
            bounds: def.bounds.clone(),
            rate_bounds: def.rate_bounds.clone(),
        })
    }

    /// Definition of a built-in family for the `rugh1991` plant.
    ///
    /// * `rugh1991`: σ = e^{-w_e}, g(x) = e^{-x2}
    /// * `rugh1991_w`: σ = w_e, g(x) = x2
    pub fn builtin_def(name: &str) -> Result<FamilyDef, LpvError> {
        let s = |v: &[&str]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>();
        let e3 = 3f64.exp();
        match name {
            "rugh1991" => Ok(FamilyDef {
                params: s(&["sigma"]),
                x_e: s(&["0", "-ln(sigma)"]),
                u_e: s(&["sigma - 1"]),
                w_e: s(&["-ln(sigma)"]),
                g: s(&["exp(-x2)"]),
                reference_map: Some(s(&["exp(-w)"])),
                bounds: vec![(1.0 / e3, e3)],
                rate_bounds: vec![(-e3, e3)],
            }),
            "rugh1991_w" => Ok(FamilyDef {
                params: s(&["sigma"]),
                x_e: s(&["0", "sigma"]),
                u_e: s(&["exp(-sigma) - 1"]),
                w_e: s(&["sigma"]),
                g: s(&["x2"]),
                reference_map: Some(s(&["w"])),
                bounds: vec![(-3.0, 3.0)],
                rate_bounds: vec![(-1.0, 1.0)],
            }),
            other => Err(LpvError::UnknownFamily(other.to_string())),
        }
    }

    pub fn builtin(name: &str, model: &SystemModel) -> Result<Self, LpvError> {
        Self::parse(name, model, &Self::builtin_def(name)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma_space(&self) -> &Arc<VarSpace> {
        &self.sigma_space
    }

    pub fn n_sigma(&self) -> usize {
        self.sigma_space.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn rate_bounds(&self) -> &[(f64, f64)] {
        &self.rate_bounds
    }

    pub fn x_e(&self) -> &ExprVector {
        &self.x_e
    }

    pub fn u_e(&self) -> &ExprVector {
        &self.u_e
    }

    pub fn w_e(&self) -> &ExprVector {
        &self.w_e
    }

    pub fn g(&self) -> &ExprVector {
        &self.g
    }

    pub fn reference_map(&self) -> Option<&ExprVector> {
        self.reference_map.as_ref()
    }

    pub fn contains(&self, sigma: &[f64]) -> bool {
        sigma.len() == self.n_sigma()
            && sigma
                .iter()
                .zip(&self.bounds)
                .all(|(s, (lo, hi))| *s >= *lo && *s <= *hi)
    }

    pub fn check_domain(&self, sigma: &[f64]) -> Result<(), LpvError> {
        if sigma.len() != self.n_sigma() {
            return Err(LpvError::Dimension {
                what: "sigma".into(),
                expected: self.n_sigma(),
                found: sigma.len(),
            });
        }
        if self.contains(sigma) {
            Ok(())
        } else {
            Err(LpvError::OutOfDomain {
                sigma: sigma.to_vec(),
                bounds: self.bounds.clone(),
            })
        }
    }

    fn eval_sigma(&self, v: &ExprVector, sigma: &[f64]) -> Result<DVector<f64>, LpvError> {
        v.eval(sigma)
            .map_err(|e| ModelError::Eval(e.describe(&self.sigma_space)).into())
    }

    fn eval_sigma_matrix(&self, m: &ExprMatrix, sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        m.eval(sigma)
            .map_err(|e| ModelError::Eval(e.describe(&self.sigma_space)).into())
    }

    fn eval_model_space(&self, v: &ExprVector, p: &[f64]) -> Result<DVector<f64>, LpvError> {
        v.eval(p)
            .map_err(|e| ModelError::Eval(e.describe(&self.model_space)).into())
    }

    /// Equilibrium at σ without a domain check.
    pub fn point_unchecked(&self, sigma: &[f64]) -> Result<EquilibriumPoint, LpvError> {
        Ok(EquilibriumPoint {
            x: self.eval_sigma(&self.x_e, sigma)?,
            u: self.eval_sigma(&self.u_e, sigma)?,
            w: self.eval_sigma(&self.w_e, sigma)?,
            z: self.eval_sigma(&self.z_e, sigma)?,
        })
    }

    pub fn point(&self, sigma: &[f64]) -> Result<EquilibriumPoint, LpvError> {
        self.check_domain(sigma)?;
        self.point_unchecked(sigma)
    }

    /// `E(σ) = ∂x_e/∂σ`.
    pub fn state_sensitivity(&self, sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        self.eval_sigma_matrix(&self.dx_e, sigma)
    }

    /// `∂u_e/∂σ`.
    pub fn input_sensitivity(&self, sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        self.eval_sigma_matrix(&self.du_e, sigma)
    }

    /// `σ = g(x, w)`; `u` does not enter the scheduling map.
    pub fn schedule(&self, x: &[f64], w: &[f64]) -> Result<DVector<f64>, LpvError> {
        let p = self.pack(x, None, w);
        self.eval_model_space(&self.g, &p)
    }

    /// `σ = r(w)` from the exogenous reference.
    pub fn reference_sigma(&self, w: &[f64]) -> Result<DVector<f64>, LpvError> {
        let r = self.reference_map.as_ref().ok_or(LpvError::NoReferenceMap)?;
        let x = vec![0.0; self.n_x];
        let p = self.pack(&x, None, w);
        self.eval_model_space(r, &p)
    }

    /// `dσ/dt = (∂r/∂w) ẇ` for the reference map.
    pub fn reference_sigma_rate(&self, w: &[f64], w_dot: &[f64]) -> Result<DVector<f64>, LpvError> {
        let jac = self.reference_jac.as_ref().ok_or(LpvError::NoReferenceMap)?;
        let x = vec![0.0; self.n_x];
        let p = self.pack(&x, None, w);
        let j = jac
            .eval(&p)
            .map_err(|e| LpvError::Model(ModelError::Eval(e.describe(&self.model_space))))?;
        Ok(j * DVector::from_column_slice(w_dot))
    }

    fn pack(&self, x: &[f64], u: Option<&[f64]>, w: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_x + self.n_u + self.n_w);
        p.extend_from_slice(x);
        match u {
            Some(u) => p.extend_from_slice(u),
            None => p.extend(std::iter::repeat_n(0.0, self.n_u)),
        }
        p.extend_from_slice(w);
        p
    }

    /// Six coefficient matrices of the LPV model at σ.
    pub fn lpv_linearize(&self, model: &SystemModel, sigma: &[f64]) -> Result<Jacobians, LpvError> {
        let e = self.point(sigma)?;
        Ok(model.jacobians(e.x.as_slice(), e.u.as_slice(), e.w.as_slice())?)
    }

    /// Residual forcing `E(σ) σ̇` that appears when the scheduled reference
    /// moves along the family.
    pub fn residual_term(&self, sigma: &[f64], sigma_rate: &[f64]) -> Result<DVector<f64>, LpvError> {
        self.check_domain(sigma)?;
        if sigma_rate.len() != self.n_sigma() {
            return Err(LpvError::Dimension {
                what: "sigma rate".into(),
                expected: self.n_sigma(),
                found: sigma_rate.len(),
            });
        }
        let rate_ok = sigma_rate
            .iter()
            .zip(&self.rate_bounds)
            .all(|(r, (lo, hi))| *r >= *lo && *r <= *hi);
        if !rate_ok {
            return Err(LpvError::RateOutOfBounds {
                rate: sigma_rate.to_vec(),
                bounds: self.rate_bounds.clone(),
            });
        }
        Ok(self.state_sensitivity(sigma)? * DVector::from_column_slice(sigma_rate))
    }

    /// Worst equilibrium residual `|f(x_e,u_e,w_e)|` and schedule residual
    /// `|g(x_e) - σ|` over a grid of the design region.
    pub fn verify(&self, model: &SystemModel, points_per_axis: usize) -> Result<FamilyCheck, LpvError> {
        let grid = Grid::uniform(&self.bounds, points_per_axis);
        let mut check = FamilyCheck::default();
        for sigma in grid.points() {
            let e = self.point(&sigma)?;
            let f = model.eval_dynamics(e.x.as_slice(), e.u.as_slice(), e.w.as_slice())?;
            check.max_equilibrium_residual = check.max_equilibrium_residual.max(f.amax());
            let p = self.pack(e.x.as_slice(), Some(e.u.as_slice()), e.w.as_slice());
            let g = self.eval_model_space(&self.g, &p)?;
            let s = DVector::from_column_slice(&sigma);
            check.max_schedule_residual = check.max_schedule_residual.max((g - s).amax());
            check.samples += 1;
        }
        Ok(check)
    }

    /// Single-input pole placement of the LPV model at σ.
    pub fn place_poles(
        &self,
        model: &SystemModel,
        sigma: &[f64],
        poles: &[Complex<f64>],
    ) -> Result<DMatrix<f64>, LpvError> {
        let j = self.lpv_linearize(model, sigma)?;
        if j.bu.ncols() != 1 {
            return Err(LpvError::Dimension {
                what: "inputs for single-input placement".into(),
                expected: 1,
                found: j.bu.ncols(),
            });
        }
        let b = j.bu.column(0).into_owned();
        Ok(linalg::place_siso(&j.a, &b, &linalg::poly_from_roots(poles))?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyCheck {
    pub samples: usize,
    pub max_equilibrium_residual: f64,
    pub max_schedule_residual: f64,
}

/// How σ is obtained when the controller runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// σ taken from the exogenous reference, `u = u_e(σ) + K(σ)(x - x_e(σ))`.
    ReferenceScheduled,
    /// σ = g(x) substituted into the same law.
    StateScheduled,
}

/// Result of one gain-scheduled control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GsOutput {
    pub u: DVector<f64>,
    pub sigma: DVector<f64>,
    /// σ left the design region; the law was still evaluated.
    pub out_of_domain: bool,
}

/// LPV gain `K(σ)` plus the way it is realized.
#[derive(Debug, Clone)]
pub struct GainScheduledController {
    name: String,
    gain: ExprMatrix,
    mode: SchedulingMode,
}

impl GainScheduledController {
    pub fn new(
        name: &str,
        family: &EquilibriumFamily,
        gain: ExprMatrix,
        mode: SchedulingMode,
    ) -> Result<Self, LpvError> {
        if gain.shape() != (family.n_u, family.n_x) {
            return Err(LpvError::Dimension {
                what: "gain columns x rows".into(),
                expected: family.n_u * family.n_x,
                found: gain.shape().0 * gain.shape().1,
            });
        }
        Ok(Self {
            name: name.to_string(),
            gain,
            mode,
        })
    }

    pub fn parse<S: AsRef<str>>(
        name: &str,
        family: &EquilibriumFamily,
        rows: &[Vec<S>],
        mode: SchedulingMode,
    ) -> Result<Self, LpvError> {
        let gain = ExprMatrix::parse(family.sigma_space.clone(), rows).map_err(|source| {
            LpvError::Parse {
                path: format!("{name}.gain"),
                source,
            }
        })?;
        Self::new(name, family, gain, mode)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mode(&self) -> SchedulingMode {
        self.mode
    }

    pub fn gain_expr(&self) -> &ExprMatrix {
        &self.gain
    }

    pub fn gain(&self, family: &EquilibriumFamily, sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        family.eval_sigma_matrix(&self.gain, sigma)
    }

    /// `u = u_e(σ) + K(σ)(x - x_e(σ))` with σ chosen by the mode.
    pub fn control(
        &self,
        family: &EquilibriumFamily,
        x: &[f64],
        w: &[f64],
        sigma_ref: &[f64],
    ) -> Result<GsOutput, LpvError> {
        let sigma = match self.mode {
            SchedulingMode::ReferenceScheduled => DVector::from_column_slice(sigma_ref),
            SchedulingMode::StateScheduled => family.schedule(x, w)?,
        };
        let u = self.law_at(family, x, sigma.as_slice())?;
        Ok(GsOutput {
            out_of_domain: !family.contains(sigma.as_slice()),
            u,
            sigma,
        })
    }

    fn law_at(&self, family: &EquilibriumFamily, x: &[f64], sigma: &[f64]) -> Result<DVector<f64>, LpvError> {
        let e = family.point_unchecked(sigma)?;
        let k = self.gain(family, sigma)?;
        Ok(e.u + k * (DVector::from_column_slice(x) - e.x))
    }

    /// Numeric `κ(x, σ)` as the realization sees it: in state-scheduled
    /// mode the explicit σ argument is ignored and `g(x)` is used.
    pub fn realized_control(
        &self,
        family: &EquilibriumFamily,
        x: &[f64],
        sigma: &[f64],
    ) -> Result<DVector<f64>, LpvError> {
        match self.mode {
            SchedulingMode::ReferenceScheduled => self.law_at(family, x, sigma),
            SchedulingMode::StateScheduled => {
                let w = vec![0.0; family.n_w];
                let s = family.schedule(x, &w)?;
                self.law_at(family, x, s.as_slice())
            }
        }
    }

    /// Symbolic realized law `κ(x, σ)`.
    pub fn realized_law(&self, family: &EquilibriumFamily) -> Result<RealizedLaw, LpvError> {
        let n_x = family.n_x;
        let n_sigma = family.n_sigma();
        let mut space = VarSpace::new();
        for name in family.model_space.names().take(n_x) {
            space.push(name, VarRole::State);
        }
        for name in family.sigma_space.names() {
            space.push(name, VarRole::Scheduling);
        }
        if space.len() != n_x + n_sigma {
            return Err(LpvError::Dimension {
                what: "distinct state and scheduling names".into(),
                expected: n_x + n_sigma,
                found: space.len(),
            });
        }
        let space = Arc::new(space);
        let xs: Vec<Expr> = (0..n_x).map(Expr::var).collect();
        // σ slot contents in the combined space
        let sigma_exprs: Vec<Expr> = match self.mode {
            SchedulingMode::ReferenceScheduled => (n_x..n_x + n_sigma).map(Expr::var).collect(),
            SchedulingMode::StateScheduled => {
                for slot in n_x..family.model_space.len() {
                    if family.g.depends_on(slot) {
                        let name = family.model_space.get(slot).unwrap().name.clone();
                        return Err(LpvError::ScheduleNotStateOnly(name));
                    }
                }
                // g over [x, u, w] -> combined space; u, w slots never used
                let mut with: Vec<Expr> = xs.clone();
                with.extend(std::iter::repeat_n(Expr::Const(0.0), family.n_u + family.n_w));
                family.g.entries().iter().map(|e| e.substitute(&with)).collect()
            }
        };
        let u_e: Vec<Expr> = family.u_e.entries().iter().map(|e| e.substitute(&sigma_exprs)).collect();
        let x_e: Vec<Expr> = family.x_e.entries().iter().map(|e| e.substitute(&sigma_exprs)).collect();
        let k = self.gain.substitute(space.clone(), &sigma_exprs);
        let dev: Vec<Expr> = xs
            .iter()
            .zip(&x_e)
            .map(|(x, xe)| Expr::sub(x.clone(), xe.clone()))
            .collect();
        let kdx = k.mul_vector(&dev);
        let law: Vec<Expr> = u_e
            .into_iter()
            .zip(kdx)
            .map(|(a, b)| Expr::add(a, b))
            .collect();
        Ok(RealizedLaw::new(ExprVector::new(space, law), n_x, n_sigma))
    }

    /// Symbolic hidden-coupling matrix of this realization at σ.
    pub fn hidden_coupling(&self, family: &EquilibriumFamily, sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        hidden_coupling(family, &self.gain, &self.realized_law(family)?, sigma)
    }
}

/// Control law `u = κ(x, σ)` over the combined space `[x…, σ…]`.
#[derive(Debug, Clone)]
pub struct RealizedLaw {
    law: ExprVector,
    n_x: usize,
    dx: ExprMatrix,
    dsigma: ExprMatrix,
}

impl RealizedLaw {
    pub fn new(law: ExprVector, n_x: usize, n_sigma: usize) -> Self {
        let xs: Vec<usize> = (0..n_x).collect();
        let ss: Vec<usize> = (n_x..n_x + n_sigma).collect();
        Self {
            dx: law.jacobian(&xs),
            dsigma: law.jacobian(&ss),
            law,
            n_x,
        }
    }

    /// Parses a law written over state and scheduling names.
    pub fn parse<S: AsRef<str>>(
        model: &SystemModel,
        family: &EquilibriumFamily,
        texts: &[S],
    ) -> Result<Self, LpvError> {
        let mut space = VarSpace::new();
        for n in model.state_names() {
            space.push(n, VarRole::State);
        }
        for n in family.sigma_space.names() {
            space.push(n, VarRole::Scheduling);
        }
        let law = ExprVector::parse(Arc::new(space), texts).map_err(|source| LpvError::Parse {
            path: "law".into(),
            source,
        })?;
        Ok(Self::new(law, model.n_x(), family.n_sigma()))
    }

    pub fn law(&self) -> &ExprVector {
        &self.law
    }

    fn packed(&self, x: &[f64], sigma: &[f64]) -> Vec<f64> {
        let mut p = x.to_vec();
        p.extend_from_slice(sigma);
        p
    }

    fn err(&self, e: crate::expr::EvalError) -> LpvError {
        LpvError::Model(ModelError::Eval(e.describe(self.law.space())))
    }

    pub fn eval(&self, x: &[f64], sigma: &[f64]) -> Result<DVector<f64>, LpvError> {
        self.law.eval(&self.packed(x, sigma)).map_err(|e| self.err(e))
    }

    /// `∂κ/∂x`.
    pub fn jacobian_x(&self, x: &[f64], sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        self.dx.eval(&self.packed(x, sigma)).map_err(|e| self.err(e))
    }

    /// Explicit `∂κ/∂σ` with `x` held fixed.
    pub fn jacobian_sigma(&self, x: &[f64], sigma: &[f64]) -> Result<DMatrix<f64>, LpvError> {
        self.dsigma.eval(&self.packed(x, sigma)).map_err(|e| self.err(e))
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }
}

/// `K_h(σ) = ∂u_e/∂σ − K(σ) ∂x_e/∂σ − ∂κ/∂σ (x_e(σ), σ)`, all derivatives
/// symbolic.
pub fn hidden_coupling(
    family: &EquilibriumFamily,
    gain: &ExprMatrix,
    law: &RealizedLaw,
    sigma: &[f64],
) -> Result<DMatrix<f64>, LpvError> {
    let e = family.point(sigma)?;
    let k = family.eval_sigma_matrix(gain, sigma)?;
    let du = family.input_sensitivity(sigma)?;
    let dx = family.state_sensitivity(sigma)?;
    let dk = law.jacobian_sigma(e.x.as_slice(), sigma)?;
    Ok(du - k * dx - dk)
}

/// Same quantity as [`hidden_coupling`], every derivative by central
/// differences with step `h`. `gain(σ)` and `law(x, σ)` may be arbitrary
/// numeric maps, which makes this usable for realizations that have no
/// closed form.
pub fn hidden_coupling_fd<G, L>(
    family: &EquilibriumFamily,
    gain: G,
    law: L,
    sigma: &[f64],
    h: f64,
) -> Result<DMatrix<f64>, LpvError>
where
    G: Fn(&[f64]) -> Result<DMatrix<f64>, LpvError>,
    L: Fn(&[f64], &[f64]) -> Result<DVector<f64>, LpvError>,
{
    let e = family.point(sigma)?;
    let k = gain(sigma)?;
    let n_sigma = family.n_sigma();
    let mut out = DMatrix::zeros(family.n_u, n_sigma);
    for i in 0..n_sigma {
        let mut sp = sigma.to_vec();
        let mut sm = sigma.to_vec();
        sp[i] += h;
        sm[i] -= h;
        let ep = family.point_unchecked(&sp)?;
        let em = family.point_unchecked(&sm)?;
        let du = (&ep.u - &em.u) / (2.0 * h);
        let dx = (&ep.x - &em.x) / (2.0 * h);
        let dk = (law(e.x.as_slice(), &sp)? - law(e.x.as_slice(), &sm)?) / (2.0 * h);
        out.set_column(i, &(du - &k * dx - dk));
    }
    Ok(out)
}
