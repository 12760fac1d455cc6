//! Closed-loop simulation and tracking diagnostics.
//!
//! The plant is integrated with fixed-step classical RK4, calling the
//! controller at every stage. Each recorded sample carries the tracking
//! error, the Riemannian energy to the target when a metric is available,
//! and warning flags.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, GeodesicPath, GeodesicSettings, GeometryError, Metric};
use crate::lpv::{EquilibriumFamily, GainScheduledController, LpvError};
use crate::model::{ModelError, SystemModel};
use crate::realization::{CcmController, RealizationError};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_END: f64 = 20.0;
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
pub const TOL_DECAY: f64 = 0.02;
/// Energies below this are treated as numerically zero by the decay check.
pub const ENERGY_FLOOR: f64 = 1e-20;
/// Errors below this are excluded from the exponential fit.
pub const FIT_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lpv(#[from] LpvError),
    #[error(transparent)]
    Realization(#[from] RealizationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("time step must be positive and not exceed the horizon (dt = {dt}, t_end = {t_end})")]
    InvalidStep { dt: f64, t_end: f64 },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid reference signal: {0}")]
    Reference(String),
    #[error("{0}")]
    Control(String),
    #[error("results do not share a time grid")]
    GridMismatch,
    #[error("disturbance deviation has zero norm")]
    ZeroDisturbance,
    #[error("no samples above the error floor in the fit window")]
    EmptyWindow,
    #[error("energy was not recorded for this run")]
    NoEnergy,
}

/// Exogenous signal `w(t)` with its exact derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSignal {
    Constant {
        value: Vec<f64>,
    },
    /// `levels[i]` holds from `breakpoints[i]` on; `levels[0]` also holds
    /// before the first breakpoint.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        levels: Vec<Vec<f64>>,
    },
    /// `offset + amplitude · sin(frequency · t + phase)`.
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        offset: Vec<f64>,
    },
}

impl ReferenceSignal {
    pub fn constant(value: &[f64]) -> Self {
        ReferenceSignal::Constant { value: value.to_vec() }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceSignal::Constant { value } => value.len(),
            ReferenceSignal::PiecewiseConstant { levels, .. } => levels.first().map_or(0, Vec::len),
            ReferenceSignal::Sinusoid { amplitude, .. } => amplitude.len(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Reference(m.to_string()));
        match self {
            ReferenceSignal::Constant { .. } => Ok(()),
            ReferenceSignal::PiecewiseConstant { breakpoints, levels } => {
                if levels.is_empty() || breakpoints.len() != levels.len() {
                    return bad("need one level per breakpoint");
                }
                if levels.iter().any(|l| l.len() != levels[0].len()) {
                    return bad("levels differ in dimension");
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("breakpoints must increase strictly");
                }
                Ok(())
            }
            ReferenceSignal::Sinusoid { amplitude, offset, frequency, .. } => {
                if amplitude.len() != offset.len() {
                    return bad("amplitude and offset differ in dimension");
                }
                if !frequency.is_finite() {
                    return bad("frequency must be finite");
                }
                Ok(())
            }
        }
    }

    fn level_index(breakpoints: &[f64], t: f64) -> usize {
        // a sample landing on a breakpoint up to rounding belongs to the new level
        breakpoints
            .iter()
            .rposition(|&b| t >= b - 1e-12 * b.abs().max(1.0))
            .unwrap_or(0)
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        match self {
            ReferenceSignal::Constant { value } => DVector::from_column_slice(value),
            ReferenceSignal::PiecewiseConstant { breakpoints, levels } => {
                DVector::from_column_slice(&levels[Self::level_index(breakpoints, t)])
            }
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                let s = (frequency * t + phase).sin();
                DVector::from_iterator(amplitude.len(), amplitude.iter().zip(offset).map(|(a, o)| o + a * s))
            }
        }
    }

    /// Left limit at `t`; differs from [`value`](Self::value) only at a jump.
    pub fn value_before(&self, t: f64) -> DVector<f64> {
        match self {
            ReferenceSignal::PiecewiseConstant { breakpoints, levels } => {
                let i = breakpoints
                    .iter()
                    .rposition(|&b| t > b + 1e-12 * b.abs().max(1.0))
                    .unwrap_or(0);
                DVector::from_column_slice(&levels[i])
            }
            other => other.value(t),
        }
    }

    pub fn derivative(&self, t: f64) -> DVector<f64> {
        match self {
            ReferenceSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
                ..
            } => {
                let c = frequency * (frequency * t + phase).cos();
                DVector::from_iterator(amplitude.len(), amplitude.iter().map(|a| a * c))
            }
            other => DVector::zeros(other.dim()),
        }
    }

    /// Instants where the signal jumps.
    pub fn breakpoints(&self) -> &[f64] {
        match self {
            ReferenceSignal::PiecewiseConstant { breakpoints, .. } => breakpoints,
            _ => &[],
        }
    }
}

/// Target `(x*, u*)` at one instant together with what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub w_dot: DVector<f64>,
    pub x_dot: DVector<f64>,
    /// Scheduling value from the reference map, when a family is used.
    pub sigma: Option<DVector<f64>>,
    /// `|ẋ* − f(x*, u*, w*)|∞`.
    pub residual: f64,
}

pub type TargetFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), SimError>
    + Send
    + Sync;

/// How `(x*, u*)` follows the reference `w*`.
#[derive(Clone)]
pub enum Target {
    /// `x* = x_e(r(w*))`, `ẋ* = E(σ)(∂r/∂w)ẇ*`, and `u*` solving
    /// `f(x*, u*, w*) = ẋ*` by Gauss–Newton from `u_e(σ)`.
    Family(EquilibriumFamily),
    /// User map `(t, w*, ẇ*) ↦ (x*, u*, ẋ*)`.
    Explicit(Arc<TargetFn>),
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Family(fam) => write!(f, "Target::Family({})", fam.name()),
            Target::Explicit(_) => write!(f, "Target::Explicit"),
        }
    }
}

impl Target {
    /// Constant target state and input.
    pub fn fixed(x: &[f64], u: &[f64]) -> Self {
        let x = DVector::from_column_slice(x);
        let u = DVector::from_column_slice(u);
        Target::Explicit(Arc::new(move |_, _, _| Ok((x.clone(), u.clone(), DVector::zeros(x.len())))))
    }

    pub fn evaluate(&self, model: &SystemModel, reference: &ReferenceSignal, t: f64) -> Result<TargetPoint, SimError> {
        self.evaluate_with(model, reference.value(t), reference.derivative(t), t)
    }

    fn evaluate_with(&self, model: &SystemModel, w: DVector<f64>, w_dot: DVector<f64>, t: f64) -> Result<TargetPoint, SimError> {
        match self {
            Target::Family(fam) => {
                let sigma = fam.reference_sigma(w.as_slice())?;
                let sigma_dot = fam.reference_sigma_rate(w.as_slice(), w_dot.as_slice())?;
                let e = fam.point_unchecked(sigma.as_slice())?;
                let x_dot = fam.state_sensitivity(sigma.as_slice())? * sigma_dot;
                let (u, residual) = solve_feedforward(model, &e.x, e.u, &w, &x_dot)?;
                Ok(TargetPoint {
                    x: e.x,
                    u,
                    w,
                    w_dot,
                    x_dot,
                    sigma: Some(sigma),
                    residual,
                })
            }
            Target::Explicit(map) => {
                let (x, u, x_dot) = map(t, &w, &w_dot)?;
                let f = model.eval_dynamics(x.as_slice(), u.as_slice(), w.as_slice())?;
                let residual = (&x_dot - f).amax();
                Ok(TargetPoint {
                    x,
                    u,
                    w,
                    w_dot,
                    x_dot,
                    sigma: None,
                    residual,
                })
            }
        }
    }
}

/// Gauss–Newton on `f(x*, u, w*) = ẋ*` in `u`.
fn solve_feedforward(
    model: &SystemModel,
    x: &DVector<f64>,
    mut u: DVector<f64>,
    w: &DVector<f64>,
    x_dot: &DVector<f64>,
) -> Result<(DVector<f64>, f64), SimError> {
    let mut residual = f64::INFINITY;
    for _ in 0..20 {
        let p = model.pack(x.as_slice(), u.as_slice(), w.as_slice())?;
        let r = model.eval_dynamics_packed(&p)? - x_dot;
        residual = r.amax();
        if residual <= 1e-13 || model.n_u() == 0 {
            break;
        }
        let b = model.jacobians_packed(&p)?.bu;
        let btb = b.transpose() * &b;
        match btb.lu().solve(&(b.transpose() * &r)) {
            Some(step) => u -= step,
            None => break,
        }
    }
    Ok((u, residual))
}

/// Everything a control law may look at during one evaluation.
#[derive(Debug, Clone)]
pub struct ControlInput<'a> {
    pub t: f64,
    pub x: &'a DVector<f64>,
    pub target: &'a TargetPoint,
}

pub type CustomLaw = dyn Fn(&ControlInput) -> Result<DVector<f64>, String> + Send + Sync;

#[derive(Clone)]
pub enum Controller {
    GainScheduled {
        controller: GainScheduledController,
        family: EquilibriumFamily,
    },
    Ccm(CcmController),
    Custom(Arc<CustomLaw>),
    /// Open loop: `u = u*`.
    Feedforward,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Controller::GainScheduled { controller, .. } => write!(f, "GainScheduled({})", controller.name()),
            Controller::Ccm(_) => write!(f, "Ccm"),
            Controller::Custom(_) => write!(f, "Custom"),
            Controller::Feedforward => write!(f, "Feedforward"),
        }
    }
}

/// Per-sample warning flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    /// σ left the design region.
    pub out_of_domain: bool,
    /// A geodesic solve stopped before meeting its tolerance.
    pub geodesic_nonconverged: bool,
    /// The target failed `ẋ* = f(x*, u*, w*)` by more than `1e-8`.
    pub target_inconsistent: bool,
}

impl StepFlags {
    fn merge(&mut self, o: StepFlags) {
        self.out_of_domain |= o.out_of_domain;
        self.geodesic_nonconverged |= o.geodesic_nonconverged;
        self.target_inconsistent |= o.target_inconsistent;
    }

    fn labels(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.out_of_domain {
            v.push("out_of_domain");
        }
        if self.geodesic_nonconverged {
            v.push("geodesic_nonconverged");
        }
        if self.target_inconsistent {
            v.push("target_inconsistent");
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Additive plant disturbance on top of the reference: `w = w* + d(t)`.
    pub disturbance: Option<ReferenceSignal>,
    /// Metric for the energy diagnostic. Defaults to the CCM controller's.
    pub energy_metric: Option<Metric>,
    pub energy_settings: GeodesicSettings,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_end: DEFAULT_T_END,
            disturbance: None,
            energy_metric: None,
            energy_settings: GeodesicSettings::default(),
        }
    }
}

/// Sampled closed-loop run. All per-sample vectors have the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Disturbance applied to the plant.
    pub w: Vec<DVector<f64>>,
    pub x_star: Vec<DVector<f64>>,
    pub u_star: Vec<DVector<f64>>,
    pub w_star: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub z_star: Vec<DVector<f64>>,
    /// `|x − x*|`.
    pub err_norm: Vec<f64>,
    /// `ε(x*, x)`; NaN when no metric is available.
    pub energy: Vec<f64>,
    pub flags: Vec<StepFlags>,
    pub diverged: bool,
    /// Evaluation failure that cut the run short.
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_error(&self) -> f64 {
        *self.err_norm.last().unwrap_or(&f64::NAN)
    }

    /// `sup |x_i − x*_i|` over samples with `t ≥ t_from`.
    pub fn component_error_sup(&self, i: usize, t_from: f64) -> f64 {
        self.t
            .iter()
            .zip(self.x.iter().zip(&self.x_star))
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, (x, xs))| (x[i] - xs[i]).abs())
            .fold(0.0, f64::max)
    }

    /// `sup |x − x*|` over samples with `t ≥ t_from`.
    pub fn error_sup(&self, t_from: f64) -> f64 {
        self.t
            .iter()
            .zip(&self.err_norm)
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x1..xn, u1..un_u, w1..wn_w, err_norm, energy,
    /// flags` (flags joined by `|`).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (nx, nu, nw) = match (self.x.first(), self.u.first(), self.w.first()) {
            (Some(x), Some(u), Some(w)) => (x.len(), u.len(), w.len()),
            _ => (0, 0, 0),
        };
        let mut header = vec!["t".to_string()];
        header.extend((1..=nx).map(|i| format!("x{i}")));
        header.extend((1..=nu).map(|i| format!("u{i}")));
        header.extend((1..=nw).map(|i| format!("w{i}")));
        header.extend(["err_norm", "energy", "flags"].map(String::from));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![format!("{}", self.t[k])];
            rec.extend(self.x[k].iter().map(|v| format!("{v}")));
            rec.extend(self.u[k].iter().map(|v| format!("{v}")));
            rec.extend(self.w[k].iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.err_norm[k]));
            rec.push(format!("{}", self.energy[k]));
            rec.push(self.flags[k].labels().join("|"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Evaluation {
    u: DVector<f64>,
    target: TargetPoint,
    flags: StepFlags,
    path: Option<GeodesicPath>,
}

struct Runner<'a> {
    model: &'a SystemModel,
    controller: &'a Controller,
    target: &'a Target,
    reference: &'a ReferenceSignal,
    disturbance: Option<&'a ReferenceSignal>,
    warm: Option<GeodesicPath>,
}

impl Runner<'_> {
    /// Signal value at `t`, or its left limit for the last stage of a step
    /// so that a jump landing on a step boundary starts the next step.
    fn signal(s: &ReferenceSignal, t: f64, left: bool) -> DVector<f64> {
        if left {
            s.value_before(t)
        } else {
            s.value(t)
        }
    }

    fn plant_w(&self, t: f64, w_star: &DVector<f64>, left: bool) -> DVector<f64> {
        match self.disturbance {
            Some(d) => w_star + Self::signal(d, t, left),
            None => w_star.clone(),
        }
    }

    fn control(&mut self, t: f64, x: &DVector<f64>, left: bool) -> Result<Evaluation, SimError> {
        let w = Self::signal(self.reference, t, left);
        let target = self.target.evaluate_with(self.model, w, self.reference.derivative(t), t)?;
        let mut flags = StepFlags {
            target_inconsistent: target.residual > 1e-8,
            ..Default::default()
        };
        let mut path = None;
        let u = match self.controller {
            Controller::GainScheduled { controller, family } => {
                let sigma_ref = match &target.sigma {
                    Some(s) => s.clone(),
                    None => family.reference_sigma(target.w.as_slice())?,
                };
                let out = controller.control(family, x.as_slice(), target.w.as_slice(), sigma_ref.as_slice())?;
                flags.out_of_domain = out.out_of_domain;
                out.u
            }
            Controller::Ccm(c) => {
                let out = c.control_warm(x, &target.x, &target.u, self.warm.as_ref())?;
                flags.geodesic_nonconverged = !out.converged;
                self.warm = Some(out.path.clone());
                path = Some(out.path);
                out.u
            }
            Controller::Custom(law) => law(&ControlInput { t, x, target: &target }).map_err(SimError::Control)?,
            Controller::Feedforward => target.u.clone(),
        };
        if u.len() != self.model.n_u() {
            return Err(SimError::Dimension {
                what: "control",
                expected: self.model.n_u(),
                found: u.len(),
            });
        }
        Ok(Evaluation { u, target, flags, path })
    }

    fn deriv(&mut self, t: f64, x: &DVector<f64>, left: bool) -> Result<(DVector<f64>, Evaluation), SimError> {
        let ev = self.control(t, x, left)?;
        let w = self.plant_w(t, &ev.target.w, left);
        let f = self.model.eval_dynamics(x.as_slice(), ev.u.as_slice(), w.as_slice())?;
        Ok((f, ev))
    }
}

fn diverged(x: &DVector<f64>) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD)
}

/// Runs the closed loop from `x0` over `[0, t_end]` with step `dt`.
pub fn simulate(
    model: &SystemModel,
    controller: &Controller,
    target: &Target,
    reference: &ReferenceSignal,
    x0: &[f64],
    options: &SimOptions,
) -> Result<SimResult, SimError> {
    let (dt, t_end) = (options.dt, options.t_end);
    if !(dt > 0.0) || !(t_end >= dt) || !t_end.is_finite() {
        return Err(SimError::InvalidStep { dt, t_end });
    }
    if x0.len() != model.n_x() {
        return Err(SimError::Dimension {
            what: "x0",
            expected: model.n_x(),
            found: x0.len(),
        });
    }
    reference.validate()?;
    if reference.dim() != model.n_w() {
        return Err(SimError::Dimension {
            what: "reference",
            expected: model.n_w(),
            found: reference.dim(),
        });
    }
    if let Some(d) = &options.disturbance {
        d.validate()?;
        if d.dim() != model.n_w() {
            return Err(SimError::Dimension {
                what: "disturbance",
                expected: model.n_w(),
                found: d.dim(),
            });
        }
    }
    let energy_metric = options.energy_metric.clone().or_else(|| match controller {
        Controller::Ccm(c) => Some(c.metric().clone()),
        _ => None,
    });
    let reuse_controller_paths = options.energy_metric.is_none() && matches!(controller, Controller::Ccm(_));

    let mut runner = Runner {
        model,
        controller,
        target,
        reference,
        disturbance: options.disturbance.as_ref(),
        warm: None,
    };
    let steps = (t_end / dt).round() as usize;
    let mut res = SimResult {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        w: Vec::with_capacity(steps + 1),
        x_star: Vec::with_capacity(steps + 1),
        u_star: Vec::with_capacity(steps + 1),
        w_star: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity(steps + 1),
        z_star: Vec::with_capacity(steps + 1),
        err_norm: Vec::with_capacity(steps + 1),
        energy: Vec::with_capacity(steps + 1),
        flags: Vec::with_capacity(steps + 1),
        diverged: false,
        error: None,
        warnings: Vec::new(),
    };
    let mut energy_warm: Option<GeodesicPath> = None;
    let mut x = DVector::from_column_slice(x0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        // first stage doubles as the recorded sample
        let (k1, ev) = match runner.deriv(t, &x, false) {
            Ok(v) => v,
            Err(e) => {
                res.error = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        let mut flags = ev.flags;
        let w = runner.plant_w(t, &ev.target.w, false);
        let record = (|| -> Result<(DVector<f64>, DVector<f64>, f64), SimError> {
            let z = model.eval_output(x.as_slice(), ev.u.as_slice(), w.as_slice())?;
            let zs = model.eval_output(ev.target.x.as_slice(), ev.target.u.as_slice(), ev.target.w.as_slice())?;
            let energy = match (&energy_metric, reuse_controller_paths, &ev.path) {
                (_, true, Some(p)) => p.energy,
                (Some(m), _, _) => {
                    let p = match &energy_warm {
                        Some(prev) => geometry::solve_geodesic_warm(m, &ev.target.x, &x, prev, &options.energy_settings)?,
                        None => geometry::solve_geodesic(m, &ev.target.x, &x, &options.energy_settings)?,
                    };
                    flags.geodesic_nonconverged |= !p.converged;
                    let e = p.energy;
                    energy_warm = Some(p);
                    e
                }
                _ => f64::NAN,
            };
            Ok((z, zs, energy))
        })();
        let (z, zs, energy) = match record {
            Ok(v) => v,
            Err(e) => {
                res.error = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        res.t.push(t);
        res.err_norm.push((&x - &ev.target.x).norm());
        res.x.push(x.clone());
        res.u.push(ev.u.clone());
        res.w.push(w);
        res.x_star.push(ev.target.x.clone());
        res.u_star.push(ev.target.u.clone());
        res.w_star.push(ev.target.w.clone());
        res.z.push(z);
        res.z_star.push(zs);
        res.energy.push(energy);
        if k == steps {
            res.flags.push(flags);
            break;
        }
        let step = (|| -> Result<DVector<f64>, SimError> {
            let h = dt;
            let (k2, e2) = runner.deriv(t + 0.5 * h, &(&x + &k1 * (0.5 * h)), false)?;
            let (k3, e3) = runner.deriv(t + 0.5 * h, &(&x + &k2 * (0.5 * h)), false)?;
            let (k4, e4) = runner.deriv(t + h, &(&x + &k3 * h), true)?;
            for e in [e2, e3, e4] {
                flags.merge(e.flags);
            }
            Ok(&x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + k4) * (h / 6.0))
        })();
        res.flags.push(flags);
        match step {
            Ok(next) => {
                if diverged(&next) {
                    res.diverged = true;
                    break;
                }
                x = next;
            }
            Err(e) => {
                if diverged(&x) {
                    res.diverged = true;
                }
                res.error = Some(format!("t = {t}: {e}"));
                break;
            }
        }
    }
    res.warnings = summarize_warnings(&res);
    Ok(res)
}

fn summarize_warnings(res: &SimResult) -> Vec<String> {
    let mut out = Vec::new();
    let kinds: [(&str, fn(&StepFlags) -> bool); 3] = [
        ("out_of_domain", |f| f.out_of_domain),
        ("geodesic_nonconverged", |f| f.geodesic_nonconverged),
        ("target_inconsistent", |f| f.target_inconsistent),
    ];
    for (name, pick) in kinds {
        let hits: Vec<usize> = (0..res.flags.len()).filter(|&k| pick(&res.flags[k])).collect();
        if let Some(&first) = hits.first() {
            out.push(format!("{name}: {} samples, first at t = {}", hits.len(), res.t[first]));
        }
    }
    if res.diverged {
        out.push(format!(
            "diverged: state left |x| <= {DIVERGENCE_THRESHOLD:e} after t = {}",
            res.t.last().copied().unwrap_or(0.0)
        ));
    }
    if let Some(e) = &res.error {
        out.push(format!("error: {e}"));
    }
    out
}

/// Outcome of the energy-decay check
/// `ε(t_k) ≤ ε(t_0) e^{−2λ(t_k − t_0)} (1 + tol)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub satisfied: bool,
    /// `max_k ε(t_k) / (ε(t_0) e^{−2λ(t_k−t_0)}) − 1`; the check passes when
    /// this is at most `tol`.
    pub margin: f64,
    /// False when a geodesic solve failed somewhere in the window.
    pub valid: bool,
    pub samples: usize,
}

/// Energy-decay check from `t_from` on. Samples with energy below
/// [`ENERGY_FLOOR`] are skipped.
pub fn energy_decay(result: &SimResult, lambda: f64, tol: f64, t_from: f64) -> Result<DecayCheck, SimError> {
    let idx: Vec<usize> = (0..result.len()).filter(|&k| result.t[k] >= t_from).collect();
    let Some(&k0) = idx.first() else {
        return Err(SimError::EmptyWindow);
    };
    if idx.iter().any(|&k| result.energy[k].is_nan()) {
        return Err(SimError::NoEnergy);
    }
    let valid = idx.iter().all(|&k| !result.flags[k].geodesic_nonconverged);
    let (t0, e0) = (result.t[k0], result.energy[k0]);
    let mut margin = f64::NEG_INFINITY;
    let mut samples = 0;
    if e0 < ENERGY_FLOOR {
        // at the target already: every later energy must stay at the floor
        for &k in &idx {
            samples += 1;
            margin = margin.max(if result.energy[k] < ENERGY_FLOOR { -1.0 } else { f64::INFINITY });
        }
    } else {
        for &k in &idx {
            let e = result.energy[k];
            if e < ENERGY_FLOOR {
                continue;
            }
            samples += 1;
            let bound = e0 * (-2.0 * lambda * (result.t[k] - t0)).exp();
            margin = margin.max(e / bound - 1.0);
        }
    }
    Ok(DecayCheck {
        satisfied: valid && margin <= tol,
        margin,
        valid,
        samples,
    })
}

fn trapezoid_sq(t: &[f64], a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).collect();
    t.windows(2)
        .zip(sq.windows(2))
        .map(|(tt, s)| 0.5 * (tt[1] - tt[0]) * (s[0] + s[1]))
        .sum()
}

/// `‖z − z*‖ / ‖w − w*‖` over the common horizon, with `nominal` supplying
/// `z*`, `w*` and `perturbed` supplying `z`, `w`.
pub fn l2_gain_estimate(nominal: &SimResult, perturbed: &SimResult) -> Result<f64, SimError> {
    if nominal.t != perturbed.t {
        return Err(SimError::GridMismatch);
    }
    let num = trapezoid_sq(&perturbed.t, &perturbed.z, &nominal.z);
    let den = trapezoid_sq(&perturbed.t, &perturbed.w, &nominal.w);
    if !(den > 0.0) {
        return Err(SimError::ZeroDisturbance);
    }
    Ok((num / den).sqrt())
}

/// Fitted `|x − x*| ≈ R e^{−λ (t − t0)} |x(t0) − x*(t0)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub lambda: f64,
    /// Smallest `R` for which the bound holds at every sample of the window
    /// with the fitted `λ`.
    pub r: f64,
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
}

/// Least-squares fit of `log |x − x*|` against `t` over `[t0, t1)`,
/// ignoring errors below [`FIT_FLOOR`].
pub fn overshoot_fit(result: &SimResult, window: Option<(f64, f64)>) -> Result<ExpFit, SimError> {
    let (t0, t1) = window.unwrap_or((0.0, f64::INFINITY));
    let idx: Vec<usize> = (0..result.len())
        .filter(|&k| result.t[k] >= t0 && result.t[k] < t1 && result.err_norm[k] > FIT_FLOOR)
        .collect();
    if idx.len() < 2 {
        return Err(SimError::EmptyWindow);
    }
    let n = idx.len() as f64;
    let ts: Vec<f64> = idx.iter().map(|&k| result.t[k]).collect();
    let ys: Vec<f64> = idx.iter().map(|&k| result.err_norm[k].ln()).collect();
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let sxx: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let lambda = -sxy / sxx;
    let start = ts[0];
    let e_start = result.err_norm[idx[0]];
    let r = idx
        .iter()
        .map(|&k| result.err_norm[k] / (e_start * (-lambda * (result.t[k] - start)).exp()))
        .fold(0.0, f64::max);
    Ok(ExpFit {
        lambda,
        r,
        t0: start,
        t1: *ts.last().unwrap(),
        samples: idx.len(),
    })
}

/// Run summary as written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub controller: String,
    pub lambda_fit: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub diverged: bool,
    pub warnings: Vec<String>,
    /// Fits per constant stretch of the reference.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segment_fits: Vec<ExpFit>,
    /// `sup |x − x*|` over the last half of the horizon.
    pub steady_error: f64,
}

impl Summary {
    /// Fits over the first constant stretch of `reference` (the whole run
    /// when it has no breakpoints) and over every later stretch.
    pub fn build(scenario: &str, controller: &str, result: &SimResult, reference: &ReferenceSignal) -> Self {
        let t_end = result.t.last().copied().unwrap_or(0.0);
        let mut edges: Vec<f64> = reference.breakpoints().iter().copied().filter(|b| *b > 0.0).collect();
        edges.insert(0, 0.0);
        edges.push(f64::INFINITY);
        let segment_fits: Vec<ExpFit> = if result.diverged {
            Vec::new()
        } else {
            edges
                .windows(2)
                .filter_map(|w| overshoot_fit(result, Some((w[0], w[1]))).ok())
                .collect()
        };
        let first = segment_fits.first().filter(|f| f.t0 == 0.0);
        Summary {
            scenario: scenario.to_string(),
            controller: controller.to_string(),
            lambda_fit: first.map(|f| f.lambda),
            r: first.map(|f| f.r),
            diverged: result.diverged,
            warnings: result.warnings.clone(),
            segment_fits: if reference.breakpoints().len() > 1 { segment_fits } else { Vec::new() },
            steady_error: result.error_sup(0.5 * t_end),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag() -> SystemModel {
        SystemModel::builtin("first_order_lag").unwrap()
    }

    #[test]
    fn reference_signals() {
        let s = ReferenceSignal::PiecewiseConstant {
            breakpoints: vec![0.0, 7.0, 14.0],
            levels: vec![vec![0.0], vec![1.0], vec![-2.0]],
        };
        assert_eq!(s.value(6.999)[0], 0.0);
        assert_eq!(s.value(7000.0 * 1e-3)[0], 1.0);
        assert_eq!(s.value(20.0)[0], -2.0);
        assert_eq!(s.derivative(3.0)[0], 0.0);
        let sine = ReferenceSignal::Sinusoid {
            amplitude: vec![0.5],
            frequency: 1.0,
            phase: 0.0,
            offset: vec![0.0],
        };
        assert!((sine.derivative(0.3)[0] - 0.5 * 0.3f64.cos()).abs() < 1e-15);
        let bad = ReferenceSignal::PiecewiseConstant {
            breakpoints: vec![1.0, 0.0],
            levels: vec![vec![0.0], vec![1.0]],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scalar_decay_fit() {
        let m = SystemModel::parse("decay", &["x"], &[], &["w"], &["-x + w"], &["x"]).unwrap();
        let r = simulate(
            &m,
            &Controller::Feedforward,
            &Target::fixed(&[0.0], &[]),
            &ReferenceSignal::constant(&[0.0]),
            &[1.0],
            &SimOptions {
                t_end: 5.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.final_error() - (-5f64).exp()).abs() < 1e-12);
        let fit = overshoot_fit(&r, None).unwrap();
        assert!((fit.lambda - 1.0).abs() < 1e-6);
        assert!((fit.r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn target_start_stays_on_target() {
        let m = SystemModel::builtin("rugh1991").unwrap();
        let fam = EquilibriumFamily::builtin("rugh1991_w", &m).unwrap();
        let gsc = GainScheduledController::parse(
            "gsc2",
            &fam,
            &[vec!["1", "-3 - exp(-sigma)"]],
            crate::lpv::SchedulingMode::StateScheduled,
        )
        .unwrap();
        let r = simulate(
            &m,
            &Controller::GainScheduled {
                controller: gsc,
                family: fam.clone(),
            },
            &Target::Family(fam),
            &ReferenceSignal::constant(&[0.5]),
            &[0.0, 0.5],
            &SimOptions {
                t_end: 2.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.error_sup(0.0) <= 1e-12);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    }

    #[test]
    fn divergence_truncates() {
        let m = SystemModel::parse("blowup", &["x"], &[], &["w"], &["x^2 + w"], &["x"]).unwrap();
        let r = simulate(
            &m,
            &Controller::Feedforward,
            &Target::fixed(&[0.0], &[]),
            &ReferenceSignal::constant(&[0.0]),
            &[1.0],
            &SimOptions::default(),
        )
        .unwrap();
        assert!(r.diverged);
        assert!(*r.t.last().unwrap() < 1.01);
        assert!(r.warnings.iter().any(|w| w.starts_with("diverged")));
    }

    #[test]
    fn l2_ratio_needs_a_disturbance() {
        let m = lag();
        let run = |d: Option<ReferenceSignal>| {
            simulate(
                &m,
                &Controller::Feedforward,
                &Target::fixed(&[0.0], &[]),
                &ReferenceSignal::constant(&[0.0]),
                &[0.0],
                &SimOptions {
                    t_end: 1.0,
                    disturbance: d,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let nominal = run(None);
        assert_eq!(l2_gain_estimate(&nominal, &nominal), Err(SimError::ZeroDisturbance));
        let pert = run(Some(ReferenceSignal::constant(&[1.0])));
        let g = l2_gain_estimate(&nominal, &pert).unwrap();
        assert!(g > 0.0 && g < 1.0);
    }

    #[test]
    fn csv_columns() {
        let m = lag();
        let r = simulate(
            &m,
            &Controller::Feedforward,
            &Target::fixed(&[0.0], &[]),
            &ReferenceSignal::constant(&[0.0]),
            &[1.0],
            &SimOptions {
                t_end: 0.002,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,w1,err_norm,energy,flags\n0,1,0,1,NaN,\n"), "{text}");
        assert_eq!(text.lines().count(), 4);
    }
}
