//! Gridded checks of parameter-dependent matrix inequalities.
//!
//! Every check samples a box on a tensor grid, builds a symmetric matrix
//! at each sample (and at each vertex of the rate box where a rate term
//! appears) and records the largest eigenvalue. A condition is certified
//! on the grid when the worst eigenvalue is at most `-TOL_PD`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{ExprMatrix, ParseError, VarSpace};
use crate::grid::{box_vertices, Grid};
use crate::linalg::{self, LinalgError};
use crate::lpv::{EquilibriumFamily, GainScheduledController, LpvError};
use crate::model::{Jacobians, ModelError, SystemModel};

/// Definiteness margin on eigenvalues.
pub const TOL_PD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertifyError {
    #[error("{0}")]
    Eval(String),
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lpv(#[from] LpvError),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("matrix declared symmetric has asymmetry {0:.3e}")]
    Asymmetric(f64),
    #[error("{0} must be positive, got {1}")]
    NonPositive(&'static str, f64),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("invalid bracket: {lo_verdict:?} at {lo}, {hi_verdict:?} at {hi}")]
    InvalidBracket {
        lo: f64,
        hi: f64,
        lo_verdict: Verdict,
        hi_verdict: Verdict,
        reports: Box<(CertReport, CertReport)>,
    },
}

/// Matrix of expressions plus its partial derivatives with respect to a
/// chosen list of slots (σ for LPV metrics, x for CCMs).
#[derive(Debug, Clone)]
pub struct SymbolicMatrixFn {
    expr: ExprMatrix,
    symmetric: bool,
    partials: Vec<ExprMatrix>,
}

impl SymbolicMatrixFn {
    pub fn new(expr: ExprMatrix, partial_slots: &[usize], symmetric: bool) -> Result<Self, CertifyError> {
        let (r, c) = expr.shape();
        if symmetric && r != c {
            return Err(CertifyError::Dimension {
                what: "columns of a symmetric matrix".into(),
                expected: r,
                found: c,
            });
        }
        let partials = partial_slots.iter().map(|&s| expr.diff(s)).collect();
        Ok(Self {
            expr,
            symmetric,
            partials,
        })
    }

    pub fn parse<S: AsRef<str>>(
        space: Arc<VarSpace>,
        rows: &[Vec<S>],
        partial_slots: &[usize],
        symmetric: bool,
    ) -> Result<Self, CertifyError> {
        let expr = ExprMatrix::parse(space, rows).map_err(|source| CertifyError::Parse {
            path: "matrix".into(),
            source,
        })?;
        Self::new(expr, partial_slots, symmetric)
    }

    /// Constant matrix; all listed partials are zero.
    pub fn constant(space: Arc<VarSpace>, m: &DMatrix<f64>, partial_slots: &[usize]) -> Result<Self, CertifyError> {
        Self::new(ExprMatrix::constant(space, m), partial_slots, m.is_square())
    }

    pub fn expr(&self) -> &ExprMatrix {
        &self.expr
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn n_partials(&self) -> usize {
        self.partials.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.expr.shape()
    }

    fn finish(&self, m: DMatrix<f64>) -> Result<DMatrix<f64>, CertifyError> {
        if !self.symmetric {
            return Ok(m);
        }
        let asym = (&m - m.transpose()).amax();
        if asym > linalg::SYMMETRY_TOL * m.amax().max(1.0) {
            return Err(CertifyError::Asymmetric(asym));
        }
        Ok(0.5 * (&m + m.transpose()))
    }

    pub fn eval(&self, p: &[f64]) -> Result<DMatrix<f64>, CertifyError> {
        let m = self
            .expr
            .eval(p)
            .map_err(|e| CertifyError::Eval(e.describe(self.expr.space())))?;
        self.finish(m)
    }

    /// Partial derivative number `i` (index into the slot list).
    pub fn partial(&self, p: &[f64], i: usize) -> Result<DMatrix<f64>, CertifyError> {
        let m = self.partials[i]
            .eval(p)
            .map_err(|e| CertifyError::Eval(e.describe(self.expr.space())))?;
        self.finish(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Violated,
    /// The metric (or `W`) failed to be positive definite somewhere.
    MetricInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Stability,
    ConvexSynthesis,
    Performance,
    Ccm,
    CcmPerformance,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Stability => "stability",
            Condition::ConvexSynthesis => "convex_synthesis",
            Condition::Performance => "performance",
            Condition::Ccm => "ccm",
            Condition::CcmPerformance => "ccm_performance",
        }
    }
}

/// Outcome of one gridded check. For `metric_invalid`, `worst_eig` is the
/// smallest metric eigenvalue found and `argmax_point` is where it occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub condition: Condition,
    pub grid: String,
    pub worst_eig: f64,
    pub argmax_point: Vec<f64>,
    pub verdict: Verdict,
    pub certified_scalar: Option<f64>,
}

impl CertReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

enum PointOutcome {
    Evaluated(f64),
    MetricInvalid(f64),
}

/// Evaluates `at` on every grid point in parallel and reduces in grid order.
fn sweep<F>(condition: Condition, grid: &Grid, extra: &str, at: F) -> Result<CertReport, CertifyError>
where
    F: Fn(&[f64]) -> Result<PointOutcome, CertifyError> + Sync,
{
    if grid.is_empty() {
        return Err(CertifyError::EmptyGrid);
    }
    let outcomes: Vec<_> = (0..grid.len())
        .into_par_iter()
        .map(|i| at(&grid.point(i)))
        .collect();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = 0;
    let mut invalid: Option<(f64, usize)> = None;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            PointOutcome::Evaluated(e) => {
                if e > worst || e.is_nan() {
                    worst = e;
                    worst_at = i;
                }
            }
            PointOutcome::MetricInvalid(e) => {
                if invalid.is_none_or(|(v, _)| e < v) {
                    invalid = Some((e, i));
                }
            }
        }
    }
    let mut desc = grid.describe();
    if !extra.is_empty() {
        desc = format!("{desc}; {extra}");
    }
    let (verdict, worst_eig, idx) = match invalid {
        Some((e, i)) => (Verdict::MetricInvalid, e, i),
        None if worst <= -TOL_PD => (Verdict::Certified, worst, worst_at),
        None => (Verdict::Violated, worst, worst_at),
    };
    Ok(CertReport {
        condition,
        grid: desc,
        worst_eig,
        argmax_point: grid.point(idx),
        verdict,
        certified_scalar: None,
    })
}

fn check_rates(m: &SymbolicMatrixFn, rate_bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>, CertifyError> {
    if m.n_partials() != rate_bounds.len() {
        return Err(CertifyError::Dimension {
            what: "rate bounds".into(),
            expected: m.n_partials(),
            found: rate_bounds.len(),
        });
    }
    Ok(box_vertices(rate_bounds))
}

fn rate_note(vertices: &[Vec<f64>]) -> String {
    format!("{} rate vertices", vertices.len())
}

/// `Σ ρ_i ∂M/∂σ_i`.
fn rate_term(m: &SymbolicMatrixFn, p: &[f64], rho: &[f64]) -> Result<DMatrix<f64>, CertifyError> {
    let (n, _) = m.shape();
    let mut acc = DMatrix::zeros(n, n);
    for (i, r) in rho.iter().enumerate() {
        if *r != 0.0 {
            acc += *r * m.partial(p, i)?;
        }
    }
    Ok(acc)
}

fn positive_definite(m: &DMatrix<f64>) -> Result<Option<f64>, CertifyError> {
    let e = linalg::min_eig_sym(m)?;
    Ok(if e > TOL_PD { None } else { Some(e) })
}

/// `He{M𝒜} + 2λM + Σ ρ_i ∂M/∂σ_i ≺ 0` on `grid × vertices(rate box)`.
pub fn check_stability_lmi<A>(
    m: &SymbolicMatrixFn,
    acl: A,
    lambda: f64,
    grid: &Grid,
    rate_bounds: &[(f64, f64)],
) -> Result<CertReport, CertifyError>
where
    A: Fn(&[f64]) -> Result<DMatrix<f64>, CertifyError> + Sync,
{
    let vertices = check_rates(m, rate_bounds)?;
    sweep(Condition::Stability, grid, &rate_note(&vertices), |s| {
        let mv = m.eval(s)?;
        if let Some(e) = positive_definite(&mv)? {
            return Ok(PointOutcome::MetricInvalid(e));
        }
        let base = linalg::he(&mv, &acl(s)?) + 2.0 * lambda * &mv;
        let mut worst = f64::NEG_INFINITY;
        for rho in &vertices {
            worst = worst.max(linalg::max_eig_sym(&(&base + rate_term(m, s, rho)?))?);
        }
        Ok(PointOutcome::Evaluated(worst))
    })
}

/// Report of the convexified synthesis check plus the state-feedback gains
/// `K = L W⁻¹` recovered at each grid point.
#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub report: CertReport,
    pub gains: Vec<(Vec<f64>, DMatrix<f64>)>,
}

/// `He{A W + B_u L} + 2λW − Σ ρ_i ∂W/∂σ_i ≺ 0`, where `plant(σ)` supplies
/// `A` and `B_u`.
pub fn check_convex_synthesis<P>(
    w: &SymbolicMatrixFn,
    l: &SymbolicMatrixFn,
    plant: P,
    lambda: f64,
    grid: &Grid,
    rate_bounds: &[(f64, f64)],
) -> Result<SynthesisReport, CertifyError>
where
    P: Fn(&[f64]) -> Result<Jacobians, CertifyError> + Sync,
{
    let vertices = check_rates(w, rate_bounds)?;
    let report = sweep(Condition::ConvexSynthesis, grid, &rate_note(&vertices), |s| {
        let wv = w.eval(s)?;
        if let Some(e) = positive_definite(&wv)? {
            return Ok(PointOutcome::MetricInvalid(e));
        }
        let j = plant(s)?;
        let x = &j.a * &wv + &j.bu * l.eval(s)?;
        let base = &x + x.transpose() + 2.0 * lambda * &wv;
        let mut worst = f64::NEG_INFINITY;
        for rho in &vertices {
            worst = worst.max(linalg::max_eig_sym(&(&base - rate_term(w, s, rho)?))?);
        }
        Ok(PointOutcome::Evaluated(worst))
    })?;
    let mut gains = Vec::with_capacity(grid.len());
    if report.verdict != Verdict::MetricInvalid {
        for s in grid.points() {
            let winv = w.eval(&s)?.try_inverse().ok_or(LinalgError::Singular)?;
            let k = l.eval(&s)? * winv;
            gains.push((s, k));
        }
    }
    Ok(SynthesisReport { report, gains })
}

/// Closed-loop data `(𝒜, ℬ, 𝒞, 𝒟)` for the performance inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Assembles
/// `[[ℳ, MB, Cᵀ/α], [BᵀM, −I, Dᵀ/α], [C/α, D/α, −I]]`.
fn performance_block(mcal: &DMatrix<f64>, m: &DMatrix<f64>, cl: &ClosedLoop, alpha: f64) -> DMatrix<f64> {
    let n = mcal.nrows();
    let nw = cl.b.ncols();
    let nz = cl.c.nrows();
    let size = n + nw + nz;
    let mut s = DMatrix::zeros(size, size);
    s.view_mut((0, 0), (n, n)).copy_from(mcal);
    let mb = m * &cl.b;
    s.view_mut((0, n), (n, nw)).copy_from(&mb);
    s.view_mut((n, 0), (nw, n)).copy_from(&mb.transpose());
    s.view_mut((n, n), (nw, nw)).fill_diagonal(-1.0);
    let c = &cl.c / alpha;
    let d = &cl.d / alpha;
    s.view_mut((n + nw, 0), (nz, n)).copy_from(&c);
    s.view_mut((0, n + nw), (n, nz)).copy_from(&c.transpose());
    s.view_mut((n + nw, n), (nz, nw)).copy_from(&d);
    s.view_mut((n, n + nw), (nw, nz)).copy_from(&d.transpose());
    s.view_mut((n + nw, n + nw), (nz, nz)).fill_diagonal(-1.0);
    s
}

fn check_alpha(alpha: f64) -> Result<(), CertifyError> {
    if alpha > 0.0 {
        Ok(())
    } else {
        Err(CertifyError::NonPositive("alpha", alpha))
    }
}

/// L2-gain inequality with `ℳ = He{M𝒜} + Σ ρ_i ∂M/∂σ_i`.
pub fn check_performance_lmi<L>(
    m: &SymbolicMatrixFn,
    closed_loop: L,
    alpha: f64,
    grid: &Grid,
    rate_bounds: &[(f64, f64)],
) -> Result<CertReport, CertifyError>
where
    L: Fn(&[f64]) -> Result<ClosedLoop, CertifyError> + Sync,
{
    check_alpha(alpha)?;
    let vertices = check_rates(m, rate_bounds)?;
    sweep(Condition::Performance, grid, &rate_note(&vertices), |s| {
        let mv = m.eval(s)?;
        if let Some(e) = positive_definite(&mv)? {
            return Ok(PointOutcome::MetricInvalid(e));
        }
        let cl = closed_loop(s)?;
        let base = linalg::he(&mv, &cl.a);
        let mut worst = f64::NEG_INFINITY;
        for rho in &vertices {
            let mcal = &base + rate_term(m, s, rho)?;
            worst = worst.max(linalg::max_eig_sym(&performance_block(&mcal, &mv, &cl, alpha))?);
        }
        Ok(PointOutcome::Evaluated(worst))
    })
}

/// Differential closed loop of a CCM design at a packed `(x, u, w)` point.
struct CcmPoint {
    m: DMatrix<f64>,
    rate: DMatrix<f64>,
    cl: ClosedLoop,
}

fn ccm_point(m: &SymbolicMatrixFn, model: &SystemModel, k: &ExprMatrix, p: &[f64]) -> Result<CcmPoint, CertifyError> {
    let j = model.jacobians_packed(p)?;
    let kv = k
        .eval(p)
        .map_err(|e| CertifyError::Eval(e.describe(k.space())))?;
    let f = model.eval_dynamics_packed(p)?;
    let mv = m.eval(p)?;
    let mut rate = DMatrix::zeros(mv.nrows(), mv.ncols());
    for i in 0..model.n_x() {
        if f[i] != 0.0 {
            rate += f[i] * m.partial(p, i)?;
        }
    }
    Ok(CcmPoint {
        m: mv,
        rate,
        cl: ClosedLoop {
            a: &j.a + &j.bu * &kv,
            b: j.bw,
            c: &j.c + &j.du * &kv,
            d: j.dw,
        },
    })
}

fn check_ccm_inputs(m: &SymbolicMatrixFn, model: &SystemModel, k: &ExprMatrix, grid: &Grid) -> Result<(), CertifyError> {
    let n_x = model.n_x();
    let dims = [
        ("metric partials", n_x, m.n_partials()),
        ("metric rows", n_x, m.shape().0),
        ("gain rows", model.n_u(), k.shape().0),
        ("gain columns", n_x, k.shape().1),
        ("grid axes", model.space().len(), grid.dim()),
    ];
    for (what, expected, found) in dims {
        if expected != found {
            return Err(CertifyError::Dimension {
                what: what.into(),
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// `He{M(x)𝒜} + 2λM(x) + Σ f_i ∂M/∂x_i ≺ 0` over a box in `(x, u, w)`.
///
/// `m` and `k` are expressions over the model's variable space; the
/// partials of `m` must be taken with respect to the state slots. The grid
/// has one axis per model variable.
pub fn check_ccm(
    m: &SymbolicMatrixFn,
    model: &SystemModel,
    k: &ExprMatrix,
    lambda: f64,
    grid: &Grid,
) -> Result<CertReport, CertifyError> {
    check_ccm_inputs(m, model, k, grid)?;
    sweep(Condition::Ccm, grid, "", |p| {
        let pt = ccm_point(m, model, k, p)?;
        if let Some(e) = positive_definite(&pt.m)? {
            return Ok(PointOutcome::MetricInvalid(e));
        }
        let s = linalg::he(&pt.m, &pt.cl.a) + 2.0 * lambda * &pt.m + pt.rate;
        Ok(PointOutcome::Evaluated(linalg::max_eig_sym(&s)?))
    })
}

/// L2-gain counterpart of [`check_ccm`] with disturbance channel `B_w`,
/// output `C + D_u K` and feedthrough `D_w`.
pub fn check_ccm_performance(
    m: &SymbolicMatrixFn,
    model: &SystemModel,
    k: &ExprMatrix,
    alpha: f64,
    grid: &Grid,
) -> Result<CertReport, CertifyError> {
    check_alpha(alpha)?;
    check_ccm_inputs(m, model, k, grid)?;
    sweep(Condition::CcmPerformance, grid, "", |p| {
        let pt = ccm_point(m, model, k, p)?;
        if let Some(e) = positive_definite(&pt.m)? {
            return Ok(PointOutcome::MetricInvalid(e));
        }
        let mcal = linalg::he(&pt.m, &pt.cl.a) + pt.rate;
        let s = performance_block(&mcal, &pt.m, &pt.cl, alpha);
        Ok(PointOutcome::Evaluated(linalg::max_eig_sym(&s)?))
    })
}

/// LPV closed loop `A + B_u K`, `B_w`, `C + D_u K`, `D_w` along the family,
/// as a function of σ.
pub fn lpv_closed_loop<'a>(
    model: &'a SystemModel,
    family: &'a EquilibriumFamily,
    controller: &'a GainScheduledController,
) -> impl Fn(&[f64]) -> Result<ClosedLoop, CertifyError> + Sync + 'a {
    move |s| {
        let j = family.lpv_linearize(model, s)?;
        let k = controller.gain(family, s)?;
        Ok(ClosedLoop {
            a: &j.a + &j.bu * &k,
            b: j.bw,
            c: &j.c + &j.du * &k,
            d: j.dw,
        })
    }
}

/// Open-loop LPV coefficients along the family, as a function of σ.
pub fn lpv_plant<'a>(
    model: &'a SystemModel,
    family: &'a EquilibriumFamily,
) -> impl Fn(&[f64]) -> Result<Jacobians, CertifyError> + Sync + 'a {
    move |s| Ok(family.lpv_linearize(model, s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Largest certified value (decay rates): certified below, violated above.
    Maximize,
    /// Smallest certified value (gain bounds): violated below, certified above.
    Minimize,
}

/// Bisection on a scalar. Returns the report of the last certified value,
/// with `certified_scalar` set.
pub fn bisect<F>(check: F, goal: Goal, bracket: (f64, f64), tol: f64) -> Result<CertReport, CertifyError>
where
    F: Fn(f64) -> Result<CertReport, CertifyError>,
{
    if !(tol > 0.0) {
        return Err(CertifyError::NonPositive("tol", tol));
    }
    let (lo, hi) = if bracket.0 <= bracket.1 { bracket } else { (bracket.1, bracket.0) };
    let r_lo = check(lo)?;
    let r_hi = check(hi)?;
    let (good, bad, mut good_rep) = match goal {
        Goal::Maximize if r_lo.is_certified() && !r_hi.is_certified() => (lo, hi, r_lo),
        Goal::Minimize if !r_lo.is_certified() && r_hi.is_certified() => (hi, lo, r_hi),
        _ => {
            return Err(CertifyError::InvalidBracket {
                lo,
                hi,
                lo_verdict: r_lo.verdict,
                hi_verdict: r_hi.verdict,
                reports: Box::new((r_lo, r_hi)),
            })
        }
    };
    let (mut good, mut bad) = (good, bad);
    while (good - bad).abs() > tol {
        let mid = 0.5 * (good + bad);
        let r = check(mid)?;
        if r.is_certified() {
            good = mid;
            good_rep = r;
        } else {
            bad = mid;
        }
    }
    good_rep.certified_scalar = Some(good);
    Ok(good_rep)
}
