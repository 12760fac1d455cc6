//! Riemannian metrics on ℝⁿ, discretized path energy and length, and a
//! geodesic solver that minimizes the discrete energy.
//!
//! A path is stored as `N + 1` nodes at `s_j = j / N`. On segment `k` the
//! tangent is `N (c_{k+1} - c_k)` and the metric is sampled at the segment
//! midpoint, so
//!
//! ```text
//! ε = N Σ_k Δ_kᵀ M(m_k) Δ_k,    ℓ = Σ_k √(Δ_kᵀ M(m_k) Δ_k)
//! ```
//!
//! The solver runs gradient descent on the interior nodes, preconditioned
//! by the block-tridiagonal matrix obtained from `ε` with the metric frozen
//! (a metric-weighted discrete Laplacian), with Armijo backtracking.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::{CertifyError, SymbolicMatrixFn};
use crate::expr::{Expr, ExprMatrix, VarRole, VarSpace};
use crate::linalg;
use crate::model::SystemModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("metric evaluation failed: {0}")]
    Eval(String),
    #[error("metric is not positive definite at {point:?} (smallest eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { point: Vec<f64>, min_eig: f64 },
    #[error("metric leaves its declared bounds [{a1}, {a2}] at {point:?}: eigenvalues in [{lo:.3e}, {hi:.3e}]")]
    BoundsViolated {
        point: Vec<f64>,
        a1: f64,
        a2: f64,
        lo: f64,
        hi: f64,
    },
    #[error("metric must be square and symmetric over {expected} states, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("invalid metric bounds a1 = {0}, a2 = {1}")]
    InvalidBounds(f64, f64),
    #[error("point has dimension {found}, metric expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("a path needs at least {min} nodes, got {found}")]
    TooFewNodes { min: usize, found: usize },
    #[error("invalid geodesic settings: {0}")]
    Settings(String),
}

impl From<CertifyError> for GeometryError {
    fn from(e: CertifyError) -> Self {
        GeometryError::Eval(e.to_string())
    }
}

/// Riemannian metric `M(x) ≻ 0`, optionally declared uniformly bounded
/// `a₁ I ⪯ M(x) ⪯ a₂ I`.
#[derive(Debug, Clone)]
pub struct Metric {
    m: SymbolicMatrixFn,
    n: usize,
    bounds: Option<(f64, f64)>,
    /// Value of a constant metric.
    fixed: Option<DMatrix<f64>>,
}

impl Metric {
    /// `m` must be an `n×n` symmetric field over a space whose first `n`
    /// slots are the states, with partials taken in those slots.
    pub fn new(m: SymbolicMatrixFn, bounds: Option<(f64, f64)>) -> Result<Self, GeometryError> {
        let (rows, cols) = m.shape();
        if rows != cols || !m.is_symmetric() || m.n_partials() != rows {
            return Err(GeometryError::Shape {
                expected: m.n_partials(),
                rows,
                cols,
            });
        }
        if let Some((a1, a2)) = bounds {
            if !(a1 > 0.0 && a1 <= a2) {
                return Err(GeometryError::InvalidBounds(a1, a2));
            }
        }
        let fixed = if m.expr().is_constant() { Some(m.eval(&vec![0.0; rows])?) } else { None };
        if let Some(f) = &fixed {
            let lo = linalg::min_eig_sym(f).map_err(|e| GeometryError::Eval(e.to_string()))?;
            if !(lo > 0.0) {
                return Err(GeometryError::NotPositiveDefinite {
                    point: vec![],
                    min_eig: lo,
                });
            }
            if let Some((a1, a2)) = bounds {
                let hi = linalg::max_eig_sym(f).map_err(|e| GeometryError::Eval(e.to_string()))?;
                let slack = 1e-12 * a2;
                if lo < a1 - slack || hi > a2 + slack {
                    return Err(GeometryError::BoundsViolated {
                        point: vec![],
                        a1,
                        a2,
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(Self {
            fixed,
            n: rows,
            m,
            bounds,
        })
    }

    /// Parses a metric written over the given state names.
    pub fn parse<S: AsRef<str>>(states: &[&str], rows: &[Vec<S>], bounds: Option<(f64, f64)>) -> Result<Self, GeometryError> {
        let space = Arc::new(VarSpace::from_names(states, VarRole::State));
        let slots: Vec<usize> = (0..states.len()).collect();
        let m = SymbolicMatrixFn::parse(space, rows, &slots, true)?;
        Self::new(m, bounds)
    }

    /// Constant metric; its extreme eigenvalues become the declared bounds.
    pub fn constant(m: &DMatrix<f64>) -> Result<Self, GeometryError> {
        let n = m.nrows();
        let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let space = Arc::new(VarSpace::from_names(&refs, VarRole::State));
        let slots: Vec<usize> = (0..n).collect();
        let field = SymbolicMatrixFn::constant(space, m, &slots)?;
        if !field.is_symmetric() {
            return Err(GeometryError::Shape {
                expected: n,
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let ev = linalg::sym_eigenvalues(m).map_err(|e| GeometryError::Eval(e.to_string()))?;
        let (lo, hi) = (ev[0], ev[n - 1]);
        if lo <= 0.0 {
            return Err(GeometryError::NotPositiveDefinite {
                point: vec![],
                min_eig: lo,
            });
        }
        Self::new(field, Some((lo, hi)))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn is_constant(&self) -> bool {
        self.fixed.is_some()
    }

    pub fn field(&self) -> &SymbolicMatrixFn {
        &self.m
    }

    /// Same metric as a field over a model's `[x, u, w]` space, with
    /// partials in the state slots, for use with the CCM checks.
    pub fn to_model_field(&self, model: &SystemModel) -> Result<SymbolicMatrixFn, GeometryError> {
        if model.n_x() != self.n {
            return Err(GeometryError::Dimension {
                expected: self.n,
                found: model.n_x(),
            });
        }
        let with: Vec<Expr> = (0..self.n).map(Expr::var).collect();
        let expr: ExprMatrix = self.m.expr().substitute(model.space().clone(), &with);
        let slots: Vec<usize> = (0..self.n).collect();
        Ok(SymbolicMatrixFn::new(expr, &slots, true)?)
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.n {
            return Err(GeometryError::Dimension {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `M(x)`, validated against positivity and any declared bounds.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        self.check_dim(x)?;
        if let Some(m) = &self.fixed {
            return Ok(m.clone());
        }
        let m = self.m.eval(x)?;
        let ev = linalg::sym_eigenvalues(&m).map_err(|e| GeometryError::Eval(e.to_string()))?;
        let (lo, hi) = (ev[0], ev[self.n - 1]);
        if !(lo > 0.0) {
            return Err(GeometryError::NotPositiveDefinite {
                point: x.to_vec(),
                min_eig: lo,
            });
        }
        if let Some((a1, a2)) = self.bounds {
            let slack = 1e-12 * a2;
            if lo < a1 - slack || hi > a2 + slack {
                return Err(GeometryError::BoundsViolated {
                    point: x.to_vec(),
                    a1,
                    a2,
                    lo,
                    hi,
                });
            }
        }
        Ok(m)
    }

    /// `∂M/∂x_i` at `x`.
    pub fn partial(&self, x: &[f64], i: usize) -> Result<DMatrix<f64>, GeometryError> {
        self.check_dim(x)?;
        Ok(self.m.partial(x, i)?)
    }

    /// `⟨v, v⟩_{M(x)}`.
    pub fn quad(&self, x: &[f64], v: &DVector<f64>) -> Result<f64, GeometryError> {
        Ok(v.dot(&(self.eval(x)? * v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicSettings {
    /// Number of segments `N`; the path has `N + 1` nodes.
    pub nodes: usize,
    /// Gradient ∞-norm at which a solve counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub backtrack: f64,
}

impl Default for GeodesicSettings {
    fn default() -> Self {
        Self {
            nodes: 50,
            tol: 1e-8,
            max_iter: 500,
            backtrack: 0.5,
        }
    }
}

impl GeodesicSettings {
    fn validate(&self) -> Result<(), GeometryError> {
        if self.nodes < 2 {
            return Err(GeometryError::TooFewNodes {
                min: 2,
                found: self.nodes,
            });
        }
        if !(self.tol > 0.0) {
            return Err(GeometryError::Settings(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(GeometryError::Settings(format!(
                "backtracking factor must lie in (0, 1), got {}",
                self.backtrack
            )));
        }
        Ok(())
    }
}

/// Discrete path `c(s_j)`, `s_j = j / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub nodes: Vec<DVector<f64>>,
    pub energy: f64,
    pub length: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final gradient ∞-norm.
    pub residual: f64,
}

impl GeodesicPath {
    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.nodes[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.nodes.last().unwrap()
    }

    pub fn s(&self, j: usize) -> f64 {
        j as f64 / self.segments() as f64
    }

    /// Writes the path as CSV: a comment line with energy and length, then
    /// columns `s, x1..xn`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut out = out;
        writeln!(out, "# energy={:.17e} length={:.17e}", self.energy, self.length)?;
        let mut w = csv::Writer::from_writer(out);
        let n = self.nodes[0].len();
        let mut header = vec!["s".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (j, c) in self.nodes.iter().enumerate() {
            let mut rec = vec![format!("{}", self.s(j))];
            rec.extend(c.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_path(metric: &Metric, path: &[DVector<f64>]) -> Result<(), GeometryError> {
    if path.len() < 2 {
        return Err(GeometryError::TooFewNodes {
            min: 2,
            found: path.len(),
        });
    }
    for c in path {
        metric.check_dim(c.as_slice())?;
    }
    Ok(())
}

fn segment_quads(metric: &Metric, path: &[DVector<f64>]) -> Result<Vec<f64>, GeometryError> {
    path.windows(2)
        .map(|w| {
            let mid = 0.5 * (&w[0] + &w[1]);
            let d = &w[1] - &w[0];
            metric.quad(mid.as_slice(), &d)
        })
        .collect()
}

/// Discrete energy `ε = N Σ Δᵀ M(mid) Δ`.
pub fn path_energy(metric: &Metric, path: &[DVector<f64>]) -> Result<f64, GeometryError> {
    check_path(metric, path)?;
    let n = (path.len() - 1) as f64;
    Ok(n * segment_quads(metric, path)?.iter().sum::<f64>())
}

/// Discrete length `ℓ = Σ √(Δᵀ M(mid) Δ)`.
pub fn path_length(metric: &Metric, path: &[DVector<f64>]) -> Result<f64, GeometryError> {
    check_path(metric, path)?;
    Ok(segment_quads(metric, path)?.iter().map(|q| q.max(0.0).sqrt()).sum())
}

/// Straight chord with `segments + 1` nodes.
pub fn straight_path(x0: &DVector<f64>, x1: &DVector<f64>, segments: usize) -> Vec<DVector<f64>> {
    (0..=segments)
        .map(|j| {
            let s = j as f64 / segments as f64;
            if j == segments {
                x1.clone()
            } else {
                x0 + (x1 - x0) * s
            }
        })
        .collect()
}

struct Linearized {
    energy: f64,
    length: f64,
    /// Gradient with respect to interior nodes 1..N-1.
    grad: Vec<DVector<f64>>,
    /// Metric at each segment midpoint.
    mids: Vec<DMatrix<f64>>,
}

fn linearize(metric: &Metric, path: &[DVector<f64>]) -> Result<Linearized, GeometryError> {
    let segs = path.len() - 1;
    let nf = segs as f64;
    let dim = metric.dim();
    let mut energy = 0.0;
    let mut length = 0.0;
    let mut grad = vec![DVector::zeros(dim); segs + 1];
    let mut mids = Vec::with_capacity(segs);
    for k in 0..segs {
        let mid = 0.5 * (&path[k] + &path[k + 1]);
        let d = &path[k + 1] - &path[k];
        let m = metric.eval(mid.as_slice())?;
        let md = &m * &d;
        let quad = d.dot(&md);
        energy += nf * quad;
        length += quad.max(0.0).sqrt();
        let mut q = DVector::zeros(dim);
        if !metric.is_constant() {
            for i in 0..dim {
                q[i] = d.dot(&(metric.partial(mid.as_slice(), i)? * &d));
            }
        }
        // T_k = N ΔᵀM(mid)Δ: ∂/∂c_{k+1} = N(2MΔ + q/2), ∂/∂c_k = N(-2MΔ + q/2)
        grad[k + 1] += nf * (2.0 * &md + 0.5 * &q);
        grad[k] += nf * (-2.0 * &md + 0.5 * &q);
        mids.push(m);
    }
    grad.pop();
    grad.remove(0);
    Ok(Linearized {
        energy,
        length,
        grad,
        mids,
    })
}

fn inf_norm(g: &[DVector<f64>]) -> f64 {
    g.iter().map(|v| v.amax()).fold(0.0, f64::max)
}

/// Solves the block-tridiagonal system with diagonal blocks
/// `2N(M_{j-1} + M_j)` and off-diagonal blocks `-2N M_j`.
fn precondition(mids: &[DMatrix<f64>], g: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let segs = mids.len();
    let nf = segs as f64;
    let m = g.len();
    let diag = |j: usize| 2.0 * nf * (&mids[j] + &mids[j + 1]);
    let off = |j: usize| -2.0 * nf * &mids[j + 1];
    let mut cp: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut gp: Vec<DVector<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut d = diag(j);
        let mut rhs = g[j].clone();
        if j > 0 {
            let o = off(j - 1);
            d -= &o * &cp[j - 1];
            rhs -= &o * &gp[j - 1];
        }
        let lu = d.lu();
        gp.push(lu.solve(&rhs)?);
        if j + 1 < m {
            cp.push(lu.solve(&off(j))?);
        }
    }
    let mut x = vec![DVector::zeros(g[0].len()); m];
    for j in (0..m).rev() {
        x[j] = if j + 1 < m { &gp[j] - &cp[j] * &x[j + 1] } else { gp[j].clone() };
    }
    Some(x)
}

/// Minimizes the discrete energy between `x0` and `x1`, starting from the
/// straight chord.
pub fn solve_geodesic(
    metric: &Metric,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    settings: &GeodesicSettings,
) -> Result<GeodesicPath, GeometryError> {
    settings.validate()?;
    solve_from(metric, straight_path(x0, x1, settings.nodes), settings)
}

/// Like [`solve_geodesic`] but starts from a previous path, shifted so its
/// endpoints move to `x0`, `x1` (`c_j + (1 - s_j)(x0 - a0) + s_j(x1 - a1)`).
/// Falls back to the chord when the node counts differ.
pub fn solve_geodesic_warm(
    metric: &Metric,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    previous: &GeodesicPath,
    settings: &GeodesicSettings,
) -> Result<GeodesicPath, GeometryError> {
    settings.validate()?;
    if previous.segments() != settings.nodes || metric.is_constant() {
        return solve_geodesic(metric, x0, x1, settings);
    }
    let d0 = x0 - previous.start();
    let d1 = x1 - previous.end();
    let segs = settings.nodes;
    let mut nodes: Vec<DVector<f64>> = previous
        .nodes
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let s = j as f64 / segs as f64;
            c + &d0 * (1.0 - s) + &d1 * s
        })
        .collect();
    nodes[0] = x0.clone();
    nodes[segs] = x1.clone();
    solve_from(metric, nodes, settings)
}

fn solve_from(
    metric: &Metric,
    mut nodes: Vec<DVector<f64>>,
    settings: &GeodesicSettings,
) -> Result<GeodesicPath, GeometryError> {
    check_path(metric, &nodes)?;
    let segs = nodes.len() - 1;
    let mut lin = linearize(metric, &nodes)?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let gnorm = inf_norm(&lin.grad);
        if gnorm <= settings.tol {
            converged = true;
            break;
        }
        if iterations >= settings.max_iter {
            break;
        }
        iterations += 1;
        let dir = match precondition(&lin.mids, &lin.grad) {
            Some(d) => d,
            None => lin.grad.clone(),
        };
        let slope: f64 = dir.iter().zip(&lin.grad).map(|(d, g)| d.dot(g)).sum();
        let dir = if slope > 0.0 { dir } else { lin.grad.clone() };
        let slope: f64 = dir.iter().zip(&lin.grad).map(|(d, g)| d.dot(g)).sum();
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-16 {
            let mut trial = nodes.clone();
            for j in 1..segs {
                trial[j] -= t * &dir[j - 1];
            }
            // a trial may leave the metric's domain; treat that as too long a step
            if let Ok(tl) = linearize(metric, &trial) {
                let armijo = tl.energy <= lin.energy - 1e-4 * t * slope;
                // near the minimum the energy change drowns in rounding, the
                // directional derivative does not: accept while it has not
                // overshot past -0.8 of its initial value
                let trial_slope: f64 = dir.iter().zip(&tl.grad).map(|(d, g)| d.dot(g)).sum();
                let flat = tl.energy <= lin.energy + 1e-12 * lin.energy.abs() && -trial_slope <= 0.8 * slope;
                if armijo || flat {
                    accepted = Some((trial, tl));
                    break;
                }
            }
            t *= settings.backtrack;
        }
        match accepted {
            Some((trial, tl)) => {
                nodes = trial;
                lin = tl;
            }
            None => break,
        }
    }
    let residual = inf_norm(&lin.grad);
    Ok(GeodesicPath {
        energy: lin.energy,
        length: lin.length,
        nodes,
        iterations,
        converged,
        residual,
    })
}

/// Riemannian energy `ε(x0, x1)` with the solver's convergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannEnergy {
    pub energy: f64,
    pub converged: bool,
}

pub fn riemann_energy(
    metric: &Metric,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    settings: &GeodesicSettings,
) -> Result<RiemannEnergy, GeometryError> {
    let path = solve_geodesic(metric, x0, x1, settings)?;
    Ok(RiemannEnergy {
        energy: path_energy(metric, &path.nodes)?,
        converged: path.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn bump() -> Metric {
        Metric::parse(&["x"], &[vec!["1 + 3*x^2"]], None).unwrap()
    }

    #[test]
    fn euclidean_energy_and_length() {
        let id = Metric::constant(&DMatrix::identity(2, 2)).unwrap();
        let p = straight_path(&v(&[0.0, 0.0]), &v(&[3.0, 4.0]), 10);
        assert!((path_length(&id, &p).unwrap() - 5.0).abs() < 1e-12);
        assert!((path_energy(&id, &p).unwrap() - 25.0).abs() < 1e-12);
        let four = Metric::constant(&(4.0 * DMatrix::<f64>::identity(2, 2))).unwrap();
        assert!((path_length(&four, &p).unwrap() - 10.0).abs() < 1e-12);
        assert!((path_energy(&four, &p).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn chord_length_under_bump_metric() {
        // ∫₀¹ √(1+3x²) dx in closed form
        let exact = 1.0 + (3f64.sqrt()).asinh() / (2.0 * 3f64.sqrt());
        let p = straight_path(&v(&[0.0]), &v(&[1.0]), 200);
        assert!((path_length(&bump(), &p).unwrap() - exact).abs() < 1e-4);
    }

    #[test]
    fn constant_metric_geodesic_is_the_chord() {
        let m = Metric::constant(&DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0])).unwrap();
        let g = solve_geodesic(&m, &v(&[0.0, 1.0]), &v(&[2.0, -1.0]), &GeodesicSettings::default()).unwrap();
        assert!(g.converged);
        assert_eq!(g.iterations, 0);
    }

    #[test]
    fn degenerate_path_has_zero_energy() {
        let e = riemann_energy(&bump(), &v(&[0.4]), &v(&[0.4]), &GeodesicSettings::default()).unwrap();
        assert_eq!(e.energy, 0.0);
        assert!(e.converged);
    }

    #[test]
    fn bump_metric_geodesic_beats_the_chord() {
        let s = GeodesicSettings {
            nodes: 200,
            ..Default::default()
        };
        let g = solve_geodesic(&bump(), &v(&[0.0]), &v(&[1.0]), &s).unwrap();
        assert!(g.converged, "{} {}", g.iterations, g.residual);
        let chord = path_energy(&bump(), &straight_path(&v(&[0.0]), &v(&[1.0]), 200)).unwrap();
        assert!(g.energy <= chord);
        assert!(g.energy >= g.length * g.length - 1e-9);
    }

    #[test]
    fn bounds_are_enforced() {
        let m = Metric::parse(&["x"], &[vec!["1 + x^2"]], Some((1.0, 2.0))).unwrap();
        assert!(m.eval(&[0.5]).is_ok());
        assert!(matches!(m.eval(&[2.0]), Err(GeometryError::BoundsViolated { .. })));
        let neg = Metric::parse(&["x"], &[vec!["x"]], None).unwrap();
        assert!(matches!(neg.eval(&[-1.0]), Err(GeometryError::NotPositiveDefinite { .. })));
    }
}
