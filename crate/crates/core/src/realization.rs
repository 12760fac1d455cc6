//! Path-integral realization of a differential feedback gain.
//!
//! Given the geodesic `γ` from the target state `x*` to the current state
//! `x`, the applied control is `κ(1)` where
//!
//! ```text
//! dκ/ds = K(γ(s), κ(s)) γ_s(s),   κ(0) = u*
//! ```

use nalgebra::{DMatrix, DVector};

use crate::expr::ExprMatrix;
use crate::geometry::{self, GeodesicPath, GeodesicSettings, GeometryError, Metric};
use crate::grid::Grid;
use crate::lpv::{self, EquilibriumFamily, LpvError};
use crate::model::SystemModel;

pub const DEFAULT_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RealizationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lpv(#[from] LpvError),
    #[error("gain evaluation failed: {0}")]
    Eval(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("differential gain depends on disturbance `{0}`")]
    DependsOnDisturbance(String),
    #[error("substeps per segment must be at least 1")]
    NoSubsteps,
    #[error("finite-difference step {0} vanishes at this scale")]
    StepUnderflow(f64),
}

/// Result of one control evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmOutput {
    pub u: DVector<f64>,
    /// The geodesic solver met its tolerance.
    pub converged: bool,
    pub path: GeodesicPath,
}

/// Differential gain `K(x, u)` realized along geodesics of `metric`.
#[derive(Debug, Clone)]
pub struct CcmController {
    model: SystemModel,
    gain: ExprMatrix,
    metric: Metric,
    settings: GeodesicSettings,
    substeps: usize,
    /// `K` does not depend on `u`.
    input_free: bool,
}

impl CcmController {
    /// `gain` is an `n_u × n_x` matrix over the model's variable space; it
    /// may use states and inputs only.
    pub fn new(
        model: &SystemModel,
        gain: ExprMatrix,
        metric: Metric,
        settings: GeodesicSettings,
        substeps: usize,
    ) -> Result<Self, RealizationError> {
        let dims = [
            ("gain rows", model.n_u(), gain.shape().0),
            ("gain columns", model.n_x(), gain.shape().1),
            ("metric dimension", model.n_x(), metric.dim()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(RealizationError::Dimension { what, expected, found });
            }
        }
        let first_w = model.n_x() + model.n_u();
        for slot in first_w..model.space().len() {
            if gain.depends_on(slot) {
                let name = model.space().get(slot).unwrap().name.clone();
                return Err(RealizationError::DependsOnDisturbance(name));
            }
        }
        if substeps == 0 {
            return Err(RealizationError::NoSubsteps);
        }
        let input_free = (model.n_x()..first_w).all(|slot| !gain.depends_on(slot));
        Ok(Self {
            input_free,
            model: model.clone(),
            gain,
            metric,
            settings,
            substeps,
        })
    }

    /// Parses the gain rows over the model's variable names.
    pub fn parse<S: AsRef<str>>(
        model: &SystemModel,
        gain: &[Vec<S>],
        metric: Metric,
        settings: GeodesicSettings,
    ) -> Result<Self, RealizationError> {
        let k = ExprMatrix::parse(model.space().clone(), gain)
            .map_err(|e| RealizationError::Eval(format!("gain: {e}")))?;
        Self::new(model, k, metric, settings, DEFAULT_SUBSTEPS)
    }

    pub fn with_substeps(mut self, substeps: usize) -> Result<Self, RealizationError> {
        if substeps == 0 {
            return Err(RealizationError::NoSubsteps);
        }
        self.substeps = substeps;
        Ok(self)
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn gain_expr(&self) -> &ExprMatrix {
        &self.gain
    }

    pub fn settings(&self) -> &GeodesicSettings {
        &self.settings
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// `K(x, u)`.
    pub fn gain(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>, RealizationError> {
        let w = vec![0.0; self.model.n_w()];
        let p = self
            .model
            .pack(x, u, &w)
            .map_err(|e| RealizationError::Eval(e.to_string()))?;
        self.gain
            .eval(&p)
            .map_err(|e| RealizationError::Eval(e.describe(self.model.space())))
    }

    /// Control values `κ(s_j)` at every node of `path`, by RK4 in `s`.
    pub fn integrate_gain(&self, path: &GeodesicPath, u_star: &DVector<f64>) -> Result<Vec<DVector<f64>>, RealizationError> {
        if u_star.len() != self.model.n_u() {
            return Err(RealizationError::Dimension {
                what: "u*",
                expected: self.model.n_u(),
                found: u_star.len(),
            });
        }
        let nodes = &path.nodes;
        let segs = nodes.len() - 1;
        let nf = segs as f64;
        let n_x = self.model.n_x();
        let n_u = self.model.n_u();
        // node tangents: centered inside, one-sided at the ends
        let tangents: Vec<DVector<f64>> = (0..=segs)
            .map(|j| {
                if j == 0 {
                    (&nodes[1] - &nodes[0]) * nf
                } else if j == segs {
                    (&nodes[segs] - &nodes[segs - 1]) * nf
                } else {
                    (&nodes[j + 1] - &nodes[j - 1]) * (0.5 * nf)
                }
            })
            .collect();
        let mut packed = vec![0.0; self.model.space().len()];
        let mut kmat = DMatrix::zeros(n_u, n_x);
        let mut tan = vec![0.0; n_x];
        let mut rhs = |k: usize, theta: f64, u: &[f64], out: &mut [f64]| -> Result<(), RealizationError> {
            for i in 0..n_x {
                packed[i] = nodes[k][i] * (1.0 - theta) + nodes[k + 1][i] * theta;
                tan[i] = tangents[k][i] * (1.0 - theta) + tangents[k + 1][i] * theta;
            }
            packed[n_x..n_x + n_u].copy_from_slice(u);
            self.gain
                .eval_into(&packed, &mut kmat)
                .map_err(|e| RealizationError::Eval(e.describe(self.model.space())))?;
            for (r, o) in out.iter_mut().enumerate() {
                *o = (0..n_x).map(|c| kmat[(r, c)] * tan[c]).sum();
            }
            Ok(())
        };
        let h = 1.0 / (nf * self.substeps as f64);
        let dtheta = 1.0 / self.substeps as f64;
        let mut out = Vec::with_capacity(segs + 1);
        let mut u = u_star.as_slice().to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n_u], vec![0.0; n_u], vec![0.0; n_u], vec![0.0; n_u]);
        let mut tmp = vec![0.0; n_u];
        let mut have_k4 = false;
        out.push(u_star.clone());
        for k in 0..segs {
            for i in 0..self.substeps {
                let t0 = i as f64 * dtheta;
                if self.input_free && have_k4 {
                    // K(x) alone: the stage at the start of a substep is the
                    // last stage of the previous one
                    k1.copy_from_slice(&k4);
                } else {
                    rhs(k, t0, &u, &mut k1)?;
                }
                for r in 0..n_u {
                    tmp[r] = u[r] + 0.5 * h * k1[r];
                }
                rhs(k, t0 + 0.5 * dtheta, &tmp, &mut k2)?;
                if self.input_free {
                    k3.copy_from_slice(&k2);
                } else {
                    for r in 0..n_u {
                        tmp[r] = u[r] + 0.5 * h * k2[r];
                    }
                    rhs(k, t0 + 0.5 * dtheta, &tmp, &mut k3)?;
                }
                for r in 0..n_u {
                    tmp[r] = u[r] + h * k3[r];
                }
                rhs(k, t0 + dtheta, &tmp, &mut k4)?;
                have_k4 = true;
                for r in 0..n_u {
                    u[r] += (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]) * (h / 6.0);
                }
            }
            out.push(DVector::from_column_slice(&u));
        }
        Ok(out)
    }

    /// `u = κ(1)` along the geodesic from `x_star` to `x`.
    pub fn control(&self, x: &DVector<f64>, x_star: &DVector<f64>, u_star: &DVector<f64>) -> Result<CcmOutput, RealizationError> {
        let path = geometry::solve_geodesic(&self.metric, x_star, x, &self.settings)?;
        self.finish(path, u_star)
    }

    /// Same as [`control`](Self::control), warm-starting the geodesic
    /// from a previous solve.
    pub fn control_warm(
        &self,
        x: &DVector<f64>,
        x_star: &DVector<f64>,
        u_star: &DVector<f64>,
        previous: Option<&GeodesicPath>,
    ) -> Result<CcmOutput, RealizationError> {
        let path = match previous {
            Some(p) => geometry::solve_geodesic_warm(&self.metric, x_star, x, p, &self.settings)?,
            None => geometry::solve_geodesic(&self.metric, x_star, x, &self.settings)?,
        };
        self.finish(path, u_star)
    }

    fn finish(&self, path: GeodesicPath, u_star: &DVector<f64>) -> Result<CcmOutput, RealizationError> {
        let kappa = self.integrate_gain(&path, u_star)?;
        Ok(CcmOutput {
            u: kappa.last().unwrap().clone(),
            converged: path.converged,
            path,
        })
    }

    /// Largest hidden-coupling entry of this realization over a σ grid of
    /// `family`, by central differences with step `h`.
    pub fn exactness_check(&self, family: &EquilibriumFamily, grid: &Grid, h: f64) -> Result<f64, RealizationError> {
        exactness_check(
            family,
            |s| {
                let e = family.point_unchecked(s)?;
                self.gain(e.x.as_slice(), e.u.as_slice())
                    .map_err(|err| LpvError::Model(crate::model::ModelError::Eval(err.to_string())))
            },
            |x, s| {
                let e = family.point_unchecked(s)?;
                self.control(&DVector::from_column_slice(x), &e.x, &e.u)
                    .map(|o| o.u)
                    .map_err(|err| LpvError::Model(crate::model::ModelError::Eval(err.to_string())))
            },
            grid,
            h,
        )
    }
}

/// `max_σ max |K_h(σ)|` for an arbitrary realized law `law(x, σ)` against
/// the LPV gain `gain(σ)`.
pub fn exactness_check<G, L>(family: &EquilibriumFamily, gain: G, law: L, grid: &Grid, h: f64) -> Result<f64, RealizationError>
where
    G: Fn(&[f64]) -> Result<DMatrix<f64>, LpvError>,
    L: Fn(&[f64], &[f64]) -> Result<DVector<f64>, LpvError>,
{
    let mut worst = 0.0f64;
    for s in grid.points() {
        if s.iter().any(|v| v + h == *v || v - h == *v) || !(h > 0.0) {
            return Err(RealizationError::StepUnderflow(h));
        }
        let kh = lpv::hidden_coupling_fd(family, &gain, &law, &s, h)?;
        worst = worst.max(kh.amax());
    }
    Ok(worst)
}

/// Writes `κ(s)` as CSV with columns `s, u1..un_u`.
pub fn write_kappa_csv<W: std::io::Write>(kappa: &[DVector<f64>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n_u = kappa.first().map_or(0, |k| k.len());
    let mut header = vec!["s".to_string()];
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    let segs = kappa.len().saturating_sub(1).max(1) as f64;
    for (j, k) in kappa.iter().enumerate() {
        let mut rec = vec![format!("{}", j as f64 / segs)];
        rec.extend(k.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
