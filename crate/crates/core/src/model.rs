//! Nonlinear plant `ẋ = f(x,u,w)`, `z = h(x,u,w)` and the six coefficient
//! matrices shared by both control pipelines.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::expr::{EvalError, ExprMatrix, ExprVector, ParseError, VarRole, VarSpace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error("{0}")]
    Eval(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("unknown built-in model `{0}`")]
    UnknownModel(String),
    #[error("output map must not be empty")]
    EmptyOutput,
}

impl ModelError {
    pub(crate) fn eval(err: EvalError, space: &VarSpace) -> Self {
        ModelError::Eval(err.describe(space))
    }
}

/// Numeric values of the six Jacobians at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub du: DMatrix<f64>,
    pub dw: DMatrix<f64>,
}

impl Jacobians {
    fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        [&self.a, &self.bu, &self.bw, &self.c, &self.du, &self.dw].into_iter()
    }
}

/// The six Jacobians as expressions over the model's variable space.
#[derive(Debug, Clone)]
pub struct SymbolicJacobians {
    pub a: ExprMatrix,
    pub bu: ExprMatrix,
    pub bw: ExprMatrix,
    pub c: ExprMatrix,
    pub du: ExprMatrix,
    pub dw: ExprMatrix,
}

/// Plant definition. Variable slots are laid out as `[x…, u…, w…]`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    name: String,
    space: Arc<VarSpace>,
    nx: usize,
    nu: usize,
    nw: usize,
    f: ExprVector,
    h: ExprVector,
    jac: SymbolicJacobians,
}

pub const BUILTIN_MODELS: &[&str] = &["rugh1991", "cubic_decay", "first_order_lag"];

impl SystemModel {
    /// Builds a model from expression strings.
    pub fn parse<S: AsRef<str>>(
        name: &str,
        states: &[&str],
        inputs: &[&str],
        disturbances: &[&str],
        f: &[S],
        h: &[S],
    ) -> Result<Self, ModelError> {
        let mut space = VarSpace::new();
        for s in states {
            space.push(s, VarRole::State);
        }
        for s in inputs {
            space.push(s, VarRole::Input);
        }
        for s in disturbances {
            space.push(s, VarRole::Disturbance);
        }
        let declared = states.len() + inputs.len() + disturbances.len();
        if space.len() != declared {
            return Err(ModelError::Dimension {
                what: "distinct variable names",
                expected: declared,
                found: space.len(),
            });
        }
        let space = Arc::new(space);
        let parse_all = |what: &str, texts: &[S]| {
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    crate::expr::parse(t.as_ref(), &space).map_err(|source| ModelError::Parse {
                        path: format!("{what}[{i}]"),
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let f = ExprVector::new(space.clone(), parse_all("f", f)?);
        let h = ExprVector::new(space.clone(), parse_all("h", h)?);
        Self::from_exprs(name, states.len(), inputs.len(), disturbances.len(), f, h)
    }

    /// Builds a model from expressions already parsed over a space laid out
    /// as `[x…, u…, w…]`.
    pub fn from_exprs(
        name: &str,
        nx: usize,
        nu: usize,
        nw: usize,
        f: ExprVector,
        h: ExprVector,
    ) -> Result<Self, ModelError> {
        let space = f.space().clone();
        if space.len() != nx + nu + nw {
            return Err(ModelError::Dimension {
                what: "variable space",
                expected: nx + nu + nw,
                found: space.len(),
            });
        }
        if f.len() != nx {
            return Err(ModelError::Dimension {
                what: "f",
                expected: nx,
                found: f.len(),
            });
        }
        if h.is_empty() {
            return Err(ModelError::EmptyOutput);
        }
        let xs: Vec<usize> = (0..nx).collect();
        let us: Vec<usize> = (nx..nx + nu).collect();
        let ws: Vec<usize> = (nx + nu..nx + nu + nw).collect();
        let jac = SymbolicJacobians {
            a: f.jacobian(&xs),
            bu: f.jacobian(&us),
            bw: f.jacobian(&ws),
            c: h.jacobian(&xs),
            du: h.jacobian(&us),
            dw: h.jacobian(&ws),
        };
        Ok(Self {
            name: name.to_string(),
            space,
            nx,
            nu,
            nw,
            f,
            h,
            jac,
        })
    }

    /// Registry of built-in plants.
    ///
    /// * `rugh1991`: `ẋ1 = -x1 - x2 + w`, `ẋ2 = 1 - e^{-x2} + u`, `z = x`
    /// * `cubic_decay`: `ẋ = -x - x³`, `z = x`
    /// * `first_order_lag`: `ẋ = -x + w`, `z = x`
    pub fn builtin(name: &str) -> Result<Self, ModelError> {
        match name {
            "rugh1991" => Self::parse(
                name,
                &["x1", "x2"],
                &["u"],
                &["w"],
                &["-x1 - x2 + w", "1 - exp(-x2) + u"],
                &["x1", "x2"],
            ),
            "cubic_decay" => Self::parse(name, &["x"], &[], &[], &["-x - x^3"], &["x"]),
            "first_order_lag" => Self::parse(name, &["x"], &[], &["w"], &["-x + w"], &["x"]),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn n_x(&self) -> usize {
        self.nx
    }

    pub fn n_u(&self) -> usize {
        self.nu
    }

    pub fn n_w(&self) -> usize {
        self.nw
    }

    pub fn n_z(&self) -> usize {
        self.h.len()
    }

    pub fn f(&self) -> &ExprVector {
        &self.f
    }

    pub fn h(&self) -> &ExprVector {
        &self.h
    }

    pub fn symbolic_jacobians(&self) -> &SymbolicJacobians {
        &self.jac
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.space.names().take(self.nx).collect()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.space.names().skip(self.nx).take(self.nu).collect()
    }

    pub fn disturbance_names(&self) -> Vec<&str> {
        self.space.names().skip(self.nx + self.nu).collect()
    }

    /// Packs `(x, u, w)` into one evaluation vector.
    pub fn pack(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, ModelError> {
        for (what, got, want) in [("x", x.len(), self.nx), ("u", u.len(), self.nu), ("w", w.len(), self.nw)] {
            if got != want {
                return Err(ModelError::Dimension {
                    what,
                    expected: want,
                    found: got,
                });
            }
        }
        let mut p = Vec::with_capacity(self.space.len());
        p.extend_from_slice(x);
        p.extend_from_slice(u);
        p.extend_from_slice(w);
        Ok(p)
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<DVector<f64>, ModelError> {
        let p = self.pack(x, u, w)?;
        self.eval_dynamics_packed(&p)
    }

    /// `f` at an already packed `[x…, u…, w…]` vector.
    pub fn eval_dynamics_packed(&self, p: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.f.eval(p).map_err(|e| ModelError::eval(e, &self.space))
    }

    pub fn eval_output(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<DVector<f64>, ModelError> {
        let p = self.pack(x, u, w)?;
        self.h.eval(&p).map_err(|e| ModelError::eval(e, &self.space))
    }

    pub fn jacobians(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Jacobians, ModelError> {
        let p = self.pack(x, u, w)?;
        self.jacobians_packed(&p)
    }

    pub fn jacobians_packed(&self, p: &[f64]) -> Result<Jacobians, ModelError> {
        let ev = |m: &ExprMatrix| m.eval(p).map_err(|e| ModelError::eval(e, &self.space));
        Ok(Jacobians {
            a: ev(&self.jac.a)?,
            bu: ev(&self.jac.bu)?,
            bw: ev(&self.jac.bw)?,
            c: ev(&self.jac.c)?,
            du: ev(&self.jac.du)?,
            dw: ev(&self.jac.dw)?,
        })
    }

    /// Central finite-difference Jacobians with step `h`.
    pub fn fd_jacobians(&self, x: &[f64], u: &[f64], w: &[f64], h: f64) -> Result<Jacobians, ModelError> {
        if !(h > 0.0) {
            return Err(ModelError::InvalidStep(h));
        }
        let p = self.pack(x, u, w)?;
        let nz = self.n_z();
        let column = |v: &ExprVector, slot: usize| -> Result<DVector<f64>, ModelError> {
            let mut q = p.clone();
            q[slot] = p[slot] + h;
            let fp = v.eval(&q).map_err(|e| ModelError::eval(e, &self.space))?;
            q[slot] = p[slot] - h;
            let fm = v.eval(&q).map_err(|e| ModelError::eval(e, &self.space))?;
            Ok((fp - fm) / (2.0 * h))
        };
        let block = |v: &ExprVector, rows: usize, slots: std::ops::Range<usize>| {
            let mut m = DMatrix::zeros(rows, slots.len());
            for (j, s) in slots.enumerate() {
                m.set_column(j, &column(v, s)?);
            }
            Ok::<_, ModelError>(m)
        };
        let (nx, nu, nw) = (self.nx, self.nu, self.nw);
        Ok(Jacobians {
            a: block(&self.f, nx, 0..nx)?,
            bu: block(&self.f, nx, nx..nx + nu)?,
            bw: block(&self.f, nx, nx + nu..nx + nu + nw)?,
            c: block(&self.h, nz, 0..nx)?,
            du: block(&self.h, nz, nx..nx + nu)?,
            dw: block(&self.h, nz, nx + nu..nx + nu + nw)?,
        })
    }

    /// Largest relative deviation `|J - J_fd| / max(1, |J|)` over all
    /// entries of the six Jacobians.
    pub fn fd_check(&self, x: &[f64], u: &[f64], w: &[f64], h: f64) -> Result<f64, ModelError> {
        let fd = self.fd_jacobians(x, u, w, h)?;
        let sym = self.jacobians(x, u, w)?;
        let mut worst = 0.0f64;
        for (s, d) in sym.iter().zip(fd.iter()) {
            for (a, b) in s.iter().zip(d.iter()) {
                worst = worst.max((a - b).abs() / a.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}
