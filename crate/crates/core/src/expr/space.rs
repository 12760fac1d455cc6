use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{parse, EvalError, Expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarRole {
    State,
    Input,
    Disturbance,
    Scheduling,
    PathParameter,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub role: VarRole,
}

/// Ordered list of declared variables. Slot `i` of an evaluation vector
/// binds variable `i`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarSpace {
    vars: Vec<Variable>,
}

impl VarSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: &[&str], role: VarRole) -> Self {
        let mut s = Self::new();
        for n in names {
            s.push(n, role);
        }
        s
    }

    /// Declares a variable and returns its slot. Re-declaring a name keeps
    /// the first slot.
    pub fn push(&mut self, name: &str, role: VarRole) -> usize {
        if let Some(i) = self.index_of(name) {
            return i;
        }
        self.vars.push(Variable {
            name: name.to_string(),
            role,
        });
        self.vars.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn get(&self, i: usize) -> Option<&Variable> {
        self.vars.get(i)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|v| v.name.as_str())
    }

    pub fn slots_with_role(&self, role: VarRole) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&i| self.vars[i].role == role)
            .collect()
    }
}

/// Column of expressions over one variable space.
#[derive(Debug, Clone)]
pub struct ExprVector {
    space: Arc<VarSpace>,
    entries: Vec<Expr>,
}

impl ExprVector {
    pub fn new(space: Arc<VarSpace>, entries: Vec<Expr>) -> Self {
        Self { space, entries }
    }

    pub fn parse<S: AsRef<str>>(space: Arc<VarSpace>, texts: &[S]) -> Result<Self, ParseError> {
        let entries = texts
            .iter()
            .map(|t| parse(t.as_ref(), &space))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { space, entries })
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Expr] {
        &self.entries
    }

    pub fn eval(&self, values: &[f64]) -> Result<DVector<f64>, EvalError> {
        let mut out = DVector::zeros(self.entries.len());
        self.eval_into(values, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn eval_into(&self, values: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(values)?;
        }
        Ok(())
    }

    /// Symbolic Jacobian with respect to the listed slots.
    pub fn jacobian(&self, slots: &[usize]) -> ExprMatrix {
        let mut entries = Vec::with_capacity(self.entries.len() * slots.len());
        for e in &self.entries {
            for &s in slots {
                entries.push(e.diff(s));
            }
        }
        ExprMatrix::new(self.space.clone(), self.entries.len(), slots.len(), entries)
    }

    /// Substitutes every variable of this space; `with` lives in `target`.
    pub fn substitute(&self, target: Arc<VarSpace>, with: &[Expr]) -> ExprVector {
        ExprVector::new(
            target,
            self.entries.iter().map(|e| e.substitute(with)).collect(),
        )
    }

    pub fn depends_on(&self, slot: usize) -> bool {
        self.entries.iter().any(|e| e.depends_on(slot))
    }
}

/// Row-major rectangular array of expressions over one variable space.
#[derive(Debug, Clone)]
pub struct ExprMatrix {
    space: Arc<VarSpace>,
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn new(space: Arc<VarSpace>, rows: usize, cols: usize, entries: Vec<Expr>) -> Self {
        assert_eq!(entries.len(), rows * cols, "expression matrix shape mismatch");
        Self {
            space,
            rows,
            cols,
            entries,
        }
    }

    /// Parses a list of rows. All rows must have equal length.
    pub fn parse<S: AsRef<str>>(
        space: Arc<VarSpace>,
        rows: &[Vec<S>],
    ) -> Result<Self, ParseError> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(ParseError::Syntax {
                offset: 0,
                message: format!("row {i} has a different length than row 0"),
            });
        }
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            for t in row {
                entries.push(parse(t.as_ref(), &space)?);
            }
        }
        Ok(Self::new(space, rows.len(), cols, entries))
    }

    pub fn constant(space: Arc<VarSpace>, m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(Expr::Const(m[(i, j)]));
            }
        }
        Self::new(space, m.nrows(), m.ncols(), entries)
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, values: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.entries[i * self.cols + j].eval(values)?;
            }
        }
        Ok(out)
    }

    /// Evaluates into an existing matrix of the right shape.
    pub fn eval_into(&self, values: &[f64], out: &mut DMatrix<f64>) -> Result<(), EvalError> {
        assert_eq!(out.shape(), (self.rows, self.cols));
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.entries[i * self.cols + j].eval(values)?;
            }
        }
        Ok(())
    }

    /// Entrywise partial derivative.
    pub fn diff(&self, slot: usize) -> ExprMatrix {
        ExprMatrix::new(
            self.space.clone(),
            self.rows,
            self.cols,
            self.entries.iter().map(|e| e.diff(slot)).collect(),
        )
    }

    pub fn substitute(&self, target: Arc<VarSpace>, with: &[Expr]) -> ExprMatrix {
        ExprMatrix::new(
            target,
            self.rows,
            self.cols,
            self.entries.iter().map(|e| e.substitute(with)).collect(),
        )
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().all(|e| e.max_var().is_none())
    }

    pub fn depends_on(&self, slot: usize) -> bool {
        self.entries.iter().any(|e| e.depends_on(slot))
    }

    /// Row `i` as a vector of expressions.
    pub fn row(&self, i: usize) -> ExprVector {
        ExprVector::new(
            self.space.clone(),
            self.entries[i * self.cols..(i + 1) * self.cols].to_vec(),
        )
    }

    /// `self * v` computed symbolically.
    pub fn mul_vector(&self, v: &[Expr]) -> Vec<Expr> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                (0..self.cols).fold(Expr::Const(0.0), |acc, j| {
                    Expr::add(acc, Expr::mul(self.get(i, j).clone(), v[j].clone()))
                })
            })
            .collect()
    }
}
