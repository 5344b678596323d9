//! Convex kernels: equality-constrained QP through the KKT system, dense
//! two-phase revised simplex, and a sparse interior-point route for programs
//! too large to factor densely.

pub mod dump;
pub mod lp;
pub mod qp;
pub mod sparse;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::blockmat::Matrix;
use crate::error::{Error, Result};

pub use lp::{solve_lp, DenseLP, LpSolution};
pub use qp::{independent_rows, solve_eq_qp, EqQP, QpSolution};

/// Programs with at most this many variables plus constraint rows go to the
/// dense kernels under [`Backend::Auto`].
pub const AUTO_DENSE_LIMIT: usize = 2500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Dense,
    Sparse,
    #[default]
    Auto,
}

/// Sparse rows `A x (=|<=) b` in triplet form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RowSet {
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl RowSet {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    fn push(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rhs.len();
        self.entries.extend(coeffs.iter().filter(|(_, v)| *v != 0.0).map(|&(c, v)| (r, c, v)));
        self.rhs.push(rhs);
        r
    }

    pub fn dense(&self, cols: usize) -> Matrix {
        let mut m = Matrix::zeros(self.len(), cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// `A x - b` for each row.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for &(i, j, v) in &self.entries {
            r[i] += v * x[j];
        }
        r
    }
}

/// `min 1/2 x'Hx + c'x + const` subject to equality rows, `<=` rows and
/// per-variable sign constraints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvexProgram {
    num_vars: usize,
    /// Upper-triangle entries of `H`; repeated entries add up.
    hessian: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    constant: f64,
    eq: RowSet,
    ub: RowSet,
    nonneg: Vec<bool>,
}

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, linear: vec![0.0; num_vars], nonneg: vec![false; num_vars], ..Default::default() }
    }

    /// Adds one more variable and returns its index.
    pub fn add_var(&mut self, nonneg: bool) -> usize {
        self.num_vars += 1;
        self.linear.push(0.0);
        self.nonneg.push(nonneg);
        self.num_vars - 1
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn eq_rows(&self) -> &RowSet {
        &self.eq
    }

    pub fn ub_rows(&self) -> &RowSet {
        &self.ub
    }

    pub fn nonneg(&self) -> &[bool] {
        &self.nonneg
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn hessian_upper(&self) -> &[(usize, usize, f64)] {
        &self.hessian
    }

    pub fn is_linear(&self) -> bool {
        self.hessian.iter().all(|e| e.2 == 0.0)
    }

    /// Adds `w * x_a * x_b` to the objective.
    pub fn add_bilinear(&mut self, a: usize, b: usize, w: f64) {
        if a == b {
            self.hessian.push((a, a, 2.0 * w));
        } else {
            self.hessian.push((a.min(b), a.max(b), w));
        }
    }

    pub fn add_linear(&mut self, j: usize, w: f64) {
        self.linear[j] += w;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn set_nonneg(&mut self, j: usize) {
        self.nonneg[j] = true;
    }

    pub fn add_eq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.eq.push(coeffs, rhs)
    }

    pub fn add_ub(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.ub.push(coeffs, rhs)
    }

    pub fn hessian_dense(&self) -> Matrix {
        let mut h = Matrix::zeros(self.num_vars, self.num_vars);
        for &(i, j, v) in &self.hessian {
            h[(i, j)] += v;
            if i != j {
                h[(j, i)] += v;
            }
        }
        h
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut val = self.constant;
        for (c, xi) in self.linear.iter().zip(x) {
            val += c * xi;
        }
        for &(i, j, v) in &self.hessian {
            val += if i == j { 0.5 * v * x[i] * x[i] } else { v * x[i] * x[j] };
        }
        val
    }

    /// Largest violation over equality rows, `<=` rows and sign constraints.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq.residual(x).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let ub = self.ub.residual(x).iter().fold(0.0f64, |m, r| m.max(*r));
        let sign = self.nonneg.iter().zip(x).filter(|(nn, _)| **nn).fold(0.0f64, |m, (_, xi)| m.max(-xi));
        eq.max(ub).max(sign)
    }

    fn total_dims(&self) -> usize {
        self.num_vars + self.eq.len() + self.ub.len()
    }

    fn has_inequalities(&self) -> bool {
        !self.ub.is_empty() || self.nonneg.iter().any(|&b| b)
    }

    pub fn to_eq_qp(&self) -> Result<EqQP> {
        if self.has_inequalities() {
            return Err(Error::BadProblem("program has inequality constraints".into()));
        }
        EqQP::new(
            self.hessian_dense(),
            DVector::from_column_slice(&self.linear),
            self.eq.dense(self.num_vars),
            DVector::from_column_slice(&self.eq.rhs),
        )
    }

    pub fn to_dense_lp(&self) -> Result<DenseLP> {
        if !self.is_linear() {
            return Err(Error::BadProblem("program has a quadratic objective".into()));
        }
        DenseLP::new(
            DVector::from_column_slice(&self.linear),
            self.eq.dense(self.num_vars),
            DVector::from_column_slice(&self.eq.rhs),
            self.ub.dense(self.num_vars),
            DVector::from_column_slice(&self.ub.rhs),
            self.nonneg.clone(),
        )
    }
}

/// Result of [`solve_program`]. Multipliers follow the Lagrangian
/// `f(x) + eq_duals'(A x - b) + ub_duals'(G x - h)` with `ub_duals >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ub_duals: Vec<f64>,
    pub backend: Backend,
    pub status: String,
    pub iterations: usize,
    pub max_violation: f64,
    pub warnings: Vec<String>,
}

impl Backend {
    fn resolve(self, prog: &ConvexProgram) -> Backend {
        match self {
            Backend::Auto if prog.total_dims() <= AUTO_DENSE_LIMIT => Backend::Dense,
            Backend::Auto => Backend::Sparse,
            b => b,
        }
    }
}

pub fn solve_program(prog: &ConvexProgram, backend: Backend) -> Result<ProgramSolution> {
    let backend = backend.resolve(prog);
    log::debug!(
        "solving program: {} vars, {} eq, {} ub, backend {:?}",
        prog.num_vars,
        prog.eq.len(),
        prog.ub.len(),
        backend
    );
    let mut sol = match backend {
        Backend::Sparse => sparse::solve(prog)?,
        _ if !prog.has_inequalities() => {
            let qp = solve_eq_qp(&prog.to_eq_qp()?)?;
            ProgramSolution {
                objective: 0.0,
                eq_duals: qp.lambda.as_slice().to_vec(),
                x: qp.x.as_slice().to_vec(),
                ub_duals: Vec::new(),
                backend,
                status: if qp.regularized { "regularized" } else { "optimal" }.into(),
                iterations: 1,
                max_violation: 0.0,
                warnings: qp.warnings,
            }
        }
        _ if prog.is_linear() => {
            let lp = solve_lp(&prog.to_dense_lp()?)?;
            ProgramSolution {
                objective: 0.0,
                x: lp.x.as_slice().to_vec(),
                eq_duals: lp.y_eq.iter().map(|y| -y).collect(),
                ub_duals: lp.y_ub.iter().map(|y| -y).collect(),
                backend,
                status: "optimal".into(),
                iterations: lp.iterations,
                max_violation: 0.0,
                warnings: Vec::new(),
            }
        }
        _ => return Err(Error::BadProblem("dense backend handles equality-constrained QPs and LPs only".into())),
    };
    sol.objective = prog.objective(&sol.x);
    sol.max_violation = prog.max_violation(&sol.x);
    Ok(sol)
}
