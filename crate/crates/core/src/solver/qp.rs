use nalgebra::DVector;

use crate::blockmat::Matrix;
use crate::error::{Error, Result};

/// Relative pivot threshold for discarding dependent equality rows.
pub const RANK_TOL: f64 = 1e-10;
/// Tikhonov shift applied to `H` when the KKT matrix is numerically singular.
pub const KKT_REGULARIZATION: f64 = 1e-10;

/// `min 1/2 x'Hx + g'x  s.t.  A x = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct EqQP {
    pub h: Matrix,
    pub g: DVector<f64>,
    pub a_eq: Matrix,
    pub b_eq: DVector<f64>,
}

impl EqQP {
    pub fn new(h: Matrix, g: DVector<f64>, a_eq: Matrix, b_eq: DVector<f64>) -> Result<Self> {
        let n = g.len();
        if h.shape() != (n, n) || a_eq.ncols() != n || a_eq.nrows() != b_eq.len() {
            return Err(Error::Dimension(format!(
                "QP with H {:?}, g {}, A {:?}, b {}",
                h.shape(),
                n,
                a_eq.shape(),
                b_eq.len()
            )));
        }
        Ok(Self { h, g, a_eq, b_eq })
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers with `H x + g + A' lambda = 0`; zero on dropped rows.
    pub lambda: DVector<f64>,
    pub rank: usize,
    pub regularized: bool,
    pub warnings: Vec<String>,
    pub eq_residual: f64,
    pub stationarity_residual: f64,
}

/// Indices of a maximal independent subset of the rows of `a`, found by
/// Householder QR with column pivoting on `a'`. Returned in ascending order.
pub fn independent_rows(a: &Matrix, tol: f64) -> Vec<usize> {
    let mut m = a.transpose();
    let (rows, cols) = m.shape();
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut norms: Vec<f64> = (0..cols).map(|j| m.column(j).norm_squared()).collect();
    let ref_norm = norms.iter().cloned().fold(0.0, f64::max).sqrt();
    let mut rank = 0;
    for k in 0..rows.min(cols) {
        let (piv, &best) =
            norms[k..].iter().enumerate().fold((0, &-1.0), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        let piv = piv + k;
        if best.sqrt() <= tol * ref_norm || best == 0.0 {
            break;
        }
        m.swap_columns(k, piv);
        perm.swap(k, piv);
        norms.swap(k, piv);

        let mut v = m.view((k, k), (rows - k, 1)).into_owned();
        let alpha = -v[0].signum() * v.norm();
        let alpha = if alpha == 0.0 { v.norm() } else { alpha };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for j in k..cols {
                let mut col = m.view_mut((k, j), (rows - k, 1));
                let s = 2.0 * v.dot(&col) / vnorm2;
                col -= &v * s;
            }
        }
        for (j, nrm) in norms.iter_mut().enumerate().skip(k + 1) {
            *nrm = m.view((k + 1, j), (rows - k - 1, 1)).norm_squared();
        }
        rank += 1;
    }
    let mut keep = perm[..rank].to_vec();
    keep.sort_unstable();
    keep
}

fn check_convexity(h: &Matrix) -> Result<()> {
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-12 * scale {
        return Err(Error::BadProblem("quadratic term is not symmetric".into()));
    }
    let shifted = h + Matrix::identity(h.nrows(), h.nrows()) * (1e-10 * scale);
    if shifted.cholesky().is_none() {
        return Err(Error::BadProblem("quadratic term is not positive semidefinite".into()));
    }
    Ok(())
}

fn kkt_solve(h: &Matrix, g: &DVector<f64>, a: &Matrix, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (n, r) = (h.nrows(), a.nrows());
    let mut kkt = Matrix::zeros(n + r, n + r);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    kkt.view_mut((n, 0), (r, n)).copy_from(a);
    kkt.view_mut((0, n), (n, r)).copy_from(&a.transpose());
    let mut rhs = DVector::zeros(n + r);
    rhs.rows_mut(0, n).copy_from(&(-g));
    rhs.rows_mut(n, r).copy_from(b);
    let sol = kkt.clone().lu().solve(&rhs)?;
    let resid = (&kkt * &sol - &rhs).amax();
    let scale = 1.0 + kkt.amax() * sol.amax() + rhs.amax();
    (sol.iter().all(|v| v.is_finite()) && resid <= 1e-9 * scale).then_some(sol)
}

/// Solves the KKT system after removing dependent equality rows.
pub fn solve_eq_qp(problem: &EqQP) -> Result<QpSolution> {
    let EqQP { h, g, a_eq, b_eq } = problem;
    let n = g.len();
    check_convexity(h)?;

    let keep = independent_rows(a_eq, RANK_TOL);
    let a = a_eq.select_rows(&keep);
    let b = b_eq.select_rows(&keep);
    let mut warnings = Vec::new();
    if keep.len() < a_eq.nrows() {
        warnings.push(format!("dropped {} dependent equality rows", a_eq.nrows() - keep.len()));
    }

    let mut regularized = false;
    let sol = match kkt_solve(h, g, &a, &b) {
        Some(s) => s,
        None => {
            regularized = true;
            warnings.push(format!("KKT matrix singular; regularized H by {KKT_REGULARIZATION:e} I"));
            log::warn!("{}", warnings.last().unwrap());
            let hr = h + Matrix::identity(n, n) * KKT_REGULARIZATION;
            kkt_solve(&hr, g, &a, &b).ok_or_else(|| Error::Solver("KKT system could not be solved".into()))?
        }
    };
    let x = sol.rows(0, n).into_owned();
    let mut lambda = DVector::zeros(a_eq.nrows());
    for (i, &row) in keep.iter().enumerate() {
        lambda[row] = sol[n + i];
    }

    let eq_residual = if a_eq.nrows() == 0 { 0.0 } else { (a_eq * &x - b_eq).amax() };
    let feas_scale = 1.0 + b_eq.amax() + a_eq.amax() * x.amax();
    if eq_residual > 1e-8 * feas_scale {
        return Err(Error::Infeasible(format!("equality constraints are inconsistent (residual {eq_residual:.3e})")));
    }
    let stationarity_residual = (h * &x + g + a_eq.transpose() * &lambda).amax();
    if regularized {
        let grad_scale = 1.0 + g.amax();
        if stationarity_residual > 1e-6 * grad_scale || x.amax() > 1e8 * (1.0 + b_eq.amax() + g.amax()) {
            return Err(Error::Unbounded("objective is unbounded below on the feasible set".into()));
        }
    }
    Ok(QpSolution { x, lambda, rank: keep.len(), regularized, warnings, eq_residual, stationarity_residual })
}
