use nalgebra::DVector;

use crate::blockmat::Matrix;
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;
/// Pivots between residual checks of the updated inverse.
const CHECK_EVERY: usize = 64;
/// Hard cap on pivots between refactorizations.
const REFACTOR_CAP: usize = 1024;
/// Consecutive degenerate pivots before switching to Bland's rule for good.
const STALL_LIMIT: usize = 50;

/// `min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x_j >= 0 where nonneg[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLP {
    pub c: DVector<f64>,
    pub a_eq: Matrix,
    pub b_eq: DVector<f64>,
    pub a_ub: Matrix,
    pub b_ub: DVector<f64>,
    pub nonneg: Vec<bool>,
}

impl DenseLP {
    pub fn new(
        c: DVector<f64>,
        a_eq: Matrix,
        b_eq: DVector<f64>,
        a_ub: Matrix,
        b_ub: DVector<f64>,
        nonneg: Vec<bool>,
    ) -> Result<Self> {
        let n = c.len();
        if a_eq.ncols() != n
            || a_ub.ncols() != n
            || a_eq.nrows() != b_eq.len()
            || a_ub.nrows() != b_ub.len()
            || nonneg.len() != n
        {
            return Err(Error::Dimension("inconsistent LP dimensions".into()));
        }
        Ok(Self { c, a_eq, b_eq, a_ub, b_ub, nonneg })
    }
}

/// Optimal basic solution with simplex prices. The prices satisfy
/// `c'x = b_eq'y_eq + b_ub'y_ub` with `y_ub <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub y_eq: DVector<f64>,
    pub y_ub: DVector<f64>,
    pub iterations: usize,
}

/// Columns are `[structural | artificial]`; artificial column `n + i` is `e_i`.
struct Tableau {
    a: Matrix,
    n: usize,
    b: DVector<f64>,
    basis: Vec<usize>,
    binv: Matrix,
    xb: DVector<f64>,
    iterations: usize,
    since_refactor: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn refactor(&mut self) -> Result<()> {
        let bmat = self.a.select_columns(&self.basis);
        self.binv = bmat.try_inverse().ok_or_else(|| Error::Solver("basis matrix became singular".into()))?;
        self.xb = &self.binv * &self.b;
        self.since_refactor = 0;
        Ok(())
    }

    /// `|B x_B - b|_inf` for the current basis.
    fn drift(&self) -> f64 {
        let mut r = -self.b.clone();
        for (k, &j) in self.basis.iter().enumerate() {
            r.axpy(self.xb[k], &self.a.column(j), 1.0);
        }
        r.amax()
    }

    fn prices(&self, cost: &DVector<f64>) -> DVector<f64> {
        let cb = DVector::from_iterator(self.basis.len(), self.basis.iter().map(|&j| cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn pivot(&mut self, r: usize, entering: usize, u: &DVector<f64>) {
        let theta = self.xb[r].max(0.0) / u[r];
        self.xb.axpy(-theta, u, 1.0);
        self.xb[r] = theta;
        let pivot_row = self.binv.row(r).transpose() / u[r];
        let mut col = u.clone();
        col[r] = 0.0;
        self.binv.ger(-1.0, &col, &pivot_row, 1.0);
        self.binv.row_mut(r).tr_copy_from(&pivot_row);
        self.basis[r] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    /// Bland mode takes the minimum ratio with ties to the smallest basic
    /// index; otherwise a two-pass test picks the largest pivot among rows
    /// within a small feasibility relaxation of the minimum ratio.
    fn ratio(&self, u: &DVector<f64>, bland: bool) -> Option<(usize, f64)> {
        let tol = PIVOT_TOL * u.amax().max(1.0);
        let rows = || (0..u.len()).filter(move |&i| u[i] > tol);
        let ratio = |i: usize| self.xb[i].max(0.0) / u[i];
        if bland {
            return rows()
                .map(|i| (i, ratio(i)))
                .min_by(|x, y| x.1.total_cmp(&y.1).then(self.basis[x.0].cmp(&self.basis[y.0])));
        }
        let delta = FEAS_TOL * (1.0 + self.xb.amax());
        let bound = rows().map(|i| (self.xb[i].max(0.0) + delta) / u[i]).fold(f64::INFINITY, f64::min);
        rows()
            .filter(|&i| ratio(i) <= bound)
            .max_by(|&x, &y| u[x].total_cmp(&u[y]).then(self.basis[y].cmp(&self.basis[x])))
            .map(|i| (i, ratio(i)))
    }

    fn run(&mut self, cost: &DVector<f64>, allowed: &[bool], max_iter: usize) -> Result<Outcome> {
        let cscale = 1.0 + cost.amax();
        let opt_tol = 1e-10 * cscale;
        let mut in_basis = vec![false; self.a.ncols()];
        for &j in &self.basis {
            in_basis[j] = true;
        }
        let mut bland = false;
        let mut stall = 0;
        // columns whose negative reduced cost is noise-level with no usable pivot
        let mut rejected = vec![false; self.a.ncols()];
        loop {
            if self.iterations >= max_iter {
                return Err(Error::Solver(format!("simplex iteration limit {max_iter} reached")));
            }
            if self.since_refactor > 0
                && self.since_refactor.is_multiple_of(CHECK_EVERY)
                && (self.since_refactor >= REFACTOR_CAP || self.drift() > FEAS_TOL * (1.0 + self.b.amax()))
            {
                self.refactor()?;
            }
            let y = self.prices(cost);
            let mut reduced = cost.clone();
            reduced.rows_mut(0, self.n).axpy(-1.0, &self.a.columns(0, self.n).tr_mul(&y), 1.0);
            reduced.rows_mut(self.n, y.len()).axpy(-1.0, &y, 1.0);
            let mut entering = None;
            let mut best = -opt_tol;
            for j in 0..self.a.ncols() {
                if in_basis[j] || !allowed[j] || rejected[j] || reduced[j] >= -opt_tol {
                    continue;
                }
                if bland {
                    entering = Some(j);
                    break;
                }
                if reduced[j] < best {
                    best = reduced[j];
                    entering = Some(j);
                }
            }
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };
            let u = &self.binv * self.a.column(q);
            let Some((r, theta)) = self.ratio(&u, bland) else {
                if reduced[q] < -1e-7 * cscale {
                    return Ok(Outcome::Unbounded);
                }
                rejected[q] = true;
                continue;
            };
            rejected.iter_mut().for_each(|f| *f = false);
            if theta <= 1e-12 {
                stall += 1;
                if stall > STALL_LIMIT {
                    bland = true;
                }
            } else {
                stall = 0;
            }
            in_basis[self.basis[r]] = false;
            in_basis[q] = true;
            self.pivot(r, q, &u);
        }
    }
}

/// `min c'x  s.t.  A x = b, x >= 0` by two-phase revised simplex with one
/// artificial per row. Returns the basic solution, prices `y` with
/// `c - A'y >= 0`, and the pivot count.
fn simplex_standard(a: &Matrix, b: &DVector<f64>, c: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, usize)> {
    let (m, n) = a.shape();
    let n_total = n + m;
    let mut full = Matrix::zeros(m, n_total);
    let mut rhs = DVector::zeros(m);
    let mut sign = vec![1.0; m];
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        sign[i] = s;
        full.view_mut((i, 0), (1, n)).copy_from(&(a.row(i) * s));
        full[(i, n + i)] = 1.0;
        rhs[i] = s * b[i];
    }
    let mut cost = DVector::zeros(n_total);
    cost.rows_mut(0, n).copy_from(c);
    let mut phase1 = DVector::zeros(n_total);
    phase1.rows_mut(n, m).fill(1.0);

    let max_iter = 50_000 + 50 * n_total;
    let mut tab = Tableau {
        a: full,
        n,
        b: rhs.clone(),
        basis: (n..n_total).collect(),
        binv: Matrix::identity(m, m),
        xb: rhs.clone(),
        iterations: 0,
        since_refactor: 0,
    };
    if let Outcome::Unbounded = tab.run(&phase1, &vec![true; n_total], max_iter)? {
        return Err(Error::Solver("phase one reported an unbounded ray".into()));
    }
    tab.refactor()?;
    let infeas: f64 = tab.basis.iter().zip(tab.xb.iter()).filter(|(j, _)| **j >= n).map(|(_, v)| v.abs()).sum();
    if infeas > 1e-9 * (1.0 + rhs.amax()) {
        return Err(Error::Infeasible(format!("phase one ended with infeasibility {infeas:.3e}")));
    }

    // drive remaining artificials out where a structural column can replace them
    for r in 0..m {
        if tab.basis[r] < n {
            continue;
        }
        let row = tab.binv.row(r) * &tab.a;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            let v = row[j].abs();
            if v > PIVOT_TOL && !tab.basis.contains(&j) && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            let u = &tab.binv * tab.a.column(j);
            tab.xb[r] = 0.0;
            tab.pivot(r, j, &u);
        }
    }
    tab.refactor()?;

    let allowed: Vec<bool> = (0..n_total).map(|j| j < n).collect();
    if let Outcome::Unbounded = tab.run(&cost, &allowed, max_iter)? {
        return Err(Error::Unbounded("linear objective is unbounded below".into()));
    }
    tab.refactor()?;

    let mut x = DVector::zeros(n);
    for (&j, &v) in tab.basis.iter().zip(tab.xb.iter()) {
        if j < n {
            x[j] = v.max(0.0);
        }
    }
    let y = tab.prices(&cost);
    let y = DVector::from_iterator(m, (0..m).map(|i| sign[i] * y[i]));
    Ok((x, y, tab.iterations))
}

/// Solves the LP in three steps: free variables are eliminated by
/// Gauss-Jordan pivoting on the equality system (largest pivot first), the
/// remaining sign-constrained problem goes through the two-phase simplex, and
/// free values and prices are recovered from the elimination.
pub fn solve_lp(problem: &DenseLP) -> Result<LpSolution> {
    let n = problem.c.len();
    let (me, mu) = (problem.a_eq.nrows(), problem.a_ub.nrows());
    let m = me + mu;
    let ncols = n + mu;

    // rows of [A | S | b | I]: constraint columns, slacks, rhs, row transform
    let width = ncols + 1 + m;
    let mut rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r = vec![0.0; width];
            let (src, rhs) = if i < me {
                (problem.a_eq.row(i), problem.b_eq[i])
            } else {
                (problem.a_ub.row(i - me), problem.b_ub[i - me])
            };
            for j in 0..n {
                r[j] = src[j];
            }
            if i >= me {
                r[n + i - me] = 1.0;
            }
            r[ncols] = rhs;
            r[ncols + 1 + i] = 1.0;
            r
        })
        .collect();

    let free: Vec<usize> = (0..n).filter(|&j| !problem.nonneg[j]).collect();
    let mut used = vec![false; m];
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut dependent: Vec<usize> = Vec::new();
    for &j in &free {
        let scale = rows.iter().map(|r| r[j].abs()).fold(0.0, f64::max);
        let best =
            (0..m).filter(|&i| !used[i]).max_by(|&x, &y| rows[x][j].abs().total_cmp(&rows[y][j].abs()).then(y.cmp(&x)));
        match best {
            Some(i) if rows[i][j].abs() > 1e-9 * scale.max(1.0) => {
                let piv = rows[i][j];
                rows[i].iter_mut().for_each(|v| *v /= piv);
                rows[i][j] = 1.0;
                let prow = rows[i].clone();
                for (k, row) in rows.iter_mut().enumerate() {
                    let f = row[j];
                    if k != i && f != 0.0 {
                        for (v, p) in row.iter_mut().zip(&prow) {
                            *v -= f * p;
                        }
                        row[j] = 0.0;
                    }
                }
                used[i] = true;
                pivots.push((i, j));
            }
            _ => dependent.push(j),
        }
    }

    // cost of the eliminated problem: c_N - sum_j c_j * (pivot row of j)
    let nonneg_cols: Vec<usize> = (0..ncols).filter(|&k| k >= n || problem.nonneg[k]).collect();
    let mut c_full = DVector::zeros(ncols);
    c_full.rows_mut(0, n).copy_from(&problem.c);
    let mut c_eff = c_full.clone();
    for &(i, j) in &pivots {
        let cj = problem.c[j];
        if cj != 0.0 {
            for k in 0..ncols {
                c_eff[k] -= cj * rows[i][k];
            }
        }
    }
    let cscale = 1.0 + problem.c.amax();
    if let Some(&k) = dependent.iter().find(|&&k| c_eff[k].abs() > 1e-9 * cscale) {
        return Err(Error::Unbounded(format!("objective decreases along free variable {k}")));
    }

    let reduced: Vec<usize> = (0..m).filter(|&i| !used[i]).collect();
    let ra = Matrix::from_fn(reduced.len(), nonneg_cols.len(), |r, c| rows[reduced[r]][nonneg_cols[c]]);
    let rb = DVector::from_iterator(reduced.len(), reduced.iter().map(|&i| rows[i][ncols]));
    let rc = DVector::from_iterator(nonneg_cols.len(), nonneg_cols.iter().map(|&k| c_eff[k]));
    let (xn, yr, iterations) = simplex_standard(&ra, &rb, &rc)?;

    let mut xs = DVector::zeros(ncols);
    for (idx, &k) in nonneg_cols.iter().enumerate() {
        xs[k] = xn[idx];
    }
    for &(i, j) in &pivots {
        let mut v = rows[i][ncols];
        for &k in &nonneg_cols {
            v -= rows[i][k] * xs[k];
        }
        xs[j] = v;
    }
    let x = xs.rows(0, n).into_owned();

    // prices of the transformed rows, mapped back through the row transform
    let mut yt = DVector::zeros(m);
    for &(i, j) in &pivots {
        yt[i] = problem.c[j];
    }
    for (r, &i) in reduced.iter().enumerate() {
        yt[i] = yr[r];
    }
    let mut y = DVector::zeros(m);
    for (i, row) in rows.iter().enumerate() {
        if yt[i] != 0.0 {
            for k in 0..m {
                y[k] += row[ncols + 1 + k] * yt[i];
            }
        }
    }
    Ok(LpSolution {
        objective: problem.c.dot(&x),
        x,
        y_eq: y.rows(0, me).into_owned(),
        y_ub: y.rows(me, mu).into_owned(),
        iterations: iterations + pivots.len(),
    })
}
