//! Interior-point route for programs too large for dense factorization.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{Backend, ConvexProgram, ProgramSolution};
use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-10;
pub const REGULARIZATION_LADDER: &[f64] = &[1e-7, 1e-6];

fn csc(rows: usize, cols: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for (r, c, x) in entries {
        i.push(r);
        j.push(c);
        v.push(x);
    }
    CscMatrix::new_from_triplets(rows, cols, i, j, v)
}

struct Standard {
    p: CscMatrix<f64>,
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

/// `A x + s = b, s in cones`: equality rows, inequality rows, then `-x_j <= 0`.
fn standard_form(prog: &ConvexProgram) -> Standard {
    let n = prog.num_vars();
    let eq = prog.eq_rows();
    let ub = prog.ub_rows();
    let signed: Vec<usize> = (0..n).filter(|&j| prog.nonneg()[j]).collect();
    let (me, mu, ms) = (eq.len(), ub.len(), signed.len());
    let p = csc(n, n, prog.hessian_upper().iter().copied());
    let rows = eq
        .entries
        .iter()
        .copied()
        .chain(ub.entries.iter().map(|&(r, c, v)| (me + r, c, v)))
        .chain(signed.iter().enumerate().map(|(k, &j)| (me + mu + k, j, -1.0)));
    let a = csc(me + mu + ms, n, rows);
    let mut b = eq.rhs.clone();
    b.extend_from_slice(&ub.rhs);
    b.extend(std::iter::repeat_n(0.0, ms));
    let mut cones = vec![SupportedConeT::ZeroConeT(me)];
    if mu + ms > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(mu + ms));
    }
    Standard { p, a, b, cones }
}

fn run(form: &Standard, q: &[f64], regularization: Option<f64>) -> Result<DefaultSolver<f64>> {
    let mut builder = DefaultSettingsBuilder::default();
    builder.verbose(false).max_iter(400).tol_gap_abs(TOLERANCE).tol_gap_rel(TOLERANCE).tol_feas(TOLERANCE);
    if let Some(eps) = regularization {
        builder.static_regularization_constant(eps);
    }
    let settings = builder.build().map_err(|e| Error::Solver(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&form.p, q, &form.a, &form.b, &form.cones, settings)
        .map_err(|e| Error::Solver(format!("{e:?}")))?;
    solver.solve();
    Ok(solver)
}

fn stalled(status: SolverStatus) -> bool {
    matches!(status, SolverStatus::NumericalError | SolverStatus::InsufficientProgress | SolverStatus::MaxIterations)
}

/// Solves with the default KKT regularization and escalates through
/// [`REGULARIZATION_LADDER`] while the factorization breaks down, which
/// happens on rank-deficient equality rows.
pub fn solve(prog: &ConvexProgram) -> Result<ProgramSolution> {
    let (me, mu) = (prog.eq_rows().len(), prog.ub_rows().len());
    let form = standard_form(prog);
    let mut warnings = Vec::new();
    let mut solver = run(&form, prog.linear(), None)?;
    for &eps in REGULARIZATION_LADDER {
        if !stalled(solver.solution.status) {
            break;
        }
        let msg = format!("interior-point retry with regularization {eps:e} after {:?}", solver.solution.status);
        log::warn!("{msg}");
        warnings.push(msg);
        solver = run(&form, prog.linear(), Some(eps))?;
    }
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved => {}
        SolverStatus::AlmostSolved => {
            warnings.push("interior-point solve reached reduced accuracy".to_string());
            log::warn!("{}", warnings[warnings.len() - 1]);
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible("interior-point certificate of primal infeasibility".into()))
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::Unbounded("interior-point certificate of dual infeasibility".into()))
        }
        s => return Err(Error::Solver(format!("interior-point solver stopped with {s:?}"))),
    }
    Ok(ProgramSolution {
        x: sol.x.clone(),
        objective: 0.0,
        eq_duals: sol.z[..me].to_vec(),
        ub_duals: sol.z[me..me + mu].to_vec(),
        backend: Backend::Sparse,
        status: format!("{:?}", sol.status),
        iterations: sol.iterations as usize,
        max_violation: 0.0,
        warnings,
    })
}
