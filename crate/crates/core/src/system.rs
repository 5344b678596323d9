//! Switched linear dynamics, noise and cost specifications, and the per-signal
//! stacked (block-diagonal) operators used by the response maps.

use nalgebra::{dmatrix, SymmetricEigen};

use crate::blockmat::{blkdiag, BlockDiagMatrix, Matrix};
use crate::error::{Error, Result};
use crate::language::SwitchingSignal;

/// Tolerance for symmetry and eigenvalue checks on covariance and cost blocks.
pub const PSD_TOL: f64 = 1e-10;

/// Dynamics of one mode: `x+ = A x + B u + w`, `y = C x + v`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeDynamics {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// `M` time-invariant modes sharing dimensions `(n, p, m)` over horizon `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchedModel {
    modes: Vec<ModeDynamics>,
    n: usize,
    p: usize,
    m: usize,
    horizon: usize,
}

impl SwitchedModel {
    pub fn new(modes: Vec<ModeDynamics>, horizon: usize) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::Model("a switched model needs at least one mode".into()))?;
        let n = first.a.nrows();
        let p = first.b.ncols();
        let m = first.c.nrows();
        if n == 0 || p == 0 || m == 0 {
            return Err(Error::Model("state, input and output dimensions must be positive".into()));
        }
        for (i, mode) in modes.iter().enumerate() {
            let ok = mode.a.shape() == (n, n) && mode.b.shape() == (n, p) && mode.c.shape() == (m, n);
            if !ok {
                return Err(Error::Model(format!(
                    "mode {} has shapes A{:?} B{:?} C{:?}, expected A({n}, {n}) B({n}, {p}) C({m}, {n})",
                    i + 1,
                    mode.a.shape(),
                    mode.b.shape(),
                    mode.c.shape()
                )));
            }
            let finite = mode.a.iter().chain(mode.b.iter()).chain(mode.c.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Model(format!("mode {} has non-finite entries", i + 1)));
            }
        }
        Ok(Self { modes, n, p, m, horizon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.modes
    }

    /// Dynamics of a 1-based mode index.
    pub fn mode(&self, mode: usize) -> &ModeDynamics {
        &self.modes[mode - 1]
    }

    /// Same modes over a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn check_signal(&self, sigma: &SwitchingSignal) -> Result<()> {
        if sigma.horizon() != self.horizon {
            return Err(Error::Dimension(format!(
                "signal horizon {} does not match model horizon {}",
                sigma.horizon(),
                self.horizon
            )));
        }
        if sigma.modes().iter().any(|&i| i == 0 || i > self.modes.len()) {
            return Err(Error::Language(format!("signal {sigma} uses a mode outside 1..={}", self.modes.len())));
        }
        Ok(())
    }
}

/// Stacked operators for one switching signal.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedDynamics {
    pub a: BlockDiagMatrix,
    pub b: BlockDiagMatrix,
    pub c: BlockDiagMatrix,
}

/// `A = blkdiag(A^{s0}, ..., A^{s(T-1)}, 0)`, likewise `B`; `C` uses all `T+1` modes.
pub fn stack_dynamics(model: &SwitchedModel, sigma: &SwitchingSignal) -> Result<StackedDynamics> {
    model.check_signal(sigma)?;
    let (n, p, horizon) = (model.n, model.p, model.horizon);
    let mut a = Vec::with_capacity(horizon + 1);
    let mut b = Vec::with_capacity(horizon + 1);
    for t in 0..horizon {
        let mode = model.mode(sigma.mode(t));
        a.push(mode.a.clone());
        b.push(mode.b.clone());
    }
    a.push(Matrix::zeros(n, n));
    b.push(Matrix::zeros(n, p));
    let c = sigma.modes().iter().map(|&i| model.mode(i).c.clone()).collect();
    Ok(StackedDynamics { a: blkdiag(a)?, b: blkdiag(b)?, c: blkdiag(c)? })
}

/// Checks that a matrix is square, symmetric and positive semidefinite.
pub fn check_psd(name: &str, m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Model(format!("{name} is not square: {:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > PSD_TOL {
        return Err(Error::Model(format!("{name} is not symmetric (deviation {asym:.3e})")));
    }
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(Error::Model(format!("{name} is not positive semidefinite (eigenvalue {min_eig:.3e})")));
    }
    Ok(())
}

/// Symmetric PSD square root; slightly negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Per-mode Gaussian covariances of the initial state, process noise and
/// measurement noise.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNoise {
    x0_cov: Vec<Matrix>,
    w_cov: Vec<Matrix>,
    v_cov: Vec<Matrix>,
}

impl GaussianNoise {
    pub fn new(x0_cov: Vec<Matrix>, w_cov: Vec<Matrix>, v_cov: Vec<Matrix>) -> Result<Self> {
        let modes = x0_cov.len();
        if modes == 0 || w_cov.len() != modes || v_cov.len() != modes {
            return Err(Error::Model("covariances must be given for every mode".into()));
        }
        let n = x0_cov[0].nrows();
        let m = v_cov[0].nrows();
        for i in 0..modes {
            check_psd(&format!("P_x0 (mode {})", i + 1), &x0_cov[i])?;
            check_psd(&format!("P_w (mode {})", i + 1), &w_cov[i])?;
            check_psd(&format!("P_v (mode {})", i + 1), &v_cov[i])?;
            if x0_cov[i].nrows() != n || w_cov[i].nrows() != n || v_cov[i].nrows() != m {
                return Err(Error::Model("covariance dimensions differ between modes".into()));
            }
        }
        Ok(Self { x0_cov, w_cov, v_cov })
    }

    /// `scale * I` for every block and mode.
    pub fn isotropic(num_modes: usize, n: usize, m: usize, scale: f64) -> Result<Self> {
        Self::new(
            vec![Matrix::identity(n, n) * scale; num_modes],
            vec![Matrix::identity(n, n) * scale; num_modes],
            vec![Matrix::identity(m, m) * scale; num_modes],
        )
    }

    pub fn num_modes(&self) -> usize {
        self.x0_cov.len()
    }

    pub fn x0_cov(&self, mode: usize) -> &Matrix {
        &self.x0_cov[mode - 1]
    }

    pub fn w_cov(&self, mode: usize) -> &Matrix {
        &self.w_cov[mode - 1]
    }

    pub fn v_cov(&self, mode: usize) -> &Matrix {
        &self.v_cov[mode - 1]
    }

    pub fn state_dim(&self) -> usize {
        self.x0_cov[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.v_cov[0].nrows()
    }
}

/// Bounds `||w||_inf <= w_bar`, `||v||_inf <= v_bar` (initial state included in `w`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedNoise {
    pub w_bar: f64,
    pub v_bar: f64,
}

impl BoundedNoise {
    pub fn new(w_bar: f64, v_bar: f64) -> Result<Self> {
        if !(w_bar >= 0.0 && v_bar >= 0.0 && w_bar.is_finite() && v_bar.is_finite()) {
            return Err(Error::Model(format!("noise bounds must be finite and non-negative, got ({w_bar}, {v_bar})")));
        }
        Ok(Self { w_bar, v_bar })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    Gaussian(GaussianNoise),
    Bounded(BoundedNoise),
}

impl NoiseSpec {
    pub fn check_model(&self, model: &SwitchedModel) -> Result<()> {
        if let NoiseSpec::Gaussian(g) = self {
            if g.num_modes() != model.num_modes() || g.state_dim() != model.n() || g.output_dim() != model.m() {
                return Err(Error::Model(format!(
                    "noise covariances ({} modes, n={}, m={}) do not match the model ({} modes, n={}, m={})",
                    g.num_modes(),
                    g.state_dim(),
                    g.output_dim(),
                    model.num_modes(),
                    model.n(),
                    model.m()
                )));
            }
        }
        Ok(())
    }
}

/// Stacked covariances `(P_w, P_v)` for one signal: `P_w` is ordered
/// `(x0, w_0, ..., w_{T-1})`, `P_v` is `(v_0, ..., v_T)`.
pub fn stack_noise_covariance(spec: &NoiseSpec, sigma: &SwitchingSignal) -> Result<(BlockDiagMatrix, BlockDiagMatrix)> {
    let g = match spec {
        NoiseSpec::Gaussian(g) => g,
        NoiseSpec::Bounded(_) => return Err(Error::BadProblem("covariance stacks require Gaussian noise".into())),
    };
    if sigma.modes().iter().any(|&i| i == 0 || i > g.num_modes()) {
        return Err(Error::Language(format!("signal {sigma} uses a mode without covariances")));
    }
    let horizon = sigma.horizon();
    let mut w = Vec::with_capacity(horizon + 1);
    w.push(g.x0_cov(sigma.mode(0)).clone());
    for t in 0..horizon {
        w.push(g.w_cov(sigma.mode(t)).clone());
    }
    let v = sigma.modes().iter().map(|&i| g.v_cov(i).clone()).collect();
    Ok((blkdiag(w)?, blkdiag(v)?))
}

/// Stage costs `x' Q_t x + u' R_t u` for `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    q: Vec<Matrix>,
    r: Vec<Matrix>,
}

impl CostSpec {
    pub fn new(q: Vec<Matrix>, r: Vec<Matrix>) -> Result<Self> {
        if q.is_empty() || q.len() != r.len() {
            return Err(Error::Model("Q and R need one block per time step".into()));
        }
        for (t, (qt, rt)) in q.iter().zip(&r).enumerate() {
            check_psd(&format!("Q_{t}"), qt)?;
            check_psd(&format!("R_{t}"), rt)?;
            if qt.nrows() != q[0].nrows() || rt.nrows() != r[0].nrows() {
                return Err(Error::Model("cost dimensions vary over time".into()));
            }
        }
        Ok(Self { q, r })
    }

    pub fn constant(horizon: usize, q: Matrix, r: Matrix) -> Result<Self> {
        Self::new(vec![q; horizon + 1], vec![r; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.q.len() - 1
    }

    pub fn q(&self, t: usize) -> &Matrix {
        &self.q[t]
    }

    pub fn r(&self, t: usize) -> &Matrix {
        &self.r[t]
    }

    pub fn check_model(&self, model: &SwitchedModel) -> Result<()> {
        if self.horizon() != model.horizon() || self.q[0].nrows() != model.n() || self.r[0].nrows() != model.p() {
            return Err(Error::Model(format!(
                "cost (T={}, n={}, p={}) does not match the model (T={}, n={}, p={})",
                self.horizon(),
                self.q[0].nrows(),
                self.r[0].nrows(),
                model.horizon(),
                model.n(),
                model.p()
            )));
        }
        Ok(())
    }

    pub fn q_stack(&self) -> BlockDiagMatrix {
        blkdiag(self.q.clone()).expect("non-empty cost")
    }

    pub fn r_stack(&self) -> BlockDiagMatrix {
        blkdiag(self.r.clone()).expect("non-empty cost")
    }
}

/// Fault scenarios on the ADMIRE roll/pitch/yaw-rate subsystem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmireFault {
    /// Mode 2: `A - 1.5 I`.
    Drift,
    /// Mode 2: only the first sensor measures the state.
    Sensor,
}

/// Nominal discrete-time ADMIRE matrices (unit time step).
pub fn admire_nominal() -> (Matrix, Matrix) {
    let a = dmatrix![
        0.3550, 0.0, 0.3428;
        0.0, 0.6031, 0.0;
        -0.0521, 0.0, 0.7901
    ];
    let b = dmatrix![
        0.0, -2.7200, 2.7200, 0.7376;
        1.298, -0.9996, -0.9996, 0.0019;
        0.0, -0.1153, 0.1153, -0.8362
    ];
    (a, b)
}

/// Two-mode ADMIRE model (n=3, p=4, m=3); mode 1 is nominal with `C = I`.
pub fn admire_model(fault: AdmireFault, horizon: usize) -> SwitchedModel {
    let (a, b) = admire_nominal();
    let c = Matrix::identity(3, 3);
    let nominal = ModeDynamics { a: a.clone(), b: b.clone(), c: c.clone() };
    let faulty = match fault {
        AdmireFault::Drift => ModeDynamics { a: &a - Matrix::identity(3, 3) * 1.5, b, c },
        AdmireFault::Sensor => {
            let mut c2 = Matrix::zeros(3, 3);
            c2[(0, 0)] = 1.0;
            ModeDynamics { a, b, c: c2 }
        }
    };
    SwitchedModel::new(vec![nominal, faulty], horizon).expect("ADMIRE model is well formed")
}
