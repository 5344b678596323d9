//! H2 and L1 synthesis over a prefix layout, objective evaluation, and the
//! comparison baselines.

pub mod assemble;
pub mod baseline;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blockmat::Matrix;
use crate::error::{Error, Result};
use crate::language::{build_prefix_tree, prefix_label, PrefixTree, SwitchingLanguage};
use crate::sls::{closed_loop_response, realize_online, PrefixController, PrefixLayout, SystemResponse};
use crate::solver::{solve_program, Backend, ConvexProgram};
use crate::system::{psd_sqrt, stack_noise_covariance, BoundedNoise, CostSpec, NoiseSpec, SwitchedModel};

pub use assemble::AssemblyStats;
pub use baseline::{memoryless_l1, nominal_h2, BaselineResult, MemorylessOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    H2,
    L1,
}

/// How prefix sharing enters the program.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// One variable slab per prefix-tree node.
    #[default]
    Shared,
    /// Independent responses per signal tied by explicit equality rows.
    Explicit,
}

/// Right weighting of the H2 objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `||S^(1/2) Phi P^(1/2)||_F^2`, the expected quadratic cost.
    #[default]
    Sqrt,
    /// `||S^(1/2) Phi P||_F^2`, covariance stacks used directly.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub delay: usize,
    pub formulation: Formulation,
    pub backend: Backend,
    pub weighting: Weighting,
    pub consistency_tol: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            delay: 0,
            formulation: Formulation::Shared,
            backend: Backend::Auto,
            weighting: Weighting::Sqrt,
            consistency_tol: crate::sls::DEFAULT_CONSISTENCY_TOL,
        }
    }
}

impl SynthOptions {
    pub fn with_delay(delay: usize) -> Self {
        Self { delay, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: String,
    pub backend: String,
    pub solver_objective: f64,
    pub iterations: usize,
    pub num_vars: usize,
    pub num_eq: usize,
    pub num_ub: usize,
    pub duplicate_rows: usize,
    pub tree_nodes: usize,
    /// Largest achievability residual of the solver's responses.
    pub max_affine_residual: f64,
    /// Largest constraint violation reported for the assembled program.
    pub max_violation: f64,
    /// Largest difference between solver responses and the realized closed loop.
    pub realization_gap: f64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

/// Optimal responses, the realized controller and its exact objective.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisSolution {
    pub problem: ProblemKind,
    /// Closed-loop responses of `controller`, one per language signal.
    pub responses: Vec<SystemResponse>,
    pub controller: PrefixController,
    /// Objective of the realized controller, evaluated from `responses`.
    pub objective: f64,
    /// Lowest-index signal attaining the minimax value (L1 only).
    pub worst_signal: Option<usize>,
    /// Per-signal peak gain (L1) or unweighted expected cost (H2).
    pub signal_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Largest absolute row sum.
pub fn induced_inf_norm(m: &Matrix) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn scaled_state_map(phi: &SystemResponse, bounds: &BoundedNoise) -> Matrix {
    let mut map = phi.state_map();
    let nw = phi.xx.grid().cols();
    map.columns_mut(0, nw).scale_mut(bounds.w_bar);
    let nv = map.ncols() - nw;
    map.columns_mut(nw, nv).scale_mut(bounds.v_bar);
    map
}

/// `||Phi_x blkdiag(w_bar I, v_bar I)||_inf` of one response.
pub fn l1_value(phi: &SystemResponse, bounds: &BoundedNoise) -> f64 {
    induced_inf_norm(&scaled_state_map(phi, bounds))
}

/// Minimax value over signals and the first signal attaining it.
pub fn evaluate_l1_objective(responses: &[SystemResponse], bounds: &BoundedNoise) -> (f64, usize) {
    let values: Vec<f64> = crate::par::map(responses, |r| l1_value(r, bounds));
    values.iter().enumerate().fold((f64::NEG_INFINITY, 0), |(bv, bi), (i, &v)| if v > bv { (v, i) } else { (bv, bi) })
}

/// Per-signal `||blkdiag(Q, R)^(1/2) Phi W||_F^2` with `W` the covariance
/// square root (or the covariance itself under literal weighting).
pub fn h2_signal_costs(
    responses: &[SystemResponse],
    lang: &SwitchingLanguage,
    noise: &NoiseSpec,
    cost: &CostSpec,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    if responses.len() != lang.len() {
        return Err(Error::Dimension(format!("{} responses for {} signals", responses.len(), lang.len())));
    }
    let left = {
        let q = cost.q_stack().map_blocks(psd_sqrt)?.dense();
        let r = cost.r_stack().map_blocks(psd_sqrt)?.dense();
        let mut s = Matrix::zeros(q.nrows() + r.nrows(), q.ncols() + r.ncols());
        s.view_mut((0, 0), q.shape()).copy_from(&q);
        s.view_mut(q.shape(), r.shape()).copy_from(&r);
        s
    };
    crate::par::map_range(crate::par::Execution::Parallel, lang.len(), |i| -> Result<f64> {
        let (pw, pv) = stack_noise_covariance(noise, lang.signal(i))?;
        let f = |b: &Matrix| match weighting {
            Weighting::Sqrt => psd_sqrt(b),
            Weighting::Literal => b.clone(),
        };
        let (pw, pv) = (pw.map_blocks(f)?.dense(), pv.map_blocks(f)?.dense());
        let mut right = Matrix::zeros(pw.nrows() + pv.nrows(), pw.ncols() + pv.ncols());
        right.view_mut((0, 0), pw.shape()).copy_from(&pw);
        right.view_mut(pw.shape(), pv.shape()).copy_from(&pv);
        let phi = responses[i].dense();
        if phi.shape() != (left.ncols(), right.nrows()) {
            return Err(Error::Dimension("response does not match cost and noise stacks".into()));
        }
        Ok((&left * phi * right).norm_squared())
    })
    .into_iter()
    .collect()
}

/// `sum_sigma pi(sigma)` times the per-signal costs of [`h2_signal_costs`].
pub fn evaluate_h2_objective(
    responses: &[SystemResponse],
    lang: &SwitchingLanguage,
    noise: &NoiseSpec,
    cost: &CostSpec,
    weighting: Weighting,
) -> Result<f64> {
    let probs =
        lang.probabilities().ok_or_else(|| Error::Language("H2 objective needs signal probabilities".into()))?;
    let costs = h2_signal_costs(responses, lang, noise, cost, weighting)?;
    Ok(probs.iter().zip(&costs).map(|(p, c)| p * c).sum())
}

struct Assembled {
    prog: ConvexProgram,
    layout: PrefixLayout,
    tree: PrefixTree,
    stats: AssemblyStats,
}

fn assemble(model: &SwitchedModel, lang: &SwitchingLanguage, opts: &SynthOptions) -> Result<Assembled> {
    assemble::check_inputs(model, lang)?;
    let tree = build_prefix_tree(lang, opts.delay)?;
    let layout = match opts.formulation {
        Formulation::Shared => PrefixLayout::shared(model, &tree)?,
        Formulation::Explicit => PrefixLayout::per_signal(model, &tree)?,
    };
    let mut prog = ConvexProgram::new(layout.num_vars());
    let stats = assemble::assemble_constraints(&mut prog, &layout, model, lang, &tree);
    Ok(Assembled { prog, layout, tree, stats })
}

/// Solves, realizes the controller and fills the diagnostics. `objective`
/// evaluates the realized closed-loop responses.
fn finish(
    problem: ProblemKind,
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    asm: Assembled,
    opts: &SynthOptions,
    started: Instant,
    objective: impl Fn(&[SystemResponse]) -> Result<(f64, Option<usize>, Vec<f64>)>,
) -> Result<SynthesisSolution> {
    let Assembled { prog, layout, tree, stats } = asm;
    let sol = solve_program(&prog, opts.backend)?;
    let slab_x = &sol.x[..layout.num_vars()];
    let raw: Vec<SystemResponse> = (0..lang.len()).map(|s| layout.reconstruct(slab_x, s)).collect::<Result<_>>()?;
    let residuals = crate::par::map_range(crate::par::Execution::Parallel, lang.len(), |s| {
        crate::sls::check_affine(&raw[s], model, lang.signal(s))
    });
    let max_affine_residual = residuals.into_iter().collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);

    let controller = realize_online(&raw, &tree, opts.consistency_tol)?;
    let responses = crate::par::map_range(crate::par::Execution::Parallel, lang.len(), |s| {
        closed_loop_response(model, lang.signal(s), &controller.gain_for_index(s)?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let realization_gap = raw.iter().zip(&responses).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
    let (value, worst_signal, signal_values) = objective(&responses)?;

    let diagnostics = Diagnostics {
        status: sol.status.clone(),
        backend: format!("{:?}", sol.backend).to_lowercase(),
        solver_objective: sol.objective,
        iterations: sol.iterations,
        num_vars: prog.num_vars(),
        num_eq: prog.eq_rows().len(),
        num_ub: prog.ub_rows().len(),
        duplicate_rows: stats.duplicate_rows,
        tree_nodes: tree.len(),
        max_affine_residual,
        max_violation: sol.max_violation,
        realization_gap,
        wall_time_s: started.elapsed().as_secs_f64(),
        warnings: sol.warnings,
    };
    log::info!(
        "{problem:?} synthesis: objective {value:.6e}, {} vars, {} eq rows, {:.2}s",
        diagnostics.num_vars,
        diagnostics.num_eq,
        diagnostics.wall_time_s
    );
    Ok(SynthesisSolution { problem, responses, controller, objective: value, worst_signal, signal_values, diagnostics })
}

/// Minimizes the expected quadratic cost over prefix-based controllers.
pub fn synth_h2(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    noise: &NoiseSpec,
    cost: &CostSpec,
    opts: &SynthOptions,
) -> Result<SynthesisSolution> {
    let started = Instant::now();
    let probs =
        lang.probabilities().ok_or_else(|| Error::Language("H2 synthesis needs signal probabilities".into()))?.to_vec();
    if !matches!(noise, NoiseSpec::Gaussian(_)) {
        return Err(Error::BadProblem("H2 synthesis needs Gaussian noise".into()));
    }
    noise.check_model(model)?;
    cost.check_model(model)?;
    let mut asm = assemble(model, lang, opts)?;
    assemble::add_h2_objective(&mut asm.prog, &asm.layout, lang, &probs, noise, cost, opts.weighting)?;
    finish(ProblemKind::H2, model, lang, asm, opts, started, |resp| {
        let costs = h2_signal_costs(resp, lang, noise, cost, opts.weighting)?;
        let value = probs.iter().zip(&costs).map(|(p, c)| p * c).sum();
        Ok((value, None, costs))
    })
}

/// Minimizes the worst-case peak state over signals and bounded noise.
pub fn synth_l1(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    noise: &NoiseSpec,
    opts: &SynthOptions,
) -> Result<SynthesisSolution> {
    let started = Instant::now();
    let NoiseSpec::Bounded(bounds) = noise else {
        return Err(Error::BadProblem("L1 synthesis needs bounded noise".into()));
    };
    let mut asm = assemble(model, lang, opts)?;
    assemble::add_l1_objective(&mut asm.prog, &asm.layout, bounds);
    finish(ProblemKind::L1, model, lang, asm, opts, started, |resp| {
        let (v, i) = evaluate_l1_objective(resp, bounds);
        Ok((v, Some(i), crate::par::map(resp, |r| l1_value(r, bounds))))
    })
}

/// One prefix-tree node with its gain row, for JSON export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeGain {
    pub depth: usize,
    pub prefix: String,
    /// `K[t, 0..=t]` row-major, `p` rows of `m (t + 1)` entries.
    pub gain: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionExport {
    pub problem: ProblemKind,
    pub objective: f64,
    pub horizon: usize,
    pub delay: usize,
    pub p: usize,
    pub m: usize,
    pub worst_signal: Option<String>,
    /// Signal label and its value, in language order.
    #[serde(default)]
    pub signal_values: Vec<(String, f64)>,
    pub config_hash: Option<String>,
    pub nodes: Vec<NodeGain>,
    pub diagnostics: Diagnostics,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SolutionExport {
    pub fn new(sol: &SynthesisSolution, lang: &SwitchingLanguage) -> Self {
        let tree = sol.controller.tree();
        let (p, m) = sol.controller.dims();
        let nodes = tree
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| NodeGain {
                depth: node.depth,
                prefix: prefix_label(&node.key),
                gain: rows_of(sol.controller.node_gain(i)),
            })
            .collect();
        Self {
            problem: sol.problem,
            objective: sol.objective,
            horizon: tree.horizon(),
            delay: tree.delay(),
            p,
            m,
            worst_signal: sol.worst_signal.map(|i| lang.signal(i).to_string()),
            signal_values: lang.signals().iter().zip(&sol.signal_values).map(|(s, &v)| (s.to_string(), v)).collect(),
            config_hash: None,
            nodes,
            diagnostics: sol.diagnostics.clone(),
        }
    }

    /// Rebuilds the controller on `tree`, matching nodes by depth and prefix.
    pub fn controller(&self, tree: &PrefixTree) -> Result<PrefixController> {
        if tree.horizon() != self.horizon || tree.delay() != self.delay || tree.len() != self.nodes.len() {
            return Err(Error::Structure("exported controller does not match the prefix tree".into()));
        }
        let mut gains = vec![None; tree.len()];
        for entry in &self.nodes {
            let idx = tree
                .level(entry.depth)
                .find(|&i| prefix_label(&tree.node(i).key) == entry.prefix)
                .ok_or_else(|| Error::UnknownSignal(format!("prefix {} at depth {}", entry.prefix, entry.depth)))?;
            let cols = self.m * (entry.depth + 1);
            if entry.gain.len() != self.p || entry.gain.iter().any(|r| r.len() != cols) {
                return Err(Error::Dimension(format!("gain of node {} has the wrong shape", entry.prefix)));
            }
            gains[idx] = Some(Matrix::from_fn(self.p, cols, |r, c| entry.gain[r][c]));
        }
        let gains = gains
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Structure("exported controller misses tree nodes".into()))?;
        PrefixController::new(tree.clone(), self.p, self.m, gains)
    }
}
