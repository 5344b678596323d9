//! Comparison controllers: a nominal-only H2 design and a memoryless L1 design.

use crate::blockmat::Matrix;
use crate::error::Result;
use crate::language::{build_prefix_tree, PrefixTree, SwitchingLanguage, SwitchingSignal};
use crate::par::Execution;
use crate::sls::{closed_loop_response, PrefixController, SystemResponse};
use crate::system::{BoundedNoise, CostSpec, NoiseSpec, SwitchedModel};

use super::{evaluate_h2_objective, evaluate_l1_objective, induced_inf_norm, synth_h2, SynthOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub controller: PrefixController,
    pub responses: Vec<SystemResponse>,
    pub objective: f64,
    pub worst_signal: Option<usize>,
    pub sweeps: usize,
    pub converged: bool,
}

fn responses_of(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    controller: &PrefixController,
    exec: Execution,
) -> Result<Vec<SystemResponse>> {
    crate::par::map_range(exec, lang.len(), |s| {
        closed_loop_response(model, lang.signal(s), &controller.gain_for_index(s)?)
    })
    .into_iter()
    .collect()
}

/// Designs for the all-nominal signal alone and applies that gain to every
/// signal of `lang`.
pub fn nominal_h2(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    noise: &NoiseSpec,
    cost: &CostSpec,
    opts: &SynthOptions,
) -> Result<BaselineResult> {
    let nominal = SwitchingLanguage::new(
        vec![SwitchingSignal::constant(1, model.horizon())],
        Some(vec![1.0]),
        model.num_modes(),
    )?;
    let single = synth_h2(model, &nominal, noise, cost, &SynthOptions { delay: 0, ..*opts })?;
    let k = single.controller.gain_for_index(0)?;
    let tree = build_prefix_tree(lang, opts.delay)?;
    let controller = PrefixController::from_common_gain(tree, &k)?;
    let responses = responses_of(model, lang, &controller, Execution::Parallel)?;
    let objective = evaluate_h2_objective(&responses, lang, noise, cost, opts.weighting)?;
    Ok(BaselineResult { controller, responses, objective, worst_signal: None, sweeps: 0, converged: true })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MemorylessOptions {
    pub delay: usize,
    pub initial_step: f64,
    /// Search stops once the step falls below this value.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for MemorylessOptions {
    fn default() -> Self {
        Self { delay: 0, initial_step: 1.0, tol: 1e-8, max_sweeps: 20_000 }
    }
}

/// `[Phi_xx  Phi_xy] blkdiag(w_bar I, v_bar I)` under `u_t = D_t y_t`, by the
/// recursion `x_{t+1} = (A + B D C) x_t + w_{t+1} + B D v_t`.
pub fn memoryless_state_map(
    model: &SwitchedModel,
    sigma: &SwitchingSignal,
    diag: &[&Matrix],
    bounds: &BoundedNoise,
) -> Matrix {
    let (n, m, horizon) = (model.n(), model.m(), model.horizon());
    let nw = n * (horizon + 1);
    let mut map = Matrix::zeros(nw, nw + m * (horizon + 1));
    for i in 0..n {
        map[(i, i)] = bounds.w_bar;
    }
    for t in 0..horizon {
        let md = model.mode(sigma.mode(t));
        let bd = &md.b * diag[t];
        let closed = &md.a + &bd * &md.c;
        let cols = n * (t + 1);
        let prev = map.view((t * n, 0), (n, cols)).into_owned();
        let prev_v = map.view((t * n, nw), (n, m * (t + 1))).into_owned();
        map.view_mut(((t + 1) * n, 0), (n, cols)).copy_from(&(&closed * prev));
        map.view_mut(((t + 1) * n, nw), (n, m * (t + 1))).copy_from(&(&closed * prev_v));
        for i in 0..n {
            map[((t + 1) * n + i, (t + 1) * n + i)] = bounds.w_bar;
        }
        let bdv = bd * bounds.v_bar;
        let mut v = map.view_mut(((t + 1) * n, nw + t * m), (n, m));
        v += bdv;
    }
    map
}

struct Search<'a> {
    model: &'a SwitchedModel,
    lang: &'a SwitchingLanguage,
    tree: &'a PrefixTree,
    bounds: &'a BoundedNoise,
    diag: Vec<Matrix>,
    values: Vec<f64>,
}

impl Search<'_> {
    fn value(&self, s: usize) -> f64 {
        let path = self.tree.path(s);
        let blocks: Vec<&Matrix> = path.iter().map(|&node| &self.diag[node]).collect();
        induced_inf_norm(&memoryless_state_map(self.model, self.lang.signal(s), &blocks, self.bounds))
    }

    fn objective(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Objective after setting entry `(r, c)` of node `node` to `val`; the
    /// change is kept only if `accept` approves the new objective.
    fn try_set(&mut self, node: usize, r: usize, c: usize, val: f64, accept: impl Fn(f64) -> bool) -> bool {
        let old = self.diag[node][(r, c)];
        self.diag[node][(r, c)] = val;
        let signals = &self.tree.node(node).signals;
        let fresh: Vec<(usize, f64)> = signals.iter().map(|&s| (s, self.value(s))).collect();
        let mut obj = f64::NEG_INFINITY;
        for (s, v) in self.values.iter().enumerate() {
            let v = fresh.iter().find(|e| e.0 == s).map_or(*v, |e| e.1);
            obj = obj.max(v);
        }
        if accept(obj) {
            for (s, v) in fresh {
                self.values[s] = v;
            }
            true
        } else {
            self.diag[node][(r, c)] = old;
            false
        }
    }
}

/// Deterministic pattern search over the diagonal gain blocks `K_(t,t)` of
/// every prefix node, minimizing the exact minimax value from zero gains.
pub fn memoryless_l1(
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    bounds: &BoundedNoise,
    opts: &MemorylessOptions,
) -> Result<BaselineResult> {
    super::assemble::check_inputs(model, lang)?;
    let tree = build_prefix_tree(lang, opts.delay)?;
    let (p, m) = (model.p(), model.m());
    let mut search =
        Search { model, lang, tree: &tree, bounds, diag: vec![Matrix::zeros(p, m); tree.len()], values: Vec::new() };
    search.values = (0..lang.len()).map(|s| search.value(s)).collect();

    let mut step = opts.initial_step;
    let mut sweeps = 0;
    while step >= opts.tol && sweeps < opts.max_sweeps {
        let mut improved = false;
        for node in 0..tree.len() {
            for r in 0..p {
                for c in 0..m {
                    let best = search.objective();
                    let base = search.diag[node][(r, c)];
                    let better = |v: f64| v < best - 1e-15 * (1.0 + best.abs());
                    if search.try_set(node, r, c, base + step, better)
                        || search.try_set(node, r, c, base - step, better)
                    {
                        improved = true;
                    }
                }
            }
        }
        sweeps += 1;
        if !improved {
            step *= 0.5;
        }
    }
    let converged = step < opts.tol;
    log::info!("memoryless search: {sweeps} sweeps, final step {step:.1e}, value {:.6e}", search.objective());

    let gains = tree
        .nodes()
        .iter()
        .zip(&search.diag)
        .map(|(node, d)| {
            let mut g = Matrix::zeros(p, m * (node.depth + 1));
            g.columns_mut(m * node.depth, m).copy_from(d);
            g
        })
        .collect();
    let controller = PrefixController::new(tree.clone(), p, m, gains)?;
    let responses = responses_of(model, lang, &controller, Execution::Parallel)?;
    let (objective, worst) = evaluate_l1_objective(&responses, bounds);
    Ok(BaselineResult { controller, responses, objective, worst_signal: Some(worst), sweeps, converged })
}
