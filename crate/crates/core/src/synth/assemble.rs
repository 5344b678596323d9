//! Program assembly over a [`PrefixLayout`].

use std::collections::HashSet;

use crate::blockmat::Matrix;
use crate::error::{Error, Result};
use crate::language::{PrefixTree, SwitchingLanguage};
use crate::sls::{PrefixLayout, ResponseBlock, SlabOwner};
use crate::solver::ConvexProgram;
use crate::system::{stack_noise_covariance, BoundedNoise, CostSpec, NoiseSpec, SwitchedModel};

use super::Weighting;

type Row = Vec<(usize, f64)>;

/// Adds equality rows, skipping exact duplicates.
struct EqSink<'a> {
    prog: &'a mut ConvexProgram,
    seen: HashSet<Vec<u64>>,
    duplicates: usize,
}

impl<'a> EqSink<'a> {
    fn new(prog: &'a mut ConvexProgram) -> Self {
        Self { prog, seen: HashSet::new(), duplicates: 0 }
    }

    fn push(&mut self, mut row: Row, rhs: f64) {
        row.sort_by_key(|e| e.0);
        let mut merged: Row = Vec::with_capacity(row.len());
        for (j, v) in row {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += v,
                _ => merged.push((j, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        if merged.is_empty() && rhs == 0.0 {
            return;
        }
        let mut key: Vec<u64> = merged.iter().flat_map(|&(j, v)| [j as u64, v.to_bits()]).collect();
        key.push(rhs.to_bits());
        if self.seen.insert(key) {
            self.prog.add_eq(&merged, rhs);
        } else {
            self.duplicates += 1;
        }
    }
}

/// Emits the achievability rows of block row `t` for one signal.
///
/// `path[t]` is the slab holding block row `t`, `path[t-1]` its parent.
/// Row constraints `[I - ZA, -ZB] Phi = [I, 0]` couple block row `t` to row
/// `t-1`; column constraints `Phi [I - ZA; -C] = [I; 0]` are local to row `t`.
/// With `with_state_columns` unset, the state-column constraint
/// `Phi_xx (I - ZA) - Phi_xy C = I` is omitted; it follows from the other three.
fn affine_rows(
    layout: &PrefixLayout,
    model: &SwitchedModel,
    path: &[usize],
    modes: &[usize],
    t: usize,
    with_state_columns: bool,
    sink: &mut EqSink,
) {
    use ResponseBlock::*;
    let (n, p, m) = layout.dims();
    let cur = path[t];
    let var = |slab, block, r, c| layout.var(slab, block, r, c);
    let prev = (t > 0).then(|| (path[t - 1], model.mode(modes[t - 1])));

    // rows: Phi_xx / Phi_xy block (t, tau) minus A_{t-1} and B_{t-1} times row t-1
    for (xblock, ublock, width) in [(Xx, Ux, n), (Xy, Uy, m)] {
        for tau in 0..=t {
            for i in 0..n {
                for j in 0..width {
                    let col = tau * width + j;
                    let mut row = vec![(var(cur, xblock, i, col), 1.0)];
                    if let Some((parent, dyn_)) = prev {
                        if tau < t {
                            for k in 0..n {
                                row.push((var(parent, xblock, k, col), -dyn_.a[(i, k)]));
                            }
                            for k in 0..p {
                                row.push((var(parent, ublock, k, col), -dyn_.b[(i, k)]));
                            }
                        }
                    }
                    let rhs = if xblock == Xx && tau == t && i == j { 1.0 } else { 0.0 };
                    sink.push(row, rhs);
                }
            }
        }
    }

    // columns: Phi_{.x}[t, tau] - Phi_{.x}[t, tau+1] A_tau - Phi_{.y}[t, tau] C_tau
    let mut col_pairs = vec![(Ux, Uy, p)];
    if with_state_columns {
        col_pairs.insert(0, (Xx, Xy, n));
    }
    for (xblock, yblock, rows) in col_pairs {
        for tau in 0..=t {
            let dyn_ = model.mode(modes[tau]);
            for i in 0..rows {
                for j in 0..n {
                    let mut row = vec![(var(cur, xblock, i, tau * n + j), 1.0)];
                    if tau < t {
                        for k in 0..n {
                            row.push((var(cur, xblock, i, (tau + 1) * n + k), -dyn_.a[(k, j)]));
                        }
                    }
                    for k in 0..m {
                        row.push((var(cur, yblock, i, tau * m + k), -dyn_.c[(k, j)]));
                    }
                    let rhs = if xblock == Xx && tau == t && i == j { 1.0 } else { 0.0 };
                    sink.push(row, rhs);
                }
            }
        }
    }
}

/// Summary of an assembled program.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssemblyStats {
    pub slab_vars: usize,
    pub eq_rows: usize,
    pub duplicate_rows: usize,
    pub prefix_rows: usize,
}

/// Equality constraints for every signal of the language over `layout`.
///
/// Shared layouts get the reduced row set with duplicates removed; per-signal
/// layouts get the literal constraint set of each signal plus explicit
/// prefix-equality rows derived from `tree`.
pub fn assemble_constraints(
    prog: &mut ConvexProgram,
    layout: &PrefixLayout,
    model: &SwitchedModel,
    lang: &SwitchingLanguage,
    tree: &PrefixTree,
) -> AssemblyStats {
    let explicit = layout.slabs().first().is_some_and(|s| matches!(s.owner, SlabOwner::Signal { .. }));
    let mut sink = EqSink::new(prog);
    for (idx, slab) in layout.slabs().iter().enumerate() {
        let t = slab.depth;
        for &s in &slab.signals {
            let path = layout.path(s);
            debug_assert_eq!(path[t], idx);
            affine_rows(layout, model, path, lang.signal(s).modes(), t, explicit, &mut sink);
        }
    }
    let duplicate_rows = sink.duplicates;
    let affine = sink.prog.eq_rows().len();

    let mut prefix_rows = 0;
    if explicit {
        for node in tree.nodes() {
            let t = node.depth;
            let first = layout.slab(layout.path(node.signals[0])[t]).offset;
            for &s in &node.signals[1..] {
                let other = layout.slab(layout.path(s)[t]).offset;
                for k in 0..layout.slab_size(t) {
                    sink.prog.add_eq(&[(first + k, 1.0), (other + k, -1.0)], 0.0);
                    prefix_rows += 1;
                }
            }
        }
    }
    AssemblyStats { slab_vars: layout.num_vars(), eq_rows: affine + prefix_rows, duplicate_rows, prefix_rows }
}

/// Maps entry `(a, c)` of the block-row slab `X = [[xx, xy], [ux, uy]]` to a variable.
fn slab_entry(layout: &PrefixLayout, slab: usize, a: usize, c: usize) -> usize {
    let (n, _, _) = layout.dims();
    let t = layout.slab(slab).depth;
    let split = n * (t + 1);
    let (top, row) = if a < n { (true, a) } else { (false, a - n) };
    let block = match (top, c < split) {
        (true, true) => ResponseBlock::Xx,
        (true, false) => ResponseBlock::Xy,
        (false, true) => ResponseBlock::Ux,
        (false, false) => ResponseBlock::Uy,
    };
    let col = if c < split { c } else { c - split };
    layout.var(slab, block, row, col)
}

fn nonzeros(m: &Matrix) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if m[(r, c)] != 0.0 {
                out.push((r, c, m[(r, c)]));
            }
        }
    }
    out
}

/// Adds `sum_sigma pi(sigma) tr(X P_sigma X' blkdiag(Q_t, R_t))` for every slab,
/// where `X` is the slab's block row and `P_sigma` the matching leading blocks
/// of the noise covariance (or its square under [`Weighting::Literal`]).
pub fn add_h2_objective(
    prog: &mut ConvexProgram,
    layout: &PrefixLayout,
    lang: &SwitchingLanguage,
    probabilities: &[f64],
    noise: &NoiseSpec,
    cost: &CostSpec,
    weighting: Weighting,
) -> Result<()> {
    let (n, p, m) = layout.dims();
    let stacks = lang.signals().iter().map(|s| stack_noise_covariance(noise, s)).collect::<Result<Vec<_>>>()?;
    for (idx, slab) in layout.slabs().iter().enumerate() {
        let t = slab.depth;
        let w = (n + m) * (t + 1);
        let mut weight = Matrix::zeros(w, w);
        for &s in &slab.signals {
            let (pw, pv) = &stacks[s];
            for tau in 0..=t {
                let (bw, bv) = match weighting {
                    Weighting::Sqrt => (pw.block(tau).clone(), pv.block(tau).clone()),
                    Weighting::Literal => (pw.block(tau).pow(2), pv.block(tau).pow(2)),
                };
                let mut v = weight.view_mut((tau * n, tau * n), (n, n));
                v += bw * probabilities[s];
                let off = n * (t + 1) + tau * m;
                let mut v = weight.view_mut((off, off), (m, m));
                v += bv * probabilities[s];
            }
        }
        let mut stage = Matrix::zeros(n + p, n + p);
        stage.view_mut((0, 0), (n, n)).copy_from(cost.q(t));
        stage.view_mut((n, n), (p, p)).copy_from(cost.r(t));
        let s_nz = nonzeros(&stage);
        let p_nz = nonzeros(&weight);
        for &(a, b, sv) in &s_nz {
            for &(c, d, pv) in &p_nz {
                let xi = slab_entry(layout, idx, a, c);
                let xj = slab_entry(layout, idx, b, d);
                prog.add_bilinear(xi, xj, sv * pv);
            }
        }
    }
    Ok(())
}

/// Adds the minimax objective: epigraph variable `tau`, and for each slab and
/// state row the split `|scale * Phi_x[i, c]| <= s_c`, `sum_c s_c <= tau`.
/// Returns the index of `tau`.
pub fn add_l1_objective(prog: &mut ConvexProgram, layout: &PrefixLayout, bounds: &BoundedNoise) -> usize {
    let (n, _, m) = layout.dims();
    let tau = prog.add_var(true);
    prog.add_linear(tau, 1.0);
    for (idx, slab) in layout.slabs().iter().enumerate() {
        let t = slab.depth;
        for i in 0..n {
            let mut sum = vec![(tau, -1.0)];
            let cols = (0..n * (t + 1))
                .map(|c| (ResponseBlock::Xx, c, bounds.w_bar))
                .chain((0..m * (t + 1)).map(|c| (ResponseBlock::Xy, c, bounds.v_bar)));
            for (block, c, scale) in cols {
                if scale == 0.0 {
                    continue;
                }
                let phi = layout.var(idx, block, i, c);
                let s = prog.add_var(true);
                prog.add_ub(&[(phi, scale), (s, -1.0)], 0.0);
                prog.add_ub(&[(phi, -scale), (s, -1.0)], 0.0);
                sum.push((s, 1.0));
            }
            prog.add_ub(&sum, 0.0);
        }
    }
    tau
}

pub(super) fn check_inputs(model: &SwitchedModel, lang: &SwitchingLanguage) -> Result<()> {
    if lang.horizon() != model.horizon() {
        return Err(Error::Dimension(format!(
            "language horizon {} does not match model horizon {}",
            lang.horizon(),
            model.horizon()
        )));
    }
    if lang.num_modes() > model.num_modes() {
        return Err(Error::Language(format!(
            "language uses {} modes but the model has {}",
            lang.num_modes(),
            model.num_modes()
        )));
    }
    Ok(())
}
