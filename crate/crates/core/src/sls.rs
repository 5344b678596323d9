//! Finite-horizon system level synthesis for switched systems: closed-loop
//! response maps, the affine achievability constraints, controller recovery,
//! and the prefix-shared variable layout.

use crate::blockmat::{downshift, BlockGrid, BlockLTMatrix, Matrix};
use crate::error::{Error, Result};
use crate::language::{PrefixTree, SwitchingSignal};
use crate::system::{stack_dynamics, SwitchedModel};

/// Default tolerance for cross-leaf gain agreement after a numerical solve.
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-7;

/// The four closed-loop maps from `(w, v)` to `(x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemResponse {
    pub xx: BlockLTMatrix,
    pub xy: BlockLTMatrix,
    pub ux: BlockLTMatrix,
    pub uy: BlockLTMatrix,
}

impl SystemResponse {
    pub fn zeros(horizon: usize, n: usize, p: usize, m: usize) -> Self {
        Self {
            xx: BlockLTMatrix::zeros(BlockGrid::uniform(horizon, n, n)),
            xy: BlockLTMatrix::zeros(BlockGrid::uniform(horizon, n, m)),
            ux: BlockLTMatrix::zeros(BlockGrid::uniform(horizon, p, n)),
            uy: BlockLTMatrix::zeros(BlockGrid::uniform(horizon, p, m)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.xx.grid().horizon()
    }

    pub fn maps(&self) -> [&BlockLTMatrix; 4] {
        [&self.xx, &self.xy, &self.ux, &self.uy]
    }

    pub fn truncate(&self, t: usize) -> Result<SystemResponse> {
        Ok(Self {
            xx: self.xx.truncate(t)?,
            xy: self.xy.truncate(t)?,
            ux: self.ux.truncate(t)?,
            uy: self.uy.truncate(t)?,
        })
    }

    pub fn max_abs_diff(&self, other: &SystemResponse) -> f64 {
        self.maps().iter().zip(other.maps()).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }

    /// `[Phi_xx  Phi_xy]`, the map from `(w, v)` to `x`.
    pub fn state_map(&self) -> Matrix {
        hstack(self.xx.dense(), self.xy.dense())
    }

    /// The full response `[[Phi_xx, Phi_xy], [Phi_ux, Phi_uy]]`.
    pub fn dense(&self) -> Matrix {
        let top = hstack(self.xx.dense(), self.xy.dense());
        let bottom = hstack(self.ux.dense(), self.uy.dense());
        let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
        out.rows_mut(0, top.nrows()).copy_from(&top);
        out.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
        out
    }
}

fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn check_gain(model: &SwitchedModel, k: &BlockLTMatrix) -> Result<()> {
    let expected = BlockGrid::uniform(model.horizon(), model.p(), model.m());
    if k.grid() != &expected {
        return Err(Error::Dimension(format!(
            "gain must be a {}x{} block lower-triangular matrix over horizon {}",
            model.p(),
            model.m(),
            model.horizon()
        )));
    }
    Ok(())
}

/// Closed-loop maps of `u = K y` under signal `sigma`.
pub fn closed_loop_response(
    model: &SwitchedModel,
    sigma: &SwitchingSignal,
    k: &BlockLTMatrix,
) -> Result<SystemResponse> {
    check_gain(model, k)?;
    let st = stack_dynamics(model, sigma)?;
    let z = downshift(model.horizon(), model.n());
    let (a, b, c) = (st.a.to_lower(), st.b.to_lower(), st.c.to_lower());
    let bk = b.mul(k)?;
    let closed = a.add(&bk.mul(&c)?)?;
    let ident = BlockLTMatrix::identity(z.grid().clone())?;
    let xx = ident.sub(&z.mul(&closed)?)?.invert_unit_lower()?;
    let zbk = z.mul(&bk)?;
    let xy = xx.mul(&zbk)?;
    let ux = k.mul(&c)?.mul(&xx)?;
    let uy = k.add(&ux.mul(&zbk)?)?;
    Ok(SystemResponse { xx, xy, ux, uy })
}

/// Max-abs residual of both achievability constraints
/// `[I - ZA, -ZB] Phi = [I, 0]` and `Phi [I - ZA; -C] = [I; 0]`.
pub fn check_affine(phi: &SystemResponse, model: &SwitchedModel, sigma: &SwitchingSignal) -> Result<f64> {
    let st = stack_dynamics(model, sigma)?;
    let z = downshift(model.horizon(), model.n());
    let nx = z.grid().rows();
    let ny = phi.xy.grid().cols();
    if phi.xx.grid().rows() != nx || phi.ux.grid().rows() != st.b.grid().cols() || ny != st.c.grid().rows() {
        return Err(Error::Dimension("response dimensions do not match the model".into()));
    }
    let ident = Matrix::identity(nx, nx);
    let i_za = &ident - z.dense() * st.a.dense();
    let zb = z.dense() * st.b.dense();
    let c = st.c.dense();
    let (xx, xy, ux, uy) = (phi.xx.dense(), phi.xy.dense(), phi.ux.dense(), phi.uy.dense());

    let r1 = (&i_za * xx - &zb * ux - &ident).amax();
    let r2 = (&i_za * xy - &zb * uy).amax();
    let r3 = (xx * &i_za - xy * &c - &ident).amax();
    let r4 = (ux * &i_za - uy * &c).amax();
    Ok(r1.max(r2).max(r3).max(r4))
}

/// `K = Phi_uy - Phi_ux Phi_xx^{-1} Phi_xy`.
pub fn recover_controller(phi: &SystemResponse) -> Result<BlockLTMatrix> {
    let x = phi.xx.solve_lower(&phi.xy)?;
    phi.uy.sub(&phi.ux.mul(&x)?)
}

/// One of the four response maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResponseBlock {
    Xx,
    Xy,
    Ux,
    Uy,
}

impl ResponseBlock {
    pub const ALL: [ResponseBlock; 4] = [Self::Xx, Self::Xy, Self::Ux, Self::Uy];
}

/// Who owns a slab of decision variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlabOwner {
    /// Shared by every signal through a prefix-tree node.
    Node(usize),
    /// Private to one signal at one depth.
    Signal { signal: usize, depth: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Slab {
    pub owner: SlabOwner,
    pub depth: usize,
    pub offset: usize,
    pub parent: Option<usize>,
    /// Language indices of the signals whose responses contain this slab.
    pub signals: Vec<usize>,
}

/// Variable indexing for block row `t` of all four maps.
///
/// A slab at depth `t` holds, row-major and in this order, `Phi_xx[t, 0..=t]`
/// (`n x n(t+1)`), `Phi_xy[t, 0..=t]` (`n x m(t+1)`), `Phi_ux[t, 0..=t]`
/// (`p x n(t+1)`) and `Phi_uy[t, 0..=t]` (`p x m(t+1)`). With shared slabs every
/// prefix-tree node owns one slab, so responses reconstructed along any two
/// paths agree on every block row up to their last shared node.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixLayout {
    n: usize,
    p: usize,
    m: usize,
    horizon: usize,
    slabs: Vec<Slab>,
    paths: Vec<Vec<usize>>,
    num_vars: usize,
}

impl PrefixLayout {
    fn build(model: &SwitchedModel, tree: &PrefixTree, shared: bool) -> Result<Self> {
        if tree.horizon() != model.horizon() {
            return Err(Error::Dimension(format!(
                "prefix tree horizon {} does not match model horizon {}",
                tree.horizon(),
                model.horizon()
            )));
        }
        let (n, p, m) = (model.n(), model.p(), model.m());
        let mut layout = Self {
            n,
            p,
            m,
            horizon: model.horizon(),
            slabs: Vec::new(),
            paths: vec![Vec::new(); tree.num_signals()],
            num_vars: 0,
        };
        if shared {
            for (i, node) in tree.nodes().iter().enumerate() {
                layout.push_slab(SlabOwner::Node(i), node.depth, node.parent, node.signals.clone());
            }
            for s in 0..tree.num_signals() {
                layout.paths[s] = tree.path(s).to_vec();
            }
        } else {
            for s in 0..tree.num_signals() {
                for t in 0..=model.horizon() {
                    let parent = layout.paths[s].last().copied();
                    let idx = layout.push_slab(SlabOwner::Signal { signal: s, depth: t }, t, parent, vec![s]);
                    layout.paths[s].push(idx);
                }
            }
        }
        Ok(layout)
    }

    fn push_slab(&mut self, owner: SlabOwner, depth: usize, parent: Option<usize>, signals: Vec<usize>) -> usize {
        let idx = self.slabs.len();
        self.slabs.push(Slab { owner, depth, offset: self.num_vars, parent, signals });
        self.num_vars += self.slab_size(depth);
        idx
    }

    /// One slab per distinct delayed prefix (the shared formulation).
    pub fn shared(model: &SwitchedModel, tree: &PrefixTree) -> Result<Self> {
        Self::build(model, tree, true)
    }

    /// Independent slabs for every signal (the explicit-equality formulation).
    pub fn per_signal(model: &SwitchedModel, tree: &PrefixTree) -> Result<Self> {
        Self::build(model, tree, false)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.p, self.m)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn slabs(&self) -> &[Slab] {
        &self.slabs
    }

    pub fn slab(&self, i: usize) -> &Slab {
        &self.slabs[i]
    }

    pub fn num_signals(&self) -> usize {
        self.paths.len()
    }

    /// Slab indices along a signal's path, one per depth.
    pub fn path(&self, signal: usize) -> &[usize] {
        &self.paths[signal]
    }

    /// `(rows, cols)` of one map within a slab at `depth`.
    pub fn block_shape(&self, block: ResponseBlock, depth: usize) -> (usize, usize) {
        let w = depth + 1;
        match block {
            ResponseBlock::Xx => (self.n, self.n * w),
            ResponseBlock::Xy => (self.n, self.m * w),
            ResponseBlock::Ux => (self.p, self.n * w),
            ResponseBlock::Uy => (self.p, self.m * w),
        }
    }

    pub fn slab_size(&self, depth: usize) -> usize {
        (self.n + self.p) * (self.n + self.m) * (depth + 1)
    }

    fn block_base(&self, block: ResponseBlock, depth: usize) -> usize {
        let w = depth + 1;
        let (n, p, m) = (self.n, self.p, self.m);
        match block {
            ResponseBlock::Xx => 0,
            ResponseBlock::Xy => n * n * w,
            ResponseBlock::Ux => n * (n + m) * w,
            ResponseBlock::Uy => n * (n + m) * w + p * n * w,
        }
    }

    /// Index of entry `(row, col)` of `block` within `slab`.
    pub fn var(&self, slab: usize, block: ResponseBlock, row: usize, col: usize) -> usize {
        let s = &self.slabs[slab];
        let (_, cols) = self.block_shape(block, s.depth);
        debug_assert!(col < cols);
        s.offset + self.block_base(block, s.depth) + row * cols + col
    }

    /// Reassembles the response of one signal from a variable vector.
    pub fn reconstruct(&self, x: &[f64], signal: usize) -> Result<SystemResponse> {
        if x.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "variable vector has {} entries, layout expects {}",
                x.len(),
                self.num_vars
            )));
        }
        let mut resp = SystemResponse::zeros(self.horizon, self.n, self.p, self.m);
        for (t, &slab) in self.paths[signal].iter().enumerate() {
            for block in ResponseBlock::ALL {
                let (rows, cols) = self.block_shape(block, t);
                let target = match block {
                    ResponseBlock::Xx => &mut resp.xx,
                    ResponseBlock::Xy => &mut resp.xy,
                    ResponseBlock::Ux => &mut resp.ux,
                    ResponseBlock::Uy => &mut resp.uy,
                };
                let col_dim = target.grid().col_dims()[0];
                for tau in 0..=t {
                    let blk = Matrix::from_fn(rows, col_dim, |r, c| x[self.var(slab, block, r, tau * col_dim + c)]);
                    target.set_block(t, tau, &blk)?;
                }
                debug_assert_eq!(cols, col_dim * (t + 1));
            }
        }
        Ok(resp)
    }

    /// Writes one signal's response into the slabs along its path.
    pub fn scatter(&self, resp: &SystemResponse, signal: usize, x: &mut [f64]) {
        for (t, &slab) in self.paths[signal].iter().enumerate() {
            for (block, map) in ResponseBlock::ALL.iter().zip(resp.maps()) {
                let row = map.row_slab(t);
                for r in 0..row.nrows() {
                    for c in 0..row.ncols() {
                        x[self.var(slab, *block, r, c)] = row[(r, c)];
                    }
                }
            }
        }
    }
}

/// Builds the shared-slab layout of a prefix tree.
pub fn assemble_layout(model: &SwitchedModel, tree: &PrefixTree) -> Result<PrefixLayout> {
    PrefixLayout::shared(model, tree)
}

/// Per-node output-feedback gains: node at depth `t` stores `K[t, 0..=t]`
/// (a `p x m(t+1)` matrix), applied as `u_t = sum_tau K[t, tau] y_tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixController {
    tree: PrefixTree,
    p: usize,
    m: usize,
    gains: Vec<Matrix>,
}

impl PrefixController {
    pub fn new(tree: PrefixTree, p: usize, m: usize, gains: Vec<Matrix>) -> Result<Self> {
        if gains.len() != tree.len() {
            return Err(Error::Dimension(format!("{} gain slabs for {} tree nodes", gains.len(), tree.len())));
        }
        for (i, g) in gains.iter().enumerate() {
            let depth = tree.node(i).depth;
            if g.shape() != (p, m * (depth + 1)) {
                return Err(Error::Dimension(format!(
                    "gain of node {i} is {:?}, expected ({p}, {})",
                    g.shape(),
                    m * (depth + 1)
                )));
            }
        }
        Ok(Self { tree, p, m, gains })
    }

    /// Every signal uses the same gain matrix `k`.
    pub fn from_common_gain(tree: PrefixTree, k: &BlockLTMatrix) -> Result<Self> {
        let p = k.grid().row_dims()[0];
        let m = k.grid().col_dims()[0];
        if k.grid().horizon() != tree.horizon() {
            return Err(Error::Dimension("gain horizon does not match the tree".into()));
        }
        let gains = tree.nodes().iter().map(|node| k.row_slab(node.depth)).collect();
        Self::new(tree, p, m, gains)
    }

    pub fn tree(&self) -> &PrefixTree {
        &self.tree
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p, self.m)
    }

    pub fn node_gain(&self, node: usize) -> &Matrix {
        &self.gains[node]
    }

    pub fn gains(&self) -> &[Matrix] {
        &self.gains
    }

    fn assemble(&self, nodes: &[usize]) -> Result<BlockLTMatrix> {
        let horizon = self.tree.horizon();
        let mut k = BlockLTMatrix::zeros(BlockGrid::uniform(horizon, self.p, self.m));
        for (t, &node) in nodes.iter().enumerate() {
            let g = &self.gains[node];
            for tau in 0..=t {
                let blk = g.columns(tau * self.m, self.m).into_owned();
                k.set_block(t, tau, &blk)?;
            }
        }
        Ok(k)
    }

    /// Full gain `K^sigma` of a language signal, assembled along its path.
    pub fn gain_for_index(&self, signal: usize) -> Result<BlockLTMatrix> {
        self.assemble(self.tree.path(signal))
    }

    /// Full gain for any signal whose delayed prefixes all appear in the tree.
    pub fn gain_for(&self, sigma: &SwitchingSignal) -> Result<BlockLTMatrix> {
        let nodes = (0..=self.tree.horizon())
            .map(|t| self.tree.node_for(sigma, t).ok_or_else(|| Error::UnknownSignal(format!("{sigma} at t={t}"))))
            .collect::<Result<Vec<_>>>()?;
        self.assemble(&nodes)
    }
}

/// Reads each node's gain row from the controllers recovered on its leaves,
/// verifying that all leaves through a node agree within `tol`.
pub fn realize_online(responses: &[SystemResponse], tree: &PrefixTree, tol: f64) -> Result<PrefixController> {
    if responses.len() != tree.num_signals() {
        return Err(Error::Dimension(format!("{} responses for {} signals", responses.len(), tree.num_signals())));
    }
    let gains: Vec<BlockLTMatrix> =
        crate::par::map(responses, recover_controller).into_iter().collect::<Result<_>>()?;
    let p = gains[0].grid().row_dims()[0];
    let m = gains[0].grid().col_dims()[0];
    let mut node_gains = Vec::with_capacity(tree.len());
    for (i, node) in tree.nodes().iter().enumerate() {
        let first = gains[node.signals[0]].row_slab(node.depth);
        for &s in &node.signals[1..] {
            let dev = (gains[s].row_slab(node.depth) - &first).amax();
            if dev.is_nan() || dev > tol {
                return Err(Error::Consistency { node: i, deviation: dev });
            }
        }
        node_gains.push(first);
    }
    PrefixController::new(tree.clone(), p, m, node_gains)
}
