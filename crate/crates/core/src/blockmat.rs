//! Block lower-triangular and block-diagonal matrices over a horizon grid.
//!
//! Every matrix in the synthesis pipeline is partitioned into `(T+1) x (T+1)`
//! blocks, one block row and block column per time step. Storage is dense;
//! strictly-upper blocks of a [`BlockLTMatrix`] are kept at exact zero.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Tolerance for "this diagonal block is the identity".
pub const UNIT_DIAGONAL_TOL: f64 = 1e-12;

/// Row and column block sizes for each time step `0..=T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

fn prefix_sums(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    let mut out = Vec::with_capacity(dims.len() + 1);
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

impl BlockGrid {
    pub fn new(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Result<Self> {
        if row_dims.is_empty() || row_dims.len() != col_dims.len() {
            return Err(Error::Dimension(format!(
                "grid needs matching non-empty block lists, got {} row and {} column blocks",
                row_dims.len(),
                col_dims.len()
            )));
        }
        if row_dims.iter().chain(col_dims.iter()).any(|&d| d == 0) {
            return Err(Error::Dimension("block dimensions must be positive".into()));
        }
        let row_offsets = prefix_sums(&row_dims);
        let col_offsets = prefix_sums(&col_dims);
        Ok(Self { row_dims, col_dims, row_offsets, col_offsets })
    }

    /// Grid with `horizon + 1` blocks of size `rows x cols`.
    pub fn uniform(horizon: usize, rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "block dimensions must be positive");
        Self::new(vec![rows; horizon + 1], vec![cols; horizon + 1]).expect("valid uniform grid")
    }

    pub fn horizon(&self) -> usize {
        self.row_dims.len() - 1
    }

    pub fn num_blocks(&self) -> usize {
        self.row_dims.len()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn row_offset(&self, t: usize) -> usize {
        self.row_offsets[t]
    }

    pub fn col_offset(&self, t: usize) -> usize {
        self.col_offsets[t]
    }

    pub fn rows(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn cols(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn is_square(&self) -> bool {
        self.row_dims == self.col_dims
    }

    /// Leading `(t+1) x (t+1)` block sub-grid.
    pub fn truncate(&self, t: usize) -> Result<Self> {
        if t > self.horizon() {
            return Err(Error::OutOfRange(format!("truncation index {t} exceeds horizon {}", self.horizon())));
        }
        Self::new(self.row_dims[..=t].to_vec(), self.col_dims[..=t].to_vec())
    }

    /// Grid of `self * rhs`; requires `self.col_dims == rhs.row_dims`.
    pub fn product(&self, rhs: &BlockGrid) -> Result<Self> {
        if self.col_dims != rhs.row_dims {
            return Err(Error::Dimension(format!(
                "incompatible block grids for product: {:?} vs {:?}",
                self.col_dims, rhs.row_dims
            )));
        }
        Self::new(self.row_dims.clone(), rhs.col_dims.clone())
    }
}

/// Block lower-triangular matrix: block `(t, tau)` is zero whenever `tau > t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLTMatrix {
    grid: BlockGrid,
    dense: Matrix,
}

impl BlockLTMatrix {
    pub fn zeros(grid: BlockGrid) -> Self {
        let dense = Matrix::zeros(grid.rows(), grid.cols());
        Self { grid, dense }
    }

    pub fn identity(grid: BlockGrid) -> Result<Self> {
        if !grid.is_square() {
            return Err(Error::Dimension("identity requires square diagonal blocks".into()));
        }
        let dense = Matrix::identity(grid.rows(), grid.cols());
        Ok(Self { grid, dense })
    }

    /// Wraps a dense matrix, zeroing every strictly-upper block.
    pub fn from_dense(grid: BlockGrid, mut dense: Matrix) -> Result<Self> {
        if dense.nrows() != grid.rows() || dense.ncols() != grid.cols() {
            return Err(Error::Dimension(format!(
                "dense matrix is {}x{}, grid expects {}x{}",
                dense.nrows(),
                dense.ncols(),
                grid.rows(),
                grid.cols()
            )));
        }
        zero_upper_blocks(&grid, &mut dense);
        Ok(Self { grid, dense })
    }

    /// Wraps a dense matrix, rejecting it if any strictly-upper entry exceeds `tol`.
    pub fn try_from_dense(grid: BlockGrid, dense: Matrix, tol: f64) -> Result<Self> {
        if dense.nrows() == grid.rows() && dense.ncols() == grid.cols() {
            let upper = upper_block_max_abs(&grid, &dense);
            if upper > tol {
                return Err(Error::Structure(format!(
                    "matrix is not block lower-triangular (upper block entry {upper:.3e})"
                )));
            }
        }
        Self::from_dense(grid, dense)
    }

    /// Builds the matrix block by block; `f(t, tau)` is called for `tau <= t` only.
    pub fn from_blocks<F>(grid: BlockGrid, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Matrix,
    {
        let mut out = Self::zeros(grid);
        for t in 0..out.grid.num_blocks() {
            for tau in 0..=t {
                let block = f(t, tau);
                out.set_block(t, tau, &block)?;
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn dense(&self) -> &Matrix {
        &self.dense
    }

    pub fn into_dense(self) -> Matrix {
        self.dense
    }

    pub fn block(&self, t: usize, tau: usize) -> DMatrixView<'_, f64> {
        let g = &self.grid;
        self.dense.view((g.row_offset(t), g.col_offset(tau)), (g.row_dims[t], g.col_dims[tau]))
    }

    pub fn set_block(&mut self, t: usize, tau: usize, value: &Matrix) -> Result<()> {
        if tau > t {
            return Err(Error::Structure(format!("block ({t}, {tau}) lies above the block diagonal")));
        }
        let g = &self.grid;
        if t >= g.num_blocks() {
            return Err(Error::OutOfRange(format!("block row {t}")));
        }
        let shape = (g.row_dims[t], g.col_dims[tau]);
        if value.shape() != shape {
            return Err(Error::Dimension(format!("block ({t}, {tau}) expects {shape:?}, got {:?}", value.shape())));
        }
        let (r0, c0) = (g.row_offset(t), g.col_offset(tau));
        self.dense.view_mut((r0, c0), shape).copy_from(value);
        Ok(())
    }

    /// Block row `t` restricted to its first `t+1` block columns.
    pub fn row_slab(&self, t: usize) -> Matrix {
        let g = &self.grid;
        self.dense.view((g.row_offset(t), 0), (g.row_dims[t], g.col_offset(t + 1))).into_owned()
    }

    pub fn mul(&self, rhs: &BlockLTMatrix) -> Result<BlockLTMatrix> {
        let grid = self.grid.product(&rhs.grid)?;
        Self::from_dense(grid, &self.dense * &rhs.dense)
    }

    pub fn mul_diag(&self, rhs: &BlockDiagMatrix) -> Result<BlockLTMatrix> {
        self.mul(&rhs.to_lower())
    }

    pub fn add(&self, rhs: &BlockLTMatrix) -> Result<BlockLTMatrix> {
        self.check_same_grid(rhs)?;
        Ok(Self { grid: self.grid.clone(), dense: &self.dense + &rhs.dense })
    }

    pub fn sub(&self, rhs: &BlockLTMatrix) -> Result<BlockLTMatrix> {
        self.check_same_grid(rhs)?;
        Ok(Self { grid: self.grid.clone(), dense: &self.dense - &rhs.dense })
    }

    pub fn scale(&self, factor: f64) -> BlockLTMatrix {
        Self { grid: self.grid.clone(), dense: &self.dense * factor }
    }

    fn check_same_grid(&self, rhs: &BlockLTMatrix) -> Result<()> {
        if self.grid != rhs.grid {
            return Err(Error::Dimension("block grids differ".into()));
        }
        Ok(())
    }

    /// The leading `(t+1) x (t+1)` block submatrix `M(:t)`.
    pub fn truncate(&self, t: usize) -> Result<BlockLTMatrix> {
        let grid = self.grid.truncate(t)?;
        let dense = self.dense.view((0, 0), (grid.rows(), grid.cols())).into_owned();
        Ok(Self { grid, dense })
    }

    pub fn max_abs_diff(&self, other: &BlockLTMatrix) -> f64 {
        if self.dense.shape() != other.dense.shape() {
            return f64::INFINITY;
        }
        (&self.dense - &other.dense).amax()
    }

    /// Inverse of a block unit lower-triangular matrix by block forward substitution.
    pub fn invert_unit_lower(&self) -> Result<BlockLTMatrix> {
        if !self.grid.is_square() {
            return Err(Error::Structure("inversion needs square diagonal blocks".into()));
        }
        let nb = self.grid.num_blocks();
        for t in 0..nb {
            let d = self.block(t, t);
            let dev = (d - Matrix::identity(d.nrows(), d.ncols())).amax();
            if dev > UNIT_DIAGONAL_TOL {
                return Err(Error::Structure(format!("diagonal block {t} deviates from identity by {dev:.3e}")));
            }
        }
        let mut inv = BlockLTMatrix::identity(self.grid.clone())?;
        // X(i,j) = -sum_{k=j}^{i-1} M(i,k) X(k,j)
        for i in 1..nb {
            for j in 0..i {
                let mut acc = Matrix::zeros(self.grid.row_dims[i], self.grid.col_dims[j]);
                for k in j..i {
                    acc -= self.block(i, k) * inv.block(k, j);
                }
                inv.set_block(i, j, &acc)?;
            }
        }
        Ok(inv)
    }

    /// Solves `self * X = rhs` by block forward substitution with LU on each
    /// diagonal block. Used where the diagonal is only numerically the identity.
    pub fn solve_lower(&self, rhs: &BlockLTMatrix) -> Result<BlockLTMatrix> {
        if !self.grid.is_square() || self.grid.col_dims != rhs.grid.row_dims {
            return Err(Error::Dimension("incompatible grids for block solve".into()));
        }
        let nb = self.grid.num_blocks();
        let mut lus = Vec::with_capacity(nb);
        for t in 0..nb {
            let lu = self.block(t, t).into_owned().lu();
            if !lu.is_invertible() {
                return Err(Error::Structure(format!("diagonal block {t} is singular")));
            }
            lus.push(lu);
        }
        let mut x = BlockLTMatrix::zeros(rhs.grid.clone());
        for i in 0..nb {
            for j in 0..=i {
                let mut acc = rhs.block(i, j).into_owned();
                for k in j..i {
                    acc -= self.block(i, k) * x.block(k, j);
                }
                let sol =
                    lus[i].solve(&acc).ok_or_else(|| Error::Structure(format!("diagonal block {i} is singular")))?;
                x.set_block(i, j, &sol)?;
            }
        }
        Ok(x)
    }
}

fn zero_upper_blocks(grid: &BlockGrid, dense: &mut Matrix) {
    for t in 0..grid.num_blocks() {
        let r0 = grid.row_offset(t);
        let c0 = grid.col_offset(t + 1);
        let (h, w) = (grid.row_dims[t], grid.cols() - c0);
        if w > 0 {
            dense.view_mut((r0, c0), (h, w)).fill(0.0);
        }
    }
}

fn upper_block_max_abs(grid: &BlockGrid, dense: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..grid.num_blocks() {
        let r0 = grid.row_offset(t);
        let c0 = grid.col_offset(t + 1);
        let (h, w) = (grid.row_dims[t], grid.cols() - c0);
        if w > 0 {
            worst = worst.max(dense.view((r0, c0), (h, w)).amax());
        }
    }
    worst
}

/// Block-diagonal matrix; off-diagonal blocks are implicitly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiagMatrix {
    grid: BlockGrid,
    blocks: Vec<Matrix>,
}

impl BlockDiagMatrix {
    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn block(&self, t: usize) -> &Matrix {
        &self.blocks[t]
    }

    pub fn dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.grid.rows(), self.grid.cols());
        for (t, b) in self.blocks.iter().enumerate() {
            out.view_mut((self.grid.row_offset(t), self.grid.col_offset(t)), b.shape()).copy_from(b);
        }
        out
    }

    pub fn to_lower(&self) -> BlockLTMatrix {
        BlockLTMatrix { grid: self.grid.clone(), dense: self.dense() }
    }

    /// Leading `t+1` diagonal blocks.
    pub fn truncate(&self, t: usize) -> Result<BlockDiagMatrix> {
        let grid = self.grid.truncate(t)?;
        Ok(Self { grid, blocks: self.blocks[..=t].to_vec() })
    }

    pub fn map_blocks<F: FnMut(&Matrix) -> Matrix>(&self, f: F) -> Result<BlockDiagMatrix> {
        blkdiag(self.blocks.iter().map(f).collect())
    }
}

/// Assembles a block-diagonal matrix from its diagonal blocks in order.
///
/// Blocks with a zero dimension are rejected; use an explicit zero block
/// (e.g. `Matrix::zeros(n, n)`) for the trailing `0` of a dynamics stack.
pub fn blkdiag(blocks: Vec<Matrix>) -> Result<BlockDiagMatrix> {
    if blocks.is_empty() {
        return Err(Error::Dimension("blkdiag needs at least one block".into()));
    }
    let grid = BlockGrid::new(blocks.iter().map(|b| b.nrows()).collect(), blocks.iter().map(|b| b.ncols()).collect())?;
    Ok(BlockDiagMatrix { grid, blocks })
}

/// Block downshift `Z`: `T` copies of `I_n` on the first block subdiagonal.
pub fn downshift(horizon: usize, n: usize) -> BlockLTMatrix {
    let grid = BlockGrid::uniform(horizon, n, n);
    let mut z = BlockLTMatrix::zeros(grid);
    for t in 1..=horizon {
        z.dense.view_mut((t * n, (t - 1) * n), (n, n)).fill_with_identity();
    }
    z
}
