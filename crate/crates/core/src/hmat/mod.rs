//! Quadtree hierarchical matrices with truncated-SVD leaves.
//!
//! A block is split at ceil-midpoints of its row and column ranges until it is
//! admissible. Admissibility is tested in this order: an all-zero block is
//! admissible; a block larger than `max_leaf_size` in either direction is not;
//! a block whose smaller side is at most `min_block_size` is; otherwise the
//! block is admissible when its `(r+1)`-th singular value is below `delta`.

pub mod io;
pub mod svd;

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use svd::{dense_svd, truncated_svd_with, Sketch, SvdOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionParams {
    pub max_rank: usize,
    pub delta: f64,
    pub max_leaf_size: usize,
    pub min_block_size: usize,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            max_rank: 16,
            delta: 1e-7,
            max_leaf_size: 1024,
            min_block_size: 4,
        }
    }
}

impl CompressionParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_rank < 1 {
            return Err(Error::Config("max_rank must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if self.max_leaf_size < 2 {
            return Err(Error::Config("max_leaf_size must exceed 1".into()));
        }
        if self.min_block_size < 2 || self.min_block_size > self.max_leaf_size {
            return Err(Error::Config("min_block_size must lie in [2, max_leaf_size]".into()));
        }
        Ok(())
    }
}

/// Low-rank leaf `U V` with the singular values folded into `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    /// `rows x k`.
    pub u: DMatrix<f64>,
    /// `k x cols`, equal to `diag(sigma) Vt`.
    pub v: DMatrix<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    /// Children in the order upper-left, upper-right, lower-left, lower-right.
    Internal(Box<[HNode; 4]>),
    Zero,
    LowRank(LowRank),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HNode {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub kind: NodeKind,
}

/// Ceil-midpoint split of a range.
pub fn split_range(r: &Range<usize>) -> (Range<usize>, Range<usize>) {
    let mid = r.start + r.len().div_ceil(2);
    (r.start..mid, mid..r.end)
}

/// Children ranges in quadtree order.
pub fn child_ranges(rows: &Range<usize>, cols: &Range<usize>) -> [(Range<usize>, Range<usize>); 4] {
    let (r1, r2) = split_range(rows);
    let (c1, c2) = split_range(cols);
    [(r1.clone(), c1.clone()), (r1, c2.clone()), (r2.clone(), c1), (r2, c2)]
}

fn block(a: &DMatrix<f64>, rows: &Range<usize>, cols: &Range<usize>) -> DMatrix<f64> {
    a.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

pub fn is_zero_block(a: &DMatrix<f64>, rows: &Range<usize>, cols: &Range<usize>) -> bool {
    cols.clone().all(|j| rows.clone().all(|i| a[(i, j)] == 0.0))
}

/// Admissibility of `a[rows, cols]`. The spectral test is certified: Ritz
/// values of a randomized sketch bound the true `sigma_{r+1}` from below and,
/// after adding the sketch residual, from above; only an undecided bracket
/// triggers the dense SVD. Flops go to the admissibility phase.
pub fn admissible(
    a: &DMatrix<f64>,
    rows: &Range<usize>,
    cols: &Range<usize>,
    params: &CompressionParams,
    counter: Option<&FlopCounter>,
) -> bool {
    if rows.is_empty() || cols.is_empty() || is_zero_block(a, rows, cols) {
        return true;
    }
    if let Some(ok) = structural_admissibility(rows, cols, params) {
        return ok;
    }
    sigma_r1(&block(a, rows, cols), params, counter) < params.delta
}

/// The size-only part of the admissibility test: `Some(false)` for blocks over
/// `max_leaf_size`, `Some(true)` for blocks whose smaller side is at most
/// `min_block_size` or `max_rank`, `None` when the spectral test decides.
pub fn structural_admissibility(rows: &Range<usize>, cols: &Range<usize>, params: &CompressionParams) -> Option<bool> {
    if rows.len() > params.max_leaf_size || cols.len() > params.max_leaf_size {
        return Some(false);
    }
    let small = rows.len().min(cols.len());
    if small <= params.min_block_size || small <= params.max_rank {
        return Some(true);
    }
    None
}

/// Smallest value that provably decides `sigma_{r+1} < delta`; exact only when
/// the sketch bracket straddles `delta`.
fn sigma_r1(b: &DMatrix<f64>, params: &CompressionParams, counter: Option<&FlopCounter>) -> f64 {
    let cnt = counter.map(|c| (c, Phase::Admissibility));
    let k = params.max_rank + 1;
    let (m, n) = b.shape();
    let opts = SvdOptions::default();
    let l = (k + opts.oversample).min(m.min(n));
    if l == m.min(n) || svd::dense_svd_flops(m, n) <= svd::randomized_svd_flops(m, n, l, k, opts.power_iterations) {
        return dense_svd(b, cnt).sigma[k - 1];
    }
    let mut sketch = Sketch::new(b, l, opts.power_iterations, opts.seed, cnt);
    for attempt in 0..=opts.extra_iterations {
        if attempt > 0 {
            sketch.refine(b, cnt);
        }
        let lower = sketch.ritz(cnt).sigma[k - 1];
        if lower >= params.delta {
            return lower;
        }
        let upper = lower + sketch.tail_frobenius(b, cnt);
        if upper < params.delta {
            return upper;
        }
    }
    dense_svd(b, cnt).sigma[k - 1]
}

/// Leaf for `a[rows, cols]`: zero leaf for zero blocks, otherwise the leading
/// triplets with `sigma >= delta`, at most `max_rank`, with `V = diag(sigma) Vt`.
/// Flops go to the SVD phase.
pub fn compress_block(
    a: &DMatrix<f64>,
    rows: &Range<usize>,
    cols: &Range<usize>,
    params: &CompressionParams,
    counter: Option<&FlopCounter>,
) -> HNode {
    let zero = HNode {
        rows: rows.clone(),
        cols: cols.clone(),
        kind: NodeKind::Zero,
    };
    if rows.is_empty() || cols.is_empty() || is_zero_block(a, rows, cols) {
        return zero;
    }
    let b = block(a, rows, cols);
    let opts = SvdOptions {
        residual_rtol: 0.0,
        residual_atol: 1e-3 * params.delta,
        check_floor: 0.5 * params.delta,
        ..SvdOptions::default()
    };
    let s = truncated_svd_with(&b, params.max_rank, &opts, counter.map(|c| (c, Phase::Svd)));
    let k = s.sigma.iter().take_while(|&&x| x >= params.delta).count();
    if k == 0 {
        return zero;
    }
    let u = s.u.columns(0, k).into_owned();
    let mut v = s.vt.rows(0, k).into_owned();
    for i in 0..k {
        v.row_mut(i).scale_mut(s.sigma[i]);
    }
    HNode {
        rows: rows.clone(),
        cols: cols.clone(),
        kind: NodeKind::LowRank(LowRank {
            u,
            v,
            sigma: s.sigma[..k].to_vec(),
        }),
    }
}

/// What a tree builder should do with a nonzero block.
#[derive(Debug, Clone)]
pub enum Decision {
    Split,
    /// Admissible: build the leaf by truncated SVD.
    Compress,
    /// Admissible with a ready-made leaf.
    Leaf(HNode),
    /// Defer to the exact admissibility test.
    Exact,
}

/// Block-level advisor consulted by [`create_tree_with`] for every nonzero block.
pub trait TreeOracle {
    fn decide(&self, level: usize, rows: &Range<usize>, cols: &Range<usize>, counter: Option<&FlopCounter>) -> Decision;
}

/// Oracle that always defers to [`admissible`].
pub struct ExactOracle;

impl TreeOracle for ExactOracle {
    fn decide(&self, _: usize, _: &Range<usize>, _: &Range<usize>, _: Option<&FlopCounter>) -> Decision {
        Decision::Exact
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Blocks decided by the oracle without the exact test.
    pub predicted: usize,
    /// Blocks where the oracle deferred to the exact test.
    pub exact: usize,
    pub zero_blocks: usize,
}

/// Recursive compression with exact admissibility.
pub fn create_tree(a: &DMatrix<f64>, params: &CompressionParams, counter: Option<&FlopCounter>) -> Result<HNode> {
    Ok(create_tree_with(a, params, &ExactOracle, counter)?.0)
}

/// Recursive compression where each nonzero block is first offered to `oracle`.
pub fn create_tree_with(
    a: &DMatrix<f64>,
    params: &CompressionParams,
    oracle: &dyn TreeOracle,
    counter: Option<&FlopCounter>,
) -> Result<(HNode, BuildStats)> {
    params.validate()?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("cannot compress an empty matrix".into()));
    }
    let mut stats = BuildStats::default();
    let root = build(a, 0..a.nrows(), 0..a.ncols(), 0, params, oracle, counter, &mut stats);
    Ok((root, stats))
}

#[allow(clippy::too_many_arguments)]
fn build(
    a: &DMatrix<f64>,
    rows: Range<usize>,
    cols: Range<usize>,
    level: usize,
    params: &CompressionParams,
    oracle: &dyn TreeOracle,
    counter: Option<&FlopCounter>,
    stats: &mut BuildStats,
) -> HNode {
    if rows.is_empty() || cols.is_empty() || is_zero_block(a, &rows, &cols) {
        stats.zero_blocks += 1;
        return HNode {
            rows,
            cols,
            kind: NodeKind::Zero,
        };
    }
    let decision = match oracle.decide(level, &rows, &cols, counter) {
        Decision::Exact => {
            stats.exact += 1;
            if admissible(a, &rows, &cols, params, counter) {
                Decision::Compress
            } else {
                Decision::Split
            }
        }
        d => {
            stats.predicted += 1;
            d
        }
    };
    match decision {
        Decision::Split if rows.len() > 1 || cols.len() > 1 => {
            let [c0, c1, c2, c3] =
                child_ranges(&rows, &cols).map(|(r, c)| build(a, r, c, level + 1, params, oracle, counter, stats));
            HNode {
                rows,
                cols,
                kind: NodeKind::Internal(Box::new([c0, c1, c2, c3])),
            }
        }
        Decision::Leaf(node) => node,
        _ => compress_block(a, &rows, &cols, params, counter),
    }
}

impl HNode {
    pub fn is_leaf(&self) -> bool {
        !matches!(self.kind, NodeKind::Internal(_))
    }

    pub fn rank(&self) -> usize {
        match &self.kind {
            NodeKind::LowRank(l) => l.sigma.len(),
            _ => 0,
        }
    }

    pub fn children(&self) -> Option<&[HNode; 4]> {
        match &self.kind {
            NodeKind::Internal(c) => Some(c),
            _ => None,
        }
    }

    /// Pre-order traversal with levels.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(usize, &'a HNode)) {
        fn go<'a>(n: &'a HNode, level: usize, f: &mut impl FnMut(usize, &'a HNode)) {
            f(level, n);
            if let Some(c) = n.children() {
                for child in c.iter() {
                    go(child, level + 1, f);
                }
            }
        }
        go(self, 0, f);
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, node| n += node.is_leaf() as usize);
        n
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        self.visit(&mut |l, _| d = d.max(l));
        d
    }

    pub fn max_rank(&self) -> usize {
        let mut r = 0;
        self.visit(&mut |_, n| r = r.max(n.rank()));
        r
    }

    /// Number of stored factor entries.
    pub fn storage(&self) -> usize {
        let mut s = 0;
        self.visit(&mut |_, n| {
            if let NodeKind::LowRank(l) = &n.kind {
                s += l.u.len() + l.v.len();
            }
        });
        s
    }

    /// Flops of one matvec with `s` right-hand sides.
    pub fn matvec_flops(&self, s: usize) -> u64 {
        let mut f = 0u64;
        self.visit(&mut |_, n| {
            if let NodeKind::LowRank(l) = &n.kind {
                f += 2 * (l.sigma.len() * (n.rows.len() + n.cols.len()) * s) as u64;
            }
        });
        f
    }

    pub fn decompress(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.end, self.cols.end);
        self.visit(&mut |_, n| {
            if let NodeKind::LowRank(l) = &n.kind {
                out.view_mut((n.rows.start, n.cols.start), (n.rows.len(), n.cols.len()))
                    .copy_from(&(&l.u * &l.v));
            }
        });
        out.view((self.rows.start, self.cols.start), (self.rows.len(), self.cols.len()))
            .into_owned()
    }

    /// `y[rows] += H x[cols]` with global indexing.
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        match &self.kind {
            NodeKind::Zero => {}
            NodeKind::Internal(c) => c.iter().for_each(|ch| ch.matvec_acc(x, y)),
            NodeKind::LowRank(l) => {
                let k = l.sigma.len();
                let xs = &x[self.cols.clone()];
                let mut t = vec![0.0; k];
                for (i, ti) in t.iter_mut().enumerate() {
                    *ti = l.v.row(i).iter().zip(xs).map(|(a, b)| a * b).sum();
                }
                for (j, &tj) in t.iter().enumerate() {
                    let col = l.u.column(j);
                    for (yi, &uij) in y[self.rows.clone()].iter_mut().zip(col.iter()) {
                        *yi += uij * tj;
                    }
                }
            }
        }
    }

    /// `y[cols] += H^T x[rows]` with global indexing.
    pub fn matvec_transpose_acc(&self, x: &[f64], y: &mut [f64]) {
        match &self.kind {
            NodeKind::Zero => {}
            NodeKind::Internal(c) => c.iter().for_each(|ch| ch.matvec_transpose_acc(x, y)),
            NodeKind::LowRank(l) => {
                let k = l.sigma.len();
                let xs = &x[self.rows.clone()];
                let mut t = vec![0.0; k];
                for (j, tj) in t.iter_mut().enumerate() {
                    *tj = l.u.column(j).iter().zip(xs).map(|(a, b)| a * b).sum();
                }
                let ys = &mut y[self.cols.clone()];
                for (i, &ti) in t.iter().enumerate() {
                    for (yj, &vij) in ys.iter_mut().zip(l.v.row(i).iter()) {
                        *yj += vij * ti;
                    }
                }
            }
        }
    }

    /// Structure summary, one line per node in pre-order:
    /// `level kind row_start row_end col_start col_end rank`.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# hmatrix {}x{} nodes={} leaves={} depth={} max_rank={} storage={}",
            self.rows.len(),
            self.cols.len(),
            self.node_count(),
            self.leaf_count(),
            self.depth(),
            self.max_rank(),
            self.storage()
        )
        .unwrap();
        self.visit(&mut |level, n| {
            let kind = match n.kind {
                NodeKind::Internal(_) => "internal",
                NodeKind::Zero => "zero",
                NodeKind::LowRank(_) => "lowrank",
            };
            writeln!(
                s,
                "{level} {kind} {} {} {} {} {}",
                n.rows.start,
                n.rows.end,
                n.cols.start,
                n.cols.end,
                n.rank()
            )
            .unwrap();
        });
        s
    }
}

fn check_dims(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!("{what}: expected {expected}, got {got}")));
    }
    Ok(())
}

/// `Y = H X` for a block of right-hand sides; flops go to the H-matvec phase.
pub fn hmatvec(node: &HNode, x: &DMatrix<f64>, counter: Option<&FlopCounter>) -> Result<DMatrix<f64>> {
    check_dims(node.cols.len(), x.nrows(), "hmatvec input rows")?;
    let mut y = DMatrix::zeros(node.rows.len(), x.ncols());
    let mut xg = vec![0.0; node.cols.end];
    let mut yg = vec![0.0; node.rows.end];
    for j in 0..x.ncols() {
        xg[node.cols.clone()].copy_from_slice(x.column(j).as_slice());
        yg.iter_mut().for_each(|v| *v = 0.0);
        node.matvec_acc(&xg, &mut yg);
        y.column_mut(j).copy_from_slice(&yg[node.rows.clone()]);
    }
    if let Some(c) = counter {
        c.add(Phase::MatvecH, node.matvec_flops(x.ncols()));
    }
    Ok(y)
}

/// `Y = H^T X`; same cost model as [`hmatvec`].
pub fn hmatvec_transpose(node: &HNode, x: &DMatrix<f64>, counter: Option<&FlopCounter>) -> Result<DMatrix<f64>> {
    check_dims(node.rows.len(), x.nrows(), "hmatvec_transpose input rows")?;
    let mut y = DMatrix::zeros(node.cols.len(), x.ncols());
    let mut xg = vec![0.0; node.rows.end];
    let mut yg = vec![0.0; node.cols.end];
    for j in 0..x.ncols() {
        xg[node.rows.clone()].copy_from_slice(x.column(j).as_slice());
        yg.iter_mut().for_each(|v| *v = 0.0);
        node.matvec_transpose_acc(&xg, &mut yg);
        y.column_mut(j).copy_from_slice(&yg[node.cols.clone()]);
    }
    if let Some(c) = counter {
        c.add(Phase::MatvecH, node.matvec_flops(x.ncols()));
    }
    Ok(y)
}

/// Vector form of [`hmatvec`] for a root node.
pub fn hmatvec_vec(node: &HNode, x: &[f64], counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
    check_dims(node.cols.len(), x.len(), "hmatvec input length")?;
    let mut y = vec![0.0; node.rows.end];
    if node.cols.start == 0 {
        node.matvec_acc(x, &mut y);
    } else {
        let mut xg = vec![0.0; node.cols.end];
        xg[node.cols.clone()].copy_from_slice(x);
        node.matvec_acc(&xg, &mut y);
    }
    if let Some(c) = counter {
        c.add(Phase::MatvecH, node.matvec_flops(1));
    }
    Ok(y[node.rows.clone()].to_vec())
}

/// Vector form of [`hmatvec_transpose`].
pub fn hmatvec_transpose_vec(node: &HNode, x: &[f64], counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
    check_dims(node.rows.len(), x.len(), "hmatvec_transpose input length")?;
    let mut xg = vec![0.0; node.rows.end];
    xg[node.rows.clone()].copy_from_slice(x);
    let mut y = vec![0.0; node.cols.end];
    node.matvec_transpose_acc(&xg, &mut y);
    if let Some(c) = counter {
        c.add(Phase::MatvecH, node.matvec_flops(1));
    }
    Ok(y[node.cols.clone()].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_affine_parts;
    use crate::opttest::{factor_gram, optimal_test_matrix};
    use crate::problems::ProblemSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn with_spectrum(m: usize, n: usize, sigma: &[f64], seed: u64) -> DMatrix<f64> {
        let k = sigma.len();
        let q1 = random(m, k, seed).qr().q();
        let q2 = random(n, k, seed + 1).qr().q();
        let mut us = q1;
        for j in 0..k {
            us.column_mut(j).scale_mut(sigma[j]);
        }
        us * q2.transpose()
    }

    fn ej2d_w(eps: f64, nx: usize, ny: usize) -> DMatrix<f64> {
        let p = ProblemSpec::ej2d(nx, ny, 1);
        let f = assemble_affine_parts(&p, &p.trial_space().unwrap(), &p.test_space().unwrap()).unwrap();
        let fac = factor_gram(&f.gram).unwrap();
        optimal_test_matrix(&f, &fac, eps).unwrap()
    }

    /// Sum over leaves of the squared singular values each leaf dropped.
    fn dropped_tail_sq(tree: &HNode, a: &DMatrix<f64>, params: &CompressionParams) -> f64 {
        let mut total = 0.0;
        tree.visit(&mut |_, n| {
            if n.is_leaf() && !n.rows.is_empty() && !n.cols.is_empty() {
                let full = dense_svd(&block(a, &n.rows, &n.cols), None).sigma;
                let tail: f64 = full[n.rank()..].iter().map(|s| s * s).sum();
                let small = n.rows.len().min(n.cols.len()) as f64;
                assert!(
                    tail.sqrt() <= params.delta * small.sqrt() + 1e-14 || n.rank() == params.max_rank,
                    "leaf tail {} exceeds delta sqrt(min dim)",
                    tail.sqrt()
                );
                total += tail;
            }
        });
        total
    }

    #[test]
    fn split_is_ceil_midpoint() {
        assert_eq!(split_range(&(0..5)), (0..3, 3..5));
        assert_eq!(split_range(&(4..8)), (4..6, 6..8));
        assert_eq!(split_range(&(2..3)), (2..3, 3..3));
    }

    #[test]
    fn admissibility_cases() {
        let p = CompressionParams::default();
        let z = DMatrix::zeros(64, 64);
        assert!(admissible(&z, &(0..64), &(0..64), &p, None));
        let r1 = with_spectrum(64, 48, &[2.0], 1);
        assert!(admissible(&r1, &(0..64), &(0..48), &p, None));
        let sig: Vec<f64> = (0..20).map(|i| 1.0 - 0.01 * i as f64).collect();
        let r20 = with_spectrum(64, 48, &sig, 2);
        assert!(!admissible(&r20, &(0..64), &(0..48), &p, None));
        // exactly r+1 values at 2 delta
        let near: Vec<f64> = (0..17).map(|i| if i < 16 { 1.0 } else { 2e-7 }).collect();
        let a = with_spectrum(80, 70, &near, 3);
        assert!(!admissible(&a, &(0..80), &(0..70), &p, None));
        let below: Vec<f64> = (0..17).map(|i| if i < 16 { 1.0 } else { 0.5e-7 }).collect();
        let a = with_spectrum(80, 70, &below, 4);
        assert!(admissible(&a, &(0..80), &(0..70), &p, None));
        // size rule beats spectrum
        let small = CompressionParams {
            max_leaf_size: 32,
            ..p
        };
        assert!(!admissible(&r1, &(0..64), &(0..48), &small, None));
    }

    #[test]
    fn zero_and_rank_one_trees() {
        let p = CompressionParams::default();
        let t = create_tree(&DMatrix::zeros(64, 64), &p, None).unwrap();
        assert_eq!(t.kind, NodeKind::Zero);
        let a = with_spectrum(64, 64, &[3.0], 5);
        let t = create_tree(&a, &p, None).unwrap();
        assert!(t.is_leaf());
        assert_eq!(t.rank(), 1);
        assert!((t.decompress() - &a).norm() < 1e-12);
    }

    #[test]
    fn compress_block_cases() {
        let p = CompressionParams::default();
        let z = DMatrix::zeros(8, 8);
        assert_eq!(compress_block(&z, &(0..8), &(0..8), &p, None).rank(), 0);
        let id = DMatrix::identity(4, 4);
        let leaf = compress_block(&id, &(0..4), &(0..4), &p, None);
        let NodeKind::LowRank(l) = &leaf.kind else { panic!() };
        assert_eq!(l.sigma.len(), 4);
        assert!(l.sigma.iter().all(|s| (s - 1.0).abs() < 1e-14));
        let a = with_spectrum(32, 32, &[5.0, 2.0, 0.5], 6);
        let leaf = compress_block(&a, &(0..32), &(0..32), &p, None);
        assert_eq!(leaf.rank(), 3);
        assert!((leaf.decompress() - &a).amax() < 1e-10);
    }

    #[test]
    fn blockwise_reconstruction() {
        let a = DMatrix::from_fn(10, 9, |i, j| (i as f64 + 1.0) * if j < 5 { 1.0 } else { -2.0 } + j as f64);
        let p = CompressionParams {
            max_leaf_size: 6,
            min_block_size: 2,
            max_rank: 2,
            delta: 1e-10,
        };
        let t = create_tree(&a, &p, None).unwrap();
        assert!(!t.is_leaf());
        let d = t.decompress();
        for ch in t.children().unwrap() {
            let sub = ch.decompress();
            let view = d.view((ch.rows.start, ch.cols.start), (ch.rows.len(), ch.cols.len()));
            assert_eq!(sub, view.into_owned());
        }
        assert!((d - a).amax() < 1e-10);
    }

    #[test]
    fn transpose_leaf_rank_one() {
        let u = DMatrix::from_column_slice(3, 1, &[2.0, 1.0, -1.0]);
        let v = DMatrix::from_row_slice(1, 2, &[0.5, 4.0]);
        let leaf = HNode {
            rows: 0..3,
            cols: 0..2,
            kind: NodeKind::LowRank(LowRank {
                u: u.clone(),
                v: v.clone(),
                sigma: vec![1.0],
            }),
        };
        let y = hmatvec_transpose_vec(&leaf, &[1.0, 0.0, 0.0], None).unwrap();
        assert_eq!(y, vec![1.0, 8.0]);
    }

    #[test]
    fn symmetric_full_rank_transpose() {
        let r = random(12, 12, 8);
        let s = &r + r.transpose();
        let p = CompressionParams {
            max_rank: 12,
            delta: 1e-14,
            max_leaf_size: 6,
            min_block_size: 2,
        };
        let t = create_tree(&s, &p, None).unwrap();
        let x = random(12, 3, 9);
        let a = hmatvec(&t, &x, None).unwrap();
        let b = hmatvec_transpose(&t, &x, None).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn zero_input_zero_output() {
        let a = random(30, 20, 1);
        let t = create_tree(&a, &CompressionParams::default(), None).unwrap();
        let y = hmatvec_vec(&t, &[0.0; 20], None).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(hmatvec_vec(&t, &[0.0; 19], None).is_err());
    }

    #[test]
    fn ej2d_tree_fidelity() {
        let w = ej2d_w(0.1, 26, 10);
        let p = CompressionParams::default();
        let fc = FlopCounter::new();
        let t = create_tree(&w, &p, Some(&fc)).unwrap();
        let d = t.decompress();
        let err = (&d - &w).norm();
        let bound = dropped_tail_sq(&t, &w, &p).sqrt();
        assert!(err <= bound * (1.0 + 1e-6) + 1e-12, "err {err} bound {bound}");
        assert!(err <= 1e-5 * w.norm());
        let x = random(w.ncols(), 20, 4);
        let y = hmatvec(&t, &x, None).unwrap();
        let yd = &w * &x;
        assert!((&y - &yd).norm() <= 1e-5 * yd.norm());
        let yt = hmatvec_transpose(&t, &random(w.nrows(), 20, 5), None).unwrap();
        let ytd = w.transpose() * random(w.nrows(), 20, 5);
        assert!((&yt - &ytd).norm() <= 1e-5 * ytd.norm());
        // matvec against decompressed tree is exact up to roundoff
        assert!((&y - &d * &x).amax() <= 1e-12 * x.amax() * d.norm());
        // every leaf re-checks admissible
        t.visit(&mut |_, n| {
            if n.is_leaf() {
                assert!(admissible(&w, &n.rows, &n.cols, &p, None));
            }
        });
        assert!(fc.get(Phase::Admissibility) > 0);
    }

    #[test]
    fn summary_format() {
        let a = with_spectrum(20, 10, &[1.0], 1);
        let t = create_tree(&a, &CompressionParams::default(), None).unwrap();
        let s = t.summary();
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# hmatrix 20x10"));
        assert_eq!(lines[1], "0 lowrank 0 20 0 10 1");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matvec_identities(m in 5usize..60, n in 5usize..60, rank in 1usize..8, seed in 0u64..1000) {
            let sig: Vec<f64> = (0..rank.min(m).min(n)).map(|i| 0.3f64.powi(i as i32)).collect();
            let a = with_spectrum(m, n, &sig, seed) + random(m, n, seed + 7) * 1e-9;
            let p = CompressionParams { max_rank: 4, delta: 1e-8, max_leaf_size: 16, min_block_size: 3 };
            let t = create_tree(&a, &p, None).unwrap();
            let d = t.decompress();
            let x = random(n, 2, seed + 2);
            let y = hmatvec(&t, &x, None).unwrap();
            prop_assert!((&y - &d * &x).amax() <= 1e-12 * x.amax() * (1.0 + d.norm()));
            let xv: Vec<f64> = x.column(0).iter().copied().collect();
            let yv: Vec<f64> = random(m, 1, seed + 3).column(0).iter().copied().collect();
            let hx = hmatvec_vec(&t, &xv, None).unwrap();
            let hty = hmatvec_transpose_vec(&t, &yv, None).unwrap();
            let lhs: f64 = hx.iter().zip(&yv).map(|(a, b)| a * b).sum();
            let rhs: f64 = xv.iter().zip(&hty).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())) * (1.0 + d.norm()));
            let err = (&d - &a).norm();
            let bound = dropped_tail_sq(&t, &a, &p).sqrt();
            prop_assert!(err <= bound * (1.0 + 1e-6) + 1e-12);
        }
    }
}
