//! Learned singular values (and optionally factors) of quadtree blocks of the
//! optimal test matrix, used to skip the spectral admissibility test.
//!
//! Two modes: `DOnly` predicts the leading `r+1` singular values of every
//! scheduled block and drives the split/compress decision, leaves are still
//! compressed by truncated SVD. `FullUdv` fixes the tree structure at training
//! time and predicts leaf factors directly, so no SVD runs online.

pub mod mlp;

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use crate::hmat::svd::dense_svd;
use crate::hmat::{
    child_ranges, create_tree_with, structural_admissibility, CompressionParams, Decision, ExactOracle, HNode,
    LowRank, NodeKind, TreeOracle,
};
use crate::opttest::OptimalTestParts;
use crate::problems::ProblemKind;
use mlp::{ridge_solve, Mlp, TrainConfig, TrainReport};

/// Floor applied before taking `log10` of singular values.
pub const SIGMA_FLOOR: f64 = 1e-16;
const MODEL_VERSION: u32 = 1;
const DATASET_MAGIC: &[u8; 8] = b"PGSTABD1";
/// Largest dataset, in bytes, that [`generate_dataset`] agrees to build.
pub const DATASET_BYTE_LIMIT: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateMode {
    DOnly,
    FullUdv,
}

impl SurrogateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d-only" | "d" | "sigma" => Ok(Self::DOnly),
            "full-udv" | "udv" | "full" => Ok(Self::FullUdv),
            other => Err(Error::Config(format!("unknown surrogate mode `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DOnly => "d-only",
            Self::FullUdv => "full-udv",
        }
    }

    pub fn default_for(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Helmholtz => Self::FullUdv,
            _ => Self::DOnly,
        }
    }
}

/// Affine map of the parameter (or its `log10`) onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamScaling {
    pub log: bool,
    pub lo: f64,
    pub hi: f64,
}

impl ParamScaling {
    pub fn for_problem(kind: ProblemKind, lo: f64, hi: f64) -> Self {
        Self {
            log: kind != ProblemKind::Helmholtz,
            lo,
            hi,
        }
    }

    pub fn scale(&self, mu: f64) -> f64 {
        let t = |v: f64| if self.log { v.log10() } else { v };
        let (a, b) = (t(self.lo), t(self.hi));
        if b == a {
            return 0.0;
        }
        2.0 * (t(mu) - a) / (b - a) - 1.0
    }

    pub fn contains(&self, mu: f64) -> bool {
        let slack = 1e-12 * self.hi.abs().max(self.lo.abs());
        mu >= self.lo - slack && mu <= self.hi + slack
    }
}

/// `n` parameter values spanning `[lo, hi]`, log-spaced when `log` is set.
pub fn parameter_grid(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            if log {
                10f64.powf(lo.log10() + t * (hi.log10() - lo.log10()))
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledBlock {
    /// 1-based.
    pub id: usize,
    pub level: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Candidate quadtree blocks of a matrix with a fixed shape, with ids
/// `1..=len` assigned in (level, row start, column start) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub shape: (usize, usize),
    pub blocks: Vec<ScheduledBlock>,
}

impl BlockSchedule {
    fn from_set(shape: (usize, usize), set: BTreeSet<(usize, usize, usize, usize, usize)>) -> Self {
        let blocks = set
            .into_iter()
            .enumerate()
            .map(|(i, (level, r0, c0, r1, c1))| ScheduledBlock {
                id: i + 1,
                level,
                rows: r0..r1,
                cols: c0..c1,
            })
            .collect();
        Self { shape, blocks }
    }

    /// Every quadtree node of an `rows x cols` matrix down to `depth`.
    pub fn full(rows: usize, cols: usize, depth: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("empty matrix has no blocks".into()));
        }
        let mut set = BTreeSet::new();
        let mut frontier = vec![(0..rows, 0..cols)];
        for level in 0..=depth {
            let mut next = Vec::new();
            for (r, c) in frontier {
                if r.is_empty() || c.is_empty() {
                    continue;
                }
                set.insert((level, r.start, c.start, r.end, c.end));
                if r.len() > 1 || c.len() > 1 {
                    next.extend(child_ranges(&r, &c));
                }
            }
            if set.len() > 1 << 22 {
                return Err(Error::Infeasible(format!("schedule of depth {depth} exceeds {} blocks", 1 << 22)));
            }
            frontier = next;
        }
        Ok(Self::from_set((rows, cols), set))
    }

    /// Blocks on which the exact tree build of any of `matrices` reaches the
    /// spectral admissibility test.
    pub fn active(matrices: &[DMatrix<f64>], params: &CompressionParams) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one matrix".into()))?;
        let rec = Recorder {
            params: *params,
            seen: RefCell::new(BTreeSet::new()),
        };
        for w in matrices {
            if w.shape() != first.shape() {
                return Err(Error::DimensionMismatch("matrices differ in shape".into()));
            }
            create_tree_with(w, params, &rec, None)?;
        }
        Ok(Self::from_set(first.shape(), rec.seen.into_inner()))
    }

    /// The blocks up to `depth`, renumbered.
    pub fn truncated(&self, depth: usize) -> Self {
        let set = self
            .blocks
            .iter()
            .filter(|b| b.level <= depth)
            .map(|b| (b.level, b.rows.start, b.cols.start, b.rows.end, b.cols.end))
            .collect();
        Self::from_set(self.shape, set)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&ScheduledBlock> {
        id.checked_sub(1)
            .and_then(|i| self.blocks.get(i))
            .ok_or(Error::UnknownBlock(id))
    }

    pub fn lookup(&self, rows: &Range<usize>, cols: &Range<usize>) -> Option<&ScheduledBlock> {
        self.blocks.iter().find(|b| &b.rows == rows && &b.cols == cols)
    }

    pub fn max_level(&self) -> usize {
        self.blocks.iter().map(|b| b.level).max().unwrap_or(0)
    }

    /// FNV-1a over shape and block ranges.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: usize| {
            for b in (v as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.shape.0);
        eat(self.shape.1);
        for b in &self.blocks {
            for v in [b.level, b.rows.start, b.rows.end, b.cols.start, b.cols.end] {
                eat(v);
            }
        }
        h
    }
}

struct Recorder {
    params: CompressionParams,
    seen: RefCell<BTreeSet<(usize, usize, usize, usize, usize)>>,
}

impl TreeOracle for Recorder {
    fn decide(&self, level: usize, rows: &Range<usize>, cols: &Range<usize>, _: Option<&FlopCounter>) -> Decision {
        if structural_admissibility(rows, cols, &self.params).is_none() {
            self.seen
                .borrow_mut()
                .insert((level, rows.start, cols.start, rows.end, cols.end));
        }
        Decision::Exact
    }
}

fn block_of(w: &DMatrix<f64>, rows: &Range<usize>, cols: &Range<usize>) -> DMatrix<f64> {
    w.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

/// Leading `k` singular values of a block, zero-padded.
fn leading_sigma(b: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let s = dense_svd(b, None);
    (0..k).map(|i| s.sigma.get(i).copied().unwrap_or(0.0)).collect()
}

/// Per-sample, per-block leading singular values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateDataset {
    pub mus: Vec<f64>,
    /// Each record holds `rank + 1` values.
    pub rank: usize,
    pub schedule: BlockSchedule,
    /// `sigma[sample][block]`.
    pub sigma: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    mus: Vec<f64>,
    rank: usize,
    schedule: BlockSchedule,
    schedule_hash: u64,
}

/// Materializes `W_mu` for every parameter and records the leading `rank + 1`
/// singular values of every scheduled block.
pub fn generate_dataset(
    parts: &OptimalTestParts,
    schedule: &BlockSchedule,
    mus: &[f64],
    rank: usize,
) -> Result<SurrogateDataset> {
    if schedule.shape != (parts.rows(), parts.cols()) {
        return Err(Error::DimensionMismatch(format!(
            "schedule is for {:?}, test matrix is {}x{}",
            schedule.shape,
            parts.rows(),
            parts.cols()
        )));
    }
    let bytes = mus.len() * schedule.len() * (rank + 1) * 8;
    if bytes > DATASET_BYTE_LIMIT {
        return Err(Error::Infeasible(format!(
            "{} samples x {} blocks x {} values need {bytes} bytes (limit {DATASET_BYTE_LIMIT})",
            mus.len(),
            schedule.len(),
            rank + 1
        )));
    }
    let mut sigma = Vec::with_capacity(mus.len());
    for &mu in mus {
        let w = parts.evaluate(mu, None);
        sigma.push(
            schedule
                .blocks
                .iter()
                .map(|b| leading_sigma(&block_of(&w, &b.rows, &b.cols), rank + 1))
                .collect(),
        );
    }
    Ok(SurrogateDataset {
        mus: mus.to_vec(),
        rank,
        schedule: schedule.clone(),
        sigma,
    })
}

impl SurrogateDataset {
    /// Columnar binary file (one column per block and singular-value index,
    /// one row per sample) plus a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let k = self.rank + 1;
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        for v in [self.mus.len(), self.schedule.len(), k] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for b in 0..self.schedule.len() {
            for i in 0..k {
                for s in &self.sigma {
                    buf.extend_from_slice(&s[b][i].to_le_bytes());
                }
            }
        }
        std::fs::write(path, buf)?;
        let side = DatasetSidecar {
            mus: self.mus.clone(),
            rank: self.rank,
            schedule: self.schedule.clone(),
            schedule_hash: self.schedule.hash(),
        };
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: DatasetSidecar = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)?;
        if side.schedule.hash() != side.schedule_hash {
            return Err(Error::Format("dataset schedule hash mismatch".into()));
        }
        let buf = std::fs::read(path)?;
        let word = |i: usize| -> Result<[u8; 8]> {
            buf.get(8 + 8 * i..16 + 8 * i)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| Error::Format("truncated dataset".into()))
        };
        if buf.len() < 8 || &buf[..8] != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file".into()));
        }
        let (t, nb, k) = (
            u64::from_le_bytes(word(0)?) as usize,
            u64::from_le_bytes(word(1)?) as usize,
            u64::from_le_bytes(word(2)?) as usize,
        );
        if t != side.mus.len() || nb != side.schedule.len() || k != side.rank + 1 {
            return Err(Error::Format("dataset header disagrees with sidecar".into()));
        }
        if buf.len() != 32 + 8 * t * nb * k {
            return Err(Error::Format("dataset size disagrees with header".into()));
        }
        let mut sigma = vec![vec![vec![0.0; k]; nb]; t];
        let mut pos = 3;
        for b in 0..nb {
            for i in 0..k {
                for s in sigma.iter_mut() {
                    s[b][i] = f64::from_le_bytes(word(pos)?);
                    pos += 1;
                }
            }
        }
        Ok(Self {
            mus: side.mus,
            rank: side.rank,
            schedule: side.schedule,
            sigma,
        })
    }
}

/// Predicted singular values; `extrapolated` flags a parameter outside the
/// training range.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sigma: Vec<f64>,
    pub extrapolated: bool,
}

/// Linear readout of the block network's last hidden layer producing the
/// left factor `L(mu)` (column-major, `rows x rank`) of a leaf `L(mu) V0`,
/// through `L = mean + components^T z` with `z = weights [h; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorHead {
    pub rank: usize,
    /// `p x (features + 1)`, the last column is the bias.
    pub weights: DMatrix<f64>,
    /// `p x (rows * rank)` principal directions of the training left factors.
    pub components: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Fixed right basis `V0`, `rank x cols` with orthonormal rows.
    pub basis: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockNet {
    pub block: ScheduledBlock,
    pub net: Mlp,
    /// Standardization of the `log10 sigma` targets.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub report: TrainReport,
    pub head: Option<FactorHead>,
}

impl BlockNet {
    fn sigma(&self, x: f64) -> Vec<f64> {
        let y = self.net.forward(&[x]);
        let mut s: Vec<f64> = y
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, sd))| 10f64.powf(m + sd * v).max(0.0))
            .collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }
}

/// Pre-order node of a fixed tree structure. Low-rank leaves refer to a block
/// id of the model's schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StructureNode {
    Internal { rows: Range<usize>, cols: Range<usize> },
    Zero { rows: Range<usize>, cols: Range<usize> },
    Leaf { id: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub version: u32,
    pub problem: ProblemKind,
    pub mode: SurrogateMode,
    pub params: CompressionParams,
    pub scaling: ParamScaling,
    pub training_mus: Vec<f64>,
    pub schedule: BlockSchedule,
    pub schedule_hash: u64,
    pub blocks: Vec<BlockNet>,
    /// Fixed pre-order structure (full-UDV only).
    pub structure: Vec<StructureNode>,
    pub config: TrainConfig,
    #[serde(default)]
    pub holdout: Option<HoldoutReport>,
}

/// Accuracy of a model on parameters it was not trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub mus: Vec<f64>,
    /// Number of singular values compared (those `>= 1e-4 sigma_1`).
    pub compared: usize,
    pub median_rel_error: f64,
    pub p90_rel_error: f64,
    pub max_rel_error: f64,
    /// Per parameter: node agreement between the model's tree and the exact tree.
    pub structure_agreement: Vec<f64>,
}

/// Standardized `log10 sigma` targets, `(r+1) x samples`.
fn log_targets(dataset: &SurrogateDataset, b: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let k = dataset.rank + 1;
    let t = dataset.mus.len();
    let mut y = DMatrix::from_fn(k, t, |i, s| dataset.sigma[s][b][i].max(SIGMA_FLOOR).log10());
    let mut mean = vec![0.0; k];
    let mut std = vec![1.0; k];
    for i in 0..k {
        let row = y.row(i);
        let m = row.mean();
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64;
        mean[i] = m;
        if var.sqrt() > 1e-12 {
            std[i] = var.sqrt();
        }
        for s in 0..t {
            y[(i, s)] = (y[(i, s)] - m) / std[i];
        }
    }
    (y, mean, std)
}

fn train_blocks(dataset: &SurrogateDataset, scaling: &ParamScaling, cfg: &TrainConfig) -> Result<Vec<BlockNet>> {
    if dataset.mus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 parameter samples, got {}",
            dataset.mus.len()
        )));
    }
    let x = DMatrix::from_fn(1, dataset.mus.len(), |_, s| scaling.scale(dataset.mus[s]));
    dataset
        .schedule
        .blocks
        .iter()
        .enumerate()
        .map(|(b, block)| {
            let (y, mean, std) = log_targets(dataset, b);
            let cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(block.id as u64),
                ..cfg.clone()
            };
            let (net, report) = Mlp::train(&x, &y, &cfg)?;
            Ok(BlockNet {
                block: block.clone(),
                net,
                mean,
                std,
                report,
                head: None,
            })
        })
        .collect()
}

impl SurrogateModel {
    /// Trains a model for the optimal test matrices `parts(mu)` on `mus`.
    ///
    /// D-only: the schedule holds the blocks where an exact build at some
    /// training parameter reaches the spectral test. Full-UDV: the structure is
    /// the finest common refinement of the exact trees over `mus`, and every
    /// nonzero leaf gets a network plus a least-squares factor head.
    pub fn fit(
        problem: ProblemKind,
        parts: &OptimalTestParts,
        mode: SurrogateMode,
        mus: &[f64],
        params: &CompressionParams,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(Self::fit_with_dataset(problem, parts, mode, mus, params, cfg)?.0)
    }

    /// [`SurrogateModel::fit`] that also returns the training dataset.
    pub fn fit_with_dataset(
        problem: ProblemKind,
        parts: &OptimalTestParts,
        mode: SurrogateMode,
        mus: &[f64],
        params: &CompressionParams,
        cfg: &TrainConfig,
    ) -> Result<(Self, SurrogateDataset)> {
        params.validate()?;
        if mus.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "training needs at least 2 parameter samples, got {}",
                mus.len()
            )));
        }
        let lo = mus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaling = ParamScaling::for_problem(problem, lo, hi);
        let ws: Vec<DMatrix<f64>> = mus.iter().map(|&mu| parts.evaluate(mu, None)).collect();
        let (schedule, structure) = match mode {
            SurrogateMode::DOnly => {
                let mut s = BlockSchedule::active(&ws, params)?;
                if let Some(d) = cfg.schedule_depth {
                    s = s.truncated(d);
                }
                (s, Vec::new())
            }
            SurrogateMode::FullUdv => common_structure(&ws, params)?,
        };
        let dataset = generate_dataset(parts, &schedule, mus, params.max_rank)?;
        let mut blocks = train_blocks(&dataset, &scaling, cfg)?;
        if mode == SurrogateMode::FullUdv {
            let x = DMatrix::from_fn(1, mus.len(), |_, s| scaling.scale(mus[s]));
            for net in blocks.iter_mut() {
                net.head = Some(fit_factor_head(net, &ws, &x, params, cfg.ridge)?);
            }
        }
        let schedule_hash = schedule.hash();
        let model = Self {
            version: MODEL_VERSION,
            problem,
            mode,
            params: *params,
            scaling,
            training_mus: mus.to_vec(),
            schedule,
            schedule_hash,
            blocks,
            structure,
            config: cfg.clone(),
            holdout: None,
        };
        Ok((model, dataset))
    }

    /// Compares predicted singular values with dense SVDs of every scheduled
    /// block at `mus`, and the model's tree with the exact tree.
    pub fn evaluate_holdout(&self, parts: &OptimalTestParts, mus: &[f64]) -> Result<HoldoutReport> {
        let mut errs = Vec::new();
        let mut agreement = Vec::new();
        for &mu in mus {
            let w = parts.evaluate(mu, None);
            for b in &self.schedule.blocks {
                let exact = leading_sigma(&block_of(&w, &b.rows, &b.cols), self.params.max_rank + 1);
                let pred = self.predict_singular_values(mu, b.id)?.sigma;
                for (p, e) in pred.iter().zip(&exact) {
                    if *e >= 1e-4 * exact[0] && *e > 0.0 {
                        errs.push((p - e).abs() / e);
                    }
                }
            }
            let exact_tree = create_tree_with(&w, &self.params, &ExactOracle, None)?.0;
            let tree = match self.mode {
                SurrogateMode::DOnly => {
                    let oracle = NnOracle {
                        predictor: self,
                        mu,
                        params: self.params,
                    };
                    create_tree_with(&w, &self.params, &oracle, None)?.0
                }
                SurrogateMode::FullUdv => self.build_tree(mu, None)?,
            };
            agreement.push(structure_agreement(&tree, &exact_tree));
        }
        errs.sort_by(|a, b| a.total_cmp(b));
        let q = |f: f64| {
            if errs.is_empty() {
                0.0
            } else {
                errs[((errs.len() - 1) as f64 * f).round() as usize]
            }
        };
        Ok(HoldoutReport {
            mus: mus.to_vec(),
            compared: errs.len(),
            median_rel_error: q(0.5),
            p90_rel_error: q(0.9),
            max_rel_error: errs.last().copied().unwrap_or(0.0),
            structure_agreement: agreement,
        })
    }

    /// Fits networks to an existing dataset (D-only).
    pub fn fit_dataset(
        problem: ProblemKind,
        dataset: &SurrogateDataset,
        params: &CompressionParams,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if dataset.rank != params.max_rank {
            return Err(Error::Config(format!(
                "dataset rank {} differs from compression rank {}",
                dataset.rank, params.max_rank
            )));
        }
        let lo = dataset.mus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = dataset.mus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaling = ParamScaling::for_problem(problem, lo, hi);
        let blocks = train_blocks(dataset, &scaling, cfg)?;
        Ok(Self {
            version: MODEL_VERSION,
            problem,
            mode: SurrogateMode::DOnly,
            params: *params,
            scaling,
            training_mus: dataset.mus.clone(),
            schedule: dataset.schedule.clone(),
            schedule_hash: dataset.schedule.hash(),
            blocks,
            structure: Vec::new(),
            config: cfg.clone(),
            holdout: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", m.version)));
        }
        if m.schedule.hash() != m.schedule_hash || m.blocks.len() != m.schedule.len() {
            return Err(Error::Format("model schedule is inconsistent".into()));
        }
        Ok(m)
    }

    /// Errors unless the model was trained for this problem, matrix shape and
    /// compression parameters.
    pub fn check_compatible(&self, problem: ProblemKind, shape: (usize, usize), params: &CompressionParams) -> Result<()> {
        if self.problem != problem {
            return Err(Error::Config(format!(
                "model was trained for {}, not {}",
                self.problem.name(),
                problem.name()
            )));
        }
        if self.schedule.shape != shape {
            return Err(Error::Config(format!(
                "model expects a {:?} test matrix, got {shape:?}",
                self.schedule.shape
            )));
        }
        if self.params != *params {
            return Err(Error::Config("model was trained with different compression parameters".into()));
        }
        Ok(())
    }

    fn net(&self, block_id: usize) -> Result<&BlockNet> {
        self.schedule.get(block_id)?;
        Ok(&self.blocks[block_id - 1])
    }

    /// Clamped, non-increasing `r+1` singular values of a block.
    pub fn predict_singular_values(&self, mu: f64, block_id: usize) -> Result<Prediction> {
        let net = self.net(block_id)?;
        Ok(Prediction {
            sigma: net.sigma(self.scaling.scale(mu)),
            extrapolated: !self.scaling.contains(mu),
        })
    }

    /// Predicted `(U, sigma, V)` of a full-UDV leaf, `U` is `rows x k` with
    /// unit columns and `V` is `k x cols`; `sigma` holds the column norms of the
    /// predicted left factor in non-increasing order.
    pub fn predict_factors(&self, mu: f64, block_id: usize) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
        if self.mode != SurrogateMode::FullUdv {
            return Err(Error::ModeMismatch("factor prediction needs a full-udv model".into()));
        }
        let net = self.net(block_id)?;
        let head = net.head.as_ref().ok_or(Error::UnknownBlock(block_id))?;
        let feats = net.net.features(&[self.scaling.scale(mu)]);
        let mut f = DVector::from_element(feats.len() + 1, 1.0);
        f.rows_mut(0, feats.len()).copy_from(&feats);
        let z = &head.weights * f;
        let out = &head.mean + head.components.tr_mul(&z);
        let (m, k) = (net.block.rows.len(), head.rank);
        let left = DMatrix::from_column_slice(m, k, out.as_slice());
        let mut order: Vec<(usize, f64)> = (0..k).map(|j| (j, left.column(j).norm())).collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut u = DMatrix::zeros(m, k);
        let mut v = DMatrix::zeros(k, head.basis.ncols());
        let mut sigma = Vec::with_capacity(k);
        for (i, &(j, s)) in order.iter().enumerate() {
            if s > 0.0 {
                u.set_column(i, &(left.column(j) / s));
            }
            v.set_row(i, &head.basis.row(j));
            sigma.push(s);
        }
        Ok((u, sigma, v))
    }

    fn factor_flops(&self, net: &BlockNet) -> u64 {
        let (m, n) = (net.block.rows.len() as u64, net.block.cols.len() as u64);
        let Some(h) = net.head.as_ref() else {
            return net.net.feature_flops();
        };
        let k = h.rank as u64;
        // features, readout, expansion, column norms and scaling of U, scaling of V
        net.net.feature_flops() + 2 * (h.weights.len() + h.components.len()) as u64 + 3 * m * k + k * n
    }

    /// Builds the fixed-structure tree from predicted factors (full-UDV).
    /// Network evaluation is booked as assembly of the compressed test matrix;
    /// no SVD is computed.
    pub fn build_tree(&self, mu: f64, counter: Option<&FlopCounter>) -> Result<HNode> {
        if self.mode != SurrogateMode::FullUdv || self.structure.is_empty() {
            return Err(Error::ModeMismatch("fixed-structure trees need a full-udv model".into()));
        }
        let mut pos = 0;
        let root = self.build_node(mu, &mut pos, counter)?;
        if pos != self.structure.len() {
            return Err(Error::Format("trailing structure nodes".into()));
        }
        Ok(root)
    }

    fn build_node(&self, mu: f64, pos: &mut usize, counter: Option<&FlopCounter>) -> Result<HNode> {
        let node = self
            .structure
            .get(*pos)
            .ok_or_else(|| Error::Format("truncated structure".into()))?;
        *pos += 1;
        Ok(match node {
            StructureNode::Internal { rows, cols } => {
                let mut ch = Vec::with_capacity(4);
                for _ in 0..4 {
                    ch.push(self.build_node(mu, pos, counter)?);
                }
                HNode {
                    rows: rows.clone(),
                    cols: cols.clone(),
                    kind: NodeKind::Internal(Box::new(ch.try_into().unwrap())),
                }
            }
            StructureNode::Zero { rows, cols } => HNode {
                rows: rows.clone(),
                cols: cols.clone(),
                kind: NodeKind::Zero,
            },
            StructureNode::Leaf { id } => {
                let (u, sigma, mut v) = self.predict_factors(mu, *id)?;
                for (i, s) in sigma.iter().enumerate() {
                    v.row_mut(i).scale_mut(*s);
                }
                let net = self.net(*id)?;
                if let Some(c) = counter {
                    c.add(Phase::Assembly, self.factor_flops(net));
                }
                HNode {
                    rows: net.block.rows.clone(),
                    cols: net.block.cols.clone(),
                    kind: NodeKind::LowRank(LowRank { u, v, sigma }),
                }
            }
        })
    }
}

/// Node set of a tree keyed by ranges, with `true` for internal nodes.
fn node_map(t: &HNode) -> std::collections::BTreeMap<(usize, usize, usize, usize), bool> {
    let mut m = std::collections::BTreeMap::new();
    t.visit(&mut |_, n| {
        m.insert((n.rows.start, n.rows.end, n.cols.start, n.cols.end), !n.is_leaf());
    });
    m
}

/// Fraction of the union of both trees' nodes that appear in both with the
/// same leaf/internal status.
pub fn structure_agreement(a: &HNode, b: &HNode) -> f64 {
    let (ma, mb) = (node_map(a), node_map(b));
    let union: BTreeSet<_> = ma.keys().chain(mb.keys()).collect();
    let agree = union.iter().filter(|k| ma.get(k).is_some() && ma.get(k) == mb.get(k)).count();
    agree as f64 / union.len() as f64
}

/// Finest common refinement of the exact trees of `ws`: a block is split when
/// any tree splits it. Leaves that are zero in every matrix, or whose leading
/// singular value is below `delta` throughout, become zero leaves; the others
/// get rank `max_s #{sigma >= delta}` and a schedule entry.
fn common_structure(ws: &[DMatrix<f64>], params: &CompressionParams) -> Result<(BlockSchedule, Vec<StructureNode>)> {
    let trees: Vec<HNode> = ws
        .iter()
        .map(|w| Ok(create_tree_with(w, params, &ExactOracle, None)?.0))
        .collect::<Result<_>>()?;
    let (m, n) = ws[0].shape();
    let mut pre = Vec::new();
    refine(&trees.iter().map(Some).collect::<Vec<_>>(), 0..m, 0..n, 0, &mut pre);

    let mut set = BTreeSet::new();
    for (level, r, c, internal) in &pre {
        if !internal {
            set.insert((*level, r.start, c.start, r.end, c.end));
        }
    }
    let mut leaves = BlockSchedule::from_set((m, n), set);
    let mut structure = Vec::with_capacity(pre.len());
    let mut keep = BTreeSet::new();
    for (_, r, c, internal) in &pre {
        if *internal {
            structure.push(StructureNode::Internal {
                rows: r.clone(),
                cols: c.clone(),
            });
            continue;
        }
        let rank = ws
            .iter()
            .map(|w| {
                let b = block_of(w, r, c);
                if b.iter().all(|&v| v == 0.0) {
                    0
                } else {
                    dense_svd(&b, None).sigma.iter().filter(|&&s| s >= params.delta).count()
                }
            })
            .max()
            .unwrap_or(0)
            .min(params.max_rank);
        if rank == 0 {
            structure.push(StructureNode::Zero {
                rows: r.clone(),
                cols: c.clone(),
            });
        } else {
            let id = leaves.lookup(r, c).unwrap().id;
            keep.insert(id);
            structure.push(StructureNode::Leaf { id });
        }
    }
    // renumber so that the schedule holds exactly the low-rank leaves
    let mut renum = std::collections::BTreeMap::new();
    leaves.blocks.retain(|b| keep.contains(&b.id));
    for (i, b) in leaves.blocks.iter_mut().enumerate() {
        renum.insert(b.id, i + 1);
        b.id = i + 1;
    }
    for s in structure.iter_mut() {
        if let StructureNode::Leaf { id } = s {
            *id = renum[id];
        }
    }
    Ok((leaves, structure))
}

fn refine(
    nodes: &[Option<&HNode>],
    rows: Range<usize>,
    cols: Range<usize>,
    level: usize,
    out: &mut Vec<(usize, Range<usize>, Range<usize>, bool)>,
) {
    let split = nodes
        .iter()
        .any(|n| n.is_some_and(|n| matches!(n.kind, NodeKind::Internal(_))));
    out.push((level, rows.clone(), cols.clone(), split));
    if !split {
        return;
    }
    for (i, (r, c)) in child_ranges(&rows, &cols).into_iter().enumerate() {
        let kids: Vec<Option<&HNode>> = nodes
            .iter()
            .map(|n| n.and_then(|n| n.children().map(|ch| &ch[i])))
            .collect();
        refine(&kids, r, c, level + 1, out);
    }
}

/// Fixed right basis of a leaf plus a least-squares readout from the block
/// network's features to the left factor `B(mu) V0^T`.
///
/// `V0` spans the leading right singular space of the training blocks stacked
/// on top of each other, so the left factor depends on the parameter as
/// smoothly as the block itself and no sign or rotation ambiguity of
/// per-sample singular vectors enters the regression.
fn fit_factor_head(
    net: &BlockNet,
    ws: &[DMatrix<f64>],
    x: &DMatrix<f64>,
    params: &CompressionParams,
    ridge: f64,
) -> Result<FactorHead> {
    let (r, c) = (&net.block.rows, &net.block.cols);
    let (m, n) = (r.len(), c.len());
    let mut stacked = DMatrix::zeros(m * ws.len(), n);
    for (s, w) in ws.iter().enumerate() {
        stacked.view_mut((s * m, 0), (m, n)).copy_from(&block_of(w, r, c));
    }
    let svd = dense_svd(&stacked, None);
    let floor = params.delta * (ws.len() as f64).sqrt();
    let k = svd.sigma.iter().filter(|&&v| v >= floor).count().clamp(1, params.max_rank.min(n));
    let v0 = svd.vt.rows(0, k).into_owned();
    let mut y = DMatrix::zeros(ws.len(), m * k);
    for (s, w) in ws.iter().enumerate() {
        let left = block_of(w, r, c) * v0.transpose();
        for (j, v) in left.iter().enumerate() {
            y[(s, j)] = *v;
        }
    }
    // principal directions of the left factors over the training set
    let mean = DVector::from_fn(m * k, |j, _| y.column(j).mean());
    for mut row in y.row_iter_mut() {
        row -= mean.transpose();
    }
    let pca = dense_svd(&y, None);
    let tol = 1e-2 * params.delta;
    let p = pca.sigma.iter().filter(|&&v| v > tol).count().max(1).min(pca.sigma.len());
    let components = pca.vt.rows(0, p).into_owned();
    let z = &y * components.transpose();
    let f = net.net.feature_matrix(x);
    let coef = ridge_solve(&f, &z, ridge)?;
    Ok(FactorHead {
        rank: k,
        weights: coef.transpose(),
        components,
        mean,
        basis: v0,
    })
}

/// Source of predicted leading singular values for quadtree blocks.
pub trait SigmaPredictor {
    /// `None` when the block is unknown to the predictor.
    fn predict_sigma(
        &self,
        mu: f64,
        rows: &Range<usize>,
        cols: &Range<usize>,
        counter: Option<&FlopCounter>,
    ) -> Option<Vec<f64>>;
}

impl SigmaPredictor for SurrogateModel {
    fn predict_sigma(
        &self,
        mu: f64,
        rows: &Range<usize>,
        cols: &Range<usize>,
        counter: Option<&FlopCounter>,
    ) -> Option<Vec<f64>> {
        let b = self.schedule.lookup(rows, cols)?;
        let net = &self.blocks[b.id - 1];
        if let Some(c) = counter {
            c.add(Phase::Admissibility, net.net.inference_flops() + 2 * net.mean.len() as u64);
        }
        Some(net.sigma(self.scaling.scale(mu)))
    }
}

/// Dense SVD of the block of a known matrix; decisions coincide with the exact
/// admissibility test.
pub struct ExactPredictor<'a> {
    pub matrix: &'a DMatrix<f64>,
    pub rank: usize,
}

impl SigmaPredictor for ExactPredictor<'_> {
    fn predict_sigma(
        &self,
        _: f64,
        rows: &Range<usize>,
        cols: &Range<usize>,
        counter: Option<&FlopCounter>,
    ) -> Option<Vec<f64>> {
        let s = dense_svd(&block_of(self.matrix, rows, cols), counter.map(|c| (c, Phase::Admissibility)));
        Some((0..=self.rank).map(|i| s.sigma.get(i).copied().unwrap_or(0.0)).collect())
    }
}

/// Tree oracle deciding `sigma_{r+1} < delta` from predicted singular values;
/// blocks unknown to the predictor fall back to the exact test.
pub struct NnOracle<'a> {
    pub predictor: &'a dyn SigmaPredictor,
    pub mu: f64,
    pub params: CompressionParams,
}

impl TreeOracle for NnOracle<'_> {
    fn decide(&self, _: usize, rows: &Range<usize>, cols: &Range<usize>, counter: Option<&FlopCounter>) -> Decision {
        match structural_admissibility(rows, cols, &self.params) {
            Some(true) => return Decision::Compress,
            Some(false) => return Decision::Split,
            None => {}
        }
        match self.predictor.predict_sigma(self.mu, rows, cols, counter) {
            Some(s) if s[self.params.max_rank] < self.params.delta => Decision::Compress,
            Some(_) => Decision::Split,
            None => Decision::Exact,
        }
    }
}
