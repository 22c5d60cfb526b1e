//! End-to-end solves: offline assembly of the affine parts and cached optimal
//! test matrices, then online Galerkin, dense Petrov-Galerkin or compressed
//! Petrov-Galerkin solves for a parameter value.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_affine_parts, assemble_load, AffineFormSet, LoadVector};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::hmat::{create_tree_with, BuildStats, CompressionParams, ExactOracle, HNode, TreeOracle};
use crate::krylov::{galerkin_solve_with, gmres, pg_operator, pg_rhs, GmresOptions, SolveReport, TestMatrix};
use crate::opttest::{factor_gram, GramFactorization, OptimalTestParts};
use crate::problems::{error_norms, ErrorReport, ProblemSpec};
use crate::surrogate::{NnOracle, SurrogateMode, SurrogateModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Galerkin,
    PgDense,
    PgHmat,
    PgHmatNn,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::Galerkin, Pipeline::PgDense, Pipeline::PgHmat, Pipeline::PgHmatNn];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "galerkin" => Ok(Pipeline::Galerkin),
            "pg-dense" => Ok(Pipeline::PgDense),
            "pg-hmat" => Ok(Pipeline::PgHmat),
            "pg-hmat-nn" => Ok(Pipeline::PgHmatNn),
            other => Err(Error::Config(format!(
                "unknown pipeline `{other}` (expected galerkin, pg-dense, pg-hmat or pg-hmat-nn)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Galerkin => "galerkin",
            Pipeline::PgDense => "pg-dense",
            Pipeline::PgHmat => "pg-hmat",
            Pipeline::PgHmatNn => "pg-hmat-nn",
        }
    }
}

/// Result of one online solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub pipeline: Pipeline,
    pub mu: f64,
    /// Interior trial coefficients.
    pub x: Vec<f64>,
    /// Full trial coefficients including the lift.
    pub coefficients: Vec<f64>,
    pub report: SolveReport,
    pub tree: Option<HNode>,
    pub build: Option<BuildStats>,
    pub out_of_range: bool,
}

/// Offline data of the Petrov-Galerkin discretization.
#[derive(Debug, Clone)]
pub struct PgSystem {
    pub problem: ProblemSpec,
    pub forms: AffineFormSet,
    pub factor: GramFactorization,
    pub parts: OptimalTestParts,
}

impl PgSystem {
    pub fn new(problem: &ProblemSpec) -> Result<Self> {
        problem.validate()?;
        let forms = assemble_affine_parts(problem, &problem.trial_space()?, &problem.test_space()?)?;
        let factor = factor_gram(&forms.gram)?;
        let parts = OptimalTestParts::new(&forms, &factor)?;
        Ok(Self {
            problem: problem.clone(),
            forms,
            factor,
            parts,
        })
    }

    pub fn trial_dim(&self) -> usize {
        self.forms.trial_dim()
    }

    pub fn test_dim(&self) -> usize {
        self.forms.test_dim()
    }

    pub fn load(&self, mu: f64) -> Result<LoadVector> {
        assemble_load(&self.problem, &self.forms, mu)
    }

    /// `W_mu` from the cached parts; the combination is booked as assembly.
    pub fn test_matrix(&self, mu: f64, counter: Option<&FlopCounter>) -> Result<DMatrix<f64>> {
        self.problem.check_param(mu)?;
        Ok(self.parts.evaluate(mu, counter))
    }

    /// Forms `W_mu` and compresses it, consulting `oracle` per block.
    pub fn compress(
        &self,
        mu: f64,
        params: &CompressionParams,
        oracle: &dyn TreeOracle,
        counter: Option<&FlopCounter>,
    ) -> Result<(HNode, BuildStats)> {
        let w = self.test_matrix(mu, counter)?;
        create_tree_with(&w, params, oracle, counter)
    }

    fn solve_reduced(
        &self,
        pipeline: Pipeline,
        mu: f64,
        w: TestMatrix<'_>,
        opts: &GmresOptions,
        fc: &FlopCounter,
    ) -> Result<(Vec<f64>, Vec<f64>, SolveReport, bool)> {
        let load = self.load(mu)?;
        let b = self.forms.evaluate_counted(mu, fc)?;
        let op = pg_operator(&b, w)?;
        let rhs = pg_rhs(&load.values, w, Some(fc))?;
        let (x, mut report) = gmres(&op, &rhs, None, opts, Some(fc))?;
        report.label = pipeline.name().into();
        let coefficients = self.forms.full_coefficients(&x, &load.lift);
        Ok((x, coefficients, report, load.out_of_range))
    }

    /// Dense reduced system `B^T W x = W^T L` with `W` from the cached parts.
    pub fn solve_dense(&self, mu: f64, opts: &GmresOptions, counter: Option<&FlopCounter>) -> Result<Solution> {
        let local = FlopCounter::new();
        let fc = counter.unwrap_or(&local);
        let before = fc.snapshot();
        let w = self.test_matrix(mu, Some(fc))?;
        let (x, coefficients, mut report, out_of_range) =
            self.solve_reduced(Pipeline::PgDense, mu, TestMatrix::Dense(&w), opts, fc)?;
        report.set_flops(&fc.snapshot().since(&before));
        Ok(Solution {
            pipeline: Pipeline::PgDense,
            mu,
            x,
            coefficients,
            report,
            tree: None,
            build: None,
            out_of_range,
        })
    }

    /// Solve with an already compressed test matrix. Flops of the
    /// compression itself are not included unless they went to the same counter
    /// between `before` and now; callers that compress first should pass the
    /// snapshot taken before compression.
    pub fn solve_with_tree(
        &self,
        pipeline: Pipeline,
        mu: f64,
        tree: HNode,
        build: Option<BuildStats>,
        opts: &GmresOptions,
        fc: &FlopCounter,
        before: &crate::flops::FlopSnapshot,
    ) -> Result<Solution> {
        if tree.rows.len() != self.test_dim() || tree.cols.len() != self.trial_dim() {
            return Err(Error::DimensionMismatch(format!(
                "tree is {}x{}, system is {}x{}",
                tree.rows.len(),
                tree.cols.len(),
                self.test_dim(),
                self.trial_dim()
            )));
        }
        let (x, coefficients, mut report, out_of_range) =
            self.solve_reduced(pipeline, mu, TestMatrix::Hierarchical(&tree), opts, fc)?;
        report.set_flops(&fc.snapshot().since(before));
        Ok(Solution {
            pipeline,
            mu,
            x,
            coefficients,
            report,
            tree: Some(tree),
            build,
            out_of_range,
        })
    }

    /// Compress with `oracle`, then solve; the report covers both stages.
    pub fn solve_hmat_with(
        &self,
        pipeline: Pipeline,
        mu: f64,
        params: &CompressionParams,
        oracle: &dyn TreeOracle,
        opts: &GmresOptions,
        counter: Option<&FlopCounter>,
    ) -> Result<Solution> {
        let local = FlopCounter::new();
        let fc = counter.unwrap_or(&local);
        let before = fc.snapshot();
        let (tree, stats) = self.compress(mu, params, oracle, Some(fc))?;
        self.solve_with_tree(pipeline, mu, tree, Some(stats), opts, fc, &before)
    }

    /// Compressed solve with exact admissibility.
    pub fn solve_hmat(
        &self,
        mu: f64,
        params: &CompressionParams,
        opts: &GmresOptions,
        counter: Option<&FlopCounter>,
    ) -> Result<Solution> {
        self.solve_hmat_with(Pipeline::PgHmat, mu, params, &ExactOracle, opts, counter)
    }

    /// Compressed solve guided by a trained surrogate. D-only models replace
    /// the spectral admissibility test; full-UDV models supply the whole tree.
    pub fn solve_hmat_nn(
        &self,
        mu: f64,
        params: &CompressionParams,
        model: &SurrogateModel,
        opts: &GmresOptions,
        counter: Option<&FlopCounter>,
    ) -> Result<Solution> {
        model.check_compatible(self.problem.kind, (self.test_dim(), self.trial_dim()), params)?;
        self.problem.check_param(mu)?;
        let local = FlopCounter::new();
        let fc = counter.unwrap_or(&local);
        let before = fc.snapshot();
        match model.mode {
            SurrogateMode::DOnly => {
                let oracle = NnOracle {
                    predictor: model,
                    mu,
                    params: *params,
                };
                let (tree, stats) = self.compress(mu, params, &oracle, Some(fc))?;
                self.solve_with_tree(Pipeline::PgHmatNn, mu, tree, Some(stats), opts, fc, &before)
            }
            SurrogateMode::FullUdv => {
                let tree = model.build_tree(mu, Some(fc))?;
                let stats = BuildStats {
                    predicted: tree.node_count(),
                    ..BuildStats::default()
                };
                self.solve_with_tree(Pipeline::PgHmatNn, mu, tree, Some(stats), opts, fc, &before)
            }
        }
    }

    pub fn errors(&self, mu: f64, coefficients: &[f64]) -> Result<ErrorReport> {
        let p = &self.problem;
        error_norms(coefficients, &self.forms.trial, &|pt| p.exact(mu, pt))
    }
}

/// Galerkin baseline with its own square forms.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub problem: ProblemSpec,
    pub forms: AffineFormSet,
}

impl GalerkinSystem {
    pub fn new(problem: &ProblemSpec) -> Result<Self> {
        let g = problem.galerkin();
        g.validate_common()?;
        let forms = assemble_affine_parts(&g, &g.trial_space()?, &g.test_space()?)?;
        Ok(Self { problem: g, forms })
    }

    pub fn solve(&self, mu: f64, opts: &GmresOptions, counter: Option<&FlopCounter>) -> Result<Solution> {
        let s = galerkin_solve_with(&self.problem, &self.forms, mu, opts, counter)?;
        Ok(Solution {
            pipeline: Pipeline::Galerkin,
            mu,
            out_of_range: !self.problem.in_range(mu),
            x: s.x,
            coefficients: s.coefficients,
            report: s.report,
            tree: None,
            build: None,
        })
    }

    pub fn errors(&self, mu: f64, coefficients: &[f64]) -> Result<ErrorReport> {
        let p = &self.problem;
        error_norms(coefficients, &self.forms.trial, &|pt| p.exact(mu, pt))
    }
}
