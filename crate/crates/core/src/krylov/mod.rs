//! Krylov solves of the reduced Petrov-Galerkin system `B^T W x = W^T L`
//! (with `W` dense or compressed) and of the plain Galerkin baseline.

mod gmres;

pub use gmres::{gmres, GmresOptions, SolveReport};

use nalgebra::DMatrix;

use crate::assembly::{assemble_affine_parts, assemble_load, AffineFormSet, SparseMatrix};
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use crate::hmat::{hmatvec_transpose_vec, hmatvec_vec, HNode};
use crate::problems::ProblemSpec;

/// A linear map applied to vectors. Implementations book their own flops to
/// the counter passed in.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64>;
    fn label(&self) -> &str {
        "operator"
    }
}

/// Dense matrix operator; flops are booked to `phase`.
pub struct DenseOperator<'a> {
    pub matrix: &'a DMatrix<f64>,
    pub phase: Phase,
}

impl LinearOperator for DenseOperator<'_> {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64> {
        if let Some(c) = counter {
            c.add(self.phase, 2 * self.matrix.len() as u64);
        }
        let y = self.matrix * nalgebra::DVector::from_column_slice(x);
        y.as_slice().to_vec()
    }

    fn label(&self) -> &str {
        "dense"
    }
}

/// Sparse matrix operator booked to the sparse-matvec phase.
pub struct SparseOperator<'a> {
    pub matrix: &'a SparseMatrix,
}

impl LinearOperator for SparseOperator<'_> {
    fn nrows(&self) -> usize {
        self.matrix.rows()
    }

    fn ncols(&self) -> usize {
        self.matrix.cols()
    }

    fn apply(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64> {
        self.matrix.mul_vec(x, counter.map(|c| (c, Phase::MatvecSparse)))
    }

    fn label(&self) -> &str {
        "galerkin"
    }
}

/// The optimal-test coefficient matrix, dense or hierarchical. Products with
/// either form are booked to the H-matvec phase.
#[derive(Clone, Copy)]
pub enum TestMatrix<'a> {
    Dense(&'a DMatrix<f64>),
    Hierarchical(&'a HNode),
}

impl TestMatrix<'_> {
    pub fn rows(&self) -> usize {
        match self {
            TestMatrix::Dense(w) => w.nrows(),
            TestMatrix::Hierarchical(h) => h.rows.len(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            TestMatrix::Dense(w) => w.ncols(),
            TestMatrix::Hierarchical(h) => h.cols.len(),
        }
    }

    pub fn mul(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64> {
        match self {
            TestMatrix::Dense(w) => DenseOperator {
                matrix: w,
                phase: Phase::MatvecH,
            }
            .apply(x, counter),
            TestMatrix::Hierarchical(h) => hmatvec_vec(h, x, counter).expect("dimensions checked at construction"),
        }
    }

    pub fn mul_transpose(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64> {
        match self {
            TestMatrix::Dense(w) => {
                if let Some(c) = counter {
                    c.add(Phase::MatvecH, 2 * w.len() as u64);
                }
                w.tr_mul(&nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
            }
            TestMatrix::Hierarchical(h) => {
                hmatvec_transpose_vec(h, x, counter).expect("dimensions checked at construction")
            }
        }
    }
}

/// `x -> B^T (W x)`, an `n x n` operator.
pub struct PgOperator<'a> {
    b: &'a SparseMatrix,
    w: TestMatrix<'a>,
    label: String,
}

pub fn pg_operator<'a>(b: &'a SparseMatrix, w: TestMatrix<'a>) -> Result<PgOperator<'a>> {
    if w.rows() != b.rows() || w.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "B is {}x{}, test matrix is {}x{}",
            b.rows(),
            b.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let label = match w {
        TestMatrix::Dense(_) => "pg-dense",
        TestMatrix::Hierarchical(_) => "pg-hmat",
    };
    Ok(PgOperator {
        b,
        w,
        label: label.into(),
    })
}

impl LinearOperator for PgOperator<'_> {
    fn nrows(&self) -> usize {
        self.b.cols()
    }

    fn ncols(&self) -> usize {
        self.b.cols()
    }

    fn apply(&self, x: &[f64], counter: Option<&FlopCounter>) -> Vec<f64> {
        let y = self.w.mul(x, counter);
        self.b.mul_transpose_vec(&y, counter.map(|c| (c, Phase::MatvecSparse)))
    }

    fn label(&self) -> &str {
        &self.label
    }
}

/// `(L^T W)^T = W^T L`.
pub fn pg_rhs(load: &[f64], w: TestMatrix<'_>, counter: Option<&FlopCounter>) -> Result<Vec<f64>> {
    if load.len() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "load has {} entries, test matrix {} rows",
            load.len(),
            w.rows()
        )));
    }
    Ok(w.mul_transpose(load, counter))
}

/// Solution of the equal-space Galerkin discretization.
#[derive(Debug, Clone)]
pub struct GalerkinSolution {
    pub forms: AffineFormSet,
    /// Interior coefficients.
    pub x: Vec<f64>,
    /// Full coefficients including the lift.
    pub coefficients: Vec<f64>,
    pub report: SolveReport,
}

/// GMRES on the square Galerkin matrix with trial = test space. The online
/// flops (affine evaluation of `B_mu`, sparse products, orthogonalization)
/// are booked to `counter` and summarized in the report.
pub fn galerkin_solve(
    problem: &ProblemSpec,
    mu: f64,
    opts: &GmresOptions,
    counter: Option<&FlopCounter>,
) -> Result<GalerkinSolution> {
    let g = problem.galerkin();
    g.validate_common()?;
    let (trial, test) = (g.trial_space()?, g.test_space()?);
    let forms = assemble_affine_parts(&g, &trial, &test)?;
    galerkin_solve_with(&g, &forms, mu, opts, counter)
}

/// As [`galerkin_solve`] with pre-assembled square forms.
pub fn galerkin_solve_with(
    problem: &ProblemSpec,
    forms: &AffineFormSet,
    mu: f64,
    opts: &GmresOptions,
    counter: Option<&FlopCounter>,
) -> Result<GalerkinSolution> {
    if forms.trial_dim() != forms.test_dim() {
        return Err(Error::InvalidArgument("Galerkin solve needs equal trial and test spaces".into()));
    }
    let local = FlopCounter::new();
    let fc = counter.unwrap_or(&local);
    let before = fc.snapshot();
    let load = assemble_load(problem, forms, mu)?;
    let b = forms.evaluate_counted(mu, fc)?;
    let (x, mut report) = gmres(&SparseOperator { matrix: &b }, &load.values, None, opts, Some(fc))?;
    report.set_flops(&fc.snapshot().since(&before));
    let coefficients = forms.full_coefficients(&x, &load.lift);
    Ok(GalerkinSolution {
        forms: forms.clone(),
        x,
        coefficients,
        report,
    })
}
