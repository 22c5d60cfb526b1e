//! Optimal test functions: `W = G^{-1} B` through a banded Cholesky factor of
//! the Gram matrix, and the dense mixed-system solver used as a reference.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::assembly::{AffineFormSet, LoadVector, SparseMatrix};
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, Phase};
use crate::problems::Theta;

/// Lower Cholesky factor of a banded SPD matrix, stored row by row as the
/// `bw + 1` entries `L[i, i - bw ..= i]`.
#[derive(Debug, Clone)]
pub struct GramFactorization {
    dim: usize,
    bw: usize,
    band: Vec<f64>,
}

/// Cholesky factorization without pivoting, exploiting the bandwidth of `G`.
pub fn factor_gram(g: &SparseMatrix) -> Result<GramFactorization> {
    if g.rows() != g.cols() {
        return Err(Error::DimensionMismatch(format!("Gram matrix is {}x{}", g.rows(), g.cols())));
    }
    let n = g.rows();
    let bw = g.bandwidth();
    let w = bw + 1;
    let mut band = vec![0.0; n * w];
    for i in 0..n {
        let (c, v) = g.row(i);
        for (&j, &x) in c.iter().zip(v) {
            if j <= i {
                band[i * w + (j + bw - i)] = x;
            }
        }
    }
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        for j in lo..=i {
            let klo = lo.max(j.saturating_sub(bw));
            let mut s = band[i * w + (j + bw - i)];
            for k in klo..j {
                s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::NotSpd {
                        row: i,
                        pivot: s,
                        cause: "Gram matrix lost positive definiteness; for the H1-seminorm the test space needs a zero boundary constraint".into(),
                    });
                }
                band[i * w + bw] = s.sqrt();
            } else {
                band[i * w + (j + bw - i)] = s / band[j * w + bw];
            }
        }
    }
    Ok(GramFactorization { dim: n, bw, band })
}

impl GramFactorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `L[i, j]` of the lower factor.
    pub fn factor_entry(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.bw {
            0.0
        } else {
            self.band[i * (self.bw + 1) + (j + self.bw - i)]
        }
    }

    pub fn to_dense_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.factor_entry(i, j))
    }

    pub fn min_pivot(&self) -> f64 {
        (0..self.dim).map(|i| self.factor_entry(i, i)).fold(f64::INFINITY, f64::min)
    }

    /// Flops of one forward plus one backward substitution.
    pub fn solve_flops(&self) -> u64 {
        let mut f = 0u64;
        for i in 0..self.dim {
            let k = i.min(self.bw) as u64;
            f += 2 * k + 1;
        }
        2 * f
    }

    /// Overwrites `b` with `G^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.dim, "Gram solve dimension mismatch");
        let (n, bw, w) = (self.dim, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = b[i];
            for k in lo..i {
                s -= row[k + bw - i] * b[k];
            }
            b[i] = s / row[bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= self.band[k * w + (i + bw - k)] * b[k];
            }
            b[i] = s / self.band[i * w + bw];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// `G^{-1} B` for a sparse right-hand side, column by column.
    pub fn solve_sparse(&self, b: &SparseMatrix, counter: Option<&FlopCounter>) -> Result<DMatrix<f64>> {
        if b.rows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, Gram has {}",
                b.rows(),
                self.dim
            )));
        }
        let bt = b.transpose();
        let mut out = DMatrix::zeros(self.dim, b.cols());
        let mut col = vec![0.0; self.dim];
        for j in 0..b.cols() {
            col.iter_mut().for_each(|c| *c = 0.0);
            let (rows, vals) = bt.row(j);
            for (&i, &v) in rows.iter().zip(vals) {
                col[i] = v;
            }
            self.solve_in_place(&mut col);
            out.column_mut(j).copy_from_slice(&col);
        }
        if let Some(c) = counter {
            c.add(Phase::Assembly, self.solve_flops() * b.cols() as u64);
        }
        Ok(out)
    }
}

/// Cached per-part solves `W_k = G^{-1} B_k`, so `W_mu = sum_k theta_k(mu) W_k`.
#[derive(Debug, Clone)]
pub struct OptimalTestParts {
    parts: Vec<DMatrix<f64>>,
    theta: Vec<Theta>,
}

impl OptimalTestParts {
    pub fn new(forms: &AffineFormSet, fac: &GramFactorization) -> Result<Self> {
        let parts = forms
            .parts
            .iter()
            .map(|p| fac.solve_sparse(p, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            parts,
            theta: forms.theta.clone(),
        })
    }

    pub fn parts(&self) -> &[DMatrix<f64>] {
        &self.parts
    }

    pub fn rows(&self) -> usize {
        self.parts[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.parts[0].ncols()
    }

    /// Cached linear combination; books `2 m n` flops per part to assembly.
    pub fn evaluate(&self, mu: f64, counter: Option<&FlopCounter>) -> DMatrix<f64> {
        let mut w = DMatrix::<f64>::zeros(self.rows(), self.cols());
        for (t, p) in self.theta.iter().zip(&self.parts) {
            w += p * t.eval(mu);
        }
        if let Some(c) = counter {
            c.add(Phase::Assembly, 2 * (self.rows() * self.cols() * self.parts.len()) as u64);
        }
        w
    }
}

/// `W_mu` by a direct multi-right-hand-side solve of `G W = B_mu`.
pub fn optimal_test_matrix(forms: &AffineFormSet, fac: &GramFactorization, mu: f64) -> Result<DMatrix<f64>> {
    if forms.test_dim() != fac.dim() {
        return Err(Error::DimensionMismatch(format!(
            "forms have {} test dofs, factorization {}",
            forms.test_dim(),
            fac.dim()
        )));
    }
    fac.solve_sparse(&forms.evaluate(mu)?, None)
}

/// Solution of the saddle-point system `[[G, -B], [B^T, 0]] [r; x] = [-L; 0]`.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub x: Vec<f64>,
    pub r: Vec<f64>,
}

pub const MIXED_SIZE_LIMIT: usize = 5000;

/// Dense LU solve of the mixed system; a reference for the reduced solvers.
pub fn mixed_solve_oracle(forms: &AffineFormSet, mu: f64, load: &LoadVector) -> Result<MixedSolution> {
    mixed_solve_dense(&forms.gram, &forms.evaluate(mu)?, &load.values)
}

pub fn mixed_solve_dense(gram: &SparseMatrix, b: &SparseMatrix, l: &[f64]) -> Result<MixedSolution> {
    let (m, n) = (b.rows(), b.cols());
    if gram.rows() != m || l.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "Gram {}x{}, B {}x{}, load {}",
            gram.rows(),
            gram.cols(),
            m,
            n,
            l.len()
        )));
    }
    if m + n > MIXED_SIZE_LIMIT {
        return Err(Error::Infeasible(format!(
            "dense mixed system of size {} exceeds {}",
            m + n,
            MIXED_SIZE_LIMIT
        )));
    }
    let mut k = DMatrix::<f64>::zeros(m + n, m + n);
    for i in 0..m {
        let (c, v) = gram.row(i);
        for (&j, &x) in c.iter().zip(v) {
            k[(i, j)] = x;
        }
        let (c, v) = b.row(i);
        for (&j, &x) in c.iter().zip(v) {
            k[(i, m + j)] = -x;
            k[(m + j, i)] = x;
        }
    }
    let mut rhs = DVector::<f64>::zeros(m + n);
    for i in 0..m {
        rhs[i] = -l[i];
    }
    let lu = k.lu();
    let sol = lu.solve(&rhs).ok_or_else(|| {
        Error::Instability("block system is singular; the test space is presumably too small for the trial space".into())
    })?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability("non-finite solution of the block system".into()));
    }
    Ok(MixedSolution {
        r: sol.rows(0, m).iter().copied().collect(),
        x: sol.rows(m, n).iter().copied().collect(),
    })
}

const DENSE_MAGIC: &[u8; 8] = b"PGSTABW1";

/// Writes a dense matrix as magic, `u64` rows, `u64` cols, then row-major
/// little-endian `f64` values.
pub fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    buf.extend_from_slice(DENSE_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 || &buf[..8] != DENSE_MAGIC {
        return Err(Error::Format(format!("{} is not a dense matrix dump", path.display())));
    }
    let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    if buf.len() != 24 + 8 * rows * cols {
        return Err(Error::Format(format!("{}: truncated payload", path.display())));
    }
    let vals: Vec<f64> = buf[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}
