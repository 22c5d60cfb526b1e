use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, FlopSnapshot, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresOptions {
    /// Relative residual target `||b - A x|| / ||b||`.
    pub tol: f64,
    /// Defaults to the system size when `None`.
    pub max_iter: Option<usize>,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub label: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_relative_residual: f64,
    /// Relative residual after each iteration, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub flops: std::collections::BTreeMap<String, u64>,
    pub total_flops: u64,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn set_flops(&mut self, snap: &FlopSnapshot) {
        self.flops = snap.to_map();
        self.total_flops = snap.total();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Full GMRES without restarts. The Arnoldi basis is built with modified
/// Gram-Schmidt plus one re-orthogonalization pass; the Hessenberg
/// least-squares problem is updated with Givens rotations.
///
/// The operator's flops are booked by the operator itself; orthogonalization
/// and rotation work goes to [`Phase::GmresOrthogonalization`]. The report
/// carries the counter's increase during the solve.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &GmresOptions,
    counter: Option<&FlopCounter>,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.ncols();
    if a.nrows() != n {
        return Err(Error::DimensionMismatch(format!("GMRES needs a square operator, got {}x{}", a.nrows(), n)));
    }
    if b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::DimensionMismatch(format!("right-hand side or guess length differs from {n}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("GMRES tolerance must be positive".into()));
    }
    let start = Instant::now();
    let local = FlopCounter::new();
    let fc = counter.unwrap_or(&local);
    let before = fc.snapshot();
    let orth = |f: u64| fc.add(Phase::GmresOrthogonalization, f);
    let max_iter = opts.max_iter.unwrap_or(n).max(1);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);

    let bnorm = norm(b);
    let finish = |x: Vec<f64>, iterations: usize, converged: bool, history: Vec<f64>| {
        let mut report = SolveReport {
            label: a.label().to_string(),
            iterations,
            converged,
            final_relative_residual: *history.last().unwrap_or(&0.0),
            residual_history: history,
            flops: Default::default(),
            total_flops: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        report.set_flops(&fc.snapshot().since(&before));
        (x, report)
    };
    if bnorm == 0.0 {
        return Ok(finish(vec![0.0; n], 0, true, vec![0.0]));
    }

    let mut r = b.to_vec();
    if x.iter().any(|&v| v != 0.0) {
        let ax = a.apply(&x, Some(fc));
        for (ri, ai) in r.iter_mut().zip(ax) {
            *ri -= ai;
        }
        orth(n as u64);
    }
    let beta = norm(&r);
    orth(2 * n as u64);
    let mut history = vec![beta / bnorm];
    if beta / bnorm <= opts.tol {
        return Ok(finish(x, 0, true, history));
    }

    let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
    orth(n as u64);
    // columns of the Hessenberg matrix, rotated in place
    let mut h: Vec<Vec<f64>> = Vec::new();
    let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut g = vec![beta];
    let mut converged = false;
    let mut iterations = 0;

    for j in 0..max_iter {
        let mut w = a.apply(&basis[j], Some(fc));
        let mut col = vec![0.0; j + 2];
        for _pass in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= c * vk;
                }
                col[i] += c;
            }
            orth(4 * (n * (j + 1)) as u64 + (j + 1) as u64);
        }
        let hnext = norm(&w);
        orth(2 * n as u64);
        col[j + 1] = hnext;

        for i in 0..j {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let rho = col[j].hypot(col[j + 1]);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
        col[j] = rho;
        col[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        cs.push(c);
        sn.push(s);
        orth(6 * j as u64 + 12);
        h.push(col);
        iterations = j + 1;

        let rel = g[j + 1].abs() / bnorm;
        history.push(rel);
        let breakdown = hnext <= 1e-14 * rho.abs().max(f64::MIN_POSITIVE);
        if rel <= opts.tol || breakdown {
            converged = rel <= opts.tol || breakdown;
            break;
        }
        basis.push(w.iter().map(|v| v / hnext).collect());
        orth(n as u64);
    }

    // back substitution on the rotated Hessenberg system
    let k = iterations;
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = g[i];
        for l in i + 1..k {
            s -= h[l][i] * y[l];
        }
        y[i] = s / h[i][i];
    }
    orth((k * k + k) as u64);
    for (yi, v) in y.iter().zip(&basis) {
        for (xk, vk) in x.iter_mut().zip(v) {
            *xk += yi * vk;
        }
    }
    orth(2 * (n * k) as u64);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Instability("GMRES produced non-finite iterates".into()));
    }
    Ok(finish(x, iterations, converged, history))
}
