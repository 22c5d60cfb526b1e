//! Truncated SVD: randomized subspace iteration with a residual check and a
//! dense fallback, plus the flop conventions used for both paths.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::flops::{FlopCounter, Phase};

/// Leading singular triplets: `A ~ U diag(sigma) Vt`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub vt: DMatrix<f64>,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * &self.vt
    }

    fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.sigma.len());
        self.sigma.truncate(k);
        self.u = self.u.columns(0, k).into_owned();
        self.vt = self.vt.rows(0, k).into_owned();
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SvdOptions {
    pub oversample: usize,
    pub power_iterations: usize,
    /// Extra power iterations tried before falling back to the dense SVD.
    pub extra_iterations: usize,
    /// Ritz residuals must satisfy `||A v_i - sigma_i u_i|| <= max(rtol sigma_1, atol)`.
    pub residual_rtol: f64,
    pub residual_atol: f64,
    /// Triplets with `sigma_i` below this value are not checked.
    pub check_floor: f64,
    pub seed: u64,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            oversample: 4,
            power_iterations: 2,
            extra_iterations: 2,
            residual_rtol: 1e-12,
            residual_atol: 0.0,
            check_floor: 0.0,
            seed: 0x5eed_0f_5bd,
        }
    }
}

/// Flop estimate of a dense SVD with both factors, `6 M N^2 + 11 N^3`.
pub fn dense_svd_flops(m: usize, n: usize) -> u64 {
    let (big, small) = (m.max(n) as u64, m.min(n) as u64);
    6 * big * small * small + 11 * small * small * small
}

fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

fn qr_flops(m: usize, n: usize) -> u64 {
    4 * (m * n * n) as u64
}

/// Estimated cost of the randomized path with sketch width `l`.
pub fn randomized_svd_flops(m: usize, n: usize, l: usize, k: usize, power: usize) -> u64 {
    let passes = 2 + 2 * power as u64;
    passes * matmul_flops(m, n, l)
        + (1 + power as u64) * (qr_flops(m, l) + qr_flops(n, l))
        + dense_svd_flops(l, n)
        + matmul_flops(m, l, k)
        + matmul_flops(m, n, k)
}

/// Full SVD with singular values sorted non-increasing.
pub fn dense_svd(a: &DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) -> Svd {
    let (m, n) = a.shape();
    if let Some((c, p)) = counter {
        c.add(p, dense_svd_flops(m, n));
    }
    if m == 0 || n == 0 {
        return Svd {
            u: DMatrix::zeros(m, 0),
            sigma: vec![],
            vt: DMatrix::zeros(0, n),
        };
    }
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let k = order.len();
    let mut uo = DMatrix::zeros(m, k);
    let mut vo = DMatrix::zeros(k, n);
    let mut so = Vec::with_capacity(k);
    for (new, &old) in order.iter().enumerate() {
        uo.set_column(new, &u.column(old));
        vo.set_row(new, &vt.row(old));
        so.push(s[old]);
    }
    Svd { u: uo, sigma: so, vt: vo }
}

fn orthonormalize(y: DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) -> DMatrix<f64> {
    if let Some((c, p)) = counter {
        c.add(p, qr_flops(y.nrows(), y.ncols()));
    }
    y.qr().q()
}

/// Range sketch `A ~ Q B` with `Q` orthonormal (`m x l`) and `B = Q^T A`.
#[derive(Debug, Clone)]
pub struct Sketch {
    pub q: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Sketch {
    /// Gaussian sketch of width `l` followed by `power` subspace iterations.
    pub fn new(a: &DMatrix<f64>, l: usize, power: usize, seed: u64, counter: Option<(&FlopCounter, Phase)>) -> Self {
        let (m, n) = a.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((m as u64) << 32) ^ n as u64);
        let omega = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
        if let Some((c, p)) = counter {
            c.add(p, matmul_flops(m, n, l));
        }
        let mut q = orthonormalize(a * omega, counter);
        for _ in 0..power {
            q = Self::power_step(a, &q, counter);
        }
        let b = Self::project(a, &q, counter);
        Self { q, b }
    }

    fn power_step(a: &DMatrix<f64>, q: &DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) -> DMatrix<f64> {
        let (m, n) = a.shape();
        let l = q.ncols();
        if let Some((c, p)) = counter {
            c.add(p, 2 * matmul_flops(m, n, l));
        }
        let z = orthonormalize(a.tr_mul(q), counter);
        orthonormalize(a * z, counter)
    }

    fn project(a: &DMatrix<f64>, q: &DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) -> DMatrix<f64> {
        if let Some((c, p)) = counter {
            c.add(p, matmul_flops(a.nrows(), a.ncols(), q.ncols()));
        }
        q.tr_mul(a)
    }

    /// One more subspace iteration.
    pub fn refine(&mut self, a: &DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) {
        self.q = Self::power_step(a, &self.q, counter);
        self.b = Self::project(a, &self.q, counter);
    }

    /// Ritz triplets of `Q B`; the values are lower bounds of the true
    /// singular values of `A`.
    pub fn ritz(&self, counter: Option<(&FlopCounter, Phase)>) -> Svd {
        let small = dense_svd(&self.b, counter);
        if let Some((c, p)) = counter {
            c.add(p, matmul_flops(self.q.nrows(), self.q.ncols(), small.u.ncols()));
        }
        Svd {
            u: &self.q * small.u,
            sigma: small.sigma,
            vt: small.vt,
        }
    }

    /// `||A - Q B||_F`, an upper bound on the spectral projection error.
    pub fn tail_frobenius(&self, a: &DMatrix<f64>, counter: Option<(&FlopCounter, Phase)>) -> f64 {
        if let Some((c, p)) = counter {
            c.add(p, matmul_flops(a.nrows(), self.q.ncols(), a.ncols()) + 3 * a.len() as u64);
        }
        (a - &self.q * &self.b).norm()
    }
}

/// `||A v_i - sigma_i u_i||` for each Ritz triplet.
fn ritz_residuals(a: &DMatrix<f64>, s: &Svd, counter: Option<(&FlopCounter, Phase)>) -> Vec<f64> {
    let (m, n) = a.shape();
    let k = s.rank();
    if let Some((c, p)) = counter {
        c.add(p, matmul_flops(m, n, k) + 4 * (m * k) as u64);
    }
    let av = a * s.vt.transpose();
    (0..k)
        .map(|i| (av.column(i) - s.u.column(i) * s.sigma[i]).norm())
        .collect()
}

/// Leading `k` singular triplets of `a`.
pub fn truncated_svd(a: &DMatrix<f64>, k: usize, counter: Option<(&FlopCounter, Phase)>) -> Svd {
    truncated_svd_with(a, k, &SvdOptions::default(), counter)
}

pub fn truncated_svd_with(a: &DMatrix<f64>, k: usize, opts: &SvdOptions, counter: Option<(&FlopCounter, Phase)>) -> Svd {
    let (m, n) = a.shape();
    let kmax = m.min(n);
    let k = k.min(kmax);
    let l = (k + opts.oversample).min(kmax);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(m, 0),
            sigma: vec![],
            vt: DMatrix::zeros(0, n),
        };
    }
    if l == kmax || dense_svd_flops(m, n) <= randomized_svd_flops(m, n, l, k, opts.power_iterations) {
        return dense_svd(a, counter).truncate(k);
    }
    let mut sketch = Sketch::new(a, l, opts.power_iterations, opts.seed, counter);
    for attempt in 0..=opts.extra_iterations {
        if attempt > 0 {
            sketch.refine(a, counter);
        }
        let s = sketch.ritz(counter).truncate(k);
        let tol = (opts.residual_rtol * s.sigma[0]).max(opts.residual_atol);
        let res = ritz_residuals(a, &s, counter);
        if res
            .iter()
            .zip(&s.sigma)
            .all(|(r, &sig)| sig < opts.check_floor || *r <= tol)
        {
            return s;
        }
    }
    dense_svd(a, counter).truncate(k)
}
