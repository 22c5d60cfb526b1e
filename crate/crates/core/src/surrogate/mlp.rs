//! Small dense feed-forward networks for scalar-input regression.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Stop once the mean squared error on standardized targets drops below this.
    pub target_loss: f64,
    /// Ridge weight of the closed-form output-layer refit, relative to the
    /// mean diagonal of the feature Gram matrix.
    pub ridge: f64,
    /// Loss is recorded every `log_every` epochs.
    pub log_every: usize,
    pub seed: u64,
    /// D-only schedules keep blocks up to this quadtree level; deeper blocks
    /// are left to the exact test.
    #[serde(default)]
    pub schedule_depth: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 5000,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            target_loss: 1e-7,
            ridge: 1e-10,
            log_every: 100,
            seed: 7,
            schedule_depth: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.log_every == 0 {
            return Err(Error::Config("learning rate and log interval must be positive".into()));
        }
        Ok(())
    }
}

/// Weights are stored per layer as `out x in` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
    /// Loss after the closed-form refit of the output layer.
    pub final_loss: f64,
}

impl Mlp {
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let lim = (6.0 / fan_in as f64).sqrt().min(2.5);
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-lim..lim)));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.random_range(-1.0..1.0)));
        }
        Self {
            sizes: sizes.to_vec(),
            activation: Activation::Tanh,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn feature_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 2]
    }

    /// Activations of every layer for a batch stored column-wise.
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Last hidden layer for one input.
    pub fn features(&self, x: &[f64]) -> DVector<f64> {
        let mut h = DVector::from_column_slice(x);
        for (w, b) in self.weights.iter().zip(&self.biases).take(self.weights.len() - 1) {
            h = (w * h + b).map(f64::tanh);
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        let h = self.features(x);
        self.weights.last().unwrap() * h + self.biases.last().unwrap()
    }

    pub fn feature_flops(&self) -> u64 {
        let mut f = 0;
        for w in self.sizes.windows(2).take(self.sizes.len() - 2) {
            f += 2 * (w[0] * w[1]) as u64 + 2 * w[1] as u64;
        }
        f
    }

    pub fn inference_flops(&self) -> u64 {
        let n = self.sizes.len();
        self.feature_flops() + 2 * (self.sizes[n - 2] * self.sizes[n - 1]) as u64
    }

    /// Full-batch Adam on the mean squared error, then a ridge refit of the
    /// output layer on the trained features. Inputs are columns of `x`
    /// (`in x N`), targets columns of `t` (`out x N`).
    pub fn train(x: &DMatrix<f64>, t: &DMatrix<f64>, cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
        cfg.validate()?;
        if x.ncols() != t.ncols() || x.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} targets",
                x.ncols(),
                t.ncols()
            )));
        }
        let mut sizes = vec![x.nrows()];
        sizes.extend(&cfg.hidden);
        sizes.push(t.nrows());
        let mut net = Mlp::new(&sizes, cfg.seed);
        let n = x.ncols() as f64;
        let scale = 2.0 / (n * t.nrows() as f64);
        let nl = net.weights.len();
        let mut mw: Vec<DMatrix<f64>> = net.weights.iter().map(|w| w.map(|_| 0.0)).collect();
        let mut vw = mw.clone();
        let mut mb: Vec<DVector<f64>> = net.biases.iter().map(|b| b.map(|_| 0.0)).collect();
        let mut vb = mb.clone();
        let mut history = Vec::new();
        let mut epochs_run = 0;

        for epoch in 0..cfg.epochs {
            let acts = net.forward_all(x);
            let mut delta = &acts[nl] - t;
            let loss = delta.norm_squared() / (n * t.nrows() as f64);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss is {loss} at epoch {epoch}")));
            }
            if epoch % cfg.log_every == 0 {
                history.push(loss);
            }
            if loss < cfg.target_loss {
                break;
            }
            epochs_run = epoch + 1;
            delta *= scale;
            let step = epoch as i32 + 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for l in (0..nl).rev() {
                let gw = &delta * acts[l].transpose();
                let gb = delta.column_sum();
                if l > 0 {
                    let mut back = net.weights[l].transpose() * &delta;
                    back.zip_apply(&acts[l], |d, a| *d *= 1.0 - a * a);
                    delta = back;
                }
                adam(&mut net.weights[l], &gw, &mut mw[l], &mut vw[l], cfg, c1, c2);
                adam(&mut net.biases[l], &gb, &mut mb[l], &mut vb[l], cfg, c1, c2);
            }
        }

        net.refit_output(x, t, cfg.ridge)?;
        let out = net.forward_all(x).pop().unwrap();
        let final_loss = (out - t).norm_squared() / (n * t.nrows() as f64);
        history.push(final_loss);
        Ok((
            net,
            TrainReport {
                loss_history: history,
                epochs_run,
                final_loss,
            },
        ))
    }

    /// Least-squares output layer on the current features.
    pub fn refit_output(&mut self, x: &DMatrix<f64>, t: &DMatrix<f64>, ridge: f64) -> Result<()> {
        let feats = self.feature_matrix(x);
        let coef = ridge_solve(&feats, &t.transpose(), ridge)?;
        let k = self.feature_dim();
        let nl = self.weights.len();
        self.weights[nl - 1] = coef.rows(0, k).transpose();
        self.biases[nl - 1] = coef.row(k).transpose();
        Ok(())
    }

    /// `N x (features + 1)` design matrix with a trailing column of ones.
    pub fn feature_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let acts = self.forward_all(x);
        let h = &acts[acts.len() - 2];
        let mut f = DMatrix::from_element(x.ncols(), h.nrows() + 1, 1.0);
        f.view_mut((0, 0), (x.ncols(), h.nrows())).copy_from(&h.transpose());
        f
    }
}

fn adam<D: nalgebra::Dim, C: nalgebra::Dim, S, S2>(
    p: &mut nalgebra::Matrix<f64, D, C, S>,
    g: &nalgebra::Matrix<f64, D, C, S2>,
    m: &mut nalgebra::Matrix<f64, D, C, S>,
    v: &mut nalgebra::Matrix<f64, D, C, S>,
    cfg: &TrainConfig,
    c1: f64,
    c2: f64,
) where
    S: nalgebra::StorageMut<f64, D, C>,
    S2: nalgebra::Storage<f64, D, C>,
{
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-12);
    }
}

/// Minimizer of `||F c - y||^2 + lambda ||c||^2`, with `lambda` relative to the
/// mean diagonal of `F^T F`.
pub fn ridge_solve(f: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let mut g = f.transpose() * f;
    let k = g.nrows();
    let lambda = ridge * (g.trace() / k as f64).max(f64::MIN_POSITIVE);
    for i in 0..k {
        g[(i, i)] += lambda;
    }
    let rhs = f.transpose() * y;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Instability("ridge normal equations are not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(1, n, |_, j| -1.0 + 2.0 * j as f64 / (n - 1) as f64)
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let x = grid(12);
        let t = DMatrix::from_fn(2, 12, |i, _| if i == 0 { 3.5 } else { -0.25 });
        let cfg = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let (net, _) = Mlp::train(&x, &t, &cfg).unwrap();
        for xv in [-1.0, -0.3, 0.55, 1.0] {
            let y = net.forward(&[xv]);
            assert!((y[0] - 3.5).abs() <= 1e-3 * 3.5);
            assert!((y[1] + 0.25).abs() <= 1e-3 * 0.25);
        }
    }

    #[test]
    fn smooth_function_fit_and_loss_trace() {
        let x = grid(25);
        let t = x.map(|v| (2.0 * v).sin() + 0.5 * v * v);
        let cfg = TrainConfig {
            epochs: 2000,
            target_loss: 0.0,
            ..TrainConfig::default()
        };
        let (net, rep) = Mlp::train(&x, &t, &cfg).unwrap();
        assert!(rep.final_loss < 1e-6, "loss {}", rep.final_loss);
        let y = net.forward(&[0.37])[0];
        let exact = (0.74f64).sin() + 0.5 * 0.37 * 0.37;
        assert!((y - exact).abs() < 1e-2);
        for w in rep.loss_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", rep.loss_history);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let x = grid(9);
        let t = x.map(|v| v.exp());
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let a = Mlp::train(&x, &t, &cfg).unwrap().0;
        let b = Mlp::train(&x, &t, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn ridge_recovers_linear_map() {
        let f = DMatrix::from_fn(10, 3, |i, j| ((i + 1) as f64).powi(j as i32) / 10.0);
        let c = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let y = &f * &c;
        let got = ridge_solve(&f, &y, 1e-14).unwrap();
        assert!((got - c).norm() < 1e-6);
    }
}
