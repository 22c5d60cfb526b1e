//! Run configuration: a flat `key = value` text format, one setting per line,
//! `#` starts a comment. Every key is optional. Parameters are dimensionless
//! (`epsilon` is the diffusion coefficient, `kappa` the wave number); `mesh`
//! counts elements per direction as `NX` or `NXxNY`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assembly::InnerProduct;
use crate::bspline::Continuity;
use crate::error::{Error, Result};
use crate::hmat::CompressionParams;
use crate::krylov::GmresOptions;
use crate::pipeline::Pipeline;
use crate::problems::{ProblemKind, ProblemSpec};
use crate::surrogate::mlp::TrainConfig;
use crate::surrogate::{parameter_grid, SurrogateMode};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "PGSTAB_OUT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    /// epsilon or kappa; defaults per problem.
    pub mu: Option<f64>,
    /// Parameter list of sweeps and benches; defaults per problem.
    pub mus: Option<Vec<f64>>,
    pub mesh: Option<[usize; 2]>,
    pub trial_order: Option<usize>,
    pub test_order: Option<usize>,
    pub test_continuity: Option<Continuity>,
    pub inner_product: Option<InnerProduct>,
    pub inflow_mode: u32,
    pub rank: usize,
    pub delta: f64,
    pub leaf_size: usize,
    pub min_block: usize,
    pub pipeline: Pipeline,
    pub pipelines: Option<Vec<Pipeline>>,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub mode: Option<SurrogateMode>,
    pub depth: Option<usize>,
    pub grid_points: Option<usize>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    /// Indices into the parameter grid withheld from training.
    pub holdout: Option<Vec<usize>>,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    /// Also run every other pipeline and write a flop comparison.
    pub compare: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = CompressionParams::default();
        Self {
            problem: ProblemKind::Ej2d,
            mu: None,
            mus: None,
            mesh: None,
            trial_order: None,
            test_order: None,
            test_continuity: None,
            inner_product: None,
            inflow_mode: 1,
            rank: c.max_rank,
            delta: c.delta,
            leaf_size: c.max_leaf_size,
            min_block: c.min_block_size,
            pipeline: Pipeline::PgHmat,
            pipelines: None,
            tol: GmresOptions::default().tol,
            max_iter: None,
            mode: None,
            depth: None,
            grid_points: None,
            grid_lo: None,
            grid_hi: None,
            holdout: None,
            epochs: t.epochs,
            hidden: t.hidden,
            learning_rate: t.learning_rate,
            seed: t.seed,
            out: PathBuf::from("out"),
            model: None,
            compare: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

pub fn parse_mesh(v: &str) -> Result<[usize; 2]> {
    let parts: Vec<&str> = v.split(['x', 'X', ',']).collect();
    match parts.as_slice() {
        [n] => {
            let n = parse_num("mesh", n)?;
            Ok([n, n])
        }
        [a, b] => Ok([parse_num("mesh", a)?, parse_num("mesh", b)?]),
        _ => Err(Error::Config(format!("`mesh`: expected NX or NXxNY, got `{v}`"))),
    }
}

fn parse_continuity(v: &str) -> Result<Continuity> {
    match v.trim().to_ascii_lowercase().as_str() {
        "c0" => Ok(Continuity::C0),
        "smooth" | "max" => Ok(Continuity::Smooth),
        other => Err(Error::Config(format!("`test-continuity`: expected c0 or smooth, got `{other}`"))),
    }
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "problem" => self.problem = ProblemKind::parse(v)?,
            "epsilon" | "kappa" | "mu" => self.mu = Some(parse_num(key, v)?),
            "mus" => self.mus = Some(parse_list(key, v)?),
            "mesh" => self.mesh = Some(parse_mesh(v)?),
            "orders" => {
                let o: Vec<usize> = parse_list(key, v)?;
                if o.len() != 2 {
                    return Err(Error::Config(format!("`orders`: expected `p,q`, got `{v}`")));
                }
                self.trial_order = Some(o[0]);
                self.test_order = Some(o[1]);
            }
            "trial-order" => self.trial_order = Some(parse_num(key, v)?),
            "test-order" => self.test_order = Some(parse_num(key, v)?),
            "test-continuity" => self.test_continuity = Some(parse_continuity(v)?),
            "inner-product" => self.inner_product = Some(InnerProduct::parse(v)?),
            "inflow-mode" => self.inflow_mode = parse_num(key, v)?,
            "rank" => self.rank = parse_num(key, v)?,
            "delta" => self.delta = parse_num(key, v)?,
            "leaf-size" => self.leaf_size = parse_num(key, v)?,
            "min-block" => self.min_block = parse_num(key, v)?,
            "pipeline" => self.pipeline = Pipeline::parse(v)?,
            "pipelines" => {
                self.pipelines = Some(
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(Pipeline::parse)
                        .collect::<Result<_>>()?,
                )
            }
            "tol" => self.tol = parse_num(key, v)?,
            "max-iter" => self.max_iter = Some(parse_num(key, v)?),
            "mode" => self.mode = Some(SurrogateMode::parse(v)?),
            "depth" => self.depth = Some(parse_num(key, v)?),
            "grid-points" => self.grid_points = Some(parse_num(key, v)?),
            "grid-lo" => self.grid_lo = Some(parse_num(key, v)?),
            "grid-hi" => self.grid_hi = Some(parse_num(key, v)?),
            "holdout" => self.holdout = Some(parse_list(key, v)?),
            "epochs" => self.epochs = parse_num(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "learning-rate" => self.learning_rate = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "model" => self.model = Some(PathBuf::from(v)),
            "compare" => self.compare = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Output directory, honoring the environment override.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(OUT_ENV) {
            if !dir.is_empty() {
                self.out = PathBuf::from(dir);
            }
        }
    }

    pub fn default_mu(&self) -> f64 {
        match self.problem {
            ProblemKind::Helmholtz => 1.0,
            _ => 0.1,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or_else(|| self.default_mu())
    }

    pub fn sweep_mus(&self) -> Vec<f64> {
        self.mus.clone().unwrap_or_else(|| match self.problem {
            ProblemKind::Ej1d => vec![1e-2, 1e-4, 1e-6],
            ProblemKind::Ej2d => vec![1e-1, 1e-6],
            ProblemKind::Helmholtz => vec![1.0, 2.0, 4.0, 8.0],
        })
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut p = match self.problem {
            ProblemKind::Ej1d => ProblemSpec::ej1d(16),
            ProblemKind::Ej2d => ProblemSpec::ej2d(26, 10, self.inflow_mode),
            ProblemKind::Helmholtz => ProblemSpec::helmholtz(20),
        };
        if let Some(m) = self.mesh {
            p.mesh = m;
        }
        if let Some(o) = self.trial_order {
            p.trial_order = o;
            p.galerkin_order = p.galerkin_order.max(o);
        }
        if let Some(o) = self.test_order {
            p.test_order = o;
        }
        if let Some(c) = self.test_continuity {
            p.test_continuity = c;
        }
        if let Some(ip) = self.inner_product {
            p.inner_product = ip;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn compression(&self) -> Result<CompressionParams> {
        let c = CompressionParams {
            max_rank: self.rank,
            delta: self.delta,
            max_leaf_size: self.leaf_size,
            min_block_size: self.min_block,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn gmres(&self) -> GmresOptions {
        GmresOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn surrogate_mode(&self) -> SurrogateMode {
        self.mode.unwrap_or_else(|| SurrogateMode::default_for(self.problem))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
            schedule_depth: self.depth,
            ..TrainConfig::default()
        }
    }

    /// Full training grid: 33 log-spaced epsilon in `[1e-6, 1e-1]` or 37
    /// evenly spaced kappa in `[1, 10]` unless overridden.
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi, n, log) = match self.problem {
            ProblemKind::Helmholtz => (1.0, 10.0, 37, false),
            _ => (1e-6, 1e-1, 33, true),
        };
        parameter_grid(
            self.grid_lo.unwrap_or(lo),
            self.grid_hi.unwrap_or(hi),
            self.grid_points.unwrap_or(n),
            log,
        )
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        let n = self.grid().len();
        self.holdout.clone().unwrap_or_else(|| match self.problem {
            ProblemKind::Helmholtz => Vec::new(),
            _ if n == 33 => vec![3, 8, 14, 19, 24, 29],
            _ => Vec::new(),
        })
    }

    /// Training and holdout parameters.
    pub fn split_grid(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let grid = self.grid();
        let hold = self.holdout_indices();
        if let Some(&bad) = hold.iter().find(|&&i| i >= grid.len()) {
            return Err(Error::Config(format!("holdout index {bad} outside a grid of {}", grid.len())));
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &mu) in grid.iter().enumerate() {
            if hold.contains(&i) {
                test.push(mu);
            } else {
                train.push(mu);
            }
        }
        Ok((train, test))
    }

    pub fn offline_dir(&self) -> PathBuf {
        self.out.join("offline")
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.offline_dir().join("model.json"))
    }

    /// Effective configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = self.problem_spec().ok();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("problem", self.problem.name().into());
        kv(self.problem.param_name(), self.mu().to_string());
        kv("mus", fmt_list(&self.sweep_mus()));
        if let Some(p) = &p {
            let mesh = if self.problem == ProblemKind::Ej1d {
                p.mesh[0].to_string()
            } else {
                format!("{}x{}", p.mesh[0], p.mesh[1])
            };
            kv("mesh", mesh);
            kv("orders", format!("{},{}", p.trial_order, p.test_order));
            let c = match p.test_continuity {
                Continuity::C0 => "c0",
                Continuity::Smooth => "smooth",
            };
            kv("test-continuity", c.into());
            let ip = match p.inner_product {
                InnerProduct::H1Seminorm => "h1-seminorm",
                InnerProduct::FullH1 => "full-h1",
            };
            kv("inner-product", ip.into());
        }
        kv("inflow-mode", self.inflow_mode.to_string());
        kv("rank", self.rank.to_string());
        kv("delta", self.delta.to_string());
        kv("leaf-size", self.leaf_size.to_string());
        kv("min-block", self.min_block.to_string());
        kv("pipeline", self.pipeline.name().into());
        let pipes: Vec<&str> = self.sweep_pipelines().iter().map(|p| p.name()).collect();
        kv("pipelines", pipes.join(","));
        kv("tol", self.tol.to_string());
        if let Some(m) = self.max_iter {
            kv("max-iter", m.to_string());
        }
        kv("mode", self.surrogate_mode().name().into());
        if let Some(d) = self.depth {
            kv("depth", d.to_string());
        }
        let grid = self.grid();
        kv("grid-points", grid.len().to_string());
        kv("grid-lo", grid.first().map_or(String::new(), |v| v.to_string()));
        kv("grid-hi", grid.last().map_or(String::new(), |v| v.to_string()));
        kv("holdout", fmt_list(&self.holdout_indices()));
        kv("epochs", self.epochs.to_string());
        kv("hidden", fmt_list(&self.hidden));
        kv("learning-rate", self.learning_rate.to_string());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("model", self.model_path().display().to_string());
        kv("compare", self.compare.to_string());
        s
    }

    pub fn sweep_pipelines(&self) -> Vec<Pipeline> {
        self.pipelines
            .clone()
            .unwrap_or_else(|| vec![Pipeline::Galerkin, Pipeline::PgDense, Pipeline::PgHmat])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse_str(
            "# comment\nproblem = helmholtz\nkappa = 4   # wave number\nmesh = 10\norders = 2,2\nrank = 8\n",
        )
        .unwrap();
        assert_eq!(c.problem, ProblemKind::Helmholtz);
        assert_eq!(c.mu(), 4.0);
        let p = c.problem_spec().unwrap();
        assert_eq!(p.mesh, [10, 10]);
        assert_eq!(c.compression().unwrap().max_rank, 8);
        assert_eq!(c.grid().len(), 37);
        assert_eq!(c.surrogate_mode(), SurrogateMode::FullUdv);
    }

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.set("mesh", "8x4").unwrap();
        c.set("mus", "0.1, 0.01").unwrap();
        c.set("pipelines", "galerkin,pg-dense").unwrap();
        let back = RunConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.problem_spec().unwrap(), c.problem_spec().unwrap());
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse_str("rank = many").unwrap_err().to_string();
        assert!(e.contains("rank"));
        assert!(RunConfig::parse_str("colour = blue").is_err());
        assert!(RunConfig::parse_str("just words").is_err());
        assert!(RunConfig::parse_str("orders = 3,2").unwrap().problem_spec().is_err());
    }

    #[test]
    fn ej_grid_and_holdout() {
        let c = RunConfig::default();
        let (train, test) = c.split_grid().unwrap();
        assert_eq!((train.len(), test.len()), (27, 6));
        assert!((c.grid()[0] - 1e-6).abs() < 1e-18);
        let empty = RunConfig::parse_str("mus =").unwrap();
        assert!(empty.sweep_mus().is_empty());
    }
}
