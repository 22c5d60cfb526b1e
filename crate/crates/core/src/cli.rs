//! The `pgstab` command-line driver.
//!
//! Settings come from an optional `--config` file (see [`crate::config`]),
//! then `PGSTAB_OUT`, then flags. Every command echoes the effective
//! configuration to `<out>/config.txt` and prints a JSON summary on stdout.
//! Failures print `{"error": {"kind": ..., "message": ...}}` on stderr and exit
//! nonzero.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::bspline::{BSplineSpace1D, Continuity};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flops::{FlopCounter, FlopSnapshot, Phase};
use crate::hmat::{self, create_tree, hmatvec_transpose_vec, hmatvec_vec, BuildStats, ExactOracle, HNode};
use crate::krylov::{GmresOptions, SolveReport};
use crate::opttest::{mixed_solve_oracle, write_dense};
use crate::pipeline::{GalerkinSystem, Pipeline, PgSystem, Solution};
use crate::problems::{exact_ej1d, exact_ej2d, helmholtz_data, ErrorReport, ProblemKind, ProblemSpec};
use crate::surrogate::{NnOracle, SurrogateMode, SurrogateModel};

#[derive(Parser, Debug)]
#[command(name = "pgstab", version, about = "Stabilized Petrov-Galerkin solves with hierarchical compression")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// ej1d, ej2d or helmholtz.
    #[arg(long, global = true)]
    pub problem: Option<String>,
    /// Diffusion coefficient of the Eriksson-Johnson problems.
    #[arg(long, global = true, conflicts_with = "kappa")]
    pub epsilon: Option<f64>,
    /// Helmholtz wave number.
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Elements per direction, `N` or `NXxNY`.
    #[arg(long, global = true)]
    pub mesh: Option<String>,
    /// Trial and test order, `p,q`.
    #[arg(long, global = true)]
    pub orders: Option<String>,
    /// Maximum rank of compressed blocks.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Singular value cut-off of compressed blocks.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// galerkin, pg-dense, pg-hmat or pg-hmat-nn.
    #[arg(long, global = true)]
    pub pipeline: Option<String>,
    /// GMRES relative residual tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides PGSTAB_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Any configuration key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cache the affine parts, generate the surrogate dataset and train the model.
    Offline {
        /// d-only or full-udv.
        #[arg(long)]
        mode: Option<String>,
        /// Deepest quadtree level with a trained network (d-only).
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Solve for one parameter value.
    Solve {
        /// Also run the other pipelines and write a flop comparison.
        #[arg(long)]
        compare: bool,
    },
    /// Solve for a list of parameters and pipelines.
    Sweep {
        /// Comma-separated parameter values; an empty list is allowed.
        #[arg(long, allow_hyphen_values = true)]
        mus: Option<String>,
        #[arg(long)]
        pipelines: Option<String>,
    },
    /// Compress the optimal test matrix only.
    Compress,
    /// Flop tables of compression and solve per pipeline.
    Bench {
        #[arg(long, allow_hyphen_values = true)]
        mus: Option<String>,
    },
    /// Run the built-in oracle checks.
    Verify,
}

/// Builds the effective configuration from file, environment and flags.
pub fn build_config(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        }
    };
    set("problem", common.problem.clone())?;
    set("mesh", common.mesh.clone())?;
    set("orders", common.orders.clone())?;
    set("rank", common.rank.map(|v| v.to_string()))?;
    set("delta", common.delta.map(|v| v.to_string()))?;
    set("pipeline", common.pipeline.clone())?;
    set("tol", common.tol.map(|v| v.to_string()))?;
    set("seed", common.seed.map(|v| v.to_string()))?;
    set("out", common.out.as_ref().map(|p| p.display().to_string()))?;
    match command {
        Command::Offline {
            mode,
            depth,
            grid_points,
            epochs,
        } => {
            set("mode", mode.clone())?;
            set("depth", depth.map(|v| v.to_string()))?;
            set("grid-points", grid_points.map(|v| v.to_string()))?;
            set("epochs", epochs.map(|v| v.to_string()))?;
        }
        Command::Solve { compare } => {
            if *compare {
                set("compare", Some("true".into()))?;
            }
        }
        Command::Sweep { mus, pipelines } => {
            set("mus", mus.clone())?;
            set("pipelines", pipelines.clone())?;
        }
        Command::Bench { mus } => set("mus", mus.clone())?,
        Command::Compress | Command::Verify => {}
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    match (common.epsilon, common.kappa, cfg.problem) {
        (Some(_), _, ProblemKind::Helmholtz) => {
            return Err(Error::Config("--epsilon given for the helmholtz problem; use --kappa".into()))
        }
        (_, Some(_), ProblemKind::Ej1d | ProblemKind::Ej2d) => {
            return Err(Error::Config(format!("--kappa given for {}; use --epsilon", cfg.problem.name())))
        }
        (Some(v), _, _) | (_, Some(v), _) => cfg.mu = Some(v),
        _ => {}
    }
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = json!({"error": {"kind": "usage", "message": e.to_string().trim()}});
            eprintln!("{msg}");
            return 2;
        }
    };
    match build_config(&cli.common, &cli.command).and_then(|cfg| execute(&cli.command, &cfg)) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            0
        }
        Err(e) => {
            let msg = json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{msg}");
            1
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

/// Runs a parsed command with an effective configuration.
pub fn execute(command: &Command, cfg: &RunConfig) -> Result<serde_json::Value> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    match command {
        Command::Offline { .. } => cmd_offline(cfg),
        Command::Solve { .. } => cmd_solve(cfg),
        Command::Sweep { .. } => cmd_sweep(cfg),
        Command::Compress => cmd_compress(cfg),
        Command::Bench { .. } => cmd_bench(cfg),
        Command::Verify => cmd_verify(cfg),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn offline_hint(cfg: &RunConfig) -> String {
    format!("pgstab offline --problem {} --out {}", cfg.problem.name(), cfg.out.display())
}

fn load_model(cfg: &RunConfig) -> Result<SurrogateModel> {
    let path = cfg.model_path();
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
            hint: offline_hint(cfg),
        });
    }
    SurrogateModel::load(&path)
}

// offline

pub fn cmd_offline(cfg: &RunConfig) -> Result<serde_json::Value> {
    let spec = cfg.problem_spec()?;
    let params = cfg.compression()?;
    let dir = cfg.offline_dir();
    fs::create_dir_all(dir.join("parts"))?;
    let sys = PgSystem::new(&spec)?;
    for (k, p) in sys.parts.parts().iter().enumerate() {
        write_dense(&dir.join("parts").join(format!("part-{k}.bin")), p)?;
    }
    write_json(
        &dir.join("gram.json"),
        &json!({
            "problem": spec,
            "theta": spec.theta(),
            "test_dim": sys.test_dim(),
            "trial_dim": sys.trial_dim(),
            "gram_nnz": sys.forms.gram.nnz(),
            "bandwidth": sys.factor.bandwidth(),
            "min_pivot": sys.factor.min_pivot(),
            "solve_flops": sys.factor.solve_flops(),
        }),
    )?;
    let (train, holdout) = cfg.split_grid()?;
    let mode = cfg.surrogate_mode();
    let (mut model, dataset) =
        SurrogateModel::fit_with_dataset(spec.kind, &sys.parts, mode, &train, &params, &cfg.train_config())?;
    dataset.save(&dir.join("dataset.bin"))?;
    if !holdout.is_empty() {
        model.holdout = Some(model.evaluate_holdout(&sys.parts, &holdout)?);
    }
    let model_path = cfg.model_path();
    if let Some(parent) = model_path.parent() {
        fs::create_dir_all(parent)?;
    }
    model.save(&model_path)?;
    Ok(json!({
        "command": "offline",
        "mode": mode.name(),
        "records": dataset.mus.len(),
        "blocks": model.blocks.len(),
        "holdout": model.holdout,
        "model": model_path,
    }))
}

// solve

/// Lazily built systems shared by the runs of one command.
struct Systems<'a> {
    cfg: &'a RunConfig,
    spec: ProblemSpec,
    pg: Option<PgSystem>,
    galerkin: Option<GalerkinSystem>,
    model: Option<SurrogateModel>,
}

/// One finished run.
pub struct RunOutcome {
    pub solution: Solution,
    pub errors: ErrorReport,
}

impl<'a> Systems<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            spec: cfg.problem_spec()?,
            pg: None,
            galerkin: None,
            model: None,
        })
    }

    fn pg(&mut self) -> Result<&PgSystem> {
        if self.pg.is_none() {
            self.pg = Some(PgSystem::new(&self.spec)?);
        }
        Ok(self.pg.as_ref().unwrap())
    }

    fn ensure_model(&mut self) -> Result<()> {
        if self.model.is_none() {
            self.model = Some(load_model(self.cfg)?);
        }
        Ok(())
    }

    fn run(&mut self, pipeline: Pipeline, mu: f64, counter: &FlopCounter) -> Result<RunOutcome> {
        let opts: GmresOptions = self.cfg.gmres();
        let params = self.cfg.compression()?;
        let (solution, errors) = match pipeline {
            Pipeline::Galerkin => {
                if self.galerkin.is_none() {
                    self.galerkin = Some(GalerkinSystem::new(&self.spec)?);
                }
                let g = self.galerkin.as_ref().unwrap();
                let s = g.solve(mu, &opts, Some(counter))?;
                let e = g.errors(mu, &s.coefficients)?;
                (s, e)
            }
            Pipeline::PgDense | Pipeline::PgHmat | Pipeline::PgHmatNn => {
                if pipeline == Pipeline::PgHmatNn {
                    self.ensure_model()?;
                }
                self.pg()?;
                let sys = self.pg.as_ref().unwrap();
                let s = match pipeline {
                    Pipeline::PgDense => sys.solve_dense(mu, &opts, Some(counter))?,
                    Pipeline::PgHmat => sys.solve_hmat(mu, &params, &opts, Some(counter))?,
                    _ => sys.solve_hmat_nn(mu, &params, self.model.as_ref().unwrap(), &opts, Some(counter))?,
                };
                let e = sys.errors(mu, &s.coefficients)?;
                (s, e)
            }
        };
        Ok(RunOutcome { solution, errors })
    }
}

#[derive(Serialize)]
struct TreeSummary {
    nodes: usize,
    leaves: usize,
    depth: usize,
    max_rank: usize,
    storage: usize,
}

fn tree_summary(t: &HNode) -> TreeSummary {
    TreeSummary {
        nodes: t.node_count(),
        leaves: t.leaf_count(),
        depth: t.depth(),
        max_rank: t.max_rank(),
        storage: t.storage(),
    }
}

#[derive(Serialize)]
struct RunReport<'a> {
    problem: &'static str,
    parameter: &'static str,
    mu: f64,
    pipeline: &'static str,
    mesh: [usize; 2],
    out_of_range: bool,
    l2_error: f64,
    h1_seminorm_error: f64,
    relative_l2_error: f64,
    overshoot: f64,
    build: Option<BuildStats>,
    hmatrix: Option<TreeSummary>,
    solve: &'a SolveReport,
}

fn run_report<'a>(spec: &ProblemSpec, o: &'a RunOutcome) -> RunReport<'a> {
    RunReport {
        problem: spec.kind.name(),
        parameter: spec.kind.param_name(),
        mu: o.solution.mu,
        pipeline: o.solution.pipeline.name(),
        mesh: spec.mesh,
        out_of_range: o.solution.out_of_range,
        l2_error: o.errors.l2,
        h1_seminorm_error: o.errors.h1_seminorm,
        relative_l2_error: o.errors.relative_l2(),
        overshoot: o.errors.overshoot,
        build: o.solution.build,
        hmatrix: o.solution.tree.as_ref().map(tree_summary),
        solve: &o.solution.report,
    }
}

/// Writes `solution.csv`, `report.json` and, for compressed runs, `hmatrix.txt`.
fn write_run(dir: &Path, spec: &ProblemSpec, o: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("x,y,u_h,u_exact,error\n");
    for s in &o.errors.samples {
        let _ = writeln!(csv, "{},{},{},{},{}", s[0], s[1], s[2], s[3], s[2] - s[3]);
    }
    fs::write(dir.join("solution.csv"), csv)?;
    write_json(&dir.join("report.json"), &run_report(spec, o))?;
    if let Some(t) = &o.solution.tree {
        fs::write(dir.join("hmatrix.txt"), t.summary())?;
    }
    Ok(())
}

fn flop_columns() -> String {
    Phase::ALL.iter().map(|p| p.name()).collect::<Vec<_>>().join(",")
}

fn snapshot_of(report: &SolveReport) -> FlopSnapshot {
    let mut s = FlopSnapshot::default();
    for (i, p) in Phase::ALL.iter().enumerate() {
        s.by_phase[i] = report.flops.get(p.name()).copied().unwrap_or(0);
    }
    s
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<serde_json::Value> {
    let mut systems = Systems::new(cfg)?;
    let mu = cfg.mu();
    let dir = cfg.out.join("solve");
    let counter = FlopCounter::new();
    let main = systems.run(cfg.pipeline, mu, &counter)?;
    write_run(&dir, &systems.spec, &main)?;
    let mut summary = json!({
        "command": "solve",
        "pipeline": cfg.pipeline.name(),
        "mu": mu,
        "iterations": main.solution.report.iterations,
        "converged": main.solution.report.converged,
        "final_relative_residual": main.solution.report.final_relative_residual,
        "relative_l2_error": main.errors.relative_l2(),
        "overshoot": main.errors.overshoot,
        "total_flops": main.solution.report.total_flops,
        "out": dir,
    });
    if cfg.compare {
        let mut table = format!("pipeline,status,iterations,{},total\n", flop_columns());
        for p in Pipeline::ALL {
            let row = if p == cfg.pipeline {
                Ok(main.solution.report.clone())
            } else {
                systems.run(p, mu, &FlopCounter::new()).map(|o| o.solution.report)
            };
            match row {
                Ok(r) => {
                    let s = snapshot_of(&r);
                    let phases: Vec<String> = Phase::ALL.iter().map(|&ph| s.get(ph).to_string()).collect();
                    let _ = writeln!(table, "{},ok,{},{},{}", p.name(), r.iterations, phases.join(","), s.total());
                }
                Err(e) => {
                    let blanks = vec![""; Phase::ALL.len()].join(",");
                    let _ = writeln!(table, "{},{},,{},", p.name(), e.kind(), blanks);
                }
            }
        }
        fs::write(dir.join("flops.csv"), &table)?;
        summary["comparison"] = json!(dir.join("flops.csv"));
    }
    Ok(summary)
}

// sweep

fn fmt_mu(mu: f64) -> String {
    format!("{mu:e}")
}

/// One row of a sweep table; failed runs keep `error`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub mu: f64,
    pub pipeline: Pipeline,
    pub iterations: usize,
    pub converged: bool,
    pub final_relative_residual: f64,
    pub flops: [u64; 6],
    pub total_flops: u64,
    pub l2_error: f64,
    pub relative_l2_error: f64,
    pub overshoot: f64,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "mu,pipeline,status,iterations,converged,final_relative_residual";

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER},{},total_flops,l2_error,relative_l2_error,overshoot,message\n", flop_columns());
    for r in rows {
        match &r.error {
            None => {
                let phases: Vec<String> = r.flops.iter().map(|f| f.to_string()).collect();
                let _ = writeln!(
                    s,
                    "{},{},ok,{},{},{:e},{},{},{:e},{:e},{:e},",
                    r.mu,
                    r.pipeline.name(),
                    r.iterations,
                    r.converged,
                    r.final_relative_residual,
                    phases.join(","),
                    r.total_flops,
                    r.l2_error,
                    r.relative_l2_error,
                    r.overshoot
                );
            }
            Some(e) => {
                let blanks = vec![""; Phase::ALL.len()].join(",");
                let _ = writeln!(
                    s,
                    "{},{},failed,,,,{blanks},,,,,\"{}\"",
                    r.mu,
                    r.pipeline.name(),
                    e.replace('"', "'")
                );
            }
        }
    }
    s
}

/// Galerkin-vs-PG table, one line per parameter.
fn comparison_table(cfg: &RunConfig, rows: &[SweepRow]) -> String {
    let pipes = cfg.sweep_pipelines();
    let mut s = format!("| {} |", cfg.problem.param_name());
    for p in &pipes {
        let _ = write!(s, " {0} iter | {0} flops | {0} L2 | {0} overshoot |", p.name());
    }
    s.push('\n');
    s.push_str(&"|---".repeat(1 + 4 * pipes.len()));
    s.push_str("|\n");
    for mu in cfg.sweep_mus() {
        let _ = write!(s, "| {} |", fmt_mu(mu));
        for p in &pipes {
            match rows.iter().find(|r| r.mu == mu && r.pipeline == *p) {
                Some(r) if r.error.is_none() => {
                    let _ = write!(
                        s,
                        " {} | {} | {:.3e} | {:.3} |",
                        r.iterations, r.total_flops, r.l2_error, r.overshoot
                    );
                }
                _ => s.push_str(" - | - | - | - |"),
            }
        }
        s.push('\n');
    }
    s
}

/// Runs every parameter and pipeline, writing one subdirectory per run.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut systems = Systems::new(cfg)?;
    let dir = cfg.out.join("sweep");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for mu in cfg.sweep_mus() {
        for p in cfg.sweep_pipelines() {
            let counter = FlopCounter::new();
            let run_dir = dir.join(format!("{}-{}-{}", cfg.problem.param_name(), fmt_mu(mu), p.name()));
            let row = match systems
                .run(p, mu, &counter)
                .and_then(|o| write_run(&run_dir, &systems.spec, &o).map(|_| o))
            {
                Ok(o) => {
                    let r = &o.solution.report;
                    SweepRow {
                        mu,
                        pipeline: p,
                        iterations: r.iterations,
                        converged: r.converged,
                        final_relative_residual: r.final_relative_residual,
                        flops: snapshot_of(r).by_phase,
                        total_flops: r.total_flops,
                        l2_error: o.errors.l2,
                        relative_l2_error: o.errors.relative_l2(),
                        overshoot: o.errors.overshoot,
                        error: None,
                    }
                }
                Err(e) => SweepRow {
                    mu,
                    pipeline: p,
                    iterations: 0,
                    converged: false,
                    final_relative_residual: f64::NAN,
                    flops: [0; 6],
                    total_flops: 0,
                    l2_error: f64::NAN,
                    relative_l2_error: f64::NAN,
                    overshoot: f64::NAN,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    fs::write(dir.join("sweep.csv"), sweep_csv(&rows))?;
    fs::write(dir.join("comparison.md"), comparison_table(cfg, &rows))?;
    Ok(rows)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<serde_json::Value> {
    let rows = run_sweep(cfg)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    eprint!("{}", comparison_table(cfg, &rows));
    Ok(json!({
        "command": "sweep",
        "runs": rows.len(),
        "failed": failed,
        "total_flops": rows.iter().map(|r| r.total_flops).sum::<u64>(),
        "csv": cfg.out.join("sweep").join("sweep.csv"),
    }))
}

// compress

pub fn cmd_compress(cfg: &RunConfig) -> Result<serde_json::Value> {
    let spec = cfg.problem_spec()?;
    let params = cfg.compression()?;
    let mu = cfg.mu();
    let sys = PgSystem::new(&spec)?;
    let counter = FlopCounter::new();
    let w = sys.test_matrix(mu, Some(&counter))?;
    let (tree, stats) = if cfg.pipeline == Pipeline::PgHmatNn {
        let model = load_model(cfg)?;
        model.check_compatible(spec.kind, (w.nrows(), w.ncols()), &params)?;
        match model.mode {
            SurrogateMode::DOnly => {
                let oracle = NnOracle {
                    predictor: &model,
                    mu,
                    params,
                };
                hmat::create_tree_with(&w, &params, &oracle, Some(&counter))?
            }
            SurrogateMode::FullUdv => {
                let t = model.build_tree(mu, Some(&counter))?;
                let n = t.node_count();
                (
                    t,
                    BuildStats {
                        predicted: n,
                        ..BuildStats::default()
                    },
                )
            }
        }
    } else {
        hmat::create_tree_with(&w, &params, &ExactOracle, Some(&counter))?
    };
    let rel = (tree.decompress() - &w).norm() / w.norm().max(f64::MIN_POSITIVE);
    let dir = cfg.out.join("compress");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("hmatrix.txt"), tree.summary())?;
    hmat::io::write(&dir.join("hmatrix.bin"), &tree, &params)?;
    let snap = counter.snapshot();
    let stats_json = json!({
        "problem": spec.kind.name(),
        "mu": mu,
        "rows": w.nrows(),
        "cols": w.ncols(),
        "relative_frobenius_error": rel,
        "dense_entries": w.len(),
        "tree": tree_summary(&tree),
        "build": stats,
        "flops": snap.to_map(),
        "total_flops": snap.total(),
    });
    write_json(&dir.join("stats.json"), &stats_json)?;
    Ok(json!({"command": "compress", "stats": stats_json}))
}

// bench

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mu: f64,
    pub pipeline: Pipeline,
    pub iterations: usize,
    /// Assembly, SVD and admissibility flops.
    pub compress_flops: u64,
    /// Sparse and hierarchical matvecs plus orthogonalization.
    pub solve_flops: u64,
    pub admissibility_flops: u64,
    pub svd_flops: u64,
    pub total_flops: u64,
    pub ratio_to_galerkin: f64,
}

pub fn run_bench(cfg: &RunConfig) -> Result<(Vec<BenchRow>, Vec<String>)> {
    let mut systems = Systems::new(cfg)?;
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let nn_available = match systems.ensure_model() {
        Ok(()) => true,
        Err(e) => {
            notes.push(format!("pg-hmat-nn skipped: {e}"));
            false
        }
    };
    for mu in cfg.sweep_mus() {
        let mut galerkin_total = None;
        for p in [Pipeline::Galerkin, Pipeline::PgDense, Pipeline::PgHmat, Pipeline::PgHmatNn] {
            if p == Pipeline::PgHmatNn && !nn_available {
                continue;
            }
            let o = systems.run(p, mu, &FlopCounter::new())?;
            let s = snapshot_of(&o.solution.report);
            let compress = s.get(Phase::Assembly) + s.get(Phase::Svd) + s.get(Phase::Admissibility);
            let total = s.total();
            if p == Pipeline::Galerkin {
                galerkin_total = Some(total);
            }
            rows.push(BenchRow {
                mu,
                pipeline: p,
                iterations: o.solution.report.iterations,
                compress_flops: compress,
                solve_flops: total - compress,
                admissibility_flops: s.get(Phase::Admissibility),
                svd_flops: s.get(Phase::Svd),
                total_flops: total,
                ratio_to_galerkin: total as f64 / galerkin_total.unwrap_or(total).max(1) as f64,
            });
        }
    }
    Ok((rows, notes))
}

fn bench_table(cfg: &RunConfig, rows: &[BenchRow], notes: &[String]) -> String {
    let mut s = format!(
        "| {} | pipeline | iterations | compress flops | solve flops | admissibility | svd | total | / galerkin |\n",
        cfg.problem.param_name()
    );
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {:.2} |",
            fmt_mu(r.mu),
            r.pipeline.name(),
            r.iterations,
            r.compress_flops,
            r.solve_flops,
            r.admissibility_flops,
            r.svd_flops,
            r.total_flops,
            r.ratio_to_galerkin
        );
    }
    for mu in cfg.sweep_mus() {
        let find = |p| rows.iter().find(|r| r.mu == mu && r.pipeline == p);
        if let (Some(h), Some(n)) = (find(Pipeline::PgHmat), find(Pipeline::PgHmatNn)) {
            let _ = writeln!(
                s,
                "\n{} = {}: compress with/without surrogate {:.3}, admissibility {:.3}",
                cfg.problem.param_name(),
                fmt_mu(mu),
                n.compress_flops as f64 / h.compress_flops.max(1) as f64,
                n.admissibility_flops as f64 / h.admissibility_flops.max(1) as f64
            );
        }
    }
    for n in notes {
        let _ = writeln!(s, "\n{n}");
    }
    s
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<serde_json::Value> {
    let (rows, notes) = run_bench(cfg)?;
    let dir = cfg.out.join("bench");
    fs::create_dir_all(&dir)?;
    let mut csv = String::from(
        "mu,pipeline,iterations,compress_flops,solve_flops,admissibility_flops,svd_flops,total_flops,ratio_to_galerkin\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            r.mu,
            r.pipeline.name(),
            r.iterations,
            r.compress_flops,
            r.solve_flops,
            r.admissibility_flops,
            r.svd_flops,
            r.total_flops,
            r.ratio_to_galerkin
        );
    }
    fs::write(dir.join("bench.csv"), csv)?;
    let table = bench_table(cfg, &rows, &notes);
    fs::write(dir.join("bench.md"), &table)?;
    eprint!("{table}");
    Ok(json!({"command": "bench", "rows": rows, "notes": notes}))
}

// verify

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, value: f64, limit: f64) -> Check {
    Check {
        name: name.into(),
        passed: value <= limit,
        detail: format!("{value:.3e} <= {limit:.0e}"),
    }
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)
}

/// Quick oracle checks of the whole chain on small configurations.
pub fn verify_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = GmresOptions::default();

    let mut pou: f64 = 0.0;
    for (order, cont) in [(1, Continuity::Smooth), (2, Continuity::C0), (3, Continuity::Smooth)] {
        let s = BSplineSpace1D::unit(order, 7, cont)?;
        for _ in 0..50 {
            let (_, v) = s.eval_basis(rng.random::<f64>())?;
            pou = pou.max((v.iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(check("partition of unity", pou, 1e-12));

    let mut bc: f64 = 0.0;
    for eps in [1.0, 0.1, 0.01] {
        let h = 1e-7;
        let du = (exact_ej1d(eps, h) - exact_ej1d(eps, 0.0)) / h;
        bc = bc.max((-eps * du + exact_ej1d(eps, 0.0) - 1.0).abs());
        bc = bc.max(exact_ej1d(eps, 1.0).abs());
    }
    for _ in 0..100 {
        let y = rng.random::<f64>();
        bc = bc.max(exact_ej2d(0.1, 1, 1.0, y).abs());
        bc = bc.max((exact_ej2d(0.1, 1, 0.0, y) - (std::f64::consts::PI * y).sin()).abs());
        bc = bc.max(helmholtz_data(3.0, 0.0, y).1.abs());
    }
    out.push(check("exact solution boundary data", bc, 1e-6));

    let mut eq: f64 = 0.0;
    for (spec, mu) in [
        (ProblemSpec::ej1d(8), 0.1),
        (ProblemSpec::ej1d(16), 0.01),
        (ProblemSpec::ej2d(8, 4, 1), 0.1),
    ] {
        let sys = PgSystem::new(&spec)?;
        let sol = sys.solve_dense(mu, &opts, None)?;
        let mixed = mixed_solve_oracle(&sys.forms, mu, &sys.load(mu)?)?;
        eq = eq.max(rel_diff(&sol.x, &mixed.x));
    }
    out.push(check("petrov-galerkin matches mixed system", eq, 1e-8));

    let sys = PgSystem::new(&ProblemSpec::ej2d(8, 4, 1))?;
    let w = sys.test_matrix(0.1, None)?;
    let b = sys.forms.evaluate(0.1)?.to_dense();
    let gw = sys.forms.gram.to_dense() * &w;
    out.push(check("gram times test matrix equals B", (gw - &b).norm() / b.norm(), 1e-10));

    let params = hmat::CompressionParams::default();
    let tree = create_tree(&w, &params, None)?;
    out.push(check(
        "compression error",
        (tree.decompress() - &w).norm() / w.norm(),
        1e-5,
    ));
    let x: Vec<f64> = (0..w.ncols()).map(|_| rng.random::<f64>() - 0.5).collect();
    let y: Vec<f64> = (0..w.nrows()).map(|_| rng.random::<f64>() - 0.5).collect();
    let hx = hmatvec_vec(&tree, &x, None)?;
    let hty = hmatvec_transpose_vec(&tree, &y, None)?;
    let lhs: f64 = hx.iter().zip(&y).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.iter().zip(&hty).map(|(a, b)| a * b).sum();
    out.push(check("transpose duality", (lhs - rhs).abs() / lhs.abs().max(1e-300), 1e-10));
    let dense: Vec<f64> = (&w * DMatrix::from_column_slice(x.len(), 1, &x)).iter().copied().collect();
    out.push(check("hierarchical matvec", rel_diff(&hx, &dense), 1e-5));

    let c1 = FlopCounter::new();
    let s1 = sys.solve_hmat(0.1, &params, &opts, Some(&c1))?;
    let c2 = FlopCounter::new();
    sys.solve_hmat(0.1, &params, &opts, Some(&c2))?;
    out.push(Check {
        name: "flop determinism".into(),
        passed: c1.snapshot() == c2.snapshot(),
        detail: format!("{} vs {}", c1.total(), c2.total()),
    });
    let h = &s1.report.residual_history;
    let worst = h.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check {
        name: "gmres residual monotone".into(),
        passed: worst <= 1e-14 && s1.report.converged,
        detail: format!("largest increase {worst:.1e}, {} iterations", s1.report.iterations),
    });
    Ok(out)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<serde_json::Value> {
    let checks = verify_checks(cfg.seed)?;
    for c in &checks {
        eprintln!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_json(&cfg.out.join("verify.json"), &checks)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::Instability(format!("verification failed: {}", failed.join(", "))));
    }
    Ok(json!({"command": "verify", "checks": checks.len(), "passed": checks.len()}))
}
