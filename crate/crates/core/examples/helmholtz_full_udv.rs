//! Full-UDV surrogate for the Helmholtz problem: the tree structure is fixed
//! offline and every leaf's factors are predicted from kappa, so the online
//! stage computes no SVD at all. Pass `--full` for the 10x10 mesh on 37
//! training values.

use pgstab::hmat::CompressionParams;
use pgstab::krylov::GmresOptions;
use pgstab::pipeline::{GalerkinSystem, PgSystem};
use pgstab::problems::{ProblemKind, ProblemSpec};
use pgstab::surrogate::mlp::TrainConfig;
use pgstab::surrogate::{parameter_grid, SurrogateMode, SurrogateModel};
use pgstab::{FlopCounter, Phase};

pub fn run_example() -> pgstab::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let (spec, n) = if full {
        (ProblemSpec::helmholtz(10), 37)
    } else {
        (ProblemSpec::helmholtz(6), 19)
    };
    let sys = PgSystem::new(&spec)?;
    let params = CompressionParams::default();
    let kappas = parameter_grid(1.0, 10.0, n, false);
    let cfg = TrainConfig {
        epochs: if full { 5000 } else { 2000 },
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let model = SurrogateModel::fit(ProblemKind::Helmholtz, &sys.parts, SurrogateMode::FullUdv, &kappas, &params, &cfg)?;
    println!(
        "{} leaf networks, {} structure nodes, trained in {:.1} s",
        model.blocks.len(),
        model.structure.len(),
        t.elapsed().as_secs_f64()
    );
    let opts = GmresOptions::default();
    let gal = GalerkinSystem::new(&spec)?;
    for kappa in [1.0, 3.3, 10.0] {
        let fc = FlopCounter::new();
        let nn = sys.solve_hmat_nn(kappa, &params, &model, &opts, Some(&fc))?;
        let dense = sys.solve_dense(kappa, &opts, None)?;
        let diff: f64 = nn.x.iter().zip(&dense.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            / dense.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g = gal.solve(kappa, &opts, None)?;
        println!(
            "kappa {kappa}: {} iterations, residual {:.1e}, |x_nn - x_dense| / |x_dense| = {diff:.1e}, svd flops {}, total {} (galerkin {} in {} iterations)",
            nn.report.iterations,
            nn.report.final_relative_residual,
            fc.get(Phase::Svd),
            fc.total(),
            g.report.total_flops,
            g.report.iterations
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
