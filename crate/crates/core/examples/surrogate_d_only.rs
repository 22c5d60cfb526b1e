//! Trains the singular-value surrogate (one small network per quadtree block)
//! on a grid of epsilon values and uses it in place of the spectral
//! admissibility test. Pass `--full` for the 26x10 mesh and the 33-point grid;
//! that run trains for a few minutes.

use pgstab::hmat::CompressionParams;
use pgstab::krylov::GmresOptions;
use pgstab::pipeline::PgSystem;
use pgstab::problems::{ProblemKind, ProblemSpec};
use pgstab::surrogate::mlp::TrainConfig;
use pgstab::surrogate::{parameter_grid, structure_agreement, SurrogateMode, SurrogateModel};
use pgstab::{FlopCounter, Phase};

pub fn run_example() -> pgstab::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let (spec, n) = if full {
        (ProblemSpec::ej2d(26, 10, 1), 33)
    } else {
        (ProblemSpec::ej2d(12, 6, 1), 13)
    };
    let sys = PgSystem::new(&spec)?;
    let params = CompressionParams::default();
    let grid = parameter_grid(1e-6, 1e-1, n, true);
    // every fourth value is held out
    let (hold, train): (Vec<(usize, f64)>, Vec<(usize, f64)>) = grid.iter().copied().enumerate().partition(|(i, _)| i % 4 == 2);
    let train: Vec<f64> = train.into_iter().map(|(_, v)| v).collect();
    let hold: Vec<f64> = hold.into_iter().map(|(_, v)| v).collect();
    let cfg = TrainConfig {
        epochs: if full { 5000 } else { 1500 },
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let model = SurrogateModel::fit(ProblemKind::Ej2d, &sys.parts, SurrogateMode::DOnly, &train, &params, &cfg)?;
    println!(
        "trained {} block networks on {} samples in {:.1} s",
        model.blocks.len(),
        train.len(),
        t.elapsed().as_secs_f64()
    );
    let report = model.evaluate_holdout(&sys.parts, &hold)?;
    println!(
        "holdout: {} singular values, median relative error {:.3e}, p90 {:.3e}",
        report.compared, report.median_rel_error, report.p90_rel_error
    );
    let opts = GmresOptions::default();
    for &eps in &hold {
        let fe = FlopCounter::new();
        let exact = sys.solve_hmat(eps, &params, &opts, Some(&fe))?;
        let fnn = FlopCounter::new();
        let nn = sys.solve_hmat_nn(eps, &params, &model, &opts, Some(&fnn))?;
        println!(
            "eps {eps:.2e}: structure agreement {:.3}, admissibility flops {} -> {}, iterations {} / {}, residual {:.1e}",
            structure_agreement(exact.tree.as_ref().unwrap(), nn.tree.as_ref().unwrap()),
            fe.get(Phase::Admissibility),
            fnn.get(Phase::Admissibility),
            exact.report.iterations,
            nn.report.iterations,
            nn.report.final_relative_residual
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
