//! Online solve of the compressed Petrov-Galerkin system with GMRES, with the
//! per-phase flop breakdown and the residual history.

use pgstab::hmat::CompressionParams;
use pgstab::krylov::GmresOptions;
use pgstab::pipeline::{GalerkinSystem, PgSystem};
use pgstab::problems::ProblemSpec;
use pgstab::FlopCounter;

pub fn run_example() -> pgstab::Result<()> {
    let p = ProblemSpec::ej2d(26, 10, 1);
    let sys = PgSystem::new(&p)?;
    let gal = GalerkinSystem::new(&p)?;
    let opts = GmresOptions { tol: 1e-10, max_iter: None };
    for eps in [0.1, 1e-6] {
        let fc = FlopCounter::new();
        let s = sys.solve_hmat(eps, &CompressionParams::default(), &opts, Some(&fc))?;
        let e = sys.errors(eps, &s.coefficients)?;
        let r = &s.report;
        println!(
            "eps {eps:e}: {} iterations, residual {:.2e}, relative L2 error {:.3e}, overshoot {:.3}",
            r.iterations,
            r.final_relative_residual,
            e.relative_l2(),
            e.overshoot
        );
        for (phase, flops) in &r.flops {
            println!("  {phase:<24} {flops:>12}");
        }
        let h = &r.residual_history;
        let picks: Vec<String> = (0..h.len()).step_by((h.len() / 6).max(1)).map(|i| format!("{i}:{:.1e}", h[i])).collect();
        println!("  residuals {}", picks.join(" "));
        let g = gal.solve(eps, &opts, None)?;
        let ge = gal.errors(eps, &g.coefficients)?;
        println!(
            "  galerkin: {} iterations, {} flops, relative L2 error {:.3e}, overshoot {:.3}",
            g.report.iterations,
            g.report.total_flops,
            ge.relative_l2(),
            ge.overshoot
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
