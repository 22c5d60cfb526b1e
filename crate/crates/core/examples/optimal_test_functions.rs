//! Optimal test matrix `W = G^{-1} B` and the equivalence of the reduced
//! Petrov-Galerkin system with the mixed residual-minimization system.

use pgstab::krylov::GmresOptions;
use pgstab::opttest::mixed_solve_oracle;
use pgstab::pipeline::PgSystem;
use pgstab::problems::ProblemSpec;

pub fn run_example() -> pgstab::Result<()> {
    for (p, eps) in [(ProblemSpec::ej1d(16), 0.01), (ProblemSpec::ej2d(8, 4, 1), 0.1)] {
        let sys = PgSystem::new(&p)?;
        let w = sys.test_matrix(eps, None)?;
        let b = sys.forms.evaluate(eps)?.to_dense();
        let gw = sys.forms.gram.to_dense() * &w;
        println!(
            "{}: W is {}x{}, |GW - B| / |B| = {:.1e}",
            p.kind.name(),
            w.nrows(),
            w.ncols(),
            (gw - &b).norm() / b.norm()
        );
        let pg = sys.solve_dense(eps, &GmresOptions::default(), None)?;
        let mixed = mixed_solve_oracle(&sys.forms, eps, &sys.load(eps)?)?;
        let diff: f64 = pg.x.iter().zip(&mixed.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = mixed.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = sys.errors(eps, &pg.coefficients)?;
        println!(
            "  gmres {} iterations, |x_pg - x_mixed| / |x_mixed| = {:.1e}, relative L2 error {:.3e}",
            pg.report.iterations,
            diff / norm,
            err.relative_l2()
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
