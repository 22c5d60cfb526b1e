//! 1D Eriksson-Johnson boundary layer: equal-space Galerkin against the
//! Petrov-Galerkin scheme with optimal test functions, on 16 elements.

use pgstab::krylov::GmresOptions;
use pgstab::pipeline::{GalerkinSystem, PgSystem};
use pgstab::problems::ProblemSpec;

pub fn run_example() -> pgstab::Result<()> {
    let p = ProblemSpec::ej1d(16);
    let pg = PgSystem::new(&p)?;
    let gal = GalerkinSystem::new(&p)?;
    let opts = GmresOptions::default();
    println!("{:>8} | {:>12} {:>10} | {:>12} {:>10}", "eps", "galerkin L2", "overshoot", "pg L2", "overshoot");
    for eps in [1e-2, 1e-4, 1e-6] {
        let g = gal.solve(eps, &opts, None)?;
        let ge = gal.errors(eps, &g.coefficients)?;
        let s = pg.solve_dense(eps, &opts, None)?;
        let se = pg.errors(eps, &s.coefficients)?;
        println!(
            "{eps:>8.0e} | {:>12.4e} {:>10.4} | {:>12.4e} {:>10.4}",
            ge.l2, ge.overshoot, se.l2, se.overshoot
        );
    }
    // the sampled PG solution at eps = 1e-4 near the outflow layer
    let s = pg.solve_dense(1e-4, &opts, None)?;
    let e = pg.errors(1e-4, &s.coefficients)?;
    for sample in e.samples.iter().rev().step_by(5).take(6) {
        println!("  x={:.2} u_h={:+.4} u={:+.4}", sample[0], sample[2], sample[3]);
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
