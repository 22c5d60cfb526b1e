//! Evaluates cubic B-spline bases on a uniform mesh and checks partition of
//! unity and Gauss quadrature on the fly.

use pgstab::bspline::{gauss_rule, BSplineSpace1D, Continuity};

pub fn run_example() -> pgstab::Result<()> {
    for cont in [Continuity::Smooth, Continuity::C0] {
        let s = BSplineSpace1D::unit(3, 4, cont)?;
        println!("order 3, 4 elements, {cont:?}: {} functions, knots {:?}", s.dim(), s.knots());
        for x in [0.0, 0.3, 0.5, 0.99, 1.0] {
            let (first, v) = s.eval_basis(x)?;
            let (_, d) = s.eval_basis_deriv(x)?;
            println!(
                "  x={x:<4} first={first} sum={:.15} dsum={:+.1e} values={:.4?}",
                v.iter().sum::<f64>(),
                d.iter().sum::<f64>(),
                v
            );
        }
    }
    // a 3-point Gauss rule integrates x^5 exactly
    let rule = gauss_rule(3)?;
    let integral: f64 = rule.mapped(0.0, 1.0).map(|(x, w)| w * x.powi(5)).sum();
    println!("int_0^1 x^5 dx = {integral:.15} (exact {:.15})", 1.0 / 6.0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
