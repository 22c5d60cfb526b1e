//! Assembles the parameter-independent parts of the 2D Eriksson-Johnson
//! forms and recombines them for two values of epsilon.

use pgstab::assembly::{assemble_affine_parts, assemble_load};
use pgstab::opttest::factor_gram;
use pgstab::problems::ProblemSpec;

pub fn run_example() -> pgstab::Result<()> {
    let p = ProblemSpec::ej2d(8, 4, 1);
    let forms = assemble_affine_parts(&p, &p.trial_space()?, &p.test_space()?)?;
    println!(
        "trial dim {} (interior), test dim {}, {} affine parts",
        forms.trial_dim(),
        forms.test_dim(),
        forms.parts.len()
    );
    for (k, (part, theta)) in forms.parts.iter().zip(&forms.theta).enumerate() {
        println!("  part {k}: theta={theta:?} nnz={}", part.nnz());
    }
    let fac = factor_gram(&forms.gram)?;
    println!(
        "gram: nnz {} symmetric {} bandwidth {} min pivot {:.3e}",
        forms.gram.nnz(),
        forms.gram.is_symmetric(),
        fac.bandwidth(),
        fac.min_pivot()
    );
    for eps in [0.1, 1e-6] {
        let b = forms.evaluate(eps)?;
        let l = assemble_load(&p, &forms, eps)?;
        let ln: f64 = l.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("eps {eps:e}: |B|_F = {:.4e}, |L| = {ln:.4e}", b.frobenius_norm());
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
