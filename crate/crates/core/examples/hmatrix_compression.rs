//! Compresses the optimal test matrix of the 26x10 Eriksson-Johnson problem
//! into a quadtree of low-rank blocks and compares it with the dense matrix.

use pgstab::hmat::{create_tree, hmatvec_vec, CompressionParams};
use pgstab::pipeline::PgSystem;
use pgstab::problems::ProblemSpec;
use pgstab::{FlopCounter, Phase};

pub fn run_example() -> pgstab::Result<()> {
    let sys = PgSystem::new(&ProblemSpec::ej2d(26, 10, 1))?;
    let params = CompressionParams::default();
    for eps in [0.1, 1e-6] {
        let w = sys.test_matrix(eps, None)?;
        let fc = FlopCounter::new();
        let tree = create_tree(&w, &params, Some(&fc))?;
        let rel = (tree.decompress() - &w).norm() / w.norm();
        let x: Vec<f64> = (0..w.ncols()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let hx = hmatvec_vec(&tree, &x, None)?;
        let dx = &w * nalgebra::DVector::from_column_slice(&x);
        let mv: f64 = hx.iter().zip(dx.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dx.norm();
        println!(
            "eps {eps:e}: {} leaves, depth {}, max rank {}, storage {} of {} ({:.1}%)",
            tree.leaf_count(),
            tree.depth(),
            tree.max_rank(),
            tree.storage(),
            w.len(),
            100.0 * tree.storage() as f64 / w.len() as f64
        );
        println!(
            "  |H - W|_F / |W|_F = {rel:.2e}, matvec error {mv:.2e}, svd flops {}, admissibility flops {}",
            fc.get(Phase::Svd),
            fc.get(Phase::Admissibility)
        );
        println!("  matvec flops: dense {}, hierarchical {}", 2 * w.len(), tree.matvec_flops(1));
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
