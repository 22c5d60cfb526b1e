//! Drives a parameter sweep from a flat configuration, the same way the
//! `pgstab` binary does, and prints the resulting CSV.

use pgstab::cli::run_sweep;
use pgstab::config::RunConfig;

const CONFIG: &str = "
problem = ej1d
mesh = 16          # elements
mus = 1e-2, 1e-4, 1e-6
pipelines = galerkin, pg-dense
tol = 1e-10
";

pub fn run_example() -> pgstab::Result<()> {
    let mut cfg = RunConfig::parse_str(CONFIG)?;
    cfg.out = std::env::temp_dir().join(format!("pgstab-run-config-{}", std::process::id()));
    print!("{}", cfg.to_text());
    let rows = run_sweep(&cfg)?;
    println!();
    for r in &rows {
        println!(
            "{:<9} eps {:e}: {:>3} iterations, L2 {:.3e}, overshoot {:.3}",
            r.pipeline.name(),
            r.mu,
            r.iterations,
            r.l2_error,
            r.overshoot
        );
    }
    println!("\n{}", std::fs::read_to_string(cfg.out.join("sweep").join("sweep.csv"))?);
    std::fs::remove_dir_all(&cfg.out).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
