//! End-to-end runs of the `pgstab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pgstab::config::RunConfig;
use pgstab::opttest::mixed_solve_oracle;
use pgstab::pipeline::PgSystem;
use pgstab::problems::ProblemSpec;

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pgstab-cli-{}-{name}", std::process::id()));
    std::fs::remove_dir_all(&d).ok();
    d
}

fn pgstab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgstab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PGSTAB_OUT")
        .output()
        .unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn solve_pg_dense_matches_mixed_oracle_error() {
    let out = tmp("solve");
    let o = pgstab(&["solve", "--problem", "ej1d", "--mesh", "16", "--epsilon", "0.1", "--pipeline", "pg-dense"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(read(out.join("solve/report.json")).as_bytes());
    let sys = PgSystem::new(&ProblemSpec::ej1d(16)).unwrap();
    let load = sys.load(0.1).unwrap();
    let mixed = mixed_solve_oracle(&sys.forms, 0.1, &load).unwrap();
    let oracle = sys.errors(0.1, &sys.forms.full_coefficients(&mixed.x, &load.lift)).unwrap().l2;
    let l2 = report["l2_error"].as_f64().unwrap();
    assert!((l2 - oracle).abs() <= 1e-8, "{l2} vs {oracle}");
    let csv = read(out.join("solve/solution.csv"));
    assert_eq!(csv.lines().next(), Some("x,y,u_h,u_exact,error"));
    assert_eq!(csv.lines().count(), 102);
    let echoed = RunConfig::from_file(&out.join("config.txt")).unwrap();
    assert_eq!(echoed.mu(), 0.1);
    assert_eq!(echoed.problem_spec().unwrap().mesh, [16, 16]);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn ej2d_small_eps_hmat_solve_is_oscillation_free() {
    let out = tmp("ej2d");
    let o = pgstab(&["solve", "--epsilon", "1e-6", "--pipeline", "pg-hmat", "--tol", "1e-10"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&o.stdout);
    assert_eq!(s["converged"], true);
    assert!(s["overshoot"].as_f64().unwrap() <= 0.02);
    assert!(read(out.join("solve/hmatrix.txt")).starts_with("# hmatrix 297x260"));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn missing_model_is_an_actionable_error() {
    let out = tmp("missing");
    let o = pgstab(&["solve", "--pipeline", "pg-hmat-nn"], &out);
    assert_eq!(o.status.code(), Some(1));
    let e = json(&o.stderr);
    assert_eq!(e["error"]["kind"], "missing-artifact");
    assert!(e["error"]["message"].as_str().unwrap().contains("pgstab offline"));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn bad_input_exits_nonzero_with_json() {
    let out = tmp("bad");
    let o = pgstab(&["solve", "--problem", "helmholtz", "--epsilon", "0.1"], &out);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&o.stderr)["error"]["kind"], "config");
    let o = pgstab(&["solve", "--problem", "ej2d", "--orders", "3,2"], &out);
    assert_ne!(o.status.code(), Some(0));
    let o = pgstab(&["frobnicate"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&o.stderr)["error"]["kind"], "usage");
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn empty_sweep_writes_header_only() {
    let out = tmp("empty");
    let o = pgstab(&["sweep", "--problem", "ej1d", "--mus="], &out);
    assert!(o.status.success());
    let csv = read(out.join("sweep/sweep.csv"));
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("mu,pipeline,status"));
    std::fs::remove_dir_all(&out).ok();
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("wall_time_s");
            m.values_mut().for_each(strip_wall_time);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

#[test]
fn sweep_is_reproducible_and_consistent() {
    let a = tmp("sweep");
    let args = [
        "sweep",
        "--problem",
        "ej2d",
        "--mesh",
        "8x4",
        "--mus",
        "0.1,0.001",
        "--pipelines",
        "galerkin,pg-dense,pg-hmat,pg-hmat-nn",
    ];
    let oa = pgstab(&args, &a);
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let csv = read(a.join("sweep/sweep.csv"));
    let run = "sweep/epsilon-1e-1-pg-hmat/report.json";
    let mut ra = json(read(a.join(run)).as_bytes());
    assert!(pgstab(&args, &a).status.success());
    assert_eq!(csv, read(a.join("sweep/sweep.csv")));
    let mut rb = json(read(a.join(run)).as_bytes());
    strip_wall_time(&mut ra);
    strip_wall_time(&mut rb);
    assert_eq!(ra, rb);

    // pg-hmat-nn has no model: that row fails, the sweep goes on
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().filter(|r| r[1] == "pg-hmat-nn").all(|r| r[2] == "failed"));
    for r in rows.iter().filter(|r| r[2] == "ok") {
        let phases: u64 = r[6..12].iter().map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(phases, r[12].parse::<u64>().unwrap());
    }
    let summary = json(&oa.stdout);
    let total: u64 = rows.iter().filter(|r| r[2] == "ok").map(|r| r[12].parse::<u64>().unwrap()).sum();
    assert_eq!(summary["total_flops"].as_u64().unwrap(), total);
    assert_eq!(summary["failed"].as_u64().unwrap(), 2);

    // pg-dense and pg-hmat agree to the compression accuracy
    for mu in ["1e-1", "1e-3"] {
        let dense = read(a.join(format!("sweep/epsilon-{mu}-pg-dense/solution.csv")));
        let hmat = read(a.join(format!("sweep/epsilon-{mu}-pg-hmat/solution.csv")));
        let col = |s: &str| -> Vec<f64> { s.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect() };
        let (d, h) = (col(&dense), col(&hmat));
        let diff: f64 = d.iter().zip(&h).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-5 * norm, "{mu}: {diff} vs {norm}");
    }
    std::fs::remove_dir_all(&a).ok();
}

#[test]
fn offline_smallest_run_is_deterministic_and_usable() {
    let (a, b) = (tmp("offline-a"), tmp("offline-b"));
    let args = ["offline", "--problem", "ej2d", "--mesh", "8x4", "--depth", "0", "--grid-points", "3"];
    let o = pgstab(&args, &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(pgstab(&args, &b).status.success());
    let sidecar = json(read(a.join("offline/dataset.json")).as_bytes());
    assert_eq!(sidecar["mus"].as_array().unwrap().len(), 3);
    assert!(a.join("offline/dataset.bin").exists());
    assert!(a.join("offline/parts/part-0.bin").exists());
    assert_eq!(
        std::fs::read(a.join("offline/model.json")).unwrap(),
        std::fs::read(b.join("offline/model.json")).unwrap()
    );
    let o = pgstab(&["solve", "--problem", "ej2d", "--mesh", "8x4", "--epsilon", "0.01", "--pipeline", "pg-hmat-nn"], &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o.stdout)["converged"], true);
    let o = pgstab(&["compress", "--problem", "ej2d", "--mesh", "8x4", "--epsilon", "0.01"], &a);
    assert!(o.status.success());
    let stats = json(read(a.join("compress/stats.json")).as_bytes());
    assert!(stats["relative_frobenius_error"].as_f64().unwrap() <= 1e-5);
    let o = pgstab(&["bench", "--problem", "ej2d", "--mesh", "8x4", "--mus", "0.1"], &a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o.stdout)["rows"].as_array().unwrap().len(), 4);
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
}

#[test]
fn out_directory_from_environment() {
    let out = tmp("env");
    let o = Command::new(env!("CARGO_BIN_EXE_pgstab"))
        .args(["verify"])
        .env("PGSTAB_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let checks = json(read(out.join("verify.json")).as_bytes());
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn config_file_and_flags() {
    let out = tmp("config");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("run.cfg");
    std::fs::write(&cfg, "problem = helmholtz\nkappa = 2\nmesh = 6\npipeline = galerkin\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pgstab"))
        .args(["solve", "--config"])
        .arg(&cfg)
        .args(["--kappa", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&o.stdout);
    assert_eq!(s["mu"], 3.0);
    assert_eq!(s["pipeline"], "galerkin");
    assert!(read(out.join("config.txt")).contains("kappa = 3"));
    std::fs::remove_dir_all(&out).ok();
}
