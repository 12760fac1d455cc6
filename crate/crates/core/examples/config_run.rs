//! Drive the whole pipeline from a JSON config, the same way `clpv run` does.

use std::path::PathBuf;

use contraction_lpv::config::{Plan, Stages};

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or(root.join("configs/casestudy.json"));
    let plan = Plan::load(&path).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    });
    let out = std::env::temp_dir().join("clpv-config-run");
    let report = plan.execute(&out, Stages::ALL).unwrap();
    for c in &report.certifications {
        println!("certification {:<12} {:?}", c.name, c.report.as_ref().map(|r| (r.verdict, r.certified_scalar)));
    }
    for r in &report.runs {
        println!("run {}/{} lambda_fit {:?}", r.summary.scenario, r.summary.controller, r.summary.lambda_fit);
    }
    for line in report.failed_predicates() {
        println!("failed: {line}");
    }
    println!("artifacts in {}, exit code {}", out.display(), report.exit_code());
}
