//! Bracket, A1 and A2 checks with the curvature constants for the built-in
//! models and a degenerate one.
//!
//! Usage: `cargo run --release --example check_conditions`

use nalgebra::DMatrix;
use subelliptic::algebra::{condition_report, example_family_a, ConditionReport};
use subelliptic::ModelSpec;

pub fn run() -> subelliptic::Result<Vec<(String, ConditionReport)>> {
    let symmetric = ModelSpec::new(2, 1, DMatrix::identity(2, 2), vec![DMatrix::identity(2, 2)])?;
    let models = [
        ("heisenberg", ModelSpec::heisenberg()),
        ("family A (m=3, alpha=(1,2))", example_family_a(3, &[1.0, 2.0], &[0.0, 0.0])?),
        ("block rotations (m=4, d=2)", ModelSpec::block_rotations_4x2()),
        ("symmetric A", symmetric),
    ];
    let mut out = Vec::new();
    for (name, model) in models {
        let r = condition_report(&model)?;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{name:<28} lambda {:>8.4}  theta {:>7}  A1 {:<5}  A2 {:<5}  c1 {:>7}  c2 {:>7}",
            r.lambda,
            fmt(r.theta_estimate),
            r.a1_satisfied.map_or("-".into(), |b| b.to_string()),
            r.a2_pass,
            fmt(r.c1),
            fmt(r.c2)
        );
        for v in &r.a2_violations {
            println!("    A2 violation: {v:?}");
        }
        out.push((name.to_string(), r));
    }
    Ok(out)
}

fn main() -> subelliptic::Result<()> {
    run()?;
    Ok(())
}
