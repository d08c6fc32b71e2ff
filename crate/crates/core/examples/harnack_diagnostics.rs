//! Entropy-gradient, Harnack, log-Harnack, Li-Yau and parabolic Harnack
//! diagnostics for a positive function, with the control-distance upper bound.
//!
//! Usage: `cargo run --release --example harnack_diagnostics [n_paths]`

use subelliptic::inequalities::{harnack_diagnostics, ControlBudget};
use subelliptic::montecarlo::Budget;
use subelliptic::{GroupPoint, ModelSpec, TestFunction};

/// Returns the number of rows that pass.
pub fn run(n_paths: usize) -> subelliptic::Result<usize> {
    let model = ModelSpec::heisenberg();
    let z = GroupPoint::origin(&model);
    let z_prime = GroupPoint::new(vec![0.5, 0.0], vec![0.0]);
    let f = TestFunction::Trig {
        a: vec![1.0, 0.0],
        b: vec![0.0],
        c: 0.0,
        amp: 0.5,
        offset: 1.0,
    };
    let rep = harnack_diagnostics(&model, &z, &z_prime, 1.0, &f, 2.0, &Budget::new(n_paths, 13), &ControlBudget::default())?;
    println!("f = {}, p = {}, rho(z, z') <= {:.5}, c1 = {}, c2 = {}", f.name(), rep.p, rep.rho_upper, rep.c1, rep.c2);
    for r in &rep.rows {
        println!(
            "  {:<28} {:>10.5} <= {:>10.5}  pass {:<5} {}",
            r.function,
            r.lhs.value,
            r.rhs.value,
            r.pass,
            r.caveat.as_deref().unwrap_or("")
        );
    }
    Ok(rep.rows.iter().filter(|r| r.pass).count())
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    run(n)?;
    Ok(())
}
