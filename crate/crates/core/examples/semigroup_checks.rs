//! Dilation identity and hat-field commutation, plus the negative control
//! on a model whose `A σ` is not skew.
//!
//! Usage: `cargo run --release --example semigroup_checks [n_paths]`

use nalgebra::DMatrix;
use subelliptic::montecarlo::{semigroup_property_checks, Budget, Comparison};
use subelliptic::{GroupPoint, ModelSpec, TestFunction};

fn show(c: &Comparison) {
    println!(
        "  {:<28} {:>10.5} vs {:>10.5}  |diff| {:.5}  tol {:.5}  pass {}",
        c.label,
        c.lhs.value,
        c.rhs.value,
        c.discrepancy().abs(),
        c.tolerance,
        c.pass
    );
}

/// Returns `(dilation and hat pass on Heisenberg, hat passes on the control)`.
pub fn run(n_paths: usize) -> subelliptic::Result<(bool, bool)> {
    let z0 = GroupPoint::new(vec![0.3, -0.2], vec![0.1]);
    let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
    let budget = Budget::new(n_paths, 9);
    let good = semigroup_property_checks(&ModelSpec::heisenberg(), &z0, &f, 0.5, 2f64.ln(), &budget)?;
    println!("Heisenberg, t = 0.5, s = ln 2, f = {}", f.name());
    show(&good.dilation);
    good.hat.iter().for_each(show);
    let bad_model = ModelSpec::new(2, 1, DMatrix::identity(2, 2), vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0])])?;
    let bad = semigroup_property_checks(&bad_model, &z0, &f, 0.5, 2f64.ln(), &budget)?;
    println!("A = [[0, 0], [2, 0]] (A sigma not skew)");
    bad.hat.iter().for_each(show);
    Ok((good.dilation.pass && good.hat_pass(), bad.hat_pass()))
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    run(n)?;
    Ok(())
}
