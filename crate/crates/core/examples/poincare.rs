//! Empirical Poincaré constants `Var_t f / (2t P_t Γ(f))` across horizons.
//!
//! Usage: `cargo run --release --example poincare [n_paths]`

use subelliptic::fields::registry;
use subelliptic::inequalities::poincare_report;
use subelliptic::montecarlo::Budget;
use subelliptic::{GroupPoint, ModelSpec, TestFunction};

/// Returns the per-horizon constants and the stability verdict.
pub fn run(n_paths: usize) -> subelliptic::Result<(Vec<(f64, f64)>, bool)> {
    let model = ModelSpec::heisenberg();
    let z = GroupPoint::origin(&model);
    let mut f_list = registry::trig_suite(2, 1);
    f_list.push(TestFunction::X { i: 0 });
    let rep = poincare_report(&model, "heisenberg", &z, &[0.5, 1.0, 2.0], &f_list, &Budget::new(n_paths, 5))?;
    for r in &rep.report.rows {
        let c = if r.skipped { "skipped".to_string() } else { format!("{:.4}", r.ratio) };
        println!("{:<36} t={:<4} C = {c}", r.function, r.t);
    }
    for (t, c) in &rep.constants {
        println!("t = {t}: C(t) = {c:.4}");
    }
    println!("stable within 20%: {}", rep.stable);
    Ok((rep.constants.clone(), rep.stable))
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    run(n)?;
    Ok(())
}
