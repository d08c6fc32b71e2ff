//! Reverse Poincaré inequality with the explicit constant `(m + 2d)/(2t)`
//! and its sharpness control, on the trig and Gaussian suites.
//!
//! Usage: `cargo run --release --example reverse_poincare [n_paths]`

use subelliptic::fields::registry;
use subelliptic::inequalities::reverse_poincare_scales;
use subelliptic::montecarlo::Budget;
use subelliptic::{GroupPoint, ModelSpec};

/// Returns `(failures at the constant, failures at a tenth of it)`.
pub fn run(n_paths: usize) -> subelliptic::Result<(usize, usize)> {
    let model = ModelSpec::heisenberg();
    let z = GroupPoint::origin(&model);
    let mut f_list = registry::trig_suite(2, 1);
    f_list.extend(registry::gauss_suite());
    let reports = reverse_poincare_scales(&model, "heisenberg", &z, &[0.5, 1.0, 2.0], &f_list, &Budget::new(n_paths, 5), &[1.0, 0.1])?;
    let (rp, sharp) = (&reports[0], &reports[1]);
    println!("{:<36} {:>4} {:>10} {:>10} {:>7} {:>5}", "f", "t", "Gamma", "rhs", "ratio", "pass");
    for r in &rp.rows {
        println!("{:<36} {:>4} {:>10.5} {:>10.5} {:>7.3} {:>5}", r.function, r.t, r.lhs.value, r.rhs.value, r.ratio, r.pass);
    }
    println!(
        "constant (m+2d)/2t: {} failures, worst ratio {:.3}; constant / 10: {} failures",
        rp.n_failed(),
        rp.worst_ratio,
        sharp.n_failed()
    );
    Ok((rp.n_failed(), sharp.n_failed()))
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let (fails, _) = run(n)?;
    std::process::exit(i32::from(fails > 0));
}
