//! Bismut and Driver derivative formulas against their oracles on the
//! default trig suite for the Heisenberg group.
//!
//! Usage: `cargo run --release --example gradient_formulas [n_paths] [seed]`

use subelliptic::fields::registry::trig_suite;
use subelliptic::montecarlo::{gradient_suite, Budget, DEFAULT_FD_EPSILON};
use subelliptic::{Direction, GroupPoint, ModelSpec};

pub fn run(n_paths: usize, seed: u64) -> subelliptic::Result<usize> {
    let model = ModelSpec::heisenberg();
    let z0 = GroupPoint::origin(&model);
    let funcs = trig_suite(2, 1);
    let dirs = Direction::default_suite(2, 1);
    let rows = gradient_suite(&model, &z0, 1.0, &funcs, &dirs, &Budget::new(n_paths, seed), DEFAULT_FD_EPSILON, false)?;
    println!(
        "{:<36} {:<16} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}",
        "f", "dir", "bismut", "fd", "tol", "driver", "direct", "tol"
    );
    for r in &rows {
        println!(
            "{:<36} {:<16} {:>10.5} {:>10.5} {:>8.4} {:>10.5} {:>10.5} {:>8.4}",
            r.function, r.direction, r.bismut.value, r.fd.value, r.bismut_tolerance, r.driver.value, r.direct.value, r.driver_tolerance
        );
    }
    let pass = rows.iter().filter(|r| r.bismut_pass && r.driver_pass).count();
    println!("{pass}/{} rows pass", rows.len());
    Ok(pass)
}

fn main() -> subelliptic::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_paths = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    run(n_paths, seed)?;
    Ok(())
}
