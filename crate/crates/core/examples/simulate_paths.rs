//! Terminal moments of the Heisenberg diffusion and of `Q_T` against their
//! Gaussian closed forms.
//!
//! Usage: `cargo run --release --example simulate_paths [n_paths] [n_steps]`

use subelliptic::montecarlo::{run_paths, Budget};
use subelliptic::paths::{compute_functionals, sample_brownian, terminal_point};
use subelliptic::{GroupPoint, ModelSpec};

/// Returns `(E q11(T), E Y(T)²)` at T = 1.
pub fn run(n_paths: usize, n_steps: usize) -> subelliptic::Result<(f64, f64)> {
    let model = ModelSpec::heisenberg();
    let z0 = GroupPoint::origin(&model);
    let budget = Budget::new(n_paths, 7).with_steps(n_steps);
    let grid = budget.grid(1.0)?;
    let s = run_paths(&budget, grid, 4, |idx| {
        let b = sample_brownian(grid, 2, budget.seed, idx);
        let zt = terminal_point(&model, &z0, &b);
        let f = compute_functionals(&model, &b);
        Some(vec![zt.x[0], zt.y[0], zt.y[0] * zt.y[0], f.q[(0, 0)]])
    })?;
    let rows = [("E X1(1)", 0.0), ("E Y(1)", 0.0), ("E Y(1)^2", 1.0), ("E q11(1)", 4.0 / 3.0)];
    for (c, (name, exact)) in rows.iter().enumerate() {
        let e = s.estimate(c);
        println!("{name:<10} {:>9.5} ± {:.5}   exact {exact:.5}   |z| {:.2}", e.value, e.stderr, (e.value - exact).abs() / e.stderr);
    }
    Ok((s.mean(3), s.mean(2)))
}

fn main() -> subelliptic::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_paths = args.next().and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let n_steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(512);
    run(n_paths, n_steps)?;
    Ok(())
}
