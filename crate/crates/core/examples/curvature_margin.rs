//! Pointwise curvature-dimension margins on random points for every
//! registered test function.
//!
//! Usage: `cargo run --release --example curvature_margin [n_points]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subelliptic::fields::{registry, CurvatureContext};
use subelliptic::ModelSpec;

/// Smallest margin seen per model.
pub fn run(n_points: usize) -> subelliptic::Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for (name, model) in [("heisenberg", ModelSpec::heisenberg()), ("block rotations", ModelSpec::block_rotations_4x2())] {
        let ctx = CurvatureContext::new(&model)?;
        let mut worst = (f64::INFINITY, String::new());
        for _ in 0..n_points {
            let z: Vec<f64> = (0..model.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            for f in registry::all_families(model.m(), model.d()) {
                for r in [0.1, 1.0, 10.0] {
                    let m = ctx.margin(&f.bind(&model), &z, r, &model);
                    if m < worst.0 {
                        worst = (m, format!("{} r={r}", f.name()));
                    }
                }
            }
        }
        println!("{name:<16} c1 {:.3} c2 {:.3}  min margin {:.3e} at {}", ctx.c1, ctx.c2, worst.0, worst.1);
        out.push(worst.0);
    }
    Ok(out)
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    run(n)?;
    Ok(())
}
