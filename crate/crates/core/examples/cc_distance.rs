//! Upper bounds on the control distance from the origin of the Heisenberg
//! group, with the optimal piecewise-constant controls.
//!
//! Usage: `cargo run --release --example cc_distance`

use subelliptic::inequalities::{cc_controls, ControlBudget};
use subelliptic::{GroupPoint, ModelSpec};

pub fn run() -> subelliptic::Result<Vec<f64>> {
    let model = ModelSpec::heisenberg();
    let z = GroupPoint::origin(&model);
    let budget = ControlBudget::default();
    let targets = [
        GroupPoint::new(vec![1.0, 0.0], vec![0.0]),
        GroupPoint::new(vec![0.0, 0.0], vec![1.0]),
        GroupPoint::new(vec![0.5, 0.5], vec![-0.25]),
    ];
    let mut out = Vec::new();
    for t in &targets {
        let (rho, u) = cc_controls(&model, &z, t, &budget)?;
        let first: Vec<String> = u.chunks(2).take(3).map(|c| format!("({:.3}, {:.3})", c[0], c[1])).collect();
        println!("to x={:?} y={:?}: rho <= {rho:.5}; first controls {}", t.x, t.y, first.join(" "));
        out.push(rho);
    }
    Ok(out)
}

fn main() -> subelliptic::Result<()> {
    run()?;
    Ok(())
}
