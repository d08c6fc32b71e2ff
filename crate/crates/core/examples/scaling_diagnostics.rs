//! Horizon scaling of `E‖Q_T⁻¹‖`, of the weight moments and of the
//! normalized gradient `√(t Γ(P_t f) / P_t f²)`.
//!
//! Usage: `cargo run --release --example scaling_diagnostics [n_paths]`

use subelliptic::malliavin::weight_moment_diagnostic;
use subelliptic::montecarlo::{gradient_bound_scaling, q_inverse_scaling, Budget};
use subelliptic::{Direction, GroupPoint, ModelSpec, TestFunction};

/// Returns the three fitted slopes.
pub fn run(n_paths: usize) -> subelliptic::Result<[f64; 3]> {
    let model = ModelSpec::heisenberg();
    let z = GroupPoint::origin(&model);
    let ts = [0.25, 0.5, 1.0, 2.0, 4.0];
    let budget = Budget::new(n_paths, 11);
    let q = q_inverse_scaling(&model, &ts, &budget)?;
    let w = weight_moment_diagnostic(&model, &z, &Direction::vertical(2, 1, 0), &ts, 1, &budget)?;
    let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
    let g = gradient_bound_scaling(&model, &z, &f, &ts, &budget)?;
    println!("{:>5} {:>12} {:>12} {:>12} {:>10}", "t", "E|Q^-1|", "E|D*h|", "E|D*h~|", "ratio");
    for (i, t) in ts.iter().enumerate() {
        println!(
            "{t:>5} {:>12.5} {:>12.5} {:>12.5} {:>10.4}",
            q.rows[i].value.value, w.rows[i].moment_h.value, w.rows[i].moment_h_tilde.value, g.ratios[i].value.value
        );
    }
    println!(
        "slopes: Q^-1 {:.3} (expect -2), D*h~ {:.3} (expect -1), sqrt Gamma {:.3}; ratio bound {:.4}, bounded {}",
        q.slope, w.slope_h_tilde, g.sqrt_gamma.slope, g.bound, g.bounded
    );
    Ok([q.slope, w.slope_h_tilde, g.sqrt_gamma.slope])
}

fn main() -> subelliptic::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    run(n)?;
    Ok(())
}
