//! Bismut and Driver derivative formulas, curvature checks and functional
//! inequalities for diffusions generated by `L = ½ Σ X_i²` on generalized
//! Heisenberg-type groups `R^m × R^d`.
//!
//! The crate is organised bottom-up:
//!
//! - [`algebra`]: model specification, group law, bracket/structure checkers.
//! - [`fields`]: exact application of `X_i`, `X̂_i`, `Θ_l`, `𝔻`, `L` and the
//!   carré du champ operators to analytic test functions.
//! - [`paths`]: Brownian drivers, the SDE on a uniform grid, path functionals.
//! - [`malliavin`]: per-path Malliavin weights `D*h`, `D*h̃`.
//! - [`montecarlo`]: reproducible parallel estimators and oracles.
//! - [`inequalities`]: reverse Poincaré, Poincaré and Harnack-type reports.
//! - [`cli`]: configuration files and the command-line front end.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod algebra;
pub mod cli;
pub mod error;
pub mod fields;
pub mod inequalities;
pub mod malliavin;
pub mod montecarlo;
pub mod paths;

pub use algebra::{GroupPoint, ModelSpec};
pub use error::{Error, Result};
pub use fields::TestFunction;
pub use malliavin::Direction;
pub use montecarlo::{Estimate, ExperimentConfig};
