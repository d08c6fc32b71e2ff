//! Runs every example on a small budget so they keep compiling and working.

#[allow(dead_code)]
#[path = "../examples/check_conditions.rs"]
mod check_conditions;
#[allow(dead_code)]
#[path = "../examples/simulate_paths.rs"]
mod simulate_paths;
#[allow(dead_code)]
#[path = "../examples/gradient_formulas.rs"]
mod gradient_formulas;
#[allow(dead_code)]
#[path = "../examples/curvature_margin.rs"]
mod curvature_margin;
#[allow(dead_code)]
#[path = "../examples/cc_distance.rs"]
mod cc_distance;
#[allow(dead_code)]
#[path = "../examples/reverse_poincare.rs"]
mod reverse_poincare;
#[allow(dead_code)]
#[path = "../examples/poincare.rs"]
mod poincare;
#[allow(dead_code)]
#[path = "../examples/semigroup_checks.rs"]
mod semigroup_checks;
#[allow(dead_code)]
#[path = "../examples/scaling_diagnostics.rs"]
mod scaling_diagnostics;
#[allow(dead_code)]
#[path = "../examples/harnack_diagnostics.rs"]
mod harnack_diagnostics;
#[allow(dead_code)]
#[path = "../examples/cli_config.rs"]
mod cli_config;

#[test]
fn check_conditions_runs() {
    let reports = check_conditions::run().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports[0].1.hormander && reports[0].1.a2_pass);
    assert!(!reports[3].1.hormander);
}

#[test]
fn simulate_paths_runs() {
    let (q, y2) = simulate_paths::run(2000, 64).unwrap();
    assert!((q - 4.0 / 3.0).abs() < 0.2 && (y2 - 1.0).abs() < 0.2);
}

#[test]
fn gradient_formulas_runs() {
    assert!(gradient_formulas::run(500, 1).unwrap() > 0);
}

#[test]
fn curvature_margin_runs() {
    assert!(curvature_margin::run(5).unwrap().iter().all(|m| *m >= -1e-9));
}

#[test]
fn cc_distance_runs() {
    let rho = cc_distance::run().unwrap();
    assert_close(rho[0], std::f64::consts::SQRT_2, 1e-6);
}

#[test]
fn reverse_poincare_runs() {
    reverse_poincare::run(300).unwrap();
}

#[test]
fn poincare_runs() {
    assert_eq!(poincare::run(300).unwrap().0.len(), 3);
}

#[test]
fn semigroup_checks_runs() {
    semigroup_checks::run(500).unwrap();
}

#[test]
fn scaling_diagnostics_runs() {
    let s = scaling_diagnostics::run(500).unwrap();
    assert!(s.iter().all(|v| v.is_finite()));
}

#[test]
fn harnack_diagnostics_runs() {
    harnack_diagnostics::run(500).unwrap();
}

#[test]
fn cli_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (check, simulate) = cli_config::run(dir.path()).unwrap();
    assert_eq!((check, simulate), (0, 0));
    for f in ["manifest.json", "check.json", "check.csv", "simulate.json", "simulate.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}
