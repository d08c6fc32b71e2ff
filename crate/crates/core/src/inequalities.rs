//! Reverse Poincaré, Poincaré and Harnack-type inequalities checked by Monte
//! Carlo, plus an upper bound on the intrinsic distance from explicit
//! horizontal controls.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::{a2_check, c_constants, hormander_lambda, lambda_is_positive, GroupPoint, ModelSpec, MATRIX_TOL};
use crate::error::{Error, Result};
use crate::fields::{Fields, TestFunction};
use crate::malliavin::{weights_from_functionals, Direction};
use crate::montecarlo::{carre_du_champ_samples, run_paths, summarize_carre_du_champ, Budget, Estimate};
use crate::paths::{compute_functionals, sample_brownian, terminal_point};

/// Relative discretization budget added to every slack.
pub const DISCRETIZATION_BUDGET: f64 = 1e-3;

/// Factor converting control length to the distance induced by `Γ`, whose
/// unit-speed curves satisfy `|u| = √2`.
pub const CC_GAMMA_FACTOR: f64 = std::f64::consts::SQRT_2;

/// Poincaré cases with `P_t Γ(f)` below this many standard errors are
/// skipped.
pub const POINCARE_MIN_SE: f64 = 5.0;

/// Allowed relative spread of the Poincaré constant across horizons.
pub const POINCARE_STABILITY: f64 = 0.2;

/// Caveat attached to checks that use an upper bound for the distance.
pub const RHO_CAVEAT: &str = "rho-upper-bound";

/// `lhs ≤ rhs + 3·√(se_l² + se_r²) + 1e−3·|rhs|`, returning
/// `(pass, absolute tolerance)`.
pub fn slack_rule(lhs: &Estimate, rhs: &Estimate) -> (bool, f64) {
    let tol = 3.0 * lhs.combined_se(rhs) + DISCRETIZATION_BUDGET * rhs.value.abs();
    (lhs.value - rhs.value <= tol, tol)
}

/// Structural checks recorded alongside a report.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummary {
    pub lambda: f64,
    pub hormander: bool,
    pub a2_pass: bool,
}

impl ConditionSummary {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let lambda = hormander_lambda(model)?;
        Ok(Self {
            lambda,
            hormander: lambda_is_positive(model, lambda),
            a2_pass: a2_check(model, MATRIX_TOL).0,
        })
    }
}

/// One case of an inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityRow {
    pub function: String,
    pub z: GroupPoint,
    pub t: f64,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `lhs / rhs`; `NaN` when `rhs = 0`.
    pub ratio: f64,
    /// Relative slack `tolerance / |rhs|`.
    pub slack: f64,
    /// Absolute tolerance used by the pass rule.
    pub tolerance: f64,
    pub pass: bool,
    /// Set when the case was not evaluated.
    pub skipped: bool,
    pub caveat: Option<String>,
}

impl InequalityRow {
    fn new(function: String, z: &GroupPoint, t: f64, lhs: Estimate, rhs: Estimate) -> Self {
        let (pass, tolerance) = slack_rule(&lhs, &rhs);
        Self {
            function,
            z: z.clone(),
            t,
            ratio: lhs.value / rhs.value,
            slack: tolerance / rhs.value.abs(),
            tolerance,
            pass,
            lhs,
            rhs,
            skipped: false,
            caveat: None,
        }
    }
}

/// A named set of cases with summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub inequality: String,
    pub model_id: String,
    pub conditions: ConditionSummary,
    pub warnings: Vec<String>,
    pub rows: Vec<InequalityRow>,
    /// Largest `lhs / rhs` over evaluated rows.
    pub worst_ratio: f64,
    /// Constant implied by the data (meaning depends on the inequality).
    pub empirical_constant: f64,
    pub all_pass: bool,
}

impl InequalityReport {
    fn new(inequality: &str, model_id: &str, conditions: ConditionSummary, warnings: Vec<String>, rows: Vec<InequalityRow>) -> Self {
        let evaluated = || rows.iter().filter(|r| !r.skipped);
        let worst_ratio = evaluated().map(|r| r.ratio).filter(|r| r.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let all_pass = evaluated().all(|r| r.pass);
        Self {
            inequality: inequality.into(),
            model_id: model_id.into(),
            conditions,
            warnings,
            worst_ratio,
            empirical_constant: worst_ratio,
            all_pass,
            rows,
        }
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.skipped && !r.pass).count()
    }

    /// One CSV line per row, shortest round-trip floats, LF newlines.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_tables(&[(&self.inequality, &self.model_id, &self.rows)], out)
    }
}

/// Writes several `(inequality, model, rows)` tables under one header.
pub fn write_csv_tables<W: Write>(tables: &[(&str, &str, &[InequalityRow])], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (inequality, model_id, rows) in tables {
        for r in rows.iter() {
            w.write_record(csv_record(inequality, model_id, r))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_record(inequality: &str, model_id: &str, r: &InequalityRow) -> Vec<String> {
    let pt = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    vec![
        inequality.to_string(),
        model_id.to_string(),
        r.function.clone(),
        pt(&r.z.x),
        pt(&r.z.y),
        r.t.to_string(),
        r.lhs.value.to_string(),
        r.lhs.stderr.to_string(),
        r.rhs.value.to_string(),
        r.rhs.stderr.to_string(),
        r.ratio.to_string(),
        r.slack.to_string(),
        r.pass.to_string(),
        r.skipped.to_string(),
        r.caveat.clone().unwrap_or_default(),
        r.lhs.seed.to_string(),
        r.lhs.n.to_string(),
        r.lhs.grid.n_steps.to_string(),
        (r.lhs.n_rejected + r.rhs.n_rejected).to_string(),
    ]
}

/// Column names of [`write_csv_tables`].
pub const CSV_HEADER: [&str; 19] = [
    "inequality",
    "model",
    "function",
    "x",
    "y",
    "t",
    "lhs",
    "lhs_se",
    "rhs",
    "rhs_se",
    "ratio",
    "slack",
    "pass",
    "skipped",
    "caveat",
    "seed",
    "n_paths",
    "n_steps",
    "n_rejected",
];

fn check_inputs(model: &ModelSpec, z: &GroupPoint, t_list: &[f64], f_list: &[TestFunction]) -> Result<()> {
    z.check(model)?;
    if f_list.is_empty() {
        return Err(Error::invalid("f_list", "no test functions given"));
    }
    if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid("t_list", "need positive horizons"));
    }
    for f in f_list {
        f.validate(model.m(), model.d())?;
    }
    Ok(())
}

fn condition_warnings(c: &ConditionSummary, need_hormander: bool) -> Vec<String> {
    let mut w = Vec::new();
    if need_hormander && !c.hormander {
        w.push("bracket condition fails (lambda = 0)".to_string());
    }
    if !c.a2_pass {
        w.push("structure condition A2 fails; the inequality is not guaranteed".to_string());
    }
    w
}

/// `Γ(P_t f) ≤ scale · ((m + 2d)/(2t)) (P_t f² − (P_t f)²)` at `z`. The
/// published constant is `scale = 1`; smaller scales probe sharpness.
pub fn reverse_poincare_with_scale(
    model: &ModelSpec,
    model_id: &str,
    z: &GroupPoint,
    t_list: &[f64],
    f_list: &[TestFunction],
    budget: &Budget,
    scale: f64,
) -> Result<InequalityReport> {
    Ok(reverse_poincare_scales(model, model_id, z, t_list, f_list, budget, &[scale])?.remove(0))
}

/// One reverse Poincaré report per constant multiplier, all from the
/// same samples.
pub fn reverse_poincare_scales(
    model: &ModelSpec,
    model_id: &str,
    z: &GroupPoint,
    t_list: &[f64],
    f_list: &[TestFunction],
    budget: &Budget,
    scales: &[f64],
) -> Result<Vec<InequalityReport>> {
    check_inputs(model, z, t_list, f_list)?;
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("scale", "need positive constant multipliers"));
    }
    let conditions = ConditionSummary::new(model)?;
    let warnings = condition_warnings(&conditions, true);
    let dim = (model.m() + 2 * model.d()) as f64;
    let mut cases = Vec::new();
    for f in f_list {
        for &t in t_list {
            let c = summarize_carre_du_champ(&carre_du_champ_samples(model, z, t, f, budget)?, model.m(), t);
            cases.push((f.name(), t, c));
        }
    }
    let reports = scales
        .iter()
        .map(|&scale| {
            let rows = cases
                .iter()
                .map(|(name, t, c)| {
                    let k = scale * dim / (2.0 * t);
                    let mut rhs = c.variance.clone();
                    rhs.value *= k;
                    rhs.stderr *= k;
                    InequalityRow::new(name.clone(), z, *t, c.gamma.clone(), rhs)
                })
                .collect();
            let name = if scale == 1.0 {
                "reverse_poincare".to_string()
            } else {
                format!("reverse_poincare_scaled_{scale}")
            };
            let mut report = InequalityReport::new(&name, model_id, conditions.clone(), warnings.clone(), rows);
            // Smallest admissible constant in units of the published one.
            report.empirical_constant = report.worst_ratio * scale;
            report
        })
        .collect();
    Ok(reports)
}

/// Reverse Poincaré with the constant `(m + 2d)/(2t)`.
pub fn reverse_poincare_report(
    model: &ModelSpec,
    model_id: &str,
    z: &GroupPoint,
    t_list: &[f64],
    f_list: &[TestFunction],
    budget: &Budget,
) -> Result<InequalityReport> {
    reverse_poincare_with_scale(model, model_id, z, t_list, f_list, budget, 1.0)
}

/// Poincaré report plus the per-horizon constants.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub report: InequalityReport,
    /// `(t, Ĉ(t))`, `Ĉ(t)` the maximum over evaluated cases.
    pub constants: Vec<(f64, f64)>,
    /// All `Ĉ(t)` within ±20% of their mean.
    pub stable: bool,
}

/// `P_t f² − (P_t f)² ≤ 2 C t P_t Γ(f)`: rows carry lhs = variance and
/// rhs = `2t P_t Γ(f)`, so `ratio` is the case constant `Ĉ`.
pub fn poincare_report(
    model: &ModelSpec,
    model_id: &str,
    z: &GroupPoint,
    t_list: &[f64],
    f_list: &[TestFunction],
    budget: &Budget,
) -> Result<PoincareReport> {
    check_inputs(model, z, t_list, f_list)?;
    let conditions = ConditionSummary::new(model)?;
    let warnings = condition_warnings(&conditions, false);
    let fields = Fields::new(model);
    let m = model.m();
    let mut rows = Vec::new();
    for f in f_list {
        let bound = f.bind(model);
        for &t in t_list {
            let grid = budget.grid(t)?;
            let s = run_paths(budget, grid, 3, |idx| {
                let b = sample_brownian(grid, m, budget.seed, idx);
                let zt = terminal_point(model, z, &b);
                let fz = f.eval_point(&zt);
                Some(vec![fz, fz * fz, fields.gamma(&bound, &zt.concat())])
            })?;
            let variance = s.delta(&[0, 1], |v| v[1] - v[0] * v[0]);
            let pg = s.estimate(2);
            let skipped = !(pg.value > POINCARE_MIN_SE * pg.stderr) || pg.value <= 0.0;
            let mut rhs = pg.clone();
            rhs.value *= 2.0 * t;
            rhs.stderr *= 2.0 * t;
            let mut row = InequalityRow::new(f.name(), z, t, variance, rhs);
            row.pass = row.ratio.is_finite();
            row.skipped = skipped;
            rows.push(row);
        }
    }
    let constants: Vec<(f64, f64)> = t_list
        .iter()
        .map(|&t| {
            let c = rows
                .iter()
                .filter(|r| r.t == t && !r.skipped)
                .map(|r| r.ratio)
                .fold(f64::NEG_INFINITY, f64::max);
            (t, c)
        })
        .collect();
    let mean = constants.iter().map(|c| c.1).sum::<f64>() / constants.len() as f64;
    let stable = mean.is_finite() && constants.iter().all(|c| (c.1 - mean).abs() <= POINCARE_STABILITY * mean);
    let report = InequalityReport::new("poincare", model_id, conditions, warnings, rows);
    Ok(PoincareReport {
        report,
        constants,
        stable,
    })
}

/// Largest endpoint residual accepted by [`cc_distance_upper`].
pub const CONNECT_TOL: f64 = 1e-4;

/// Budget of [`cc_distance_upper`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlBudget {
    /// Piecewise-constant segments.
    pub segments: usize,
    /// Random restarts besides the straight-line guess.
    pub starts: usize,
    /// Levenberg-Marquardt iterations per penalty level.
    pub iters: usize,
    pub seed: u64,
}

impl Default for ControlBudget {
    fn default() -> Self {
        Self {
            segments: 8,
            starts: 8,
            iters: 200,
            seed: 0xCC,
        }
    }
}

/// Endpoint of the horizontal system `ẋ = σu`, `ẏ_l = <A_l x, u>` on
/// `[0, 1]` with `K` constant segments, integrated exactly.
pub fn control_endpoint(model: &ModelSpec, z: &GroupPoint, controls: &[f64], k: usize) -> Vec<f64> {
    let (m, d) = (model.m(), model.d());
    let h = 1.0 / k as f64;
    let mut x = DVector::from_column_slice(&z.x);
    let mut y = z.y.clone();
    for seg in 0..k {
        let u = DVector::from_column_slice(&controls[seg * m..(seg + 1) * m]);
        for l in 0..d {
            let a = &model.a()[l];
            y[l] += (a * &x).dot(&u) * h + (&model.a_sigma()[l] * &u).dot(&u) * h * h / 2.0;
        }
        x += model.sigma() * &u * h;
    }
    x.iter().cloned().chain(y).collect()
}

fn control_length(controls: &[f64], m: usize, k: usize) -> f64 {
    controls.chunks(m).map(|u| u.iter().map(|c| c * c).sum::<f64>().sqrt()).sum::<f64>() / k as f64
}

fn endpoint_residual(model: &ModelSpec, z: &GroupPoint, target: &[f64], u: &[f64], k: usize) -> DVector<f64> {
    let e = control_endpoint(model, z, u, k);
    DVector::from_iterator(e.len(), e.iter().zip(target).map(|(a, b)| a - b))
}

/// Jacobian of the endpoint map by central differences (exact: the map is
/// quadratic in the controls).
fn endpoint_jacobian(model: &ModelSpec, z: &GroupPoint, u: &[f64], k: usize) -> DMatrix<f64> {
    let n = u.len();
    let dim = model.dim();
    let mut jac = DMatrix::zeros(dim, n);
    let mut v = u.to_vec();
    for c in 0..n {
        let h = 1e-4;
        v[c] = u[c] + h;
        let p = control_endpoint(model, z, &v, k);
        v[c] = u[c] - h;
        let q = control_endpoint(model, z, &v, k);
        v[c] = u[c];
        for r in 0..dim {
            jac[(r, c)] = (p[r] - q[r]) / (2.0 * h);
        }
    }
    jac
}

/// Penalized energy minimization followed by a minimum-norm Newton
/// projection onto the endpoint constraint. Returns the controls and the
/// final residual norm.
fn optimize_controls(model: &ModelSpec, z: &GroupPoint, target: &[f64], mut u: Vec<f64>, k: usize, iters: usize) -> (Vec<f64>, f64) {
    let n = u.len();
    let kf = k as f64;
    let objective = |u: &[f64], w: f64| {
        let r = endpoint_residual(model, z, target, u, k);
        w * r.norm_squared() + u.iter().map(|c| c * c).sum::<f64>() / kf
    };
    for w in [1e1_f64, 1e3, 1e5, 1e7] {
        let mut mu = 1e-3;
        let sw = w.sqrt();
        for _ in 0..iters {
            let r = endpoint_residual(model, z, target, &u, k);
            let jac = endpoint_jacobian(model, z, &u, k);
            // stacked residual [√w r; u/√K]
            let jr = jac.transpose() * &r * w;
            let grad = jr + DVector::from_iterator(n, u.iter().map(|c| c / kf));
            let mut h = jac.transpose() * &jac * w;
            for c in 0..n {
                h[(c, c)] += 1.0 / kf;
            }
            let before = objective(&u, w);
            let mut improved = false;
            for _ in 0..20 {
                let mut hm = h.clone();
                for c in 0..n {
                    hm[(c, c)] += mu * (1.0 + h[(c, c)]);
                }
                let Some(step) = hm.cholesky().map(|ch| ch.solve(&(-&grad))) else {
                    mu *= 10.0;
                    continue;
                };
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if objective(&trial, w) < before {
                    u = trial;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
                mu *= 10.0;
            }
            if !improved || grad.norm() < 1e-12 * sw {
                break;
            }
        }
    }
    for _ in 0..50 {
        let r = endpoint_residual(model, z, target, &u, k);
        if r.norm() < 1e-13 {
            break;
        }
        let jac = endpoint_jacobian(model, z, &u, k);
        let jjt = &jac * jac.transpose();
        let Some(sol) = jjt.clone().cholesky().map(|c| c.solve(&r)).or_else(|| jjt.lu().solve(&r)) else {
            break;
        };
        let step = jac.transpose() * sol;
        u.iter_mut().zip(step.iter()).for_each(|(a, b)| *a -= b);
    }
    let res = endpoint_residual(model, z, target, &u, k).norm();
    (u, res)
}

/// Upper bound on the intrinsic distance: `√2 ·` shortest control length
/// found over piecewise-constant controls steering `z` to `z′`.
pub fn cc_distance_upper(model: &ModelSpec, z: &GroupPoint, z_prime: &GroupPoint, budget: &ControlBudget) -> Result<f64> {
    Ok(cc_controls(model, z, z_prime, budget)?.0)
}

/// As [`cc_distance_upper`], also returning the best controls.
pub fn cc_controls(model: &ModelSpec, z: &GroupPoint, z_prime: &GroupPoint, budget: &ControlBudget) -> Result<(f64, Vec<f64>)> {
    cc_controls_from(model, z, z_prime, budget, None)
}

/// [`cc_controls`] with one extra caller-supplied start (`m·K` controls,
/// segment-major).
pub fn cc_controls_from(
    model: &ModelSpec,
    z: &GroupPoint,
    z_prime: &GroupPoint,
    budget: &ControlBudget,
    start: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    z.check(model)?;
    z_prime.check(model)?;
    if budget.segments == 0 {
        return Err(Error::invalid("segments", "need at least one segment"));
    }
    let lambda = hormander_lambda(model)?;
    if !lambda_is_positive(model, lambda) {
        return Err(Error::ZeroLambda);
    }
    let (m, k) = (model.m(), budget.segments);
    if z == z_prime {
        return Ok((0.0, vec![0.0; m * k]));
    }
    let target = z_prime.concat();
    let dx = DVector::from_iterator(m, z_prime.x.iter().zip(&z.x).map(|(a, b)| a - b));
    let straight: Vec<f64> = (0..k).flat_map(|_| (model.sigma_inv() * &dx).iter().cloned().collect::<Vec<_>>()).collect();
    let scale = straight.iter().map(|c| c.abs()).fold(0.0, f64::max).max(
        z_prime.y.iter().zip(&z.y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max).sqrt(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut best_res = f64::INFINITY;
    if let Some(st) = start {
        if st.len() != m * k {
            return Err(Error::DimensionMismatch(format!("start needs {} controls", m * k)));
        }
    }
    let n_starts = budget.starts + 1 + usize::from(start.is_some());
    for s in 0..n_starts {
        let init: Vec<f64> = if s == 0 {
            straight.clone()
        } else if s == budget.starts + 1 {
            start.expect("extra start").to_vec()
        } else {
            straight
                .iter()
                .map(|c| c + scale.max(0.5) * 2.0 * (rng.random::<f64>() - 0.5))
                .collect()
        };
        let (u, res) = optimize_controls(model, z, &target, init, k, budget.iters);
        best_res = best_res.min(res);
        if res <= CONNECT_TOL {
            let len = control_length(&u, m, k);
            if best.as_ref().is_none_or(|b| len < b.0) {
                best = Some((len, u));
            }
        }
    }
    match best {
        Some((len, u)) => Ok((CC_GAMMA_FACTOR * len, u)),
        None => Err(Error::FailedToConnect { residual: best_res }),
    }
}

/// Harnack-type diagnostics at `(z, z′)`.
#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub rho_upper: f64,
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
    pub rows: Vec<InequalityRow>,
}

/// Finite-difference step in `t` for `∂_t P_t f`, relative to `t`.
const DT_REL_STEP: f64 = 1e-2;

fn positive_columns(model: &ModelSpec, z: &GroupPoint, t: f64, f: &TestFunction, p: f64, budget: &Budget) -> Result<crate::montecarlo::Samples> {
    let (m, d) = (model.m(), model.d());
    let grid = budget.grid(t)?;
    let mut dirs: Vec<Direction> = (0..m).map(|i| Direction::carre_du_champ(model, z, i)).collect();
    dirs.extend((0..d).map(|l| Direction::vertical(m, d, l)));
    let lo = budget.grid(t * (1.0 - DT_REL_STEP))?;
    let hi = budget.grid(t * (1.0 + DT_REL_STEP))?;
    // f, f log f, log f, f^p, f(t−δ), f(t+δ), f·D*h̃ along X_i then ∂_{y_l}
    run_paths(budget, grid, 6 + m + d, |idx| {
        let b = sample_brownian(grid, m, budget.seed, idx);
        let fz = f.eval_point(&terminal_point(model, z, &b));
        let f_lo = f.eval_point(&terminal_point(model, z, &sample_brownian(lo, m, budget.seed, idx)));
        let f_hi = f.eval_point(&terminal_point(model, z, &sample_brownian(hi, m, budget.seed, idx)));
        let funcs = compute_functionals(model, &b);
        let ws = weights_from_functionals(model, z, &dirs, &funcs);
        if ws[0].rejected {
            return None;
        }
        let mut row = vec![fz, fz * fz.ln(), fz.ln(), fz.powf(p), f_lo, f_hi];
        row.extend(ws.iter().map(|w| fz * w.dstar_h_tilde));
        Some(row)
    })
}

/// Entropy-gradient, Harnack, log-Harnack, Li-Yau and parabolic Harnack
/// checks for a positive `f`. Rows using the distance carry
/// [`RHO_CAVEAT`]: an upper bound on the distance weakens the statement,
/// so a pass is weaker than the inequality and a failure is a finding.
pub fn harnack_diagnostics(
    model: &ModelSpec,
    z: &GroupPoint,
    z_prime: &GroupPoint,
    t: f64,
    f: &TestFunction,
    p: f64,
    budget: &Budget,
    controls: &ControlBudget,
) -> Result<HarnackReport> {
    z.check(model)?;
    z_prime.check(model)?;
    f.validate(model.m(), model.d())?;
    if !f.is_positive() {
        return Err(Error::NonPositiveFunction(f.name()));
    }
    if !(p > 1.0) {
        return Err(Error::invalid("p", "Harnack exponent must exceed 1"));
    }
    let (m, d) = (model.m(), model.d());
    let (c1, c2) = c_constants(model)?;
    let rho = cc_distance_upper(model, z, z_prime, controls)?;
    let k1 = (c2 + 8.0 * c1) / c2;
    let k4 = (c2 + 6.0 * c1) / c2;
    let s_time = t;

    let at_z = positive_columns(model, z, t, f, p, budget)?;
    let at_zp = positive_columns(model, z_prime, t, f, p, budget)?;
    let later = positive_columns(model, z_prime, t + s_time, f, p, budget)?;
    let xi: Vec<usize> = (6..6 + m).collect();
    let yl: Vec<usize> = (6 + m..6 + m + d).collect();
    let half_sq = |v: &[f64]| 0.5 * v.iter().map(|c| c * c).sum::<f64>();
    let mut rows = Vec::new();
    let name = f.name();

    // (1) entropy-gradient at z
    let mut cols = vec![0];
    cols.extend(&xi);
    cols.extend(&yl);
    let lhs = at_z.delta(&cols, |v| {
        let pf = v[0];
        (t * half_sq(&v[1..1 + m]) + c2 * t * t * half_sq(&v[1 + m..]) / 4.0) / pf
    });
    let rhs = at_z.delta(&[0, 1], |v| k1 * (v[1] - v[0] * v[0].ln()));
    rows.push(InequalityRow::new(format!("entropy_gradient {name}"), z, t, lhs, rhs));

    // (2) Harnack with power p
    let lhs = at_z.delta(&[0], |v| v[0].powf(p));
    let rhs = at_zp.delta(&[3], |v| v[0] * (p * k1 * rho * rho / (4.0 * (p - 1.0) * t)).exp());
    let mut row = InequalityRow::new(format!("harnack p={p} {name}"), z, t, lhs, rhs);
    row.caveat = Some(RHO_CAVEAT.into());
    rows.push(row);

    // (3) log-Harnack
    let lhs = at_z.estimate(2);
    let rhs = at_zp.delta(&[0], |v| v[0].ln() + k1 * rho * rho / (4.0 * t));
    let mut row = InequalityRow::new(format!("log_harnack {name}"), z, t, lhs, rhs);
    row.caveat = Some(RHO_CAVEAT.into());
    rows.push(row);

    // (4) Li-Yau at z, ∂_t by common-normal differences in t
    let lhs = at_z.delta(&cols, |v| {
        let pf = v[0];
        (half_sq(&v[1..1 + m]) + c2 * t / 6.0 * half_sq(&v[1 + m..])) / (pf * pf)
    });
    let delta = t * DT_REL_STEP;
    let rhs = at_z.delta(&[0, 4, 5], |v| {
        let dlog = (v[2] - v[1]) / (2.0 * delta) / v[0];
        k4 * dlog + m as f64 * k4 * k4 / (2.0 * t)
    });
    rows.push(InequalityRow::new(format!("li_yau {name}"), z, t, lhs, rhs));

    // (5) parabolic Harnack with s = t
    let lhs = at_z.estimate(0);
    let factor = ((t + s_time) / t).powf(m as f64 * k4 / 2.0) * (k4 * rho * rho / (4.0 * m as f64 * s_time)).exp();
    let rhs = later.delta(&[0], |v| v[0] * factor);
    let mut row = InequalityRow::new(format!("parabolic_harnack s={s_time} {name}"), z, t, lhs, rhs);
    row.caveat = Some(RHO_CAVEAT.into());
    rows.push(row);

    Ok(HarnackReport {
        rho_upper: rho,
        c1,
        c2,
        p,
        rows,
    })
}
