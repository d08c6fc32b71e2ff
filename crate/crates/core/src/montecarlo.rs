//! Reproducible parallel Monte Carlo estimators.
//!
//! Every path draws from its own stream keyed by `(seed, path index)`.
//! Per-path samples are collected in index order and reduced by a fixed
//! pairwise tree, so estimates are bit-identical for any worker count.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{GroupPoint, ModelSpec};
use crate::error::{Error, Result};
use crate::fields::{apply_xi_hat, x_hat_field, Smooth, TestFunction};
use crate::malliavin::{weights_from_functionals, Direction};
use crate::paths::{compute_functionals, invert_q, sample_brownian, terminal_point, PathGrid, DEFAULT_STEPS};

/// Estimates with a larger rejected fraction are flagged.
pub const MAX_REJECTION_RATE: f64 = 1e-3;

/// Default central-difference step.
pub const DEFAULT_FD_EPSILON: f64 = 1e-3;

/// Bias budget added to the finite-difference acceptance tolerance.
pub const FD_BIAS_BUDGET: f64 = 1e-4;

/// Resamples used by [`Samples::bootstrap_se`].
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Sum with a fixed binary tree over the slice; the result depends on the
/// values and their order only.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Default worker count: the machine's available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// A Monte Carlo estimate with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Accepted paths.
    pub n: usize,
    pub seed: u64,
    pub n_rejected: usize,
    pub grid: PathGrid,
    /// Rejection rate above [`MAX_REJECTION_RATE`].
    pub flagged: bool,
}

impl Estimate {
    /// `√(se₁² + se₂²)`.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|a − b| ≤ 3·combined SE + bias`.
    pub fn agrees_with(&self, other: &Estimate, bias: f64) -> bool {
        (self.value - other.value).abs() <= 3.0 * self.combined_se(other) + bias
    }

    /// `|value − target| ≤ 3·SE` (exact equality is accepted at zero SE).
    pub fn within_3se(&self, target: f64) -> bool {
        (self.value - target).abs() <= 3.0 * self.stderr
    }
}

/// Path count, grid size, seed and worker count for one estimator call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Budget {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps: DEFAULT_STEPS,
            seed,
            workers: default_workers(),
        }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn grid(&self, t: f64) -> Result<PathGrid> {
        PathGrid::new(t, self.n_steps)
    }
}

/// Per-path sample matrix (accepted paths only, in path order).
#[derive(Debug, Clone)]
pub struct Samples {
    pub k: usize,
    pub n_total: usize,
    pub n_rejected: usize,
    pub seed: u64,
    pub grid: PathGrid,
    data: Vec<f64>,
}

impl Samples {
    pub fn n(&self) -> usize {
        self.data.len() / self.k.max(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.n()).map(|r| self.data[r * self.k + c]).collect()
    }

    pub fn mean(&self, c: usize) -> f64 {
        pairwise_sum(&self.column(c)) / self.n() as f64
    }

    /// Sample covariance of columns `a` and `b`.
    pub fn covariance(&self, a: usize, b: usize) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        let (ma, mb) = (self.mean(a), self.mean(b));
        let prod: Vec<f64> = (0..n)
            .map(|r| (self.data[r * self.k + a] - ma) * (self.data[r * self.k + b] - mb))
            .collect();
        pairwise_sum(&prod) / (n - 1) as f64
    }

    fn wrap(&self, value: f64, stderr: f64) -> Estimate {
        Estimate {
            value,
            stderr,
            n: self.n(),
            seed: self.seed,
            n_rejected: self.n_rejected,
            grid: self.grid,
            flagged: self.n_rejected as f64 > MAX_REJECTION_RATE * self.n_total as f64,
        }
    }

    pub fn estimate(&self, c: usize) -> Estimate {
        let n = self.n().max(1) as f64;
        self.wrap(self.mean(c), (self.covariance(c, c).max(0.0) / n).sqrt())
    }

    /// `g(means of cols)` with a delta-method standard error.
    pub fn delta(&self, cols: &[usize], g: impl Fn(&[f64]) -> f64) -> Estimate {
        let means: Vec<f64> = cols.iter().map(|&c| self.mean(c)).collect();
        let value = g(&means);
        let grad: Vec<f64> = (0..cols.len())
            .map(|i| {
                let h = 1e-6 * means[i].abs().max(1.0);
                let mut p = means.clone();
                let mut q = means.clone();
                p[i] += h;
                q[i] -= h;
                (g(&p) - g(&q)) / (2.0 * h)
            })
            .collect();
        let mut var = 0.0;
        for (i, &a) in cols.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                if grad[i] != 0.0 && grad[j] != 0.0 {
                    var += grad[i] * grad[j] * self.covariance(a, b);
                }
            }
        }
        self.wrap(value, (var.max(0.0) / self.n().max(1) as f64).sqrt())
    }

    /// Nonparametric bootstrap standard error of `g(means of cols)`.
    pub fn bootstrap_se(&self, cols: &[usize], g: impl Fn(&[f64]) -> f64, resamples: usize, seed: u64) -> f64 {
        let n = self.n();
        if n < 2 || resamples < 2 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = Vec::with_capacity(resamples);
        let mut sums = vec![0.0; cols.len()];
        for _ in 0..resamples {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for _ in 0..n {
                let r = rng.random_range(0..n);
                for (s, &c) in sums.iter_mut().zip(cols) {
                    *s += self.data[r * self.k + c];
                }
            }
            let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
            stats.push(g(&means));
        }
        let m = stats.iter().sum::<f64>() / resamples as f64;
        (stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
    }
}

/// Runs `per_path` for every path index on a dedicated pool with `workers`
/// threads. `None` marks a rejected path.
pub fn run_paths<F>(budget: &Budget, grid: PathGrid, k: usize, per_path: F) -> Result<Samples>
where
    F: Fn(u64) -> Option<Vec<f64>> + Sync,
{
    if budget.workers == 0 {
        return Err(Error::invalid("workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(budget.workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let rows: Vec<Option<Vec<f64>>> =
        pool.install(|| (0..budget.n_paths as u64).into_par_iter().map(&per_path).collect());
    let mut data = Vec::with_capacity(rows.len() * k);
    let mut n_rejected = 0;
    for row in rows {
        match row {
            Some(r) => {
                debug_assert_eq!(r.len(), k);
                data.extend_from_slice(&r);
            }
            None => n_rejected += 1,
        }
    }
    Ok(Samples {
        k,
        n_total: budget.n_paths,
        n_rejected,
        seed: budget.seed,
        grid,
        data,
    })
}

/// One estimator call: model, start point, horizon, direction, test function
/// and budget.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub z0: GroupPoint,
    pub t: f64,
    pub dir: Direction,
    pub f: TestFunction,
    pub budget: Budget,
    pub fd_epsilon: f64,
    /// Negates every Malliavin weight (negative control).
    pub flip_weight_sign: bool,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, t: f64, dir: Direction, f: TestFunction, budget: Budget) -> Self {
        let z0 = GroupPoint::origin(&model);
        Self {
            model,
            z0,
            t,
            dir,
            f,
            budget,
            fd_epsilon: DEFAULT_FD_EPSILON,
            flip_weight_sign: false,
        }
    }

    pub fn at(mut self, z0: GroupPoint) -> Self {
        self.z0 = z0;
        self
    }

    pub fn validate(&self) -> Result<PathGrid> {
        self.z0.check(&self.model)?;
        self.dir.check(&self.model)?;
        self.f.validate(self.model.m(), self.model.d())?;
        if self.budget.n_paths < 100 {
            return Err(Error::invalid("n_paths", "need at least 100 paths"));
        }
        if !(self.fd_epsilon > 0.0 && self.fd_epsilon <= 0.1) {
            return Err(Error::invalid("fd_epsilon", "must lie in (0, 0.1]"));
        }
        self.budget.grid(self.t)
    }

    fn sign(&self) -> f64 {
        if self.flip_weight_sign {
            -1.0
        } else {
            1.0
        }
    }
}

/// Terminal point of the path started at `z0 + ε·dir`, given the terminal
/// point from `z0` and `B(T)`: `X` shifts by `εu`, `Y_l` by
/// `ε(v_l + <A_l u, B(T)>)`.
pub fn shifted_terminal(model: &ModelSpec, zt: &GroupPoint, bt: &[f64], dir: &Direction, eps: f64) -> GroupPoint {
    let u = DVector::from_column_slice(&dir.u);
    let bt = DVector::from_column_slice(bt);
    let x = zt.x.iter().zip(&dir.u).map(|(x, u)| x + eps * u).collect();
    let y = zt
        .y
        .iter()
        .enumerate()
        .map(|(l, y)| y + eps * (dir.v[l] + (&model.a()[l] * &u).dot(&bt)))
        .collect();
    GroupPoint::new(x, y)
}

fn directional(f: &dyn Smooth, z: &[f64], dir: &Direction) -> f64 {
    f.grad(z).iter().zip(dir.u.iter().chain(&dir.v)).map(|(g, c)| g * c).sum()
}

/// `P_T f(z0)`.
pub fn estimate_pt(cfg: &ExperimentConfig) -> Result<Estimate> {
    let grid = cfg.validate()?;
    let model = &cfg.model;
    let s = run_paths(&cfg.budget, grid, 1, |idx| {
        let b = sample_brownian(grid, model.m(), cfg.budget.seed, idx);
        Some(vec![cfg.f.eval_point(&terminal_point(model, &cfg.z0, &b))])
    })?;
    Ok(s.estimate(0))
}

/// Direct Monte Carlo of `P_T(∇_{(u,v)} f)(z0)` from the analytic gradient.
pub fn estimate_pt_directional(cfg: &ExperimentConfig) -> Result<Estimate> {
    let grid = cfg.validate()?;
    let model = &cfg.model;
    let bound = cfg.f.bind(model);
    let s = run_paths(&cfg.budget, grid, 1, |idx| {
        let b = sample_brownian(grid, model.m(), cfg.budget.seed, idx);
        let z = terminal_point(model, &cfg.z0, &b).concat();
        Some(vec![directional(&bound, &z, &cfg.dir)])
    })?;
    Ok(s.estimate(0))
}

fn weighted(cfg: &ExperimentConfig, tilde: bool) -> Result<Estimate> {
    let grid = cfg.validate()?;
    let model = &cfg.model;
    if cfg.dir.is_zero() {
        let s = run_paths(&cfg.budget, grid, 1, |_| Some(vec![0.0]))?;
        return Ok(s.estimate(0));
    }
    let s = run_paths(&cfg.budget, grid, 1, |idx| {
        let b = sample_brownian(grid, model.m(), cfg.budget.seed, idx);
        let fz = cfg.f.eval_point(&terminal_point(model, &cfg.z0, &b));
        let funcs = compute_functionals(model, &b);
        let w = weights_from_functionals(model, &cfg.z0, std::slice::from_ref(&cfg.dir), &funcs).remove(0);
        if w.rejected {
            return None;
        }
        let weight = if tilde { w.dstar_h_tilde } else { w.dstar_h };
        Some(vec![cfg.sign() * fz * weight])
    })?;
    Ok(s.estimate(0))
}

/// `∇_{(u,v)} P_T f(z0) = E[f(Z_T) D*h̃]`.
pub fn estimate_grad_bismut(cfg: &ExperimentConfig) -> Result<Estimate> {
    weighted(cfg, true)
}

/// `P_T(∇_{(u,v)} f)(z0) = E[f(Z_T) D*h]`.
pub fn estimate_driver(cfg: &ExperimentConfig) -> Result<Estimate> {
    weighted(cfg, false)
}

/// Central difference of `P_T f` along `dir` with common random numbers.
pub fn fd_gradient_oracle(cfg: &ExperimentConfig) -> Result<Estimate> {
    let grid = cfg.validate()?;
    let model = &cfg.model;
    let eps = cfg.fd_epsilon;
    let s = run_paths(&cfg.budget, grid, 1, |idx| {
        let b = sample_brownian(grid, model.m(), cfg.budget.seed, idx);
        let zt = terminal_point(model, &cfg.z0, &b);
        let plus = shifted_terminal(model, &zt, b.terminal(), &cfg.dir, eps);
        let minus = shifted_terminal(model, &zt, b.terminal(), &cfg.dir, -eps);
        Some(vec![(cfg.f.eval_point(&plus) - cfg.f.eval_point(&minus)) / (2.0 * eps)])
    })?;
    Ok(s.estimate(0))
}

/// `Γ(P_t f)(z)` together with the Bismut estimates of `X_i P_t f(z)`.
#[derive(Debug, Clone, Serialize)]
pub struct CarreDuChamp {
    pub gamma: Estimate,
    pub components: Vec<Estimate>,
    /// `P_t f(z)`.
    pub pt_f: Estimate,
    /// `P_t f²(z)`.
    pub pt_f2: Estimate,
    /// `P_t f² − (P_t f)²`.
    pub variance: Estimate,
    /// `√Γ(P_t f) · √t / (P_t f²)^{1/2}`.
    pub gradient_ratio: Estimate,
}

/// Local quantities at `z` on one set of paths. Column layout: `f`, `f²`,
/// then `(f(Z_T) − f(z)) · D*h̃` along each `X_i(z)`. Subtracting `f(z)` is
/// a control variate (`E[D*h̃] = 0`), exact for constant `f`.
pub fn carre_du_champ_samples(model: &ModelSpec, z: &GroupPoint, t: f64, f: &TestFunction, budget: &Budget) -> Result<Samples> {
    z.check(model)?;
    f.validate(model.m(), model.d())?;
    let grid = budget.grid(t)?;
    let m = model.m();
    let dirs: Vec<Direction> = (0..m).map(|i| Direction::carre_du_champ(model, z, i)).collect();
    let f0 = f.eval_point(z);
    run_paths(budget, grid, 2 + m, |idx| {
        let b = sample_brownian(grid, m, budget.seed, idx);
        let fz = f.eval_point(&terminal_point(model, z, &b));
        let funcs = compute_functionals(model, &b);
        let ws = weights_from_functionals(model, z, &dirs, &funcs);
        if ws[0].rejected {
            return None;
        }
        let mut row = vec![fz, fz * fz];
        row.extend(ws.iter().map(|w| (fz - f0) * w.dstar_h_tilde));
        Some(row)
    })
}

/// Summarizes [`carre_du_champ_samples`] with delta-method errors.
pub fn summarize_carre_du_champ(s: &Samples, m: usize, t: f64) -> CarreDuChamp {
    let cols: Vec<usize> = (2..2 + m).collect();
    let half_sq = |g: &[f64]| 0.5 * g.iter().map(|v| v * v).sum::<f64>();
    let gamma = s.delta(&cols, half_sq);
    let components = cols.iter().map(|&c| s.estimate(c)).collect();
    let variance = s.delta(&[0, 1], |v| v[1] - v[0] * v[0]);
    let mut ratio_cols = vec![1];
    ratio_cols.extend(&cols);
    let gradient_ratio = s.delta(&ratio_cols, |v| (half_sq(&v[1..]).sqrt() * t.sqrt()) / v[0].max(0.0).sqrt());
    CarreDuChamp {
        gamma,
        components,
        pt_f: s.estimate(0),
        pt_f2: s.estimate(1),
        variance,
        gradient_ratio,
    }
}

/// `Γ(P_t f)(z) = ½ Σ_i (X_i P_t f)²` by the Bismut formula along each
/// `X_i(z)`.
pub fn estimate_carre_du_champ(model: &ModelSpec, z: &GroupPoint, t: f64, f: &TestFunction, budget: &Budget) -> Result<CarreDuChamp> {
    let s = carre_du_champ_samples(model, z, t, f, budget)?;
    Ok(summarize_carre_du_champ(&s, model.m(), t))
}

/// Two estimates that should agree.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub label: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub tolerance: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn new(label: impl Into<String>, lhs: Estimate, rhs: Estimate, bias: f64) -> Self {
        let tolerance = 3.0 * lhs.combined_se(&rhs) + bias;
        let pass = (lhs.value - rhs.value).abs() <= tolerance;
        Self {
            label: label.into(),
            lhs,
            rhs,
            tolerance,
            pass,
        }
    }

    pub fn discrepancy(&self) -> f64 {
        (self.lhs.value - self.rhs.value).abs()
    }
}

/// Dilation and hat-commutation checks.
#[derive(Debug, Clone, Serialize)]
pub struct SemigroupReport {
    pub dilation: Comparison,
    pub hat: Vec<Comparison>,
}

impl SemigroupReport {
    pub fn hat_pass(&self) -> bool {
        self.hat.iter().all(|c| c.pass)
    }
}

/// Seed offset for the independent second side of the dilation check.
const DILATION_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// (a) `P_t(T_s f)(z0)` against `P_{e^s t} f(e^{s/2} x0, e^s y0)` on
/// independent paths; (b) the CRN derivative of `P_t f` along `X̂_i(z0)`
/// against `P_t(X̂_i f)(z0)` for each `i`.
pub fn semigroup_property_checks(
    model: &ModelSpec,
    z0: &GroupPoint,
    f: &TestFunction,
    t: f64,
    s: f64,
    budget: &Budget,
) -> Result<SemigroupReport> {
    z0.check(model)?;
    f.validate(model.m(), model.d())?;
    let (m, d) = (model.m(), model.d());
    let fs = f.dilate(s, m, d);

    let grid = budget.grid(t)?;
    let lhs = run_paths(budget, grid, 1, |idx| {
        let b = sample_brownian(grid, m, budget.seed, idx);
        Some(vec![fs.eval_point(&terminal_point(model, z0, &b))])
    })?
    .estimate(0);
    let scaled = GroupPoint::new(
        z0.x.iter().map(|v| v * (0.5 * s).exp()).collect(),
        z0.y.iter().map(|v| v * s.exp()).collect(),
    );
    let rhs_budget = budget.with_seed(budget.seed.wrapping_add(DILATION_SEED_OFFSET));
    let grid_s = rhs_budget.grid(s.exp() * t)?;
    let rhs = run_paths(&rhs_budget, grid_s, 1, |idx| {
        let b = sample_brownian(grid_s, m, rhs_budget.seed, idx);
        Some(vec![f.eval_point(&terminal_point(model, &scaled, &b))])
    })?
    .estimate(0);
    let dilation = Comparison::new(format!("dilation s={s}"), lhs, rhs, 0.0);

    let zc = z0.concat();
    let dirs: Vec<Direction> = (0..m)
        .map(|i| {
            let c = x_hat_field(model, i).coefficient(&zc);
            Direction::new(c.rows(0, m).iter().cloned().collect(), c.rows(m, d).iter().cloned().collect())
        })
        .collect();
    let bound = f.bind(model);
    let eps = DEFAULT_FD_EPSILON;
    let samples = run_paths(budget, grid, 2 * m, |idx| {
        let b = sample_brownian(grid, m, budget.seed, idx);
        let zt = terminal_point(model, z0, &b);
        let zc = zt.concat();
        let mut row = Vec::with_capacity(2 * m);
        for (i, dir) in dirs.iter().enumerate() {
            let plus = shifted_terminal(model, &zt, b.terminal(), dir, eps);
            let minus = shifted_terminal(model, &zt, b.terminal(), dir, -eps);
            row.push((f.eval_point(&plus) - f.eval_point(&minus)) / (2.0 * eps));
            row.push(apply_xi_hat(&bound, i, &zc, model));
        }
        Some(row)
    })?;
    let hat = (0..m)
        .map(|i| {
            Comparison::new(
                format!("hat X{}", i + 1),
                samples.estimate(2 * i),
                samples.estimate(2 * i + 1),
                FD_BIAS_BUDGET,
            )
        })
        .collect();
    Ok(SemigroupReport { dilation, hat })
}

/// One (function, direction) row of the derivative-formula suite.
#[derive(Debug, Clone, Serialize)]
pub struct GradientRow {
    pub function: String,
    pub direction: String,
    pub bounded: bool,
    /// `E[f D*h̃]`.
    pub bismut: Estimate,
    /// CRN finite difference.
    pub fd: Estimate,
    /// `E[f D*h]`.
    pub driver: Estimate,
    /// Direct `P_T(∇_{(u,v)} f)`.
    pub direct: Estimate,
    pub bismut_tolerance: f64,
    pub driver_tolerance: f64,
    pub bismut_pass: bool,
    pub driver_pass: bool,
}

/// Every Bismut/FD and Driver/direct comparison on one set of paths.
pub fn gradient_suite(
    model: &ModelSpec,
    z0: &GroupPoint,
    t: f64,
    functions: &[TestFunction],
    dirs: &[Direction],
    budget: &Budget,
    fd_epsilon: f64,
    flip_weight_sign: bool,
) -> Result<Vec<GradientRow>> {
    z0.check(model)?;
    for f in functions {
        f.validate(model.m(), model.d())?;
    }
    for dir in dirs {
        dir.check(model)?;
    }
    if !(fd_epsilon > 0.0 && fd_epsilon <= 0.1) {
        return Err(Error::invalid("fd_epsilon", "must lie in (0, 0.1]"));
    }
    let grid = budget.grid(t)?;
    let sign = if flip_weight_sign { -1.0 } else { 1.0 };
    let bounds: Vec<_> = functions.iter().map(|f| f.bind(model)).collect();
    let per = 4;
    let k = functions.len() * dirs.len() * per;
    let s = run_paths(budget, grid, k, |idx| {
        let b = sample_brownian(grid, model.m(), budget.seed, idx);
        let zt = terminal_point(model, z0, &b);
        let zc = zt.concat();
        let funcs = compute_functionals(model, &b);
        let ws = weights_from_functionals(model, z0, dirs, &funcs);
        if ws.iter().any(|w| w.rejected) {
            return None;
        }
        let shifted: Vec<(GroupPoint, GroupPoint)> = dirs
            .iter()
            .map(|dir| {
                (
                    shifted_terminal(model, &zt, b.terminal(), dir, fd_epsilon),
                    shifted_terminal(model, &zt, b.terminal(), dir, -fd_epsilon),
                )
            })
            .collect();
        let mut row = Vec::with_capacity(k);
        for (f, bound) in functions.iter().zip(&bounds) {
            let fz = f.eval_point(&zt);
            for ((dir, w), (p, q)) in dirs.iter().zip(&ws).zip(&shifted) {
                row.push(sign * fz * w.dstar_h_tilde);
                row.push((f.eval_point(p) - f.eval_point(q)) / (2.0 * fd_epsilon));
                row.push(sign * fz * w.dstar_h);
                row.push(directional(bound, &zc, dir));
            }
        }
        Some(row)
    })?;
    let mut rows = Vec::new();
    let mut c = 0;
    for f in functions {
        for dir in dirs {
            let (bismut, fd, driver, direct) = (s.estimate(c), s.estimate(c + 1), s.estimate(c + 2), s.estimate(c + 3));
            c += per;
            let bismut_tolerance = 3.0 * bismut.combined_se(&fd) + FD_BIAS_BUDGET;
            let driver_tolerance = 3.0 * driver.combined_se(&direct);
            rows.push(GradientRow {
                function: f.name(),
                direction: dir.name(),
                bounded: f.bounded(),
                bismut_pass: (bismut.value - fd.value).abs() <= bismut_tolerance,
                driver_pass: (driver.value - direct.value).abs() <= driver_tolerance,
                bismut,
                fd,
                driver,
                direct,
                bismut_tolerance,
                driver_tolerance,
            });
        }
    }
    Ok(rows)
}

/// One row of a scaling table.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub t: f64,
    pub value: Estimate,
}

/// A quantity tabulated over horizons with its fitted log-log slope.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub quantity: String,
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
    pub expected_slope: f64,
}

impl ScalingTable {
    fn new(quantity: impl Into<String>, rows: Vec<ScalingRow>, expected_slope: f64) -> Self {
        let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let vs: Vec<f64> = rows.iter().map(|r| r.value.value).collect();
        Self {
            quantity: quantity.into(),
            slope: loglog_slope(&ts, &vs),
            rows,
            expected_slope,
        }
    }

    pub fn slope_within(&self, tol: f64) -> bool {
        (self.slope - self.expected_slope).abs() <= tol
    }
}

/// `E‖Q_T⁻¹‖` over horizons. The same path indices are reused for every
/// horizon, so the normals are common across `T`.
pub fn q_inverse_scaling(model: &ModelSpec, t_list: &[f64], budget: &Budget) -> Result<ScalingTable> {
    let mut rows = Vec::new();
    for &t in t_list {
        let grid = budget.grid(t)?;
        let s = run_paths(budget, grid, 1, |idx| {
            let b = sample_brownian(grid, model.m(), budget.seed, idx);
            let f = compute_functionals(model, &b);
            let qi = invert_q(&f).ok()?;
            Some(vec![qi.symmetric_eigenvalues().amax()])
        })?;
        rows.push(ScalingRow { t, value: s.estimate(0) });
    }
    Ok(ScalingTable::new("E|Q_T^-1|", rows, -2.0))
}

/// `√Γ(P_t f)` and `√Γ(P_t f)·√t/(P_t f²)^{1/2}` over horizons at `z`.
#[derive(Debug, Clone, Serialize)]
pub struct GradientBoundTable {
    pub sqrt_gamma: ScalingTable,
    pub ratios: Vec<ScalingRow>,
    /// `√((m + 2d)/2)`, the constant implied by the reverse Poincaré bound.
    pub bound: f64,
    /// Every ratio at most `bound + 3 SE`.
    pub bounded: bool,
    /// Largest ratio observed.
    pub empirical_constant: f64,
}

pub fn gradient_bound_scaling(
    model: &ModelSpec,
    z: &GroupPoint,
    f: &TestFunction,
    t_list: &[f64],
    budget: &Budget,
) -> Result<GradientBoundTable> {
    let bound = ((model.m() + 2 * model.d()) as f64 / 2.0).sqrt();
    let mut sg = Vec::new();
    let mut ratios = Vec::new();
    for &t in t_list {
        let c = estimate_carre_du_champ(model, z, t, f, budget)?;
        let g = c.gamma.clone();
        let root = g.value.max(0.0).sqrt();
        let se = if root > 0.0 { g.stderr / (2.0 * root) } else { g.stderr.sqrt() };
        sg.push(ScalingRow {
            t,
            value: Estimate { value: root, stderr: se, ..g },
        });
        ratios.push(ScalingRow { t, value: c.gradient_ratio });
    }
    let bounded = ratios.iter().all(|r| r.value.value <= bound + 3.0 * r.value.stderr);
    let empirical_constant = ratios.iter().map(|r| r.value.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(GradientBoundTable {
        sqrt_gamma: ScalingTable::new("sqrt Gamma(P_t f)", sg, -0.5),
        ratios,
        bound,
        bounded,
        empirical_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::registry;
    use crate::malliavin::Direction;

    fn heis_cfg(f: TestFunction, dir: Direction, n: usize) -> ExperimentConfig {
        ExperimentConfig::new(ModelSpec::heisenberg(), 1.0, dir, f, Budget::new(n, 7).with_steps(64))
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let ts = [0.25, 0.5, 1.0, 2.0];
        let ys: Vec<f64> = ts.iter().map(|t: &f64| 3.0 * t.powf(-1.5)).collect();
        assert_close!(loglog_slope(&ts, &ys), -1.5, 1e-12);
    }

    #[test]
    fn constant_function_is_exact() {
        let e = estimate_pt(&heis_cfg(TestFunction::Const { value: 1.0 }, Direction::zero(2, 1), 200)).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn fd_of_linear_function_is_exact() {
        let e = fd_gradient_oracle(&heis_cfg(TestFunction::X { i: 0 }, Direction::horizontal(2, 1, 0), 200)).unwrap();
        assert_close!(e.value, 1.0, 1e-12);
        assert!(e.stderr <= 1e-12);
    }

    #[test]
    fn zero_direction_is_exact_zero() {
        let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
        let e = estimate_driver(&heis_cfg(f.clone(), Direction::zero(2, 1), 200)).unwrap();
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
        let e = estimate_grad_bismut(&heis_cfg(f, Direction::zero(2, 1), 200)).unwrap();
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = heis_cfg(TestFunction::X { i: 0 }, Direction::horizontal(2, 1, 0), 50);
        assert!(estimate_pt(&cfg).is_err());
        cfg.budget.n_paths = 100;
        cfg.fd_epsilon = 0.5;
        assert!(fd_gradient_oracle(&cfg).is_err());
        cfg.fd_epsilon = 1e-3;
        cfg.budget.workers = 0;
        assert!(estimate_pt(&cfg).is_err());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let f = registry::trig_suite(2, 1)[4].clone();
        let mut cfg = heis_cfg(f, Direction::vertical(2, 1, 0), 500);
        cfg.budget.workers = 1;
        let a = estimate_grad_bismut(&cfg).unwrap();
        cfg.budget.workers = 3;
        let b = estimate_grad_bismut(&cfg).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn delta_method_matches_bootstrap() {
        let model = ModelSpec::heisenberg();
        let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
        let z = GroupPoint::new(vec![0.5, 0.0], vec![0.0]);
        let s = carre_du_champ_samples(&model, &z, 1.0, &f, &Budget::new(4000, 3).with_steps(32)).unwrap();
        let g = |v: &[f64]| 0.5 * (v[0] * v[0] + v[1] * v[1]);
        let delta = s.delta(&[2, 3], g).stderr;
        let boot = s.bootstrap_se(&[2, 3], g, BOOTSTRAP_RESAMPLES, 1);
        assert!((delta - boot).abs() <= 0.3 * delta, "{delta} vs {boot}");
    }

    #[test]
    fn shifted_terminal_matches_reintegration() {
        let model = crate::algebra::example_family_a(3, &[1.0, 2.0], &[0.5, -1.0]).unwrap();
        let grid = PathGrid::new(1.0, 16).unwrap();
        let b = sample_brownian(grid, 3, 5, 1);
        let z0 = GroupPoint::new(vec![0.2, 0.1, -0.3], vec![0.4, 0.0]);
        let dir = Direction::new(vec![1.0, -0.5, 0.3], vec![0.2, -1.0]);
        let eps = 0.01;
        let start = GroupPoint::new(
            z0.x.iter().zip(&dir.u).map(|(a, b)| a + eps * b).collect(),
            z0.y.iter().zip(&dir.v).map(|(a, b)| a + eps * b).collect(),
        );
        let direct = terminal_point(&model, &start, &b);
        let shifted = shifted_terminal(&model, &terminal_point(&model, &z0, &b), b.terminal(), &dir, eps);
        for (a, c) in direct.concat().iter().zip(shifted.concat()) {
            assert_close!(*a, c, 1e-12);
        }
    }
}
