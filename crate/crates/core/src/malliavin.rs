//! Per-path Malliavin weights for the two derivative formulas.
//!
//! For a direction `(u, v)` the weights `D*h` and `D*h̃` satisfy
//! `P_T(∇_{(u,v)} f) = E[f(Z_T) D*h]` and `∇_{(u,v)} P_T f = E[f(Z_T) D*h̃]`.
//! Everything is assembled from [`PathFunctionals`]; the Cameron-Martin
//! direction `h` itself is never built.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{GroupPoint, ModelSpec};
use crate::error::{Error, Result};
use crate::montecarlo::{loglog_slope, run_paths, Budget, Estimate};
use crate::paths::{compute_functionals, invert_q, sample_brownian, BrownianPath, PathFunctionals};

/// Differentiation direction `(u, v) ∈ R^m × R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Direction {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Direction {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        Self { u, v }
    }

    pub fn zero(m: usize, d: usize) -> Self {
        Self::new(vec![0.0; m], vec![0.0; d])
    }

    /// `(e_i, 0)`, zero-based.
    pub fn horizontal(m: usize, d: usize, i: usize) -> Self {
        let mut u = vec![0.0; m];
        u[i] = 1.0;
        Self::new(u, vec![0.0; d])
    }

    /// `(0, e_l)`, zero-based.
    pub fn vertical(m: usize, d: usize, l: usize) -> Self {
        let mut v = vec![0.0; d];
        v[l] = 1.0;
        Self::new(vec![0.0; m], v)
    }

    /// Coefficients of `X_i` at `z`: `(σ e_i, ((A_l x)_i)_l)`.
    pub fn carre_du_champ(model: &ModelSpec, z: &GroupPoint, i: usize) -> Self {
        let u = model.sigma().column(i).iter().cloned().collect();
        let x = DVector::from_column_slice(&z.x);
        let v = model.a().iter().map(|al| (al * &x)[i]).collect();
        Self::new(u, v)
    }

    /// Default suite: `(e_1, 0)`, `(e_2, 0)` (when `m ≥ 2`), `(0, e_1)`.
    pub fn default_suite(m: usize, d: usize) -> Vec<Self> {
        let mut out = vec![Self::horizontal(m, d, 0)];
        if m >= 2 {
            out.push(Self::horizontal(m, d, 1));
        }
        out.push(Self::vertical(m, d, 0));
        out
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|c| *c == 0.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(
            self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            self.v.iter().zip(&other.v).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.u.iter().map(|a| a * s).collect(), self.v.iter().map(|a| a * s).collect())
    }

    pub fn name(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(" ");
        format!("u=[{}] v=[{}]", fmt(&self.u), fmt(&self.v))
    }

    pub fn check(&self, model: &ModelSpec) -> Result<()> {
        if self.u.len() != model.m() || self.v.len() != model.d() {
            return Err(Error::DimensionMismatch(format!(
                "direction has ({}, {}) components, model is ({}, {})",
                self.u.len(),
                self.v.len(),
                model.m(),
                model.d()
            )));
        }
        if !self.u.iter().chain(&self.v).all(|c| c.is_finite()) {
            return Err(Error::invalid("dir", "components must be finite"));
        }
        Ok(())
    }
}

/// Per-path weight data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightBundle {
    pub alpha: Vec<f64>,
    pub alpha_tilde: Vec<f64>,
    pub qinv_alpha: Vec<f64>,
    pub qinv_alpha_tilde: Vec<f64>,
    pub dstar_h: f64,
    pub dstar_h_tilde: f64,
    pub rejected: bool,
}

impl WeightBundle {
    fn rejected(d: usize) -> Self {
        Self {
            alpha: vec![0.0; d],
            alpha_tilde: vec![0.0; d],
            qinv_alpha: vec![0.0; d],
            qinv_alpha_tilde: vec![0.0; d],
            dstar_h: 0.0,
            dstar_h_tilde: 0.0,
            rejected: true,
        }
    }
}

/// Direction-dependent pieces shared by `α` and `α̃`.
struct DirData {
    /// `w = σ⁻¹u`.
    w: Vec<f64>,
    /// `A_l u`.
    au: Vec<Vec<f64>>,
    /// `G_lᵀ w`.
    gtw: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DirData {
    fn new(model: &ModelSpec, dir: &Direction) -> Self {
        let u = DVector::from_column_slice(&dir.u);
        let w = model.sigma_inv() * &u;
        let au = model.a().iter().map(|al| (al * &u).iter().cloned().collect()).collect();
        let gtw = model
            .g()
            .iter()
            .map(|gl| (gl.transpose() * &w).iter().cloned().collect())
            .collect();
        Self {
            w: w.iter().cloned().collect(),
            au,
            gtw,
        }
    }
}

fn alphas(model: &ModelSpec, z0: &GroupPoint, dir: &Direction, dd: &DirData, f: &PathFunctionals) -> (Vec<f64>, Vec<f64>) {
    let x0 = DVector::from_column_slice(&z0.x);
    let mut alpha = vec![0.0; model.d()];
    let mut alpha_tilde = vec![0.0; model.d()];
    for l in 0..model.d() {
        let ax0: Vec<f64> = (&model.a()[l] * &x0).iter().cloned().collect();
        let common = dir.v[l] - dot(&dd.w, &ax0) - dot(&dd.gtw[l], &f.b_bar);
        alpha_tilde[l] = common;
        alpha[l] = common - dot(&dd.au[l], &f.b_terminal);
    }
    (alpha, alpha_tilde)
}

/// `(α, α̃)` for one path.
pub fn compute_alpha(model: &ModelSpec, z0: &GroupPoint, dir: &Direction, f: &PathFunctionals) -> (Vec<f64>, Vec<f64>) {
    alphas(model, z0, dir, &DirData::new(model, dir), f)
}

/// How the discrete weights are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Left-point transcription of the continuous-time weights. Carries an
    /// `O(dt)` bias.
    Plain,
    /// Solves with `Q − E` and `α + (dt/T)<A_l u, B(T)>`, which makes the
    /// shifted discrete terminal point move by exactly `(u, v)` (resp.
    /// `(u, v + <A_l u, B(T)>)`), so the integration by parts holds exactly
    /// for the discretized process.
    #[default]
    Exact,
}

/// `D*` of the direction built from `α` (either `α` or `α̃`).
///
/// `drop_terminal` selects the `α̃` variant, whose derivatives omit the
/// `B(T)` term.
fn divergence(
    model: &ModelSpec,
    dd: &DirData,
    f: &PathFunctionals,
    solve: &DMatrix<f64>,
    alpha: &[f64],
    drop_terminal: bool,
    scheme: WeightScheme,
) -> (Vec<f64>, f64) {
    let (m, d) = (model.m(), model.d());
    let t = f.grid.horizon;
    let exact = scheme == WeightScheme::Exact;
    let corr = if exact { f.grid.dt() / t } else { 0.0 };
    let rhs = DVector::from_fn(d, |l, _| alpha[l] + corr * dot(&dd.au[l], &f.b_terminal));
    let gamma = solve * rhs;

    let t1 = dot(&dd.w, &f.b_terminal) / t;
    let t2: f64 = (0..d).map(|k| gamma[k] * f.s[k]).sum();
    let t4: f64 = -(0..d).map(|k| gamma[k] * dot(&f.j[k], &f.b_terminal)).sum::<f64>() / t;

    // D_β γ = −M⁻¹ (D_β M) γ + M⁻¹ D_β α, with M = Q or Q − E
    let d_gamma = |dq: &DMatrix<f64>, de: &DMatrix<f64>, dalpha: DVector<f64>| -> DVector<f64> {
        let dm = if exact { dq - de } else { dq.clone() };
        solve * (dalpha - dm * &gamma)
    };

    let mut t3 = 0.0;
    for k in 0..d {
        let dalpha = DVector::from_fn(d, |l, _| {
            let term = if drop_terminal { 0.0 } else { dot(&dd.au[l], &f.j[k]) };
            -term - dot(&dd.gtw[l], &f.beta_bar[k]) + corr * dot(&dd.au[l], &f.j[k])
        });
        t3 -= d_gamma(&f.dq_beta[k], &f.de_beta[k], dalpha)[k];
    }

    let mut t5 = 0.0;
    for i in 0..m {
        let dalpha = DVector::from_fn(d, |l, _| {
            let term = if drop_terminal { 0.0 } else { t * dd.au[l][i] };
            -term - f.t_bar * dd.gtw[l][i] + corr * t * dd.au[l][i]
        });
        let dg = d_gamma(&f.dq_h[i], &f.de_h[i], dalpha);
        t5 += (0..d).map(|k| dg[k] * f.j[k][i]).sum::<f64>() / t;
    }

    (gamma.iter().cloned().collect(), t1 + t2 + t3 + t4 + t5)
}

/// Weights for several directions from already computed functionals, with
/// the default [`WeightScheme::Exact`].
pub fn weights_from_functionals(
    model: &ModelSpec,
    z0: &GroupPoint,
    dirs: &[Direction],
    f: &PathFunctionals,
) -> Vec<WeightBundle> {
    weights_with_scheme(model, z0, dirs, f, WeightScheme::Exact)
}

/// Weights for several directions under the given scheme. Paths whose `Q`
/// fails [`invert_q`] are rejected.
pub fn weights_with_scheme(
    model: &ModelSpec,
    z0: &GroupPoint,
    dirs: &[Direction],
    f: &PathFunctionals,
    scheme: WeightScheme,
) -> Vec<WeightBundle> {
    let rejected = || dirs.iter().map(|_| WeightBundle::rejected(model.d())).collect();
    let qinv = match invert_q(f) {
        Ok(q) => q,
        Err(_) => return rejected(),
    };
    let solve = match scheme {
        WeightScheme::Plain => qinv,
        WeightScheme::Exact => match (&f.q - &f.e).try_inverse() {
            Some(inv) => inv,
            None => return rejected(),
        },
    };
    dirs.iter()
        .map(|dir| {
            let dd = DirData::new(model, dir);
            let (alpha, alpha_tilde) = alphas(model, z0, dir, &dd, f);
            let (qinv_alpha, dstar_h) = divergence(model, &dd, f, &solve, &alpha, false, scheme);
            let (qinv_alpha_tilde, dstar_h_tilde) = divergence(model, &dd, f, &solve, &alpha_tilde, true, scheme);
            WeightBundle {
                alpha,
                alpha_tilde,
                qinv_alpha,
                qinv_alpha_tilde,
                dstar_h,
                dstar_h_tilde,
                rejected: false,
            }
        })
        .collect()
}

/// Weights for one direction on one path. Rejected paths are reported via
/// the `rejected` flag of [`WeightBundle`].
pub fn compute_weights(model: &ModelSpec, z0: &GroupPoint, dir: &Direction, b: &BrownianPath) -> Result<WeightBundle> {
    z0.check(model)?;
    dir.check(model)?;
    let f = compute_functionals(model, b);
    Ok(weights_from_functionals(model, z0, std::slice::from_ref(dir), &f).remove(0))
}

/// One horizon of [`weight_moment_diagnostic`].
#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub t: f64,
    /// `E|D*h|^p`.
    pub moment_h: Estimate,
    /// `E|D*h̃|^p`.
    pub moment_h_tilde: Estimate,
    /// `(|v|^p + |u|^p (|x0|^p + T^{p/2})) / T^p`, up to the unknown constant.
    pub envelope: f64,
}

/// Empirical weight moments over horizons with fitted log-log slopes.
#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub p: u32,
    pub rows: Vec<MomentRow>,
    pub slope_h: f64,
    pub slope_h_tilde: f64,
    pub envelope_slope: f64,
}

/// `E|D*h|^p` and `E|D*h̃|^p` for each horizon. Path indices are shared
/// across horizons (common normals).
pub fn weight_moment_diagnostic(
    model: &ModelSpec,
    z0: &GroupPoint,
    dir: &Direction,
    t_list: &[f64],
    p: u32,
    budget: &Budget,
) -> Result<MomentTable> {
    z0.check(model)?;
    dir.check(model)?;
    if !(p == 1 || p == 2) {
        return Err(Error::invalid("p", "moment order must be 1 or 2"));
    }
    if t_list.len() < 2 {
        return Err(Error::invalid("T_list", "need at least two horizons"));
    }
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let pf = p as f64;
    let mut rows = Vec::new();
    for &t in t_list {
        let grid = budget.grid(t)?;
        let s = run_paths(budget, grid, 2, |idx| {
            let b = sample_brownian(grid, model.m(), budget.seed, idx);
            let f = compute_functionals(model, &b);
            let w = weights_from_functionals(model, z0, std::slice::from_ref(dir), &f).remove(0);
            (!w.rejected).then(|| vec![w.dstar_h.abs().powf(pf), w.dstar_h_tilde.abs().powf(pf)])
        })?;
        let envelope = (norm(&dir.v).powf(pf) + norm(&dir.u).powf(pf) * (norm(&z0.x).powf(pf) + t.powf(pf / 2.0))) / t.powf(pf);
        rows.push(MomentRow {
            t,
            moment_h: s.estimate(0),
            moment_h_tilde: s.estimate(1),
            envelope,
        });
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let slope = |vals: Vec<f64>| {
        if vals.iter().all(|v| *v > 0.0) {
            loglog_slope(&ts, &vals)
        } else {
            f64::NAN
        }
    };
    Ok(MomentTable {
        p,
        slope_h: slope(rows.iter().map(|r| r.moment_h.value).collect()),
        slope_h_tilde: slope(rows.iter().map(|r| r.moment_h_tilde.value).collect()),
        envelope_slope: slope(rows.iter().map(|r| r.envelope).collect()),
        rows,
    })
}
