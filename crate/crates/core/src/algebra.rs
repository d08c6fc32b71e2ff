//! Model specification, group law and the algebraic condition checkers.
//!
//! A model is the pair `(σ, {A_l})` driving
//!
//! ```text
//! dX = σ dB,    dY_l = <A_l X, dB>,   l = 1..d
//! ```
//!
//! on `R^m × R^d`. Everything downstream is parametrised by [`ModelSpec`],
//! which also caches the skew matrices `G_l = A_l σ − σᵀ A_lᵀ` governing the
//! brackets `[X_i, X_j] = Σ_l (G_l)_{ji} ∂_{y_l}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance on max-norm matrix residuals.
pub const MATRIX_TOL: f64 = 1e-10;

/// Largest accepted condition number of `σ`.
pub const MAX_SIGMA_CONDITION: f64 = 1e12;

/// Largest entry in absolute value.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigenvalues();
    eig.iter().cloned().fold(0.0_f64, f64::max).max(0.0).sqrt()
}

/// On-disk model description: `{"m": int, "d": int, "sigma": [[..]], "A": [[[..]]]}`.
///
/// Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub m: usize,
    pub d: usize,
    pub sigma: Vec<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<Vec<f64>>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!("{what} must be {n}×{n}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Immutable model specification with derived quantities.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    m: usize,
    d: usize,
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    /// `(σᵀ)⁻¹ A_l`, the bilinear forms of the group law.
    left: Vec<DMatrix<f64>>,
    /// `A_l σ`, the x-derivatives of the vertical coefficients of `X_i`.
    a_sigma: Vec<DMatrix<f64>>,
}

impl ModelSpec {
    /// Validates dimensions, inverts `σ` and derives `G_l`.
    pub fn new(m: usize, d: usize, sigma: DMatrix<f64>, a: Vec<DMatrix<f64>>) -> Result<Self> {
        if m < 2 {
            return Err(Error::DimensionMismatch(format!("m must be ≥ 2, got {m}")));
        }
        if d < 1 {
            return Err(Error::DimensionMismatch(format!("d must be ≥ 1, got {d}")));
        }
        if sigma.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "sigma is {:?}, expected ({m}, {m})",
                sigma.shape()
            )));
        }
        if a.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "expected {d} matrices A_l, got {}",
                a.len()
            )));
        }
        for (l, al) in a.iter().enumerate() {
            if al.shape() != (m, m) {
                return Err(Error::DimensionMismatch(format!(
                    "A_{} is {:?}, expected ({m}, {m})",
                    l + 1,
                    al.shape()
                )));
            }
        }
        if sigma.iter().chain(a.iter().flat_map(|x| x.iter())).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite matrix entry".into()));
        }

        let sv = sigma.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_SIGMA_CONDITION) {
            return Err(Error::SingularSigma { condition });
        }
        let sigma_inv = sigma
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularSigma { condition })?;
        let resid = max_abs(&(&sigma * &sigma_inv - DMatrix::identity(m, m)));
        if resid > MATRIX_TOL {
            return Err(Error::SingularSigma { condition });
        }

        let sigma_t_inv = sigma_inv.transpose();
        let a_sigma: Vec<_> = a.iter().map(|al| al * &sigma).collect();
        let g: Vec<_> = a_sigma.iter().map(|as_| as_ - as_.transpose()).collect();
        let left = a.iter().map(|al| &sigma_t_inv * al).collect();

        // G_l = A_lσ − (A_lσ)ᵀ is skew by construction; its trace vanishes, which
        // lets the weight assembly drop the Σ_i (G_k)_ii term.
        for gl in &g {
            debug_assert!(max_abs(&(gl + gl.transpose())) <= 1e-12 * (1.0 + max_abs(gl)));
            debug_assert!(gl.trace().abs() <= 1e-12 * (1.0 + max_abs(gl)));
        }

        Ok(Self {
            m,
            d,
            sigma,
            sigma_inv,
            a,
            g,
            left,
            a_sigma,
        })
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let sigma = matrix_from_rows(&file.sigma, file.m, "sigma")?;
        if file.a.len() != file.d {
            return Err(Error::DimensionMismatch(format!(
                "expected {} matrices in A, got {}",
                file.d,
                file.a.len()
            )));
        }
        let a = file
            .a
            .iter()
            .map(|rows| matrix_from_rows(rows, file.m, "A_l"))
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.m, file.d, sigma, a)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            m: self.m,
            d: self.d,
            sigma: matrix_to_rows(&self.sigma),
            a: self.a.iter().map(matrix_to_rows).collect(),
        }
    }

    /// The 3-dimensional Heisenberg group: `m = 2, d = 1, σ = I, A = [[0,−1],[1,0]]`.
    pub fn heisenberg() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        Self::new(2, 1, DMatrix::identity(2, 2), vec![a]).expect("heisenberg model is valid")
    }

    /// `σ = I_4` with two commuting planar rotation generators acting on
    /// disjoint coordinate planes. Satisfies every structural condition with
    /// `λ = 8`, `θ = 0`.
    pub fn block_rotations_4x2() -> Self {
        let mut a1 = DMatrix::zeros(4, 4);
        a1[(0, 1)] = -1.0;
        a1[(1, 0)] = 1.0;
        let mut a2 = DMatrix::zeros(4, 4);
        a2[(2, 3)] = -1.0;
        a2[(3, 2)] = 1.0;
        Self::new(4, 2, DMatrix::identity(4, 4), vec![a1, a2]).expect("valid model")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.m + self.d
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn a(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn g(&self) -> &[DMatrix<f64>] {
        &self.g
    }

    pub fn a_sigma(&self) -> &[DMatrix<f64>] {
        &self.a_sigma
    }

    /// Same model with every `A_l` multiplied by `t` (so `G_l → t G_l`).
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(
            self.m,
            self.d,
            self.sigma.clone(),
            self.a.iter().map(|al| al * t).collect(),
        )
    }

    /// Whether every `G_l` is non-zero.
    pub fn all_g_nonzero(&self) -> bool {
        self.g.iter().all(|gl| max_abs(gl) > MATRIX_TOL)
    }
}

/// `(A_l)_{1,l+1} = α_l`, `(A_l)_{l+1,1} = β_l`, all else zero; `σ = I`, `d = m − 1`.
pub fn example_family_a(m: usize, alphas: &[f64], betas: &[f64]) -> Result<ModelSpec> {
    if m < 2 {
        return Err(Error::DimensionMismatch(format!("m must be ≥ 2, got {m}")));
    }
    let d = m - 1;
    if alphas.len() != d || betas.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "alphas and betas must have length m − 1 = {d}"
        )));
    }
    let mut a = Vec::with_capacity(d);
    for l in 0..d {
        if alphas[l] == betas[l] {
            return Err(Error::DegenerateModel(format!(
                "alpha_{0} = beta_{0} makes G_{0} vanish",
                l + 1
            )));
        }
        let mut al = DMatrix::zeros(m, m);
        al[(0, l + 1)] = alphas[l];
        al[(l + 1, 0)] = betas[l];
        a.push(al);
    }
    ModelSpec::new(m, d, DMatrix::identity(m, m), a)
}

/// A point `(x, y)` of `R^m × R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl GroupPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    pub fn origin(model: &ModelSpec) -> Self {
        Self {
            x: vec![0.0; model.m()],
            y: vec![0.0; model.d()],
        }
    }

    /// Splits a concatenated `(x, y)` vector.
    pub fn from_concat(z: &[f64], m: usize) -> Self {
        Self {
            x: z[..m].to_vec(),
            y: z[m..].to_vec(),
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        self.x.iter().chain(self.y.iter()).cloned().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    pub fn check(&self, model: &ModelSpec) -> Result<()> {
        if self.x.len() != model.m() || self.y.len() != model.d() {
            return Err(Error::DimensionMismatch(format!(
                "point has ({}, {}) coordinates, model is ({}, {})",
                self.x.len(),
                self.y.len(),
                model.m(),
                model.d()
            )));
        }
        if !self.is_finite() {
            return Err(Error::invalid("point", "non-finite coordinate"));
        }
        Ok(())
    }
}

fn bilinear(mat: &DMatrix<f64>, x: &[f64], xp: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for k in 0..n {
            row += mat[(i, k)] * x[k];
        }
        acc += row * xp[i];
    }
    acc
}

/// `(x, y)•(x′, y′) = (x + x′, y + y′ + <(σᵀ)⁻¹ A_l x, x′>)`.
pub fn group_mul(p: &GroupPoint, q: &GroupPoint, model: &ModelSpec) -> GroupPoint {
    let x = p.x.iter().zip(&q.x).map(|(a, b)| a + b).collect();
    let y = (0..model.d())
        .map(|l| p.y[l] + q.y[l] + bilinear(&model.left[l], &p.x, &q.x))
        .collect();
    GroupPoint { x, y }
}

/// Two-sided inverse: `(−x, <(σᵀ)⁻¹ A_l x, x> − y)`.
pub fn group_inv(p: &GroupPoint, model: &ModelSpec) -> GroupPoint {
    let x = p.x.iter().map(|v| -v).collect();
    let y = (0..model.d())
        .map(|l| bilinear(&model.left[l], &p.x, &p.x) - p.y[l])
        .collect();
    GroupPoint { x, y }
}

/// The `d × d` Gram matrix `K_{lk} = Tr(G_lᵀ G_k)`.
pub fn hormander_gram(model: &ModelSpec) -> DMatrix<f64> {
    let d = model.d();
    DMatrix::from_fn(d, d, |l, k| model.g[l].dot(&model.g[k]))
}

/// Smallest eigenvalue of [`hormander_gram`], clamped at zero.
pub fn hormander_lambda(model: &ModelSpec) -> Result<f64> {
    let k = hormander_gram(model);
    let eig = SymmetricEigen::try_new(k, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("Gram matrix eigen-decomposition did not converge".into()))?;
    Ok(eig.eigenvalues.min().max(0.0))
}

/// Relative threshold below which λ counts as zero.
pub fn lambda_is_positive(model: &ModelSpec, lambda: f64) -> bool {
    let scale = model.g.iter().map(|g| g.norm_squared()).fold(1.0_f64, f64::max);
    lambda > 1e-10 * scale
}

/// Result of the (A1) search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub satisfied: bool,
    /// Always true: the value is a sampled lower estimate of the supremum.
    pub sampled: bool,
}

struct ThetaProblem {
    /// `P_lk = G_lᵀ G_k` for all pairs.
    p: Vec<Vec<DMatrix<f64>>>,
    d: usize,
}

impl ThetaProblem {
    fn new(model: &ModelSpec) -> Self {
        let d = model.d();
        let p = (0..d)
            .map(|l| {
                (0..d)
                    .map(|k| model.g[l].transpose() * &model.g[k])
                    .collect()
            })
            .collect();
        Self { p, d }
    }

    /// Ratio and its (sub)gradient in `u` and `a`.
    fn eval(&self, u: &DVector<f64>, a: &DVector<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
        let d = self.d;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut gnum_u = DVector::zeros(u.len());
        let mut gden_u = DVector::zeros(u.len());
        let mut gnum_a = DVector::zeros(d);
        let mut gden_a = DVector::zeros(d);
        for l in 0..d {
            for k in 0..d {
                let pu = &self.p[l][k] * u;
                let c = u.dot(&pu);
                // ∇_u <P u, u> = (P + Pᵀ) u
                let grad_c = &pu + self.p[l][k].transpose() * u;
                if l == k {
                    den += a[l] * a[l] * c;
                    gden_u += &grad_c * (a[l] * a[l]);
                    gden_a[l] += 2.0 * a[l] * c;
                } else {
                    let w = a[l] * a[k] * c;
                    let s = w.signum();
                    num += w.abs();
                    gnum_u += &grad_c * (s * a[l] * a[k]);
                    gnum_a[l] += s * a[k] * c;
                    gnum_a[k] += s * a[l] * c;
                }
            }
        }
        if den <= 1e-300 {
            return None;
        }
        let r = num / den;
        let gu = (gnum_u - gden_u * r) / den;
        let ga = (gnum_a - gden_a * r) / den;
        Some((r, gu, ga))
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nv = v.norm();
        if nv > 1e-12 {
            return v / nv;
        }
    }
}

fn tangent(v: &DVector<f64>, at: &DVector<f64>) -> DVector<f64> {
    v - at * at.dot(v)
}

/// Estimates the smallest admissible θ of (A1),
///
/// ```text
/// θ Σ_l a_l² |G_l u|² ≥ Σ_{l≠k} |a_l a_k <G_lᵀ G_k u, u>|,
/// ```
///
/// as the supremum of the ratio over unit `u`, `a`. Random sampling seeds a
/// multi-start projected gradient ascent on the product of spheres; the
/// result is a sampled estimate, not a certificate.
pub fn a1_theta(model: &ModelSpec, n_starts: usize, iters: usize) -> Result<ThetaEstimate> {
    if !model.all_g_nonzero() {
        return Err(Error::DegenerateModel("some G_l vanishes".into()));
    }
    if model.d() == 1 {
        return Ok(ThetaEstimate {
            theta: 0.0,
            satisfied: true,
            sampled: true,
        });
    }
    let prob = ThetaProblem::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let n_samples = (n_starts * 64).max(256);
    let mut candidates: Vec<(f64, DVector<f64>, DVector<f64>)> = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let u = random_unit(&mut rng, model.m());
        let a = random_unit(&mut rng, model.d());
        if let Some((r, _, _)) = prob.eval(&u, &a) {
            candidates.push((r, u, a));
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0));
    candidates.truncate(n_starts.max(1));

    let mut best = candidates.first().map(|c| c.0).unwrap_or(0.0);
    for (_, mut u, mut a) in candidates {
        let mut step = 0.1;
        let Some((mut r, mut gu, mut ga)) = prob.eval(&u, &a) else {
            continue;
        };
        for _ in 0..iters {
            let tu = tangent(&gu, &u);
            let ta = tangent(&ga, &a);
            let gnorm = (tu.norm_squared() + ta.norm_squared()).sqrt();
            if gnorm < 1e-14 || step < 1e-14 {
                break;
            }
            let nu = (&u + &tu * (step / gnorm)).normalize();
            let na = (&a + &ta * (step / gnorm)).normalize();
            match prob.eval(&nu, &na) {
                Some((nr, ngu, nga)) if nr >= r => {
                    u = nu;
                    a = na;
                    r = nr;
                    gu = ngu;
                    ga = nga;
                    step *= 1.2;
                }
                _ => step *= 0.5,
            }
        }
        best = best.max(r);
    }
    Ok(ThetaEstimate {
        theta: best,
        satisfied: best < 1.0,
        sampled: true,
    })
}

/// One failed identity of (A2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Violation {
    pub condition: String,
    /// One-based indices `l`, `l′`, `l″` involved.
    pub indices: Vec<usize>,
    pub residual: f64,
}

/// Checks the structural identities of (A2): `A_lᵀ = −A_l`, `σA_l = A_lσ`,
/// `A_l A_l′ = A_l′ A_l`, and skew-symmetry of `A_lσ`, `A_l A_l′ A_l″ σ`,
/// `A_l σ² σᵀ`.
pub fn a2_check(model: &ModelSpec, tol: f64) -> (bool, Vec<A2Violation>) {
    let mut violations = Vec::new();
    let mut record = |condition: &str, indices: Vec<usize>, residual: f64| {
        if residual > tol {
            violations.push(A2Violation {
                condition: condition.to_string(),
                indices,
                residual,
            });
        }
    };
    let skew_resid = |m: &DMatrix<f64>| max_abs(&(m + m.transpose()));
    let sigma = model.sigma();
    let sigma2_t = sigma * sigma * sigma.transpose();
    let d = model.d();
    for l in 0..d {
        let al = &model.a[l];
        record("A_l^T = -A_l", vec![l + 1], skew_resid(al));
        record("sigma A_l = A_l sigma", vec![l + 1], max_abs(&(sigma * al - al * sigma)));
        record("A_l sigma skew", vec![l + 1], skew_resid(&model.a_sigma[l]));
        record("A_l sigma^2 sigma^T skew", vec![l + 1], skew_resid(&(al * &sigma2_t)));
        for lp in 0..d {
            let alp = &model.a[lp];
            if lp > l {
                record(
                    "A_l A_l' = A_l' A_l",
                    vec![l + 1, lp + 1],
                    max_abs(&(al * alp - alp * al)),
                );
            }
            for lpp in 0..d {
                let triple = al * alp * &model.a[lpp] * sigma;
                record(
                    "A_l A_l' A_l'' sigma skew",
                    vec![l + 1, lp + 1, lpp + 1],
                    skew_resid(&triple),
                );
            }
        }
    }
    (violations.is_empty(), violations)
}

/// Curvature constants `c1 = Σ_l ‖G_l‖²_spectral`, `c2 = λ / 2`.
pub fn c_constants(model: &ModelSpec) -> Result<(f64, f64)> {
    let lambda = hormander_lambda(model)?;
    if !lambda_is_positive(model, lambda) {
        return Err(Error::ZeroLambda);
    }
    let c1 = model.g.iter().map(|g| spectral_norm(g).powi(2)).sum();
    Ok((c1, lambda / 2.0))
}

/// Everything the checkers know about a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lambda: f64,
    pub hormander: bool,
    pub theta_estimate: Option<f64>,
    pub a1_satisfied: Option<bool>,
    pub theta_sampled: bool,
    pub a2_pass: bool,
    pub a2_violations: Vec<A2Violation>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

/// Runs every checker. (A1) is skipped (reported as `None`) when some `G_l = 0`.
pub fn condition_report(model: &ModelSpec) -> Result<ConditionReport> {
    let lambda = hormander_lambda(model)?;
    let hormander = lambda_is_positive(model, lambda);
    let theta = if model.all_g_nonzero() {
        Some(a1_theta(model, 32, 400)?)
    } else {
        None
    };
    let (a2_pass, a2_violations) = a2_check(model, MATRIX_TOL);
    let (c1, c2) = match c_constants(model) {
        Ok((c1, c2)) => (Some(c1), Some(c2)),
        Err(Error::ZeroLambda) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(ConditionReport {
        lambda,
        hormander,
        theta_estimate: theta.map(|t| t.theta),
        a1_satisfied: theta.map(|t| t.satisfied),
        theta_sampled: true,
        a2_pass,
        a2_violations,
        c1,
        c2,
    })
}
