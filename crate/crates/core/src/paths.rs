//! Brownian drivers, the SDE on a uniform grid, and the path functionals
//! feeding the Malliavin weights.
//!
//! All time integrals use the left-point rule on the same grid as the Itô
//! sums, so the discrete identities stay internally consistent.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{max_abs, GroupPoint, ModelSpec};
use crate::error::{Error, Result};

/// Default number of time steps.
pub const DEFAULT_STEPS: usize = 256;

/// Paths whose `Q_T` has a condition number above this are rejected.
pub const MAX_Q_CONDITION: f64 = 1e12;

/// Uniform grid `t_j = j·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl PathGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
        }
        if n_steps < 1 {
            return Err(Error::invalid("n_steps", "need at least one step"));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }
}

/// Independent stream for one path: ChaCha8 keyed by the master seed, with
/// the path index selecting the stream. Draws for a path never depend on
/// which worker produces them.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    rng
}

/// `n_steps × m` standard normals, row-major.
pub fn standard_normals(rng: &mut impl Rng, n_steps: usize, m: usize) -> Vec<f64> {
    (0..n_steps * m).map(|_| rng.sample(StandardNormal)).collect()
}

/// Discretized `m`-dimensional Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: PathGrid,
    pub m: usize,
    /// `dB_j`, `j = 0..n`, row-major `n × m`.
    pub increments: Vec<f64>,
    /// `B_j`, `j = 0..=n`, row-major `(n + 1) × m`, with `B_0 = 0`.
    pub values: Vec<f64>,
}

impl BrownianPath {
    /// Builds the path from given increments.
    pub fn from_increments(grid: PathGrid, m: usize, increments: Vec<f64>) -> Self {
        let n = grid.n_steps;
        assert_eq!(increments.len(), n * m);
        let mut values = vec![0.0; (n + 1) * m];
        for j in 0..n {
            for i in 0..m {
                values[(j + 1) * m + i] = values[j * m + i] + increments[j * m + i];
            }
        }
        Self {
            grid,
            m,
            increments,
            values,
        }
    }

    /// Scales standard normals by `√dt`. Reusing the same normals across
    /// horizons gives common random numbers in `T`.
    pub fn from_normals(grid: PathGrid, m: usize, normals: &[f64]) -> Self {
        let s = grid.dt().sqrt();
        Self::from_increments(grid, m, normals.iter().map(|v| v * s).collect())
    }

    pub fn sample(grid: PathGrid, m: usize, rng: &mut impl Rng) -> Self {
        let xi = standard_normals(rng, grid.n_steps, m);
        Self::from_normals(grid, m, &xi)
    }

    pub fn zero(grid: PathGrid, m: usize) -> Self {
        Self::from_increments(grid, m, vec![0.0; grid.n_steps * m])
    }

    pub fn n(&self) -> usize {
        self.grid.n_steps
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.m..(j + 1) * self.m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.value(self.n())
    }
}

/// Deterministic-per-path Brownian sample.
pub fn sample_brownian(grid: PathGrid, m: usize, master_seed: u64, path_index: u64) -> BrownianPath {
    BrownianPath::sample(grid, m, &mut path_rng(master_seed, path_index))
}

/// Solution `(X, Y)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub z0: GroupPoint,
    /// Row-major `(n + 1) × m`.
    pub x: Vec<f64>,
    /// Row-major `(n + 1) × d`.
    pub y: Vec<f64>,
    pub m: usize,
    pub d: usize,
}

impl DiffusionPath {
    pub fn x_at(&self, j: usize) -> &[f64] {
        &self.x[j * self.m..(j + 1) * self.m]
    }

    pub fn y_at(&self, j: usize) -> &[f64] {
        &self.y[j * self.d..(j + 1) * self.d]
    }

    pub fn terminal(&self) -> GroupPoint {
        let n = self.x.len() / self.m - 1;
        GroupPoint::new(self.x_at(n).to_vec(), self.y_at(n).to_vec())
    }
}

fn mat_vec(mat: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (r, c) = mat.shape();
    for i in 0..r {
        let mut acc = 0.0;
        for k in 0..c {
            acc += mat[(i, k)] * v[k];
        }
        out[i] = acc;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `X_j = x0 + σB_j` in closed form; `Y_{j+1} = Y_j + <A_l X_j, dB_j>`.
pub fn integrate_sde(model: &ModelSpec, z0: &GroupPoint, b: &BrownianPath) -> DiffusionPath {
    let (m, d) = (model.m(), model.d());
    let n = b.n();
    let mut x = vec![0.0; (n + 1) * m];
    let mut y = vec![0.0; (n + 1) * d];
    let mut sb = vec![0.0; m];
    let mut ax = vec![0.0; m];
    for j in 0..=n {
        mat_vec(model.sigma(), b.value(j), &mut sb);
        for i in 0..m {
            x[j * m + i] = z0.x[i] + sb[i];
        }
    }
    y[..d].copy_from_slice(&z0.y);
    for j in 0..n {
        let xj = x[j * m..(j + 1) * m].to_vec();
        for (l, al) in model.a().iter().enumerate() {
            mat_vec(al, &xj, &mut ax);
            y[(j + 1) * d + l] = y[j * d + l] + dot(&ax, b.increment(j));
        }
    }
    DiffusionPath {
        z0: z0.clone(),
        x,
        y,
        m,
        d,
    }
}

/// Terminal point only, without storing the trajectory.
pub fn terminal_point(model: &ModelSpec, z0: &GroupPoint, b: &BrownianPath) -> GroupPoint {
    let (m, d) = (model.m(), model.d());
    let n = b.n();
    let mut xj = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut y = z0.y.clone();
    for j in 0..n {
        mat_vec(model.sigma(), b.value(j), &mut xj);
        for i in 0..m {
            xj[i] += z0.x[i];
        }
        for (l, al) in model.a().iter().enumerate() {
            mat_vec(al, &xj, &mut ax);
            y[l] += dot(&ax, b.increment(j));
        }
    }
    mat_vec(model.sigma(), b.terminal(), &mut xj);
    for i in 0..m {
        xj[i] += z0.x[i];
    }
    debug_assert_eq!(y.len(), d);
    GroupPoint::new(xj, y)
}

/// Direction-independent per-path functionals.
#[derive(Debug, Clone)]
pub struct PathFunctionals {
    pub grid: PathGrid,
    pub m: usize,
    pub d: usize,
    /// `B(T)`.
    pub b_terminal: Vec<f64>,
    /// `B̄ = (1/T) Σ_j B_j dt`.
    pub b_bar: Vec<f64>,
    /// `B̂_j = B_j − B̄`, `j = 0..n`, row-major.
    pub b_hat: Vec<f64>,
    /// `q_{lk} = Σ_j <G_lᵀ G_k B̂_j, B̂_j> dt`, symmetrized.
    pub q: DMatrix<f64>,
    /// `S_k = Σ_j <G_k B_j, dB_j>`.
    pub s: Vec<f64>,
    /// `J_k = Σ_j G_k B_j dt = β_k(T)`.
    pub j: Vec<Vec<f64>>,
    /// `β_k(t_j) = Σ_{p<j} G_k B_p dt`, `j = 0..=n`, row-major per `k`.
    pub beta: Vec<Vec<f64>>,
    /// Left-point time average of `β_k`.
    pub beta_bar: Vec<Vec<f64>>,
    /// Left-point time average of `t`, i.e. `(T − dt)/2`.
    pub t_bar: f64,
    /// `D_{β_k} Q` for each `k`.
    pub dq_beta: Vec<DMatrix<f64>>,
    /// `D_{h_i} Q` for `h_i(t) = t e_i`.
    pub dq_h: Vec<DMatrix<f64>>,
    /// Discrete correction `e_{lk} = Σ_j <A_l σ G_k B̂_j, dB_j> dt`. The
    /// discrete Cameron-Martin shift of `Y(T)` picks up `−(E γ)_l` on top of
    /// `(Q γ)_l`, so the discrete-exact weights solve with `Q − E`.
    pub e: DMatrix<f64>,
    /// `D_{β_k} E`.
    pub de_beta: Vec<DMatrix<f64>>,
    /// `D_{h_i} E`.
    pub de_h: Vec<DMatrix<f64>>,
}

/// Computes every functional with the left-point rule.
pub fn compute_functionals(model: &ModelSpec, b: &BrownianPath) -> PathFunctionals {
    let (m, d) = (model.m(), model.d());
    let grid = b.grid;
    let n = b.n();
    let dt = grid.dt();
    let g = model.g();

    let mut b_bar = vec![0.0; m];
    for jj in 0..n {
        for i in 0..m {
            b_bar[i] += b.value(jj)[i];
        }
    }
    b_bar.iter_mut().for_each(|v| *v /= n as f64);

    let mut b_hat = vec![0.0; n * m];
    for jj in 0..n {
        for i in 0..m {
            b_hat[jj * m + i] = b.value(jj)[i] - b_bar[i];
        }
    }

    // G_l B̂_j and G_l B_j
    let mut gbh = vec![vec![0.0; n * m]; d];
    let mut s = vec![0.0; d];
    let mut jv = vec![vec![0.0; m]; d];
    let mut beta = vec![vec![0.0; (n + 1) * m]; d];
    let mut tmp = vec![0.0; m];
    for l in 0..d {
        for jj in 0..n {
            mat_vec(&g[l], &b_hat[jj * m..(jj + 1) * m], &mut gbh[l][jj * m..(jj + 1) * m]);
            mat_vec(&g[l], b.value(jj), &mut tmp);
            s[l] += dot(&tmp, b.increment(jj));
            for i in 0..m {
                beta[l][(jj + 1) * m + i] = beta[l][jj * m + i] + tmp[i] * dt;
            }
        }
        jv[l].copy_from_slice(&beta[l][n * m..]);
    }

    let mut q = DMatrix::zeros(d, d);
    for l in 0..d {
        for k in 0..d {
            let mut acc = 0.0;
            for jj in 0..n {
                acc += dot(&gbh[l][jj * m..(jj + 1) * m], &gbh[k][jj * m..(jj + 1) * m]);
            }
            q[(l, k)] = acc * dt;
        }
    }
    q = (&q + q.transpose()) * 0.5;

    let mut beta_bar = vec![vec![0.0; m]; d];
    for k in 0..d {
        for jj in 0..n {
            for i in 0..m {
                beta_bar[k][i] += beta[k][jj * m + i];
            }
        }
        beta_bar[k].iter_mut().for_each(|v| *v /= n as f64);
    }

    // D_{β_k} q_{l l'} = Σ_j [<G_l' β̂_kj, G_l B̂_j> + <G_l' B̂_j, G_l β̂_kj>] dt
    let mut dq_beta = Vec::with_capacity(d);
    let mut bh = vec![0.0; m];
    let mut gbeta = vec![vec![0.0; m]; d];
    for k in 0..d {
        let mut dq = DMatrix::zeros(d, d);
        for jj in 0..n {
            for i in 0..m {
                bh[i] = beta[k][jj * m + i] - beta_bar[k][i];
            }
            for l in 0..d {
                mat_vec(&g[l], &bh, &mut gbeta[l]);
            }
            for l in 0..d {
                let gb_l = &gbh[l][jj * m..(jj + 1) * m];
                for lp in 0..d {
                    let gb_lp = &gbh[lp][jj * m..(jj + 1) * m];
                    dq[(l, lp)] += dot(&gbeta[lp], gb_l) + dot(gb_lp, &gbeta[l]);
                }
            }
        }
        dq_beta.push(dq * dt);
    }

    // D_{h_i} q_{l l'} = <G_l' e_i, G_l W> + <G_l' W, G_l e_i>, W = Σ_j (t_j − t̄) B̂_j dt
    let t_bar = (0..n).map(|jj| grid.time(jj)).sum::<f64>() / n as f64;
    let mut w = vec![0.0; m];
    for jj in 0..n {
        let c = (grid.time(jj) - t_bar) * dt;
        for i in 0..m {
            w[i] += c * b_hat[jj * m + i];
        }
    }
    let gw: Vec<Vec<f64>> = (0..d)
        .map(|l| {
            let mut out = vec![0.0; m];
            mat_vec(&g[l], &w, &mut out);
            out
        })
        .collect();
    let dq_h = (0..m)
        .map(|i| {
            DMatrix::from_fn(d, d, |l, lp| {
                let col_lp: Vec<f64> = (0..m).map(|r| g[lp][(r, i)]).collect();
                let col_l: Vec<f64> = (0..m).map(|r| g[l][(r, i)]).collect();
                dot(&col_lp, &gw[l]) + dot(&gw[lp], &col_l)
            })
        })
        .collect();

    // M_{lk} = A_l σ G_k
    let mlk: Vec<Vec<DMatrix<f64>>> = (0..d)
        .map(|l| (0..d).map(|k| &model.a_sigma()[l] * &g[k]).collect())
        .collect();
    let mut e = DMatrix::zeros(d, d);
    let mut de_beta = vec![DMatrix::zeros(d, d); d];
    let mut v_t = vec![0.0; m];
    let mut mb = vec![0.0; m];
    for jj in 0..n {
        let db = b.increment(jj);
        let bh_j = &b_hat[jj * m..(jj + 1) * m];
        let c = grid.time(jj) - t_bar;
        for i in 0..m {
            v_t[i] += c * db[i];
        }
        for l in 0..d {
            for k in 0..d {
                mat_vec(&mlk[l][k], bh_j, &mut mb);
                e[(l, k)] += dot(&mb, db);
                for kp in 0..d {
                    // G_k' B_j dt is the increment of β_k'
                    let inc = &beta[kp][(jj + 1) * m..(jj + 2) * m];
                    let prev = &beta[kp][jj * m..(jj + 1) * m];
                    let dbeta: f64 = (0..m).map(|i| mb[i] * (inc[i] - prev[i])).sum();
                    for i in 0..m {
                        bh[i] = prev[i] - beta_bar[kp][i];
                    }
                    let mut mbeta = vec![0.0; m];
                    mat_vec(&mlk[l][k], &bh, &mut mbeta);
                    de_beta[kp][(l, k)] += dot(&mbeta, db) + dbeta;
                }
            }
        }
    }
    e *= dt;
    de_beta.iter_mut().for_each(|mat| *mat *= dt);
    let de_h = (0..m)
        .map(|i| DMatrix::from_fn(d, d, |l, k| dt * (0..m).map(|r| mlk[l][k][(r, i)] * v_t[r]).sum::<f64>()))
        .collect();

    PathFunctionals {
        grid,
        m,
        d,
        b_terminal: b.terminal().to_vec(),
        b_bar,
        b_hat,
        q,
        s,
        j: jv,
        beta,
        beta_bar,
        t_bar,
        dq_beta,
        dq_h,
        e,
        de_beta,
        de_h,
    }
}

/// `Q⁻¹` through the symmetric eigendecomposition. Rejects non-positive or
/// ill-conditioned `Q` and inverses whose residual exceeds `1e−8`.
pub fn invert_q(f: &PathFunctionals) -> Result<DMatrix<f64>> {
    let d = f.d;
    if d == 1 {
        let q = f.q[(0, 0)];
        if q > 0.0 && q.is_finite() {
            return Ok(DMatrix::from_element(1, 1, 1.0 / q));
        }
        return Err(Error::SingularQ {
            condition: f64::INFINITY,
        });
    }
    let eig = SymmetricEigen::new(f.q.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_Q_CONDITION) {
        return Err(Error::SingularQ { condition });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    let resid = max_abs(&(&f.q * &inv - DMatrix::identity(d, d)));
    if resid > 1e-8 {
        return Err(Error::SingularQ { condition });
    }
    Ok(inv)
}
