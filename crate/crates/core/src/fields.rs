//! Differential operators of the model applied to analytic test functions.
//!
//! Every field used here has a coefficient that is affine in `z = (x, y)`:
//! `v(z) = v₀ + J z`. That makes compositions exact from second-order data,
//!
//! ```text
//! V(W f)(z) = v(z)ᵀ ∇²f(z) w(z) + (J_w v(z)) · ∇f(z),
//! ```
//!
//! so `L`, `Γ₂` and every bracket are computed without finite differences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{c_constants, GroupPoint, ModelSpec};
use crate::error::Result;

/// A scalar function on `R^{m+d}` with exact gradient and Hessian.
///
/// Points are passed as the concatenation `(x, y)`.
pub trait Smooth: Sync {
    fn eval(&self, z: &[f64]) -> f64;
    fn grad(&self, z: &[f64]) -> Vec<f64>;
    fn hess(&self, z: &[f64]) -> DMatrix<f64>;
}

/// Parametric families of test functions.
///
/// Serialized with a `family` tag, e.g.
/// `{"family":"trig","a":[1,0],"b":[2],"c":0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum TestFunction {
    /// `f ≡ value`.
    Const { value: f64 },
    /// `offset + amp · sin(<a, x> + <b, y> + c)`.
    Trig {
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
        #[serde(default = "one")]
        amp: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `exp(−a|x|² − b|y|²)`, `a, b ≥ 0`.
    Gauss { a: f64, b: f64 },
    /// `x_i` (zero-based).
    X { i: usize },
    /// `y_l` (zero-based).
    Y { l: usize },
    /// `<p, x> + <q, y>`.
    Linear { p: Vec<f64>, q: Vec<f64> },
    /// `<x, M x> + <w, y>` with `M` given row-major.
    Quadratic { mat: Vec<Vec<f64>>, w: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn trig(a: &[f64], b: &[f64], c: f64) -> Self {
        TestFunction::Trig {
            a: a.to_vec(),
            b: b.to_vec(),
            c,
            amp: 1.0,
            offset: 0.0,
        }
    }

    /// `|x|²` in dimension `m`, as a quadratic with no vertical part.
    pub fn norm_sq_x(m: usize, d: usize) -> Self {
        TestFunction::Quadratic {
            mat: (0..m)
                .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            w: vec![0.0; d],
        }
    }

    /// Whether the function and its gradient are bounded.
    pub fn bounded(&self) -> bool {
        matches!(
            self,
            TestFunction::Const { .. } | TestFunction::Trig { .. } | TestFunction::Gauss { .. }
        )
    }

    /// Strict positivity known from the parameters alone.
    pub fn is_positive(&self) -> bool {
        match self {
            TestFunction::Const { value } => *value > 0.0,
            TestFunction::Trig { amp, offset, .. } => *offset > amp.abs(),
            TestFunction::Gauss { .. } => true,
            _ => false,
        }
    }

    pub fn name(&self) -> String {
        fn fmt_vec(v: &[f64]) -> String {
            let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("[{}]", parts.join(" "))
        }
        match self {
            TestFunction::Const { value } => format!("const({value})"),
            TestFunction::Trig { a, b, c, amp, offset } => {
                let mut s = format!("trig(a={} b={} c={c}", fmt_vec(a), fmt_vec(b));
                if *amp != 1.0 {
                    s.push_str(&format!(" amp={amp}"));
                }
                if *offset != 0.0 {
                    s.push_str(&format!(" offset={offset}"));
                }
                s.push(')');
                s
            }
            TestFunction::Gauss { a, b } => format!("gauss(a={a} b={b})"),
            TestFunction::X { i } => format!("x{}", i + 1),
            TestFunction::Y { l } => format!("y{}", l + 1),
            TestFunction::Linear { p, q } => format!("linear(p={} q={})", fmt_vec(p), fmt_vec(q)),
            TestFunction::Quadratic { mat, w } => {
                let rows: Vec<String> = mat.iter().map(|r| fmt_vec(r)).collect();
                format!("quadratic(M=[{}] w={})", rows.join(" "), fmt_vec(w))
            }
        }
    }

    /// Checks that the parameter vectors match the model dimensions.
    pub fn validate(&self, m: usize, d: usize) -> Result<()> {
        use crate::error::Error;
        let bad = |what: &str| Err(Error::Config(format!("{}: {what}", self.name())));
        match self {
            TestFunction::Trig { a, b, .. } if a.len() != m || b.len() != d => {
                bad("coefficient vectors have the wrong length")
            }
            TestFunction::Gauss { a, b } if *a < 0.0 || *b < 0.0 => bad("a, b must be ≥ 0"),
            TestFunction::X { i } if *i >= m => bad("index out of range"),
            TestFunction::Y { l } if *l >= d => bad("index out of range"),
            TestFunction::Linear { p, q } if p.len() != m || q.len() != d => {
                bad("coefficient vectors have the wrong length")
            }
            TestFunction::Quadratic { mat, w }
                if mat.len() != m || mat.iter().any(|r| r.len() != m) || w.len() != d =>
            {
                bad("matrix or vector has the wrong shape")
            }
            _ => Ok(()),
        }
    }

    /// `T_s f(x, y) = f(e^{s/2} x, e^s y)`. Coordinate functions become
    /// [`TestFunction::Linear`]; every other family is preserved.
    pub fn dilate(&self, s: f64, m: usize, d: usize) -> Self {
        let hx = (0.5 * s).exp();
        let hy = s.exp();
        match self {
            TestFunction::Const { .. } => self.clone(),
            TestFunction::Trig { a, b, c, amp, offset } => TestFunction::Trig {
                a: a.iter().map(|v| v * hx).collect(),
                b: b.iter().map(|v| v * hy).collect(),
                c: *c,
                amp: *amp,
                offset: *offset,
            },
            TestFunction::Gauss { a, b } => TestFunction::Gauss {
                a: a * hx * hx,
                b: b * hy * hy,
            },
            TestFunction::X { i } => TestFunction::Linear {
                p: (0..m).map(|k| if k == *i { hx } else { 0.0 }).collect(),
                q: vec![0.0; d],
            },
            TestFunction::Y { l } => TestFunction::Linear {
                p: vec![0.0; m],
                q: (0..d).map(|k| if k == *l { hy } else { 0.0 }).collect(),
            },
            TestFunction::Linear { p, q } => TestFunction::Linear {
                p: p.iter().map(|v| v * hx).collect(),
                q: q.iter().map(|v| v * hy).collect(),
            },
            TestFunction::Quadratic { mat, w } => TestFunction::Quadratic {
                mat: mat
                    .iter()
                    .map(|r| r.iter().map(|v| v * hx * hx).collect())
                    .collect(),
                w: w.iter().map(|v| v * hy).collect(),
            },
        }
    }

    pub fn eval_xy(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            TestFunction::Const { value } => *value,
            TestFunction::Trig { a, b, c, amp, offset } => {
                let phase = dot(a, x) + dot(b, y) + c;
                offset + amp * phase.sin()
            }
            TestFunction::Gauss { a, b } => (-a * dot(x, x) - b * dot(y, y)).exp(),
            TestFunction::X { i } => x[*i],
            TestFunction::Y { l } => y[*l],
            TestFunction::Linear { p, q } => dot(p, x) + dot(q, y),
            TestFunction::Quadratic { mat, w } => {
                let mut q = 0.0;
                for (i, row) in mat.iter().enumerate() {
                    q += x[i] * dot(row, x);
                }
                q + dot(w, y)
            }
        }
    }

    pub fn eval_point(&self, p: &GroupPoint) -> f64 {
        self.eval_xy(&p.x, &p.y)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// A [`TestFunction`] bound to the model dimensions so it can act on
/// concatenated points.
#[derive(Debug, Clone)]
pub struct Bound<'a> {
    pub f: &'a TestFunction,
    pub m: usize,
    pub d: usize,
}

impl TestFunction {
    pub fn bind(&self, model: &ModelSpec) -> Bound<'_> {
        Bound {
            f: self,
            m: model.m(),
            d: model.d(),
        }
    }
}

impl Smooth for Bound<'_> {
    fn eval(&self, z: &[f64]) -> f64 {
        let (x, y) = z.split_at(self.m);
        self.f.eval_xy(x, y)
    }

    fn grad(&self, z: &[f64]) -> Vec<f64> {
        let (m, d) = (self.m, self.d);
        let (x, y) = z.split_at(m);
        let mut g = vec![0.0; m + d];
        match self.f {
            TestFunction::Const { .. } => {}
            TestFunction::Trig { a, b, c, amp, .. } => {
                let cp = amp * (dot(a, x) + dot(b, y) + c).cos();
                for (gi, ai) in g.iter_mut().zip(a.iter().chain(b.iter())) {
                    *gi = cp * ai;
                }
            }
            TestFunction::Gauss { a, b } => {
                let f = (-a * dot(x, x) - b * dot(y, y)).exp();
                for i in 0..m {
                    g[i] = -2.0 * a * x[i] * f;
                }
                for l in 0..d {
                    g[m + l] = -2.0 * b * y[l] * f;
                }
            }
            TestFunction::X { i } => g[*i] = 1.0,
            TestFunction::Y { l } => g[m + *l] = 1.0,
            TestFunction::Linear { p, q } => {
                g[..m].copy_from_slice(p);
                g[m..].copy_from_slice(q);
            }
            TestFunction::Quadratic { mat, w } => {
                for i in 0..m {
                    g[i] = (0..m).map(|k| (mat[i][k] + mat[k][i]) * x[k]).sum();
                }
                g[m..].copy_from_slice(w);
            }
        }
        g
    }

    fn hess(&self, z: &[f64]) -> DMatrix<f64> {
        let (m, d) = (self.m, self.d);
        let n = m + d;
        let (x, y) = z.split_at(m);
        match self.f {
            TestFunction::Const { .. }
            | TestFunction::X { .. }
            | TestFunction::Y { .. }
            | TestFunction::Linear { .. } => {
                DMatrix::zeros(n, n)
            }
            TestFunction::Trig { a, b, c, amp, .. } => {
                let s = -amp * (dot(a, x) + dot(b, y) + c).sin();
                let k: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
                DMatrix::from_fn(n, n, |i, j| s * k[i] * k[j])
            }
            TestFunction::Gauss { a, b } => {
                let f = (-a * dot(x, x) - b * dot(y, y)).exp();
                // ∇f = f·q with q = (−2a x, −2b y); ∇²f = f (q qᵀ + diag(−2a, −2b))
                let q: Vec<f64> = x
                    .iter()
                    .map(|v| -2.0 * a * v)
                    .chain(y.iter().map(|v| -2.0 * b * v))
                    .collect();
                DMatrix::from_fn(n, n, |i, j| {
                    let diag = if i == j {
                        if i < m {
                            -2.0 * a
                        } else {
                            -2.0 * b
                        }
                    } else {
                        0.0
                    };
                    f * (q[i] * q[j] + diag)
                })
            }
            TestFunction::Quadratic { mat, .. } => {
                DMatrix::from_fn(n, n, |i, j| if i < m && j < m { mat[i][j] + mat[j][i] } else { 0.0 })
            }
        }
    }
}

/// Named families used across the test and report suites.
pub mod registry {
    use super::TestFunction;
    use std::f64::consts::FRAC_PI_2;

    /// Nine bounded trigonometric functions covering horizontal, vertical and
    /// mixed dependence.
    pub fn trig_suite(m: usize, d: usize) -> Vec<TestFunction> {
        assert!(m >= 2 && d >= 1);
        let e = |n: usize, entries: &[(usize, f64)]| {
            let mut v = vec![0.0; n];
            for &(k, c) in entries {
                v[k] = c;
            }
            v
        };
        let last = d - 1;
        let mut b8 = e(d, &[(0, 1.5)]);
        if d > 1 {
            b8[1] = 0.5;
        }
        vec![
            TestFunction::trig(&e(m, &[(0, 1.0)]), &e(d, &[]), 0.0),
            TestFunction::trig(&e(m, &[(1, 1.0)]), &e(d, &[]), 0.0),
            TestFunction::trig(&e(m, &[]), &e(d, &[(0, 1.0)]), 0.0),
            TestFunction::trig(&e(m, &[(0, 1.0)]), &e(d, &[(0, 1.0)]), 0.0),
            TestFunction::trig(&e(m, &[(0, 1.0)]), &e(d, &[(0, 2.0)]), 0.0),
            TestFunction::trig(&e(m, &[(0, 1.0), (1, -1.0)]), &e(d, &[]), FRAC_PI_2),
            TestFunction::trig(&e(m, &[(0, 1.0), (1, 1.0)]), &e(d, &[(last, 1.0)]), 0.3),
            TestFunction::trig(&e(m, &[(0, 0.5), (1, -1.0)]), &b8, 1.0),
            TestFunction::trig(&e(m, &[]), &e(d, &[(last, 2.0)]), FRAC_PI_2),
        ]
    }

    /// Gaussian bumps of a few widths.
    pub fn gauss_suite() -> Vec<TestFunction> {
        vec![
            TestFunction::Gauss { a: 0.5, b: 0.5 },
            TestFunction::Gauss { a: 1.0, b: 0.25 },
            TestFunction::Gauss { a: 0.2, b: 1.0 },
        ]
    }

    /// Every family, including the unbounded coordinate and quadratic ones.
    pub fn all_families(m: usize, d: usize) -> Vec<TestFunction> {
        let mut out = trig_suite(m, d);
        out.extend(gauss_suite());
        out.push(TestFunction::Const { value: 1.5 });
        out.extend((0..m).map(|i| TestFunction::X { i }));
        out.extend((0..d).map(|l| TestFunction::Y { l }));
        out.push(TestFunction::norm_sq_x(m, d));
        let mat = (0..m)
            .map(|i| (0..m).map(|j| 0.3 * (i as f64) - 0.2 * (j as f64) + if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        out.push(TestFunction::Quadratic {
            mat,
            w: (0..d).map(|l| 1.0 - 0.5 * l as f64).collect(),
        });
        out
    }
}

/// A first-order operator `Σ_k v_k(z) ∂_k` with `v(z) = offset + jac·z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField {
    pub offset: DVector<f64>,
    pub jac: DMatrix<f64>,
}

impl AffineField {
    pub fn coefficient(&self, z: &[f64]) -> DVector<f64> {
        &self.offset + &self.jac * DVector::from_column_slice(z)
    }

    /// `V f (z)`.
    pub fn apply(&self, f: &dyn Smooth, z: &[f64]) -> f64 {
        self.coefficient(z).dot(&DVector::from_vec(f.grad(z)))
    }

    /// `self(W f)(z)`, exact from the Hessian.
    pub fn compose(&self, w: &AffineField, f: &dyn Smooth, z: &[f64]) -> f64 {
        let v = self.coefficient(z);
        let wc = w.coefficient(z);
        let h = f.hess(z);
        let g = DVector::from_vec(f.grad(z));
        v.dot(&(&h * &wc)) + (&w.jac * &v).dot(&g)
    }

    /// Bracket `[self, W] f = self(W f) − W(self f)`.
    pub fn bracket(&self, w: &AffineField, f: &dyn Smooth, z: &[f64]) -> f64 {
        self.compose(w, f, z) - w.compose(self, f, z)
    }
}

/// `X_i = Σ_k σ_{ki} ∂_{x_k} + Σ_l (A_l x)_i ∂_{y_l}` (zero-based `i`).
pub fn x_field(model: &ModelSpec, i: usize) -> AffineField {
    horizontal_field(model, i, 1.0)
}

/// `X̂_i = Σ_k σ_{ki} ∂_{x_k} − Σ_l (A_l x)_i ∂_{y_l}`.
pub fn x_hat_field(model: &ModelSpec, i: usize) -> AffineField {
    horizontal_field(model, i, -1.0)
}

fn horizontal_field(model: &ModelSpec, i: usize, vertical_sign: f64) -> AffineField {
    let (m, d) = (model.m(), model.d());
    let n = m + d;
    let mut offset = DVector::zeros(n);
    for k in 0..m {
        offset[k] = model.sigma()[(k, i)];
    }
    let mut jac = DMatrix::zeros(n, n);
    for l in 0..d {
        for k in 0..m {
            jac[(m + l, k)] = vertical_sign * model.a()[l][(i, k)];
        }
    }
    AffineField { offset, jac }
}

/// `Θ_l = Σ_k (σ A_l x)_k ∂_{x_k}`.
pub fn theta_field(model: &ModelSpec, l: usize) -> AffineField {
    let (m, d) = (model.m(), model.d());
    let n = m + d;
    let sa = model.sigma() * &model.a()[l];
    let mut jac = DMatrix::zeros(n, n);
    jac.view_mut((0, 0), (m, m)).copy_from(&sa);
    AffineField {
        offset: DVector::zeros(n),
        jac,
    }
}

/// `𝔻 = ½ Σ x_i ∂_{x_i} + Σ y_l ∂_{y_l}`.
pub fn dilation_field(model: &ModelSpec) -> AffineField {
    let (m, d) = (model.m(), model.d());
    let n = m + d;
    AffineField {
        offset: DVector::zeros(n),
        jac: DMatrix::from_fn(n, n, |i, j| match (i == j, i < m) {
            (true, true) => 0.5,
            (true, false) => 1.0,
            _ => 0.0,
        }),
    }
}

/// `∂_{y_l}`.
pub fn dy_field(model: &ModelSpec, l: usize) -> AffineField {
    let n = model.dim();
    let mut offset = DVector::zeros(n);
    offset[model.m() + l] = 1.0;
    AffineField {
        offset,
        jac: DMatrix::zeros(n, n),
    }
}

pub fn apply_xi(f: &dyn Smooth, i: usize, z: &[f64], model: &ModelSpec) -> f64 {
    x_field(model, i).apply(f, z)
}

pub fn apply_xi_hat(f: &dyn Smooth, i: usize, z: &[f64], model: &ModelSpec) -> f64 {
    x_hat_field(model, i).apply(f, z)
}

pub fn apply_theta(f: &dyn Smooth, l: usize, z: &[f64], model: &ModelSpec) -> f64 {
    theta_field(model, l).apply(f, z)
}

pub fn apply_dilation(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    dilation_field(model).apply(f, z)
}

/// Precomputed horizontal fields for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Fields {
    pub x: Vec<AffineField>,
    pub x_hat: Vec<AffineField>,
    pub dy: Vec<AffineField>,
    pub m: usize,
    pub d: usize,
}

impl Fields {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            x: (0..model.m()).map(|i| x_field(model, i)).collect(),
            x_hat: (0..model.m()).map(|i| x_hat_field(model, i)).collect(),
            dy: (0..model.d()).map(|l| dy_field(model, l)).collect(),
            m: model.m(),
            d: model.d(),
        }
    }

    /// `L f = ½ Σ_i X_i X_i f`.
    pub fn l(&self, f: &dyn Smooth, z: &[f64]) -> f64 {
        0.5 * self.x.iter().map(|xi| xi.compose(xi, f, z)).sum::<f64>()
    }

    pub fn gamma(&self, f: &dyn Smooth, z: &[f64]) -> f64 {
        0.5 * self.x.iter().map(|xi| xi.apply(f, z).powi(2)).sum::<f64>()
    }

    pub fn gamma_z(&self, f: &dyn Smooth, z: &[f64]) -> f64 {
        let g = f.grad(z);
        0.5 * g[self.m..].iter().map(|v| v * v).sum::<f64>()
    }

    /// Second-order representation
    /// `Γ₂(f) = ¼ Σ_{ij} (X_i X_j f)² − ½ Σ_{ij} (X_j f) Σ_l (G_l)_{ij} ∂_{y_l} X_i f`.
    pub fn gamma2(&self, f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
        let m = self.m;
        let xf: Vec<f64> = self.x.iter().map(|xi| xi.apply(f, z)).collect();
        let mut second = 0.0;
        for xi in &self.x {
            for xj in &self.x {
                second += xi.compose(xj, f, z).powi(2);
            }
        }
        let mut cross = 0.0;
        for i in 0..m {
            for (l, gl) in model.g().iter().enumerate() {
                let dyx = self.dy[l].compose(&self.x[i], f, z);
                let gx: f64 = (0..m).map(|j| gl[(i, j)] * xf[j]).sum();
                cross += gx * dyx;
            }
        }
        0.25 * second - 0.5 * cross
    }

    /// `Γ₂^Z(f) = ¼ Σ_i Σ_l (∂_{y_l} X_i f)²`.
    pub fn gamma2_z(&self, f: &dyn Smooth, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        for xi in &self.x {
            for dy in &self.dy {
                acc += dy.compose(xi, f, z).powi(2);
            }
        }
        0.25 * acc
    }
}

pub fn apply_l(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    Fields::new(model).l(f, z)
}

pub fn gamma(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    Fields::new(model).gamma(f, z)
}

pub fn gamma_z(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    Fields::new(model).gamma_z(f, z)
}

pub fn gamma2(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    Fields::new(model).gamma2(f, z, model)
}

pub fn gamma2_z(f: &dyn Smooth, z: &[f64], model: &ModelSpec) -> f64 {
    Fields::new(model).gamma2_z(f, z)
}

/// Curvature constants `(c1, c2)` paired with the fields, for batch margins.
#[derive(Debug, Clone)]
pub struct CurvatureContext {
    pub fields: Fields,
    pub c1: f64,
    pub c2: f64,
}

impl CurvatureContext {
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let (c1, c2) = c_constants(model)?;
        Ok(Self {
            fields: Fields::new(model),
            c1,
            c2,
        })
    }

    /// `Γ₂ + rΓ₂^Z − [(Lf)²/m + c2 Γ^Z/4 − (c1/r) Γ]`.
    pub fn margin(&self, f: &dyn Smooth, z: &[f64], r: f64, model: &ModelSpec) -> f64 {
        let fl = &self.fields;
        let lhs = fl.gamma2(f, z, model) + r * fl.gamma2_z(f, z);
        let lf = fl.l(f, z);
        let rhs = lf * lf / fl.m as f64 + self.c2 * fl.gamma_z(f, z) / 4.0
            - self.c1 / r * fl.gamma(f, z);
        lhs - rhs
    }
}

/// Curvature-dimension margin at `z`; non-negative whenever the bracket
/// condition holds.
pub fn cd_margin(f: &dyn Smooth, z: &[f64], r: f64, model: &ModelSpec) -> Result<f64> {
    Ok(CurvatureContext::new(model)?.margin(f, z, r, model))
}

/// Residuals of the structural bracket identities at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorReport {
    /// `max |[X_i, X_j] f − Σ_l (G_l)_{ji} ∂_{y_l} f|`.
    pub bracket: f64,
    /// `max |[X̂_i, X_j] f|`; vanishes only when every `A_l σ` is skew.
    pub hat: f64,
    /// `max |[X_i, 𝔻] f − ½ X_i f|`.
    pub dilation: f64,
}

impl CommutatorReport {
    pub fn max_residual(&self) -> f64 {
        self.bracket.max(self.hat).max(self.dilation)
    }
}

pub fn check_commutators(model: &ModelSpec, z: &[f64], f: &dyn Smooth) -> CommutatorReport {
    let fields = Fields::new(model);
    let dil = dilation_field(model);
    let g = f.grad(z);
    let m = model.m();
    let mut rep = CommutatorReport {
        bracket: 0.0,
        hat: 0.0,
        dilation: 0.0,
    };
    for i in 0..m {
        for j in 0..m {
            let composed = fields.x[i].bracket(&fields.x[j], f, z);
            let expected: f64 = model
                .g()
                .iter()
                .enumerate()
                .map(|(l, gl)| gl[(j, i)] * g[m + l])
                .sum();
            rep.bracket = rep.bracket.max((composed - expected).abs());
            rep.hat = rep.hat.max(fields.x_hat[i].bracket(&fields.x[j], f, z).abs());
        }
        let dres = fields.x[i].bracket(&dil, f, z) - 0.5 * fields.x[i].apply(f, z);
        rep.dilation = rep.dilation.max(dres.abs());
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::example_family_a;

    fn heis() -> ModelSpec {
        ModelSpec::heisenberg()
    }

    fn fd_grad(f: &dyn Smooth, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|k| {
                let mut zp = z.to_vec();
                let mut zm = z.to_vec();
                zp[k] += h;
                zm[k] -= h;
                (f.eval(&zp) - f.eval(&zm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn coordinate_fields() {
        let model = heis();
        let x1 = TestFunction::X { i: 0 };
        let y = TestFunction::Y { l: 0 };
        let z = [0.7, -1.3, 2.0];
        assert_eq!(apply_xi(&x1.bind(&model), 0, &z, &model), 1.0);
        assert_eq!(apply_xi(&x1.bind(&model), 1, &z, &model), 0.0);
        assert_close!(apply_xi(&y.bind(&model), 0, &z, &model), 1.3, 1e-15);
        assert_close!(apply_xi(&y.bind(&model), 1, &z, &model), 0.7, 1e-15);
        assert_close!(apply_xi_hat(&y.bind(&model), 0, &z, &model), -1.3, 1e-15);
        assert_close!(apply_xi_hat(&y.bind(&model), 1, &z, &model), -0.7, 1e-15);
        assert_eq!(apply_xi_hat(&x1.bind(&model), 0, &z, &model), 1.0);
        let c = TestFunction::Const { value: 3.0 };
        assert_eq!(apply_xi(&c.bind(&model), 0, &z, &model), 0.0);
    }

    #[test]
    fn hat_equals_plain_on_vertical_axis() {
        let model = example_family_a(3, &[1.0, 2.0], &[0.5, 0.0]).unwrap();
        let z = [0.0, 0.0, 0.0, 0.4, -0.9];
        for f in registry::all_families(3, 2) {
            for i in 0..3 {
                let b = f.bind(&model);
                assert_eq!(apply_xi(&b, i, &z, &model), apply_xi_hat(&b, i, &z, &model));
            }
        }
    }

    #[test]
    fn theta_and_dilation() {
        let model = heis();
        let z = [1.0, 2.0, 0.0];
        assert_close!(apply_theta(&TestFunction::X { i: 0 }.bind(&model), 0, &z, &model), -2.0, 1e-15);
        assert_eq!(apply_theta(&TestFunction::Y { l: 0 }.bind(&model), 0, &z, &model), 0.0);
        let half_sq = TestFunction::Quadratic {
            mat: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            w: vec![0.0],
        };
        assert_close!(apply_theta(&half_sq.bind(&model), 0, &z, &model), 0.0, 1e-15);

        assert_eq!(apply_dilation(&TestFunction::X { i: 0 }.bind(&model), &[2.0, 0.0, 0.0], &model), 1.0);
        assert_eq!(apply_dilation(&TestFunction::Y { l: 0 }.bind(&model), &[0.0, 0.0, 3.0], &model), 3.0);
        let f = TestFunction::trig(&[1.0, 0.3], &[2.0], 0.1);
        assert_eq!(apply_dilation(&f.bind(&model), &[0.0, 0.0, 0.0], &model), 0.0);
    }

    #[test]
    fn generator_examples() {
        let model = heis();
        let z = [0.3, -0.8, 1.1];
        let nsq = TestFunction::norm_sq_x(2, 1);
        assert_close!(apply_l(&nsq.bind(&model), &z, &model), 2.0, 1e-14);
        assert_close!(apply_l(&TestFunction::Y { l: 0 }.bind(&model), &z, &model), 0.0, 1e-14);
        let lin = TestFunction::Quadratic {
            mat: vec![vec![0.0; 2]; 2],
            w: vec![0.0],
        };
        assert_eq!(apply_l(&lin.bind(&model), &z, &model), 0.0);
        assert_eq!(apply_l(&TestFunction::X { i: 1 }.bind(&model), &z, &model), 0.0);
    }

    #[test]
    fn carre_du_champ_examples() {
        let model = heis();
        let x1 = TestFunction::X { i: 0 };
        let y = TestFunction::Y { l: 0 };
        let z = [0.4, 0.5, -0.2];
        assert_close!(gamma(&x1.bind(&model), &z, &model), 0.5, 1e-15);
        assert_eq!(gamma_z(&x1.bind(&model), &z, &model), 0.0);
        let z0 = [0.0, 0.0, 1.7];
        assert_eq!(gamma(&y.bind(&model), &z0, &model), 0.0);
        assert_close!(gamma_z(&y.bind(&model), &z0, &model), 0.5, 1e-15);
        let c = TestFunction::Const { value: -2.0 };
        assert_eq!(gamma(&c.bind(&model), &z, &model), 0.0);
        assert_eq!(gamma_z(&c.bind(&model), &z, &model), 0.0);
    }

    #[test]
    fn gamma2_examples() {
        let model = heis();
        let y = TestFunction::Y { l: 0 };
        for z in [[0.0, 0.0, 0.0], [1.3, -0.4, 2.2]] {
            assert_close!(gamma2(&y.bind(&model), &z, &model), 0.5, 1e-14);
            assert_eq!(gamma2_z(&y.bind(&model), &z, &model), 0.0);
        }
        let x1 = TestFunction::X { i: 0 };
        let z = [1.3, -0.4, 2.2];
        assert_eq!(gamma2(&x1.bind(&model), &z, &model), 0.0);
        assert_eq!(gamma2_z(&x1.bind(&model), &z, &model), 0.0);
    }

    #[test]
    fn cd_margin_examples() {
        let model = heis();
        let y = TestFunction::Y { l: 0 };
        for r in [0.1, 1.0, 10.0] {
            let m = cd_margin(&y.bind(&model), &[0.0, 0.0, 0.7], r, &model).unwrap();
            assert_close!(m, 0.0, 1e-12);
        }
        let x1 = TestFunction::X { i: 0 };
        let m = cd_margin(&x1.bind(&model), &[0.2, 0.9, -1.0], 1.0, &model).unwrap();
        assert_close!(m, 2.0, 1e-12);
        let c = TestFunction::Const { value: 1.0 };
        assert_eq!(cd_margin(&c.bind(&model), &[0.2, 0.9, -1.0], 1.0, &model).unwrap(), 0.0);

        let flat = ModelSpec::new(
            2,
            1,
            DMatrix::identity(2, 2),
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        )
        .unwrap();
        assert!(cd_margin(&c.bind(&flat), &[0.0; 3], 1.0, &flat).is_err());
    }

    #[test]
    fn heisenberg_bracket_on_trig() {
        let model = heis();
        let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
        let z = [0.3, -1.1, 0.8];
        let b = f.bind(&model);
        let fields = Fields::new(&model);
        let br = fields.x[0].bracket(&fields.x[1], &b, &z);
        assert_close!(br, 2.0 * (0.3f64 + 0.8).cos(), 1e-12);
        let rep = check_commutators(&model, &z, &b);
        assert!(rep.max_residual() <= 1e-12, "{rep:?}");
        let c = TestFunction::Const { value: 2.0 };
        assert_eq!(check_commutators(&model, &z, &c.bind(&model)).max_residual(), 0.0);
    }

    #[test]
    fn hat_bracket_fails_without_skew_a_sigma() {
        let model = ModelSpec::new(
            2,
            1,
            DMatrix::identity(2, 2),
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0])],
        )
        .unwrap();
        let f = TestFunction::trig(&[1.0, 0.0], &[1.0], 0.0);
        let rep = check_commutators(&model, &[0.3, -1.1, 0.8], &f.bind(&model));
        assert!(rep.bracket <= 1e-12);
        assert!(rep.dilation <= 1e-12);
        assert!(rep.hat > 0.1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = example_family_a(3, &[1.0, -0.5], &[0.2, 0.7]).unwrap();
        let z = [0.3, -0.7, 0.2, 0.5, -0.4];
        for f in registry::all_families(3, 2) {
            let b = f.bind(&model);
            let g = b.grad(&z);
            let fd = fd_grad(&b, &z, 1e-5);
            for (a, e) in g.iter().zip(&fd) {
                assert!((a - e).abs() <= 1e-6 * (1.0 + e.abs()), "{}: {a} vs {e}", f.name());
            }
            let h = b.hess(&z);
            assert!((&h - h.transpose()).amax() <= 1e-12);
            for k in 0..z.len() {
                let mut zp = z.to_vec();
                zp[k] += 1e-5;
                let mut zm = z.to_vec();
                zm[k] -= 1e-5;
                let (gp, gm) = (b.grad(&zp), b.grad(&zm));
                for j in 0..z.len() {
                    let fdh = (gp[j] - gm[j]) / 2e-5;
                    assert!((h[(j, k)] - fdh).abs() <= 1e-6 * (1.0 + fdh.abs()), "{}", f.name());
                }
            }
        }
    }

    #[test]
    fn dilation_acts_on_parameters() {
        let model = heis();
        let s: f64 = 0.7;
        let (hx, hy) = ((0.5 * s).exp(), s.exp());
        for f in registry::all_families(2, 1) {
            let fs = f.dilate(s, 2, 1);
            let (x, y) = (vec![0.3, -0.6], vec![1.1]);
            let sx: Vec<f64> = x.iter().map(|v| v * hx).collect();
            let sy: Vec<f64> = y.iter().map(|v| v * hy).collect();
            assert_close!(fs.eval_xy(&x, &y), f.eval_xy(&sx, &sy), 1e-12 * (1.0 + f.eval_xy(&sx, &sy).abs()));
            let _ = &model;
        }
    }

    #[test]
    fn function_json_schema() {
        let f: TestFunction = serde_json::from_str(r#"{"family":"trig","a":[1,0],"b":[2],"c":0}"#).unwrap();
        assert_eq!(f, TestFunction::trig(&[1.0, 0.0], &[2.0], 0.0));
        assert!(serde_json::from_str::<TestFunction>(r#"{"family":"trig","a":[1,0],"b":[2],"k":0}"#).is_err());
        assert!(serde_json::from_str::<TestFunction>(r#"{"family":"nope"}"#).is_err());
        assert!(f.validate(2, 1).is_ok());
        assert!(f.validate(3, 1).is_err());
    }
}
