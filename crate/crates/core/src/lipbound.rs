//! Lipschitz upper bounds and empirical lower estimates for kernel models.
//!
//! The model is a kernel expansion `f(x) = s * sum_a gamma_a k(x^a, x)`. Its
//! slope is controlled through the d x d Gram matrix of the partial
//! derivatives of `f` in the reproducing space: `sup_x |grad f(x)|_2^2` is at
//! most the largest eigenvalue of that matrix whenever `k(x, x) <= 1`.
//!
//! For coordinate-wise product kernels every entry is closed form; the
//! diagonal can optionally be replaced by a projection onto witness
//! coordinate sections ([`DiagMode::Projected`]), which can only shrink the
//! matrix in the PSD order and therefore still certifies from below relative
//! to the exact spectrum. A second route ([`build_gradient_factor`]) projects
//! the whole gradient field through a witness set at once and works for any
//! kernel, including the inverse kernel on the unit ball.
//!
//! Lower estimates come from projected gradient ascent on the gradient norm
//! over a box domain ([`empirical_lipschitz`]).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BaseKernel, KernelSpec};
pub use crate::linalg::lambda_max;
use crate::linalg::{leading_eigenpair, pinv_psd, pinv_sqrt_psd, PINV_REL_TOL};
use crate::rng;

/// Norm applied to model gradients. `L2` budgets the slope seen by
/// Euclidean perturbations, `L1` the slope seen by sup-norm perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualNorm {
    L2,
    L1,
}

/// Kernel expansion `f(x) = s * sum_a gamma_a k(x^a, x)` with `s = 1/l` when
/// `mean_scale` is set and `s = 1` otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub kernel: KernelSpec,
    pub anchors: Vec<Vec<f64>>,
    pub coeffs: DVector<f64>,
    pub mean_scale: bool,
}

impl Model {
    pub fn new(
        kernel: KernelSpec,
        anchors: Vec<Vec<f64>>,
        coeffs: DVector<f64>,
        mean_scale: bool,
    ) -> Result<Self> {
        kernel.validate()?;
        if anchors.is_empty() {
            return Err(Error::InvalidParameter {
                name: "anchors",
                value: 0.0,
                reason: "model needs at least one anchor",
            });
        }
        if coeffs.len() != anchors.len() {
            return Err(Error::DimensionMismatch {
                context: "model coefficients",
                expected: anchors.len(),
                got: coeffs.len(),
            });
        }
        for a in &anchors {
            kernel.check_point(a)?;
        }
        Ok(Model {
            kernel,
            anchors,
            coeffs,
            mean_scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn scale(&self) -> f64 {
        if self.mean_scale {
            1.0 / self.anchors.len() as f64
        } else {
            1.0
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (a, g) in self.anchors.iter().zip(self.coeffs.iter()) {
            acc += g * self.kernel.eval(a, x)?;
        }
        Ok(self.scale() * acc)
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim());
        for (a, g) in self.anchors.iter().zip(self.coeffs.iter()) {
            acc += self.kernel.grad_y(a, x)? * *g;
        }
        Ok(acc * self.scale())
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut acc = DMatrix::zeros(d, d);
        for (a, g) in self.anchors.iter().zip(self.coeffs.iter()) {
            acc += self.kernel.hessian_y(a, x)? * *g;
        }
        Ok(acc * self.scale())
    }
}

/// How the diagonal of the gradient Gram matrix is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagMode {
    /// Closed-form mixed second derivatives.
    Exact,
    /// Project each diagonal block onto the span of witness coordinate
    /// sections. Never exceeds the exact diagonal, so the resulting largest
    /// eigenvalue is a lower bound on the exact one.
    Projected,
}

/// Per-coordinate tables of base-kernel values and derivatives over anchors.
struct BaseTables {
    /// `val[m][(a, b)] = k0(x^a_m, x^b_m)`
    val: Vec<DMatrix<f64>>,
    /// `der[m][(a, b)] = d/dt k0(x^a_m, x^b_m)`
    der: Vec<DMatrix<f64>>,
}

fn base_tables(base: BaseKernel, anchors: &[Vec<f64>]) -> Result<BaseTables> {
    let l = anchors.len();
    let d = anchors[0].len();
    let mut val = vec![DMatrix::zeros(l, l); d];
    let mut der = vec![DMatrix::zeros(l, l); d];
    for m in 0..d {
        for a in 0..l {
            for b in 0..l {
                let (s, t) = (anchors[a][m], anchors[b][m]);
                val[m][(a, b)] = base.eval(s, t)?;
                der[m][(a, b)] = base.deriv_t(s, t)?;
            }
        }
    }
    Ok(BaseTables { val, der })
}

/// Product over all coordinates except the listed ones.
fn rest_product(tables: &BaseTables, skip: &[usize], a: usize, b: usize) -> f64 {
    let mut p = 1.0;
    for (m, v) in tables.val.iter().enumerate() {
        if !skip.contains(&m) {
            p *= v[(a, b)];
        }
    }
    p
}

/// The l x l coefficient matrices `B_ij` of a product-kernel gradient Gram:
/// entry `(i, j)` of the Gram is `s^2 * gamma' B_ij gamma`. Returned row
/// major (`d * d` matrices). Witnesses are consulted only in
/// [`DiagMode::Projected`].
pub fn product_pair_matrices(
    base: BaseKernel,
    anchors: &[Vec<f64>],
    witnesses: &[Vec<f64>],
    diag: DiagMode,
) -> Result<Vec<DMatrix<f64>>> {
    let d = anchors[0].len();
    let l = anchors.len();
    let tables = base_tables(base, anchors)?;
    let mut out = vec![DMatrix::zeros(0, 0); d * d];
    for i in 0..d {
        for j in i..d {
            let m = if i == j {
                diag_matrix(base, anchors, witnesses, &tables, i, diag)?
            } else {
                let mut m = DMatrix::zeros(l, l);
                for a in 0..l {
                    for b in 0..l {
                        m[(a, b)] = tables.der[i][(a, b)]
                            * tables.der[j][(b, a)]
                            * rest_product(&tables, &[i, j], a, b);
                    }
                }
                m
            };
            out[j * d + i] = m.transpose();
            out[i * d + j] = m;
        }
    }
    Ok(out)
}

/// The diagonal coefficient matrices `B_ii` only, in coordinate order.
pub fn product_diag_matrices(
    base: BaseKernel,
    anchors: &[Vec<f64>],
    witnesses: &[Vec<f64>],
    diag: DiagMode,
) -> Result<Vec<DMatrix<f64>>> {
    let d = anchors[0].len();
    let tables = base_tables(base, anchors)?;
    (0..d)
        .map(|i| diag_matrix(base, anchors, witnesses, &tables, i, diag))
        .collect()
}

fn diag_matrix(
    base: BaseKernel,
    anchors: &[Vec<f64>],
    witnesses: &[Vec<f64>],
    tables: &BaseTables,
    i: usize,
    diag: DiagMode,
) -> Result<DMatrix<f64>> {
    let l = anchors.len();
    let mut m = DMatrix::zeros(l, l);
    match diag {
        DiagMode::Exact => {
            for a in 0..l {
                for b in 0..l {
                    m[(a, b)] = base.mixed_second(anchors[a][i], anchors[b][i])?
                        * rest_product(tables, &[i], a, b);
                }
            }
        }
        DiagMode::Projected => {
            if witnesses.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "witnesses",
                    value: 0.0,
                    reason: "projected diagonal needs at least one witness",
                });
            }
            let n = witnesses.len();
            // Gram of witness i-th coordinate sections and its pseudoinverse.
            let mut kw = DMatrix::zeros(n, n);
            for s in 0..n {
                for t in 0..n {
                    kw[(s, t)] = base.eval(witnesses[s][i], witnesses[t][i])?;
                }
            }
            let kp = pinv_psd(&kw, PINV_REL_TOL)?;
            // u[(a, s)] = d/dt k0(x^a_i, w^s_i)
            let mut u = DMatrix::zeros(l, n);
            for a in 0..l {
                for s in 0..n {
                    u[(a, s)] = base.deriv_t(anchors[a][i], witnesses[s][i])?;
                }
            }
            let eta = &u * kp * u.transpose();
            for a in 0..l {
                for b in 0..l {
                    m[(a, b)] = eta[(a, b)] * rest_product(tables, &[i], a, b);
                }
            }
        }
    }
    Ok(m)
}

/// The d x d gradient Gram matrix of a product-kernel model.
pub fn build_gradient_gram(
    model: &Model,
    witnesses: &[Vec<f64>],
    diag: DiagMode,
) -> Result<DMatrix<f64>> {
    let (base, d) = match model.kernel {
        KernelSpec::Product { base, dim } => (base, dim),
        _ => {
            return Err(Error::Unsupported(
                "closed-form gradient Gram entries need a coordinate-wise product kernel",
            ))
        }
    };
    let parts = product_pair_matrices(base, &model.anchors, witnesses, diag)?;
    let s2 = model.scale() * model.scale();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = s2 * (model.coeffs.transpose() * &parts[i * d + j] * &model.coeffs)[(0, 0)];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// `(K^+)^(1/2)` for the full-kernel Gram of a witness set.
pub fn witness_projector(kernel: &KernelSpec, witnesses: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if witnesses.is_empty() {
        return Err(Error::InvalidParameter {
            name: "witnesses",
            value: 0.0,
            reason: "need at least one witness",
        });
    }
    let k = kernel.gram(witnesses, witnesses)?;
    pinv_sqrt_psd(&k, PINV_REL_TOL)
}

/// Low-rank factor `(K^+)^(1/2) J` (n x d) of the projected gradient field:
/// `J[s, j] = d_j f(w^s)`. The Gram `F' F` of this factor never exceeds the
/// exact gradient Gram in the PSD order, for any kernel.
pub fn build_gradient_factor(model: &Model, witnesses: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = witness_projector(&model.kernel, witnesses)?;
    let (n, d) = (witnesses.len(), model.dim());
    let mut j = DMatrix::zeros(n, d);
    for (s, w) in witnesses.iter().enumerate() {
        let g = model.grad(w)?;
        j.row_mut(s).copy_from(&g.transpose());
    }
    Ok(p * j)
}

/// `sqrt(max(lambda_max(m), 0))` — the spectral slope bound attached to a
/// gradient Gram matrix.
pub fn spectral_bound(m: &DMatrix<f64>) -> Result<f64> {
    Ok(lambda_max(m, 1e-12, 20_000)?.max(0.0).sqrt())
}

/// Worst-case ratio of reproducing-space distance to Euclidean distance for
/// the given kernel: `Lip(f) <= |f|_H * kernel_slope_factor(k)`.
pub fn kernel_slope_factor(kernel: &KernelSpec) -> Result<f64> {
    kernel.validate()?;
    match *kernel {
        KernelSpec::Product {
            base: BaseKernel::Gaussian { sigma },
            ..
        } => Ok(1.0 / sigma),
        KernelSpec::Product {
            base: base @ BaseKernel::Periodic { period, sigma },
            ..
        } => {
            // sup over (0, period/2] of sqrt(2 - 2 k0(z)) / z, plus its z -> 0
            // limit pi / (period * sigma); the ratio for any lag beyond half a
            // period is dominated by one inside it.
            let mut best = std::f64::consts::PI / (period * sigma);
            let grid = 4096;
            for i in 1..=grid {
                let z = i as f64 / grid as f64 * period / 2.0;
                let k = base.eval(z, 0.0)?;
                best = best.max(((2.0 - 2.0 * k).max(0.0)).sqrt() / z);
            }
            Ok(best)
        }
        KernelSpec::Product { .. } => Err(Error::Unsupported(
            "no slope factor for this base kernel",
        )),
        // Metric tensor 1/(2-r^2)^2 I + 2 x x' / (2-r^2)^3 peaks at the
        // boundary of the unit ball with largest eigenvalue 3.
        KernelSpec::Inverse { .. } => Ok(3.0f64.sqrt()),
    }
}

/// Reproducing-space norm of the model times the kernel slope factor: an
/// a-priori Lipschitz bound that needs no witnesses.
pub fn rkhs_norm_bound(model: &Model) -> Result<f64> {
    let k = model.kernel.gram(&model.anchors, &model.anchors)?;
    let q = (model.coeffs.transpose() * k * &model.coeffs)[(0, 0)].max(0.0);
    Ok(model.scale() * q.sqrt() * kernel_slope_factor(&model.kernel)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    /// Eigenvalue of the gradient Gram with closed-form diagonal.
    ExactDiag,
    /// Eigenvalue of the gradient Gram with witness-projected diagonal.
    CoordNystrom,
    /// Eigenvalue of the projected gradient factor.
    HolisticNystrom,
    /// Reproducing-space norm times the kernel slope factor.
    RkhsNorm,
    /// Projected gradient ascent over the domain box.
    EmpiricalSearch,
}

/// One slope estimate with its provenance. `value` is the bound itself when
/// `squared` is false, the bound on the squared slope otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub method: EstimateMethod,
    pub value: f64,
    pub squared: bool,
    pub n_witness: usize,
}

impl LipschitzEstimate {
    /// The estimate on the slope scale.
    pub fn slope(&self) -> f64 {
        if self.squared {
            self.value.max(0.0).sqrt()
        } else {
            self.value
        }
    }
}

/// Every slope estimate the kernel family supports, in a fixed order:
/// closed-form and projected gradient Grams (product kernels only), the
/// projected factor, the norm bound, and the empirical search.
pub fn estimate_all(
    model: &Model,
    witnesses: &[Vec<f64>],
    domain: &DomainBox,
    norm: DualNorm,
    restarts: usize,
    seed: u64,
) -> Result<Vec<LipschitzEstimate>> {
    let mut out = Vec::with_capacity(5);
    if matches!(model.kernel, KernelSpec::Product { .. }) {
        let exact = build_gradient_gram(model, &[], DiagMode::Exact)?;
        out.push(LipschitzEstimate {
            method: EstimateMethod::ExactDiag,
            value: lambda_max(&exact, 1e-12, 20_000)?.max(0.0),
            squared: true,
            n_witness: 0,
        });
        if !witnesses.is_empty() {
            let proj = build_gradient_gram(model, witnesses, DiagMode::Projected)?;
            out.push(LipschitzEstimate {
                method: EstimateMethod::CoordNystrom,
                value: lambda_max(&proj, 1e-12, 20_000)?.max(0.0),
                squared: true,
                n_witness: witnesses.len(),
            });
        }
    }
    if !witnesses.is_empty() {
        let f = build_gradient_factor(model, witnesses)?;
        out.push(LipschitzEstimate {
            method: EstimateMethod::HolisticNystrom,
            value: lambda_max(&(f.transpose() * &f), 1e-12, 20_000)?.max(0.0),
            squared: true,
            n_witness: witnesses.len(),
        });
    }
    out.push(LipschitzEstimate {
        method: EstimateMethod::RkhsNorm,
        value: rkhs_norm_bound(model)?,
        squared: false,
        n_witness: 0,
    });
    out.push(LipschitzEstimate {
        method: EstimateMethod::EmpiricalSearch,
        value: empirical_lipschitz(model, domain, norm, restarts, seed)?.0,
        squared: false,
        n_witness: 0,
    });
    Ok(out)
}

/// Axis-aligned box domain for the empirical slope search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "domain box",
                expected: lo.len().max(1),
                got: hi.len(),
            });
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::DomainViolation(format!(
                    "invalid box edge [{a}, {b}]"
                )));
            }
        }
        Ok(DomainBox { lo, hi })
    }

    /// Bounding box of a point set, inflated on every side.
    pub fn from_points(points: &[Vec<f64>], inflate: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter {
                name: "points",
                value: 0.0,
                reason: "need at least one point",
            });
        }
        let d = points[0].len();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "domain box points",
                    expected: d,
                    got: p.len(),
                });
            }
            for (j, v) in p.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        for j in 0..d {
            lo[j] -= inflate;
            hi[j] += inflate;
        }
        DomainBox::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (a, b)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*a, *b);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn max_edge(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .fold(0.0, f64::max)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| if a < b { rng.gen_range(*a..*b) } else { *a })
            .collect()
    }
}

fn grad_norm(g: &DVector<f64>, norm: DualNorm) -> f64 {
    match norm {
        DualNorm::L2 => g.norm(),
        DualNorm::L1 => g.iter().map(|v| v.abs()).sum(),
    }
}

/// One projected-ascent run on `x -> |grad f(x)|` from a given start.
fn ascend(
    model: &Model,
    domain: &DomainBox,
    norm: DualNorm,
    mut x: Vec<f64>,
) -> Result<(f64, Vec<f64>)> {
    let t0 = 0.25 * domain.max_edge().max(1e-6);
    let mut h = grad_norm(&model.grad(&x)?, norm);
    for _ in 0..200 {
        let g = model.grad(&x)?;
        let g2 = g.norm();
        if g2 < 1e-14 {
            break;
        }
        let hess = model.hessian(&x)?;
        let dir = match norm {
            DualNorm::L2 => &hess * (g / g2),
            DualNorm::L1 => &hess * g.map(f64::signum),
        };
        let mut t = t0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = x
                .iter()
                .zip(dir.iter())
                .map(|(xi, di)| xi + t * di)
                .collect();
            domain.clamp(&mut cand);
            model.kernel.project_into_domain(&mut cand);
            let moved: f64 = cand
                .iter()
                .zip(&x)
                .zip(dir.iter())
                .map(|((c, xi), di)| (c - xi) * di)
                .sum();
            if moved > 0.0 {
                let hc = grad_norm(&model.grad(&cand)?, norm);
                if hc >= h + 1e-4 * moved {
                    let gain = hc - h;
                    x = cand;
                    h = hc;
                    accepted = true;
                    if gain <= 1e-12 * (1.0 + h.abs()) {
                        return Ok((h, x));
                    }
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((h, x))
}

/// Empirical slope estimate: the largest gradient norm found by multi-start
/// projected gradient ascent over the box. Returns the value and the point
/// attaining it. Always a valid lower estimate of the true constant.
pub fn empirical_lipschitz(
    model: &Model,
    domain: &DomainBox,
    norm: DualNorm,
    restarts: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if domain.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "empirical slope domain",
            expected: model.dim(),
            got: domain.dim(),
        });
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..restarts.max(1) {
        let mut x = if r == 0 {
            domain.center()
        } else {
            domain.sample(&mut rng::stream(seed, r as u64))
        };
        domain.clamp(&mut x);
        model.kernel.project_into_domain(&mut x);
        let (h, xs) = ascend(model, domain, norm, x)?;
        if best.as_ref().is_none_or(|(b, _)| h > *b) {
            best = Some((h, xs));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// The point where the empirical slope search peaks — used to grow witness
/// sets where the current bound is weakest.
pub fn greedy_witness(
    model: &Model,
    domain: &DomainBox,
    norm: DualNorm,
    seed: u64,
) -> Result<Vec<f64>> {
    empirical_lipschitz(model, domain, norm, 10, seed).map(|(_, x)| x)
}

/// Joint slope bound for a multi-output model from per-class gradient
/// factors (all n x d): `sup { sqrt(sum_c (v' F_c u)^2) : |v| <= 1, |u| <= 1 }`,
/// computed by alternating leading-eigenpair steps with restarts.
pub fn multiclass_l2_bound(
    factors: &[DMatrix<f64>],
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    multiclass_l2_detail(factors, restarts, seed).map(|(b, _)| b)
}

/// [`multiclass_l2_bound`] together with the maximising pair `(u, v)` when
/// the bound is positive; the pair certifies the value and serves as the
/// fixed direction in subgradient constructions.
pub fn multiclass_l2_detail(
    factors: &[DMatrix<f64>],
    restarts: usize,
    seed: u64,
) -> Result<(f64, Option<(DVector<f64>, DVector<f64>)>)> {
    let (n, d) = check_factors(factors)?;
    let c = factors.len();
    let mut best = 0.0f64;
    let mut best_pair = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::stream(seed, r as u64);
        let mut v = if r == 0 {
            DVector::from_element(n, 1.0 / (n as f64).sqrt())
        } else {
            random_unit(&mut rng, n)
        };
        let mut phi = 0.0f64;
        let mut pair = None;
        for _ in 0..500 {
            // u-step: columns G_c' v, best u is the top eigenvector of D D'.
            let mut dm = DMatrix::zeros(d, c);
            for (ci, g) in factors.iter().enumerate() {
                dm.column_mut(ci).copy_from(&(g.transpose() * &v));
            }
            let u = match top_left_singular(&dm)? {
                Some(u) => u,
                None => break,
            };
            // v-step: columns G_c u.
            let mut am = DMatrix::zeros(n, c);
            for (ci, g) in factors.iter().enumerate() {
                am.column_mut(ci).copy_from(&(g * &u));
            }
            let vnew = match top_left_singular(&am)? {
                Some(v) => v,
                None => break,
            };
            v = vnew;
            let val: f64 = factors
                .iter()
                .map(|g| {
                    let s = (v.transpose() * g * &u)[(0, 0)];
                    s * s
                })
                .sum();
            pair = Some((u, v.clone()));
            if (val - phi).abs() <= 1e-10 * val.abs().max(1.0) {
                phi = val;
                break;
            }
            phi = val;
        }
        if phi > best {
            best = phi;
            best_pair = pair;
        }
    }
    Ok((best.max(0.0).sqrt(), best_pair))
}

/// Slope bound against sup-norm perturbations for one gradient factor:
/// `sup { |F u|_2 : |u|_inf <= 1 }`, by alternating a sign step in u with a
/// normalisation step in v. Zero entries of the intermediate get sign +1.
pub fn linf_gradient_bound(factor: &DMatrix<f64>, restarts: usize, seed: u64) -> Result<f64> {
    linf_gradient_detail(factor, restarts, seed).map(|(b, _)| b)
}

/// [`linf_gradient_bound`] together with the maximising pair `(u, v)`
/// (`u` a sign vector, `v` unit) when the bound is positive.
pub fn linf_gradient_detail(
    factor: &DMatrix<f64>,
    restarts: usize,
    seed: u64,
) -> Result<(f64, Option<(DVector<f64>, DVector<f64>)>)> {
    let (n, _d) = factor.shape();
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "factor",
            value: 0.0,
            reason: "empty gradient factor",
        });
    }
    let mut best = 0.0f64;
    let mut best_pair = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng::stream(seed, r as u64);
        let mut v = if r == 0 {
            DVector::from_element(n, 1.0 / (n as f64).sqrt())
        } else {
            random_unit(&mut rng, n)
        };
        let mut val = 0.0f64;
        for _ in 0..200 {
            let u = (factor.transpose() * &v).map(|s| if s < 0.0 { -1.0 } else { 1.0 });
            let a = factor * &u;
            let next = a.norm();
            if next > best {
                best = next;
                best_pair = Some((u, &a / next));
            }
            if next <= val + 1e-12 * val.max(1.0) {
                break;
            }
            val = next;
            v = a / next;
        }
    }
    Ok((best, best_pair))
}

/// Max over classes of [`linf_gradient_bound`].
pub fn multiclass_linf_bound(
    factors: &[DMatrix<f64>],
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    check_factors(factors)?;
    let mut best = 0.0f64;
    for (ci, g) in factors.iter().enumerate() {
        best = best.max(linf_gradient_bound(g, restarts, seed ^ (ci as u64) << 32)?);
    }
    Ok(best)
}

fn check_factors(factors: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = factors.first().ok_or(Error::InvalidParameter {
        name: "factors",
        value: 0.0,
        reason: "need at least one gradient factor",
    })?;
    let shape = first.shape();
    for f in factors {
        if f.shape() != shape {
            return Err(Error::DimensionMismatch {
                context: "gradient factors",
                expected: shape.0,
                got: f.shape().0,
            });
        }
    }
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::InvalidParameter {
            name: "factors",
            value: 0.0,
            reason: "empty gradient factor",
        });
    }
    Ok(shape)
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let nv = v.norm();
        if nv > 1e-6 {
            return v / nv;
        }
    }
}

/// Top left-singular vector of a thin matrix via the small-side Gram.
fn top_left_singular(m: &DMatrix<f64>) -> Result<Option<DVector<f64>>> {
    let gram = m.transpose() * m;
    let (val, z) = leading_eigenpair(&gram)?;
    if val <= 0.0 {
        return Ok(None);
    }
    let u = m * z;
    let nu = u.norm();
    if nu <= 1e-150 {
        return Ok(None);
    }
    Ok(Some(u / nu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;

    fn gaussian_product(sigma: f64, dim: usize) -> KernelSpec {
        KernelSpec::Product {
            base: BaseKernel::Gaussian { sigma },
            dim,
        }
    }

    fn random_model(seed: u64, sigma: f64, dim: usize, n: usize, span: f64) -> Model {
        let mut r = rng::stream(seed, 7);
        use rand::Rng;
        let anchors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| r.gen_range(0.0..span)).collect())
            .collect();
        let coeffs = DVector::from_fn(n, |_, _| r.gen_range(-2.0..2.0));
        Model::new(gaussian_product(sigma, dim), anchors, coeffs, false).unwrap()
    }

    #[test]
    fn single_anchor_gram_is_inverse_sigma_squared() {
        for sigma in [0.5, 1.0, 2.0] {
            let m = Model::new(
                gaussian_product(sigma, 1),
                vec![vec![0.3]],
                DVector::from_element(1, 1.0),
                false,
            )
            .unwrap();
            let g = build_gradient_gram(&m, &[], DiagMode::Exact).unwrap();
            assert!((g[(0, 0)] - 1.0 / (sigma * sigma)).abs() < 1e-13);
            // For a single bump the reproducing-norm route is exactly tight.
            let rk = rkhs_norm_bound(&m).unwrap();
            assert!((rk * rk - g[(0, 0)]).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_gram_matches_direct_inner_products_in_1d() {
        // In one dimension the single Gram entry is s^2 gamma' H gamma with
        // H the mixed-second matrix; check against the pair-matrix path.
        let m = random_model(3, 0.6, 1, 5, 1.0);
        let g = build_gradient_gram(&m, &[], DiagMode::Exact).unwrap();
        let mut acc = 0.0;
        for a in 0..5 {
            for b in 0..5 {
                acc += m.coeffs[a]
                    * m.coeffs[b]
                    * BaseKernel::Gaussian { sigma: 0.6 }
                        .mixed_second(m.anchors[a][0], m.anchors[b][0])
                        .unwrap();
            }
        }
        assert!((g[(0, 0)] - acc).abs() < 1e-12 * acc.abs().max(1.0));
    }

    #[test]
    fn gradient_gram_is_symmetric_and_psd() {
        let m = random_model(11, 0.7, 3, 6, 1.0);
        let g = build_gradient_gram(&m, &[], DiagMode::Exact).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[(i, j)].to_bits(), g[(j, i)].to_bits());
            }
        }
        let (vals, _) = sym_eigen(&g).unwrap();
        assert!(vals[vals.len() - 1] >= -1e-10 * vals[0].max(1.0));
    }

    #[test]
    fn dense_witness_grid_recovers_exact_diagonal() {
        let m = Model::new(
            gaussian_product(0.5, 1),
            vec![vec![0.2], vec![0.5], vec![0.9]],
            DVector::from_vec(vec![0.7, -1.1, 0.4]),
            false,
        )
        .unwrap();
        let grid: Vec<Vec<f64>> = (0..64)
            .map(|i| vec![-0.5 + 2.0 * i as f64 / 63.0])
            .collect();
        let exact = build_gradient_gram(&m, &[], DiagMode::Exact).unwrap()[(0, 0)];
        let proj = build_gradient_gram(&m, &grid, DiagMode::Projected).unwrap()[(0, 0)];
        let ratio = proj / exact;
        assert!(
            (0.99..=1.0 + 1e-9).contains(&ratio),
            "ratio {ratio}, exact {exact}, projected {proj}"
        );
    }

    #[test]
    fn projected_diagonal_never_exceeds_exact_and_grows_with_witnesses() {
        let m = random_model(19, 0.6, 2, 5, 1.0);
        let w1: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![i as f64 / 7.0, (7 - i) as f64 / 7.0])
            .collect();
        let mut w2 = w1.clone();
        let mut r = rng::stream(19, 99);
        use rand::Rng;
        for _ in 0..8 {
            w2.push(vec![r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]);
        }
        let exact = lambda_max(
            &build_gradient_gram(&m, &[], DiagMode::Exact).unwrap(),
            1e-12,
            20_000,
        )
        .unwrap();
        let small = lambda_max(
            &build_gradient_gram(&m, &w1, DiagMode::Projected).unwrap(),
            1e-12,
            20_000,
        )
        .unwrap();
        let large = lambda_max(
            &build_gradient_gram(&m, &w2, DiagMode::Projected).unwrap(),
            1e-12,
            20_000,
        )
        .unwrap();
        assert!(small <= large + 1e-8 * large.abs().max(1.0));
        assert!(large <= exact + 1e-8 * exact.abs().max(1.0));
    }

    #[test]
    fn holistic_factor_brackets_exact_spectrum() {
        let m = random_model(23, 0.8, 2, 6, 1.0);
        let mut r = rng::stream(23, 5);
        use rand::Rng;
        let witnesses: Vec<Vec<f64>> = (0..256)
            .map(|_| (0..2).map(|_| r.gen_range(-0.6..1.6)).collect())
            .collect();
        let exact = lambda_max(
            &build_gradient_gram(&m, &[], DiagMode::Exact).unwrap(),
            1e-12,
            20_000,
        )
        .unwrap();
        let f = build_gradient_factor(&m, &witnesses).unwrap();
        let low = lambda_max(&(f.transpose() * &f), 1e-12, 20_000).unwrap();
        assert!(low <= exact + 1e-9 * exact.max(1.0), "{low} > {exact}");
        assert!(low >= 0.95 * exact, "low {low} vs exact {exact}");
    }

    #[test]
    fn holistic_factor_works_for_inverse_kernel() {
        let kernel = KernelSpec::Inverse { dim: 2 };
        let anchors = vec![vec![0.4, 0.1], vec![-0.2, 0.5], vec![0.1, -0.6]];
        let m = Model::new(
            kernel,
            anchors,
            DVector::from_vec(vec![1.0, -0.7, 0.4]),
            false,
        )
        .unwrap();
        let mut r = rng::stream(31, 0);
        use rand::Rng;
        let witnesses: Vec<Vec<f64>> = (0..128)
            .map(|_| {
                let mut p = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
                kernel.project_into_domain(&mut p);
                p
            })
            .collect();
        let f = build_gradient_factor(&m, &witnesses).unwrap();
        let bound = spectral_bound(&(f.transpose() * &f)).unwrap();
        // Any empirical slope must stay below the certified bound.
        let domain = DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let (emp, _) = empirical_lipschitz(&m, &domain, DualNorm::L2, 6, 9).unwrap();
        assert!(emp <= bound + 1e-9, "emp {emp} vs bound {bound}");
    }

    #[test]
    fn slope_factors_frozen() {
        assert!(
            (kernel_slope_factor(&gaussian_product(2.0, 3)).unwrap() - 0.5).abs() < 1e-15
        );
        let per = KernelSpec::Product {
            base: BaseKernel::Periodic {
                period: std::f64::consts::PI,
                sigma: 0.5f64.sqrt(),
            },
            dim: 1,
        };
        let got = kernel_slope_factor(&per).unwrap();
        assert!((got - 2.0f64.sqrt()).abs() < 1e-9, "got {got}");
        let inv = kernel_slope_factor(&KernelSpec::Inverse { dim: 2 }).unwrap();
        assert!((inv - 3.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inverse_kernel_chordal_ratio_stays_below_slope_factor() {
        let k = KernelSpec::Inverse { dim: 2 };
        let mut r = rng::stream(41, 0);
        use rand::Rng;
        let mut seen_tight = false;
        let check = |x: Vec<f64>, y: Vec<f64>| {
            let d2 = k.eval(&x, &x).unwrap() + k.eval(&y, &y).unwrap()
                - 2.0 * k.eval(&x, &y).unwrap();
            let dist: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let ratio = d2.max(0.0).sqrt() / dist;
            assert!(ratio <= 3.0f64.sqrt() + 1e-9, "ratio {ratio}");
            ratio
        };
        for _ in 0..500 {
            let mut x = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let mut y = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            k.project_into_domain(&mut x);
            k.project_into_domain(&mut y);
            if x.iter().zip(&y).any(|(a, b)| a != b) {
                check(x, y);
            }
        }
        // Radial pair hugging the boundary gets close to the factor.
        if check(vec![1.0, 0.0], vec![0.999, 0.0]) > 1.7 {
            seen_tight = true;
        }
        assert!(seen_tight);
    }

    #[test]
    fn empirical_slope_of_single_bump_hits_known_optimum() {
        let m = Model::new(
            gaussian_product(1.0, 1),
            vec![vec![0.0]],
            DVector::from_element(1, 1.0),
            false,
        )
        .unwrap();
        let domain = DomainBox::new(vec![-3.0], vec![3.0]).unwrap();
        let (emp, x) = empirical_lipschitz(&m, &domain, DualNorm::L2, 10, 4).unwrap();
        let expected = (-0.5f64).exp();
        assert!((emp - expected).abs() < 1e-5, "emp {emp}");
        assert!((x[0].abs() - 1.0).abs() < 1e-2, "argmax {}", x[0]);
        // The spectral route certifies it from above.
        let g = build_gradient_gram(&m, &[], DiagMode::Exact).unwrap();
        assert!(emp <= spectral_bound(&g).unwrap() + 1e-9);
    }

    #[test]
    fn empirical_argmax_stays_inside_the_box() {
        let m = random_model(55, 0.4, 2, 6, 1.0);
        let domain = DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        for norm in [DualNorm::L2, DualNorm::L1] {
            let (v, x) = empirical_lipschitz(&m, &domain, norm, 5, 3).unwrap();
            assert!(v > 0.0);
            for (j, xi) in x.iter().enumerate() {
                assert!((domain.lo[j] - 1e-12..=domain.hi[j] + 1e-12).contains(xi));
            }
        }
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let m = random_model(77, 0.9, 3, 4, 1.0);
        let x = vec![0.31, 0.62, 0.17];
        let g = m.grad(&x).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (m.value(&xp).unwrap() - m.value(&xm).unwrap()) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-7, "coord {j}");
        }
        let hess = m.hessian(&x).unwrap();
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let gp = m.grad(&xp).unwrap();
            let gm = m.grad(&xm).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((hess[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn multiclass_l2_bound_frozen_cases() {
        // Two identity factors: sup sqrt(2 (v'u)^2) = sqrt(2).
        let eye = DMatrix::<f64>::identity(2, 2);
        let got = multiclass_l2_bound(&[eye.clone(), eye.clone()], 3, 1).unwrap();
        assert!((got - 2.0f64.sqrt()).abs() < 1e-9, "got {got}");

        // C identical copies scale the single-factor value by sqrt(C).
        let mut r = rng::stream(91, 0);
        use rand::Rng;
        let a = DMatrix::from_fn(4, 3, |_, _| r.gen_range(-1.0..1.0));
        let single = multiclass_l2_bound(&[a.clone()], 5, 2).unwrap();
        let double = multiclass_l2_bound(&[a.clone(), a.clone()], 5, 2).unwrap();
        assert!((double - 2.0f64.sqrt() * single).abs() < 1e-8);

        // One class reduces to the largest singular value.
        let svd = a.clone().svd(false, false);
        let sigma_max = svd.singular_values[0];
        assert!((single - sigma_max).abs() < 1e-9, "{single} vs {sigma_max}");
    }

    #[test]
    fn linf_bound_matches_sign_pattern_enumeration() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        let got = linf_gradient_bound(&g, 4, 3).unwrap();
        assert!((got - 50.0f64.sqrt()).abs() < 1e-12, "got {got}");

        // Exhaustive oracle over all sign patterns for a random 5 x 3 factor.
        let mut r = rng::stream(93, 0);
        use rand::Rng;
        let f = DMatrix::from_fn(5, 3, |_, _| r.gen_range(-1.0..1.0));
        let mut brute = 0.0f64;
        for mask in 0..8u32 {
            let u = DVector::from_fn(3, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 });
            brute = brute.max((&f * u).norm());
        }
        let got = linf_gradient_bound(&f, 8, 5).unwrap();
        assert!((got - brute).abs() < 1e-9, "{got} vs {brute}");
        assert!(got <= brute + 1e-12);
    }

    #[test]
    fn rkhs_bound_dominates_empirical_slope() {
        for seed in [1u64, 2, 3] {
            let m = random_model(seed, 0.5, 2, 5, 1.0);
            let domain = DomainBox::new(vec![-1.0, -1.0], vec![2.0, 2.0]).unwrap();
            let (emp, _) = empirical_lipschitz(&m, &domain, DualNorm::L2, 8, seed).unwrap();
            let rk = rkhs_norm_bound(&m).unwrap();
            assert!(emp <= rk + 1e-9, "seed {seed}: emp {emp} vs rkhs {rk}");
        }
    }

    #[test]
    fn estimate_all_reports_every_method() {
        let m = random_model(4, 0.5, 2, 5, 1.0);
        let domain = DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut r = rng::stream(17, 0);
        let witnesses: Vec<Vec<f64>> = (0..12).map(|_| domain.sample(&mut r)).collect();
        let ests = estimate_all(&m, &witnesses, &domain, DualNorm::L2, 8, 3).unwrap();
        let methods: Vec<EstimateMethod> = ests.iter().map(|e| e.method).collect();
        assert_eq!(
            methods,
            vec![
                EstimateMethod::ExactDiag,
                EstimateMethod::CoordNystrom,
                EstimateMethod::HolisticNystrom,
                EstimateMethod::RkhsNorm,
                EstimateMethod::EmpiricalSearch,
            ]
        );
        for e in &ests {
            assert!(e.value >= 0.0);
            assert!(e.slope() >= 0.0);
        }
        // Projected diagonal never exceeds the closed-form one, and the norm
        // bound dominates the measured slope.
        assert!(ests[1].value <= ests[0].value + 1e-9);
        assert!(ests[4].slope() <= ests[3].slope() + 1e-9);

        let ball = Model::new(
            KernelSpec::Inverse { dim: 2 },
            vec![vec![0.1, 0.2], vec![-0.3, 0.1]],
            DVector::from_vec(vec![0.7, -0.4]),
            false,
        )
        .unwrap();
        let small = DomainBox::new(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        let ball_witnesses: Vec<Vec<f64>> = (0..12).map(|_| small.sample(&mut r)).collect();
        let ests = estimate_all(&ball, &ball_witnesses, &small, DualNorm::L2, 6, 3).unwrap();
        let methods: Vec<EstimateMethod> = ests.iter().map(|e| e.method).collect();
        assert_eq!(
            methods,
            vec![
                EstimateMethod::HolisticNystrom,
                EstimateMethod::RkhsNorm,
                EstimateMethod::EmpiricalSearch,
            ]
        );
    }
}
