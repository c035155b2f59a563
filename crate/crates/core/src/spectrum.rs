//! Kernel spectra and the constants they feed into witness-count estimates.
//!
//! Periodic base kernels get their Mercer eigenvalues by quadrature against
//! the cosine basis; the unit-bandwidth-vs-measure Gaussian family has a
//! closed-form geometric ladder; the inverse kernel on the unit ball gets a
//! truncated moment-matrix eigen-solve. On top of the spectra sit the tail
//! condition check, the derived band constants, and an error curve comparing
//! the projected gradient-Gram diagonal against the exact one as the witness
//! count grows.

use crate::error::{Error, Result};
use crate::kernels::{BaseKernel, KernelSpec};
use crate::linalg::{lambda_max, sym_eigen};
use crate::lipbound::{build_gradient_gram, DiagMode, Model};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Which spectrum a report describes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectrumKind {
    /// Quadrature eigenvalues of a periodic base kernel. Each `j >= 1` value
    /// carries multiplicity two (cosine and sine partner), which is why the
    /// trace identity reads `lambda_0 + 2 sum_{j>=1} lambda_j = 1`.
    Periodic { period: f64, sigma: f64 },
    /// Geometric ladder for the Gaussian kernel paired with the centred
    /// normal measure whose standard deviation equals the bandwidth.
    GaussianClosedForm { sigma: f64 },
    /// Truncated moment-matrix spectrum for the inverse kernel under the
    /// uniform measure on the unit ball.
    InverseMoments { dim: usize, degree_cap: usize },
}

/// Eigenvalues of a kernel integral operator, plus how they were obtained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub kind: SpectrumKind,
    /// Panel count of the composite Simpson rule, when quadrature was used.
    pub quad_points: Option<usize>,
    /// Indexed by frequency `j` for the periodic and Gaussian kinds, sorted
    /// nonincreasing for the moment-matrix kind.
    pub eigenvalues: Vec<f64>,
}

fn simpson_nodes(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / panels as f64;
    let nodes: Vec<f64> = (0..=panels).map(|k| a + k as f64 * h).collect();
    let weights: Vec<f64> = (0..=panels)
        .map(|k| {
            let c = if k == 0 || k == panels {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

fn require_periodic(base: &BaseKernel) -> Result<(f64, f64)> {
    base.validate()?;
    match *base {
        BaseKernel::Periodic { period, sigma } => Ok((period, sigma)),
        _ => Err(Error::Unsupported(
            "this spectrum is defined for periodic base kernels",
        )),
    }
}

fn check_quad_points(quad_points: usize) -> Result<()> {
    if quad_points < 1024 || quad_points % 2 != 0 {
        return Err(Error::InvalidParameter {
            name: "quad_points",
            value: quad_points as f64,
            reason: "composite Simpson needs an even panel count of at least 1024",
        });
    }
    Ok(())
}

/// Eigenvalues `lambda_j = (1/v) int_{-v/2}^{v/2} kappa(t) cos(j w0 t) dt`
/// of a periodic base kernel with period `v` and `w0 = 2 pi / v`, for
/// `j = 0..=j_max`, by composite Simpson over `quad_points` panels.
pub fn periodic_eigenvalues(
    base: &BaseKernel,
    j_max: usize,
    quad_points: usize,
) -> Result<SpectrumReport> {
    let (v, sigma) = require_periodic(base)?;
    check_quad_points(quad_points)?;
    let (nodes, weights) = simpson_nodes(-0.5 * v, 0.5 * v, quad_points);
    let kappa: Vec<f64> = nodes
        .iter()
        .map(|&t| base.eval(t, 0.0))
        .collect::<Result<_>>()?;
    let w0 = TAU / v;
    let eigenvalues = (0..=j_max)
        .map(|j| {
            let mut acc = 0.0;
            for ((&t, &w), &k) in nodes.iter().zip(&weights).zip(&kappa) {
                acc += w * k * (j as f64 * w0 * t).cos();
            }
            acc / v
        })
        .collect();
    Ok(SpectrumReport {
        kind: SpectrumKind::Periodic { period: v, sigma },
        quad_points: Some(quad_points),
        eigenvalues,
    })
}

/// Trace of a periodic spectrum under the multiplicity-two convention:
/// `lambda_0 + 2 sum_{j>=1} lambda_j`. Equals `kappa(0) = 1` in the limit.
pub fn periodic_mercer_sum(eigenvalues: &[f64]) -> f64 {
    match eigenvalues.split_first() {
        Some((first, rest)) => first + 2.0 * rest.iter().sum::<f64>(),
        None => 0.0,
    }
}

/// One frequency of the tail-decay condition.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayRow {
    pub j: usize,
    /// `m_j lambda_j (1+j)^2 max(1, j^2)` with `m_j = 2` for `j >= 1`.
    pub lhs: f64,
    /// `c6 * c4^{-j}`.
    pub rhs: f64,
}

/// Outcome of checking the geometric tail-decay condition on a spectrum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayCheck {
    pub c4: f64,
    pub c6: f64,
    pub rows: Vec<DecayRow>,
    /// Smallest frequency whose weighted eigenvalue exceeds the geometric
    /// envelope, if any.
    pub first_violation: Option<usize>,
}

/// Checks `m_j lambda_j (1+j)^2 max(1, j^2) <= c6 * c4^{-j}` for every
/// reported frequency, with multiplicity weight `m_j = 2` for `j >= 1`.
/// This is the condition under which the band constants below control the
/// tail energy of the spectrum.
pub fn decay_condition_check(eigenvalues: &[f64], c4: f64, c6: f64) -> DecayCheck {
    let mut rows = Vec::with_capacity(eigenvalues.len());
    let mut first_violation = None;
    for (j, &lam) in eigenvalues.iter().enumerate() {
        let mult = if j >= 1 { 2.0 } else { 1.0 };
        let poly = (1 + j).pow(2) as f64 * (j * j).max(1) as f64;
        let lhs = mult * lam * poly;
        let rhs = c6 * c4.powi(-(j as i32));
        if lhs > rhs && first_violation.is_none() {
            first_violation = Some(j);
        }
        rows.push(DecayRow { j, lhs, rhs });
    }
    DecayCheck {
        c4,
        c6,
        rows,
        first_violation,
    }
}

/// Band and envelope constants derived from the tail-decay condition for a
/// periodic kernel: how many low frequencies (`n_eps` of them, always odd)
/// capture all but `eps^2` of the spectral mass, the matching frequency band
/// limit `m_eps`, and the uniform envelope bound `q_eps` on the retained
/// eigenfunctions.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub eps: f64,
    pub c4: f64,
    pub c6: f64,
    /// Raw exponent `log_{c4}(2.1 c6 / eps^2 * max(1, v^2 / (4 pi^2)))`.
    pub n_raw: f64,
    /// Odd retained-term count `1 + 2 floor(n_raw)`.
    pub n_eps: usize,
    /// Band limit `(sqrt(2) pi / v) (n_eps - 1)`.
    pub m_eps: f64,
    /// Envelope bound on the retained eigenfunctions; `sqrt(2)` here.
    pub q_eps: f64,
}

impl AssumptionConstants {
    /// Witness count sufficient, with probability `1 - delta`, for the
    /// projected spectral bound to sit within the tolerance the constants
    /// were built for: `max(n_eps, 5/(3 eps^2) * n_eps * q_eps^2 *
    /// ln(2 n_eps / delta))`.
    pub fn theoretical_witness_count(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "failure probability must lie in (0, 1)",
            });
        }
        let n = self.n_eps as f64;
        let sampled =
            5.0 / (3.0 * self.eps * self.eps) * n * self.q_eps * self.q_eps * (2.0 * n / delta).ln();
        Ok(n.max(sampled))
    }
}

/// Derives the band constants for a periodic base kernel whose spectrum
/// satisfies the tail-decay condition with constants `c4, c6`.
pub fn assumption_constants(
    base: &BaseKernel,
    eps: f64,
    c4: f64,
    c6: f64,
) -> Result<AssumptionConstants> {
    let (v, _) = require_periodic(base)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            value: eps,
            reason: "tolerance must lie in (0, 1]",
        });
    }
    if !(c4 > 1.0) {
        return Err(Error::InvalidParameter {
            name: "c4",
            value: c4,
            reason: "geometric decay base must exceed 1",
        });
    }
    if !(c6 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "c6",
            value: c6,
            reason: "envelope constant must be positive",
        });
    }
    let arg = 2.1 * c6 / (eps * eps) * (v * v / (4.0 * PI * PI)).max(1.0);
    let n_raw = arg.ln() / c4.ln();
    let n_eps = 1 + 2 * n_raw.floor().max(0.0) as usize;
    let m_eps = (2.0f64.sqrt() * PI / v) * (n_eps - 1) as f64;
    Ok(AssumptionConstants {
        eps,
        c4,
        c6,
        n_raw,
        n_eps,
        m_eps,
        q_eps: 2.0f64.sqrt(),
    })
}

/// Closed-form spectrum of the Gaussian kernel with bandwidth `sigma` under
/// the measure `N(0, sigma^2)`: `lambda_j = c0^{-j-1/2}` with
/// `c0 = (3 + sqrt(5))/2`, for `j = 0..=j_max`. The values are independent
/// of `sigma` because the measure width is tied to the bandwidth; the sum
/// over all `j >= 0` is exactly 1.
pub fn gaussian_eigenvalues_closed_form(sigma: f64, j_max: usize) -> Result<SpectrumReport> {
    BaseKernel::Gaussian { sigma }.validate()?;
    let c0 = 0.5 * (3.0 + 5.0f64.sqrt());
    let eigenvalues = (0..=j_max)
        .map(|j| c0.powf(-(j as f64) - 0.5))
        .collect();
    Ok(SpectrumReport {
        kind: SpectrumKind::GaussianClosedForm { sigma },
        quad_points: None,
        eigenvalues,
    })
}

fn standard_normal<R: Rng>(r: &mut R) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn power_pair(m: &DMatrix<f64>, max_iter: usize) -> (f64, DVector<f64>) {
    let n = m.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0f64;
    let mut settled = 0u32;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm <= 1e-300 {
            return (0.0, v);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-13 * est.abs().max(1.0) {
            // Let the vector keep polishing after the value has converged;
            // deflation quality depends on the vector, not the value.
            settled += 1;
            if settled >= 20 {
                return (next, v);
            }
        } else {
            settled = 0;
        }
        est = next;
    }
    (est, v)
}

/// Monte-Carlo estimate of the leading `top_k` eigenvalues of the Gaussian
/// kernel operator under `N(0, sigma^2)`: eigenvalues of `(1/n) K` for a
/// Gram matrix `K` over `n_samples` draws, extracted by deflated power
/// iteration. Converges to the closed-form ladder as `n_samples` grows.
pub fn gaussian_mc_spectrum(
    sigma: f64,
    n_samples: usize,
    top_k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let base = BaseKernel::Gaussian { sigma };
    base.validate()?;
    if n_samples == 0 || top_k == 0 || top_k > n_samples {
        return Err(Error::InvalidParameter {
            name: "top_k",
            value: top_k as f64,
            reason: "need 1 <= top_k <= n_samples",
        });
    }
    let mut r = rng::stream(seed, 0);
    let xs: Vec<f64> = (0..n_samples).map(|_| sigma * standard_normal(&mut r)).collect();
    let scale = 1.0 / n_samples as f64;
    let mut m = DMatrix::zeros(n_samples, n_samples);
    for i in 0..n_samples {
        for j in i..n_samples {
            let k = base.eval(xs[i], xs[j])? * scale;
            m[(i, j)] = k;
            m[(j, i)] = k;
        }
    }
    let mut out = Vec::with_capacity(top_k);
    for _ in 0..top_k {
        let (lam, u) = power_pair(&m, 10_000);
        out.push(lam);
        m.ger(-lam, &u, &u, 1.0);
    }
    Ok(out)
}

fn gamma_half(two_x: usize) -> f64 {
    // Gamma at half-integer arguments by the recursion from Gamma(1/2) and
    // Gamma(1); exact to rounding, which beats any series on this domain.
    debug_assert!(two_x >= 1);
    let mut acc = if two_x % 2 == 1 { PI.sqrt() } else { 1.0 };
    let mut t = if two_x % 2 == 1 { 1 } else { 2 };
    while t < two_x {
        acc *= t as f64 / 2.0;
        t += 2;
    }
    acc
}

fn multi_indices(d: usize, cap: usize) -> Vec<Vec<usize>> {
    fn fill(remaining: usize, pos: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == idx.len() {
            idx[pos] = remaining;
            out.push(idx.clone());
            return;
        }
        for v in 0..=remaining {
            idx[pos] = v;
            fill(remaining - v, pos + 1, idx, out);
        }
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    for total in 0..=cap {
        fill(total, 0, &mut idx, &mut out);
    }
    out
}

fn multinomial(alpha: &[usize]) -> f64 {
    let mut acc = 1.0f64;
    let mut seen = 0usize;
    for &a in alpha {
        for i in 1..=a {
            seen += 1;
            acc *= seen as f64 / i as f64;
        }
    }
    acc
}

/// Squared feature weight of the monomial `x^alpha` in the inverse kernel's
/// power-series factorisation: `2^{-|alpha|-1} |alpha|! / prod(alpha_i!)`.
fn feature_weight_sq(alpha: &[usize]) -> f64 {
    let total: usize = alpha.iter().sum();
    2.0f64.powi(-(total as i32) - 1) * multinomial(alpha)
}

/// Normalised moment `q_gamma = (1/V_d) int_{B_d} x^gamma dx` of the uniform
/// measure on the unit ball; zero unless every entry of `gamma` is even.
fn ball_moment(d: usize, gamma: &[usize]) -> f64 {
    if gamma.iter().any(|g| g % 2 == 1) {
        return 0.0;
    }
    let total: usize = gamma.iter().sum();
    let vd = PI.powf(d as f64 / 2.0) / gamma_half(d + 2);
    let mut num = 2.0;
    for &g in gamma {
        num *= gamma_half(g + 1);
    }
    num / (vd * (total + d) as f64 * gamma_half(total + d))
}

/// Spectrum of the inverse kernel `1/(2 - <x,y>)` restricted to monomial
/// features of degree at most `degree_cap`, under the uniform measure on the
/// unit ball in `d` dimensions: eigenvalues of `M[a,b] = w_a w_b q_{a+b}`
/// over graded-lexicographic multi-indices, sorted nonincreasing.
pub fn inverse_kernel_spectrum(d: usize, degree_cap: usize) -> Result<SpectrumReport> {
    if d == 0 || d > 4 {
        return Err(Error::InvalidParameter {
            name: "dim",
            value: d as f64,
            reason: "moment matrix is kept dense; dimensions 1..=4 only",
        });
    }
    if degree_cap > 10 {
        return Err(Error::InvalidParameter {
            name: "degree_cap",
            value: degree_cap as f64,
            reason: "index count grows combinatorially; caps up to 10 only",
        });
    }
    let idx = multi_indices(d, degree_cap);
    let w: Vec<f64> = idx.iter().map(|a| feature_weight_sq(a).sqrt()).collect();
    let n = idx.len();
    let mut m = DMatrix::zeros(n, n);
    let mut gamma = vec![0usize; d];
    for i in 0..n {
        for j in i..n {
            for (g, (a, b)) in gamma.iter_mut().zip(idx[i].iter().zip(&idx[j])) {
                *g = a + b;
            }
            let v = w[i] * w[j] * ball_moment(d, &gamma);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let (vals, _) = sym_eigen(&m)?;
    Ok(SpectrumReport {
        kind: SpectrumKind::InverseMoments {
            dim: d,
            degree_cap,
        },
        quad_points: None,
        eigenvalues: vals.iter().copied().collect(),
    })
}

/// Tolerance/confidence inputs for the theoretical witness count attached to
/// an error curve. Only meaningful for periodic base kernels, where the band
/// constants are defined.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TheorySettings {
    pub eps: f64,
    pub delta: f64,
    pub c4: f64,
    pub c6: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ErrorCurveRow {
    pub n_witness: usize,
    /// Median over trials of `|lambda_max(projected) - lambda_max(exact)|`.
    pub median_error: f64,
}

/// How fast the projected-diagonal spectral estimate approaches the exact
/// one as witnesses accumulate, for one fixed random model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub lambda_exact: f64,
    pub rows: Vec<ErrorCurveRow>,
    /// Witness count the band constants deem sufficient, when requested.
    pub theoretical_n: Option<f64>,
}

fn nu0_sample<R: Rng>(base: &BaseKernel, r: &mut R) -> f64 {
    match *base {
        BaseKernel::Gaussian { sigma } => sigma * standard_normal(r),
        BaseKernel::Periodic { period, .. } => r.gen_range(-0.5 * period..0.5 * period),
        BaseKernel::InverseBase => unreachable!("guarded by the curve entry point"),
    }
}

fn nu0_points<R: Rng>(base: &BaseKernel, n: usize, dim: usize, r: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| nu0_sample(base, r)).collect())
        .collect()
}

/// Builds a fixed random product-kernel model (anchors and witness draws both
/// follow the kernel's natural sampling measure: `N(0, sigma^2)` per
/// coordinate for the Gaussian, uniform over one period for the periodic)
/// and measures, for each witness count in `n_list`, the median absolute gap
/// between the projected and exact largest gradient-Gram eigenvalues over
/// `trials` independent witness draws. Trials run in parallel.
pub fn nystrom_error_curve(
    base: BaseKernel,
    dim: usize,
    model_seed: u64,
    n_list: &[usize],
    trials: usize,
    seed: u64,
    theory: Option<TheorySettings>,
) -> Result<ErrorCurve> {
    base.validate()?;
    if matches!(base, BaseKernel::InverseBase) {
        return Err(Error::Unsupported(
            "error curves need a coordinate-wise product kernel with a sampling measure",
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter {
            name: "dim",
            value: 0.0,
            reason: "need at least one coordinate",
        });
    }
    if trials == 0 || n_list.is_empty() || n_list.iter().any(|&n| n == 0) {
        return Err(Error::InvalidParameter {
            name: "trials",
            value: trials as f64,
            reason: "need at least one trial and positive witness counts",
        });
    }
    let n_anchors = 16;
    let anchors = nu0_points(&base, n_anchors, dim, &mut rng::stream(model_seed, 0));
    let mut cr = rng::stream(model_seed, 1);
    let coeffs = DVector::from_fn(n_anchors, |_, _| cr.gen_range(-2.0..2.0));
    let model = Model::new(KernelSpec::Product { base, dim }, anchors, coeffs, false)?;
    let exact = build_gradient_gram(&model, &[], DiagMode::Exact)?;
    let lambda_exact = lambda_max(&exact, 1e-12, 20_000)?;

    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let errs: Result<Vec<f64>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::stream(seed, ((ni as u64 + 1) << 32) ^ t as u64);
                let wits = nu0_points(&base, n, dim, &mut r);
                let proj = build_gradient_gram(&model, &wits, DiagMode::Projected)?;
                Ok((lambda_exact - lambda_max(&proj, 1e-12, 20_000)?).abs())
            })
            .collect();
        let mut errs = errs?;
        errs.sort_by(f64::total_cmp);
        rows.push(ErrorCurveRow {
            n_witness: n,
            median_error: errs[(errs.len() - 1) / 2],
        });
    }
    let theoretical_n = match theory {
        Some(th) => Some(
            assumption_constants(&base, th.eps, th.c4, th.c6)?
                .theoretical_witness_count(th.delta)?,
        ),
        None => None,
    };
    Ok(ErrorCurve {
        lambda_exact,
        rows,
        theoretical_n,
    })
}
