//! Kernel evaluation with analytic derivatives.
//!
//! Two families are supported: coordinate-wise products of 1-D base kernels
//! (Gaussian, periodic) on R^d, and the inverse kernel `1/(2 - <x,y>)` on the
//! closed unit ball. First derivatives in the second argument and the mixed
//! second derivative `d^2 k0 / ds dt` are closed-form; finite differences are
//! used only as test oracles against these formulas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-D base kernel of a coordinate-wise product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseKernel {
    /// `exp(-(s-t)^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `exp(-sin^2(pi (s-t) / period) / (2 sigma^2))`
    Periodic { period: f64, sigma: f64 },
    /// Marker for the non-product inverse kernel; has no 1-D evaluation.
    InverseBase,
}

impl BaseKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseKernel::Gaussian { sigma } => {
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "sigma",
                        value: sigma,
                        reason: "must be finite and positive",
                    });
                }
            }
            BaseKernel::Periodic { period, sigma } => {
                if !(period > 0.0) || !period.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "period",
                        value: period,
                        reason: "must be finite and positive",
                    });
                }
                if !(sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "sigma",
                        value: sigma,
                        reason: "must be finite and positive",
                    });
                }
            }
            BaseKernel::InverseBase => {}
        }
        Ok(())
    }

    /// `k0(s, t)`.
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        match *self {
            BaseKernel::Gaussian { sigma } => {
                let u = s - t;
                Ok((-u * u / (2.0 * sigma * sigma)).exp())
            }
            BaseKernel::Periodic { period, sigma } => {
                let sn = (std::f64::consts::PI * (s - t) / period).sin();
                Ok((-sn * sn / (2.0 * sigma * sigma)).exp())
            }
            BaseKernel::InverseBase => Err(Error::Unsupported(
                "inverse kernel has no 1-D base evaluation",
            )),
        }
    }

    /// Derivative in the second argument, `d k0 / dt`.
    pub fn deriv_t(&self, s: f64, t: f64) -> Result<f64> {
        match *self {
            BaseKernel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                Ok((s - t) / s2 * self.eval(s, t)?)
            }
            BaseKernel::Periodic { period, sigma } => {
                let s2 = sigma * sigma;
                let w = std::f64::consts::PI / period;
                Ok(w / (2.0 * s2) * (2.0 * w * (s - t)).sin() * self.eval(s, t)?)
            }
            BaseKernel::InverseBase => Err(Error::Unsupported(
                "inverse kernel has no 1-D base evaluation",
            )),
        }
    }

    /// Mixed second derivative `d^2 k0 / ds dt`.
    pub fn mixed_second(&self, s: f64, t: f64) -> Result<f64> {
        match *self {
            BaseKernel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let u = s - t;
                Ok((1.0 / s2 - u * u / (s2 * s2)) * self.eval(s, t)?)
            }
            BaseKernel::Periodic { period, sigma } => {
                let s2 = sigma * sigma;
                let w = std::f64::consts::PI / period;
                let u = s - t;
                let a = w / (2.0 * s2) * (2.0 * w * u).sin();
                let a_prime = w * w / s2 * (2.0 * w * u).cos();
                Ok((a_prime - a * a) * self.eval(s, t)?)
            }
            BaseKernel::InverseBase => Err(Error::Unsupported(
                "inverse kernel has no 1-D base evaluation",
            )),
        }
    }

    /// Second derivative in the second argument, `d^2 k0 / dt^2`. For the
    /// translation-invariant bases this is the negated mixed second.
    pub fn second_t(&self, s: f64, t: f64) -> Result<f64> {
        Ok(-self.mixed_second(s, t)?)
    }
}

/// Mixed second derivative of a base kernel (exposed as a free function for
/// gradient Gram assembly and its tests).
pub fn mixed_second_base(base: &BaseKernel, s: f64, t: f64) -> Result<f64> {
    base.mixed_second(s, t)
}

/// A kernel on R^d: either a coordinate-wise product of one base kernel, or
/// the inverse kernel on the unit ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelSpec {
    Product { base: BaseKernel, dim: usize },
    /// `k(x, y) = 1 / (2 - <x, y>)`, defined for `|x|, |y| <= 1`.
    Inverse { dim: usize },
}

const UNIT_BALL_SLACK: f64 = 1e-9;

impl KernelSpec {
    pub fn dim(&self) -> usize {
        match *self {
            KernelSpec::Product { dim, .. } | KernelSpec::Inverse { dim } => dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Product { base, dim } => {
                if dim == 0 {
                    return Err(Error::InvalidParameter {
                        name: "dim",
                        value: 0.0,
                        reason: "must be at least 1",
                    });
                }
                if matches!(base, BaseKernel::InverseBase) {
                    return Err(Error::InvalidParameter {
                        name: "base",
                        value: 0.0,
                        reason: "inverse kernel is not a coordinate-wise product",
                    });
                }
                base.validate()
            }
            KernelSpec::Inverse { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidParameter {
                        name: "dim",
                        value: 0.0,
                        reason: "must be at least 1",
                    });
                }
                Ok(())
            }
        }
    }

    /// Check that a point is a valid input for this kernel.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "kernel input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainViolation("non-finite coordinate".into()));
        }
        if let KernelSpec::Inverse { .. } = self {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + UNIT_BALL_SLACK {
                return Err(Error::DomainViolation(format!(
                    "inverse kernel input has norm {norm:.6}, outside the unit ball"
                )));
            }
        }
        Ok(())
    }

    /// Rescale a point into the kernel domain if necessary. Returns true when
    /// the point was modified. Product kernels accept all of R^d.
    pub fn project_into_domain(&self, x: &mut [f64]) -> bool {
        match self {
            KernelSpec::Product { .. } => false,
            KernelSpec::Inverse { .. } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1.0 {
                    for v in x.iter_mut() {
                        *v /= norm;
                    }
                    true
                } else {
                    false
                }
            }
        }
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        match *self {
            KernelSpec::Product { base, .. } => {
                let mut prod = 1.0;
                for j in 0..x.len() {
                    prod *= base.eval(x[j], y[j])?;
                }
                Ok(prod)
            }
            KernelSpec::Inverse { .. } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                Ok(1.0 / (2.0 - dot))
            }
        }
    }

    /// Gradient of `k(x, .)` in its second argument, evaluated at `y`.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        self.check_point(y)?;
        let d = self.dim();
        match *self {
            KernelSpec::Product { base, .. } => {
                let mut out = DVector::zeros(d);
                for j in 0..d {
                    let mut term = base.deriv_t(x[j], y[j])?;
                    for m in 0..d {
                        if m != j {
                            term *= base.eval(x[m], y[m])?;
                        }
                    }
                    out[j] = term;
                }
                Ok(out)
            }
            KernelSpec::Inverse { .. } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let den = 2.0 - dot;
                Ok(DVector::from_fn(d, |j, _| x[j] / (den * den)))
            }
        }
    }

    /// Hessian of `k(x, .)` in its second argument, evaluated at `y`.
    pub fn hessian_y(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        self.check_point(y)?;
        let d = self.dim();
        match *self {
            KernelSpec::Product { base, .. } => {
                let mut out = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let mut term = if i == j {
                            base.second_t(x[i], y[i])?
                        } else {
                            base.deriv_t(x[i], y[i])? * base.deriv_t(x[j], y[j])?
                        };
                        for m in 0..d {
                            if m != i && m != j {
                                term *= base.eval(x[m], y[m])?;
                            }
                        }
                        out[(i, j)] = term;
                        out[(j, i)] = term;
                    }
                }
                Ok(out)
            }
            KernelSpec::Inverse { .. } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let den = 2.0 - dot;
                let c = 2.0 / (den * den * den);
                Ok(DMatrix::from_fn(d, d, |i, j| c * x[i] * x[j]))
            }
        }
    }

    /// Gram matrix `[k(xs[i], ys[j])]`.
    pub fn gram(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for x in xs {
            self.check_point(x)?;
        }
        for y in ys {
            self.check_point(y)?;
        }
        let mut out = DMatrix::zeros(xs.len(), ys.len());
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                out[(i, j)] = self.eval(x, y)?;
            }
        }
        Ok(out)
    }
}

/// Median of the pairwise Euclidean distances of a point set (the lower
/// median when the count is even). Needs at least two points.
pub fn median_bandwidth(xs: &[Vec<f64>]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "points",
            value: xs.len() as f64,
            reason: "need at least two points for pairwise distances",
        });
    }
    let d = xs[0].len();
    for x in xs {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                context: "median_bandwidth",
                expected: d,
                got: x.len(),
            });
        }
    }
    let mut dists = Vec::with_capacity(xs.len() * (xs.len() - 1) / 2);
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            let d2: f64 = xs[i]
                .iter()
                .zip(&xs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    Ok(dists[(dists.len() - 1) / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian(sigma: f64) -> BaseKernel {
        BaseKernel::Gaussian { sigma }
    }

    fn periodic(period: f64, sigma: f64) -> BaseKernel {
        BaseKernel::Periodic { period, sigma }
    }

    #[test]
    fn frozen_evaluations() {
        // Periodic kernel with period pi and sigma^2 = 1/2 at lag pi/2.
        let k = periodic(std::f64::consts::PI, 0.5f64.sqrt());
        let got = k.eval(std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        assert!((got - (-1.0f64).exp()).abs() < 1e-15, "got {got}");

        // Gaussian first derivative at (1, 0), sigma = 1.
        let g = gaussian(1.0).deriv_t(1.0, 0.0).unwrap();
        assert!((g - (-0.5f64).exp()).abs() < 1e-15, "got {g}");
    }

    #[test]
    fn frozen_mixed_seconds() {
        // Gaussian: 1/sigma^2 on the diagonal, zero at |s-t| = sigma.
        for sigma in [0.5, 1.0, 2.0] {
            let k = gaussian(sigma);
            let on_diag = k.mixed_second(0.3, 0.3).unwrap();
            assert!((on_diag - 1.0 / (sigma * sigma)).abs() < 1e-13);
            let at_sigma = k.mixed_second(0.3 + sigma, 0.3).unwrap();
            assert!(at_sigma.abs() < 1e-13);
        }
        // Periodic on the diagonal: (pi / period)^2 / sigma^2 = 2 here.
        let k = periodic(std::f64::consts::PI, 0.5f64.sqrt());
        let got = k.mixed_second(1.1, 1.1).unwrap();
        assert!((got - 2.0).abs() < 1e-13, "got {got}");
    }

    /// Central finite difference of `eval` in the second argument.
    fn fd_deriv_t(k: &BaseKernel, s: f64, t: f64, h: f64) -> f64 {
        (k.eval(s, t + h).unwrap() - k.eval(s, t - h).unwrap()) / (2.0 * h)
    }

    /// Second-order cross difference of `eval`, independent of `deriv_t`.
    fn fd_mixed(k: &BaseKernel, s: f64, t: f64, h: f64) -> f64 {
        (k.eval(s + h, t + h).unwrap() - k.eval(s + h, t - h).unwrap()
            - k.eval(s - h, t + h).unwrap()
            + k.eval(s - h, t - h).unwrap())
            / (4.0 * h * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kernels = [
            gaussian(0.5),
            gaussian(1.0),
            gaussian(2.0),
            periodic(std::f64::consts::PI, 0.5f64.sqrt()),
            periodic(2.0, 0.8),
        ];
        let pts = [-2.3, -0.7, 0.0, 0.4, 1.9];
        for k in &kernels {
            for &s in &pts {
                for &t in &pts {
                    let d = k.deriv_t(s, t).unwrap();
                    let fd = fd_deriv_t(k, s, t, 1e-5);
                    assert!(
                        (d - fd).abs() <= 1e-5 * d.abs().max(1.0),
                        "{k:?} deriv at ({s},{t}): {d} vs fd {fd}"
                    );
                    let m = k.mixed_second(s, t).unwrap();
                    let fm = fd_mixed(k, s, t, 1e-4);
                    assert!(
                        (m - fm).abs() <= 1e-4 * m.abs().max(1.0),
                        "{k:?} mixed at ({s},{t}): {m} vs fd {fm}"
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_kernel_frozen_values_and_domain() {
        let k = KernelSpec::Inverse { dim: 2 };
        let x = [1.0, 0.0];
        let y = [0.0, 0.0];
        assert!((k.eval(&x, &y).unwrap() - 0.5).abs() < 1e-15);
        let g = k.grad_y(&x, &y).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert_eq!(g[1], 0.0);

        let far = [1.2, 0.0];
        assert!(matches!(k.eval(&x, &far), Err(Error::DomainViolation(_))));

        let mut p = vec![3.0, 4.0];
        assert!(k.project_into_domain(&mut p));
        let n: f64 = p.iter().map(|v| v * v).sum::<f64>();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(!k.project_into_domain(&mut p.clone()));
    }

    #[test]
    fn inverse_gradient_and_hessian_match_finite_differences() {
        let k = KernelSpec::Inverse { dim: 3 };
        let x = [0.4, -0.3, 0.5];
        let y = [0.1, 0.2, -0.6];
        let g = k.grad_y(&x, &y).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += h;
            ym[j] -= h;
            let fd = (k.eval(&x, &yp).unwrap() - k.eval(&x, &ym).unwrap()) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-7, "coord {j}: {} vs {fd}", g[j]);
        }
        let hess = k.hessian_y(&x, &y).unwrap();
        for j in 0..3 {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += h;
            ym[j] -= h;
            let gp = k.grad_y(&x, &yp).unwrap();
            let gm = k.grad_y(&x, &ym).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((hess[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn product_gradient_and_hessian_match_finite_differences() {
        let k = KernelSpec::Product {
            base: gaussian(0.8),
            dim: 3,
        };
        let x = [0.4, -1.3, 0.5];
        let y = [0.1, 0.2, -0.6];
        let g = k.grad_y(&x, &y).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += h;
            ym[j] -= h;
            let fd = (k.eval(&x, &yp).unwrap() - k.eval(&x, &ym).unwrap()) / (2.0 * h);
            assert!((g[j] - fd).abs() < 1e-7);
        }
        let hess = k.hessian_y(&x, &y).unwrap();
        for j in 0..3 {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[j] += h;
            ym[j] -= h;
            let gp = k.grad_y(&x, &yp).unwrap();
            let gm = k.grad_y(&x, &ym).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * h);
                assert!((hess[(i, j)] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let k = KernelSpec::Product {
            base: gaussian(1.0),
            dim: 2,
        };
        assert!(matches!(
            k.eval(&[0.0, 0.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn product_spec_rejects_inverse_base() {
        let k = KernelSpec::Product {
            base: BaseKernel::InverseBase,
            dim: 2,
        };
        assert!(k.validate().is_err());
    }

    #[test]
    fn gram_is_psd_within_tolerance() {
        let mut r = crate::rng::stream(11, 0);
        use rand::Rng;
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let k = KernelSpec::Product {
            base: gaussian(0.7),
            dim: 3,
        };
        let g = k.gram(&pts, &pts).unwrap();
        let (vals, _) = crate::linalg::sym_eigen(&g).unwrap();
        let max = vals[0];
        let min = vals[vals.len() - 1];
        assert!(min >= -1e-10 * max.max(1.0), "min eig {min}");
    }

    #[test]
    fn median_bandwidth_frozen() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert_eq!(median_bandwidth(&pts).unwrap(), 2.0);
        // Even count: distances {1,2,4,1,3,2} -> sorted {1,1,2,2,3,4}, lower median 2.
        let pts4 = vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0]];
        assert_eq!(median_bandwidth(&pts4).unwrap(), 2.0);
        assert!(median_bandwidth(&[vec![0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn product_kernel_symmetry_is_bit_exact(
            xs in proptest::collection::vec(-3.0f64..3.0, 2),
            ys in proptest::collection::vec(-3.0f64..3.0, 2),
            sigma in 0.3f64..2.5,
        ) {
            let k = KernelSpec::Product { base: gaussian(sigma), dim: 2 };
            let a = k.eval(&xs, &ys).unwrap();
            let b = k.eval(&ys, &xs).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn periodic_kernel_is_periodic(
            x in -2.0f64..2.0,
            y in -2.0f64..2.0,
            period in 0.5f64..3.0,
            sigma in 0.4f64..1.5,
        ) {
            let k = periodic(period, sigma);
            let a = k.eval(x, y).unwrap();
            let b = k.eval(x + period, y).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn gaussian_deriv_matches_fd_everywhere(
            s in -3.0f64..3.0,
            t in -3.0f64..3.0,
            sigma in 0.3f64..2.5,
        ) {
            let k = gaussian(sigma);
            let d = k.deriv_t(s, t).unwrap();
            let fd = fd_deriv_t(&k, s, t, 1e-5);
            prop_assert!((d - fd).abs() <= 1e-5 * d.abs().max(1.0));
        }
    }
}
