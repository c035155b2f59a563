//! Dense symmetric-matrix helpers: dominant eigenvalue by power iteration,
//! full symmetric eigendecomposition, and eigenvalue-thresholded
//! pseudo-inverses used to whiten Gram matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Relative eigenvalue cutoff below which a PSD matrix direction is treated
/// as null when inverting.
pub const PINV_REL_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-8;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            context: "symmetric matrix",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            scale = scale.max(m[(i, j)].abs()).max(m[(j, i)].abs());
        }
        scale = scale.max(m[(i, i)].abs());
    }
    if worst > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Dominant eigenvalue of a symmetric matrix by power iteration with a
/// deterministic all-ones start. If the start vector is annihilated by the
/// matrix, the iteration restarts once from a seeded random vector; if that
/// also vanishes the matrix is treated as (numerically) zero on the probed
/// space and 0 is returned. For PSD input the result is the spectral norm.
///
/// Convergence means the Rayleigh quotient moved by less than
/// `tol * max(1, |estimate|)` between iterations.
pub fn lambda_max(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }

    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut reseeded = false;
    let mut est = 0.0f64;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm <= scale * 1e-150 {
            if reseeded {
                return Ok(0.0);
            }
            let mut r = rng::stream(0x5EED_1A17, n as u64);
            v = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
            let vn = v.norm();
            if vn == 0.0 {
                return Ok(0.0);
            }
            v /= vn;
            reseeded = true;
            continue;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= tol * est.abs().max(1.0) && est != 0.0 {
            return Ok(next);
        }
        est = next;
    }
    Err(Error::NotConverged {
        iters: max_iter,
        best: est,
    })
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_symmetric(m)?;
    let n = m.nrows();
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sym.eigenvalues[b].total_cmp(&sym.eigenvalues[a]));
    let vals = DVector::from_fn(n, |i, _| sym.eigenvalues[order[i]]);
    let vecs = DMatrix::from_fn(n, n, |i, j| sym.eigenvectors[(i, order[j])]);
    Ok((vals, vecs))
}

/// Leading eigenpair of a symmetric matrix (largest eigenvalue and a unit
/// eigenvector), via the full decomposition. Intended for small matrices.
pub fn leading_eigenpair(m: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let (vals, vecs) = sym_eigen(m)?;
    if vals.is_empty() {
        return Ok((0.0, DVector::zeros(0)));
    }
    Ok((vals[0], vecs.column(0).into_owned()))
}

fn spectral_map(m: &DMatrix<f64>, rel_tol: f64, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let top = vals[0].max(0.0);
    let cut = rel_tol * top;
    let mapped = DVector::from_fn(n, |i, _| {
        if vals[i] > cut && vals[i] > 0.0 {
            f(vals[i])
        } else {
            0.0
        }
    });
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        if mapped[k] != 0.0 {
            let col = vecs.column(k);
            out.syger(mapped[k], &col, &col, 1.0);
        }
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..n {
        for j in (i + 1)..n {
            out[(i, j)] = out[(j, i)];
        }
    }
    Ok(out)
}

/// Moore-Penrose pseudo-inverse of a PSD matrix, dropping eigenvalues below
/// `rel_tol * lambda_max`.
pub fn pinv_psd(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    spectral_map(m, rel_tol, |x| 1.0 / x)
}

/// Square root of the pseudo-inverse of a PSD matrix: returns S with
/// S*S = pinv(m) on the retained eigenspace.
pub fn pinv_sqrt_psd(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    spectral_map(m, rel_tol, |x| 1.0 / x.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 0);
        let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
        &a * a.transpose()
    }

    #[test]
    fn power_iteration_matches_eigen_oracle() {
        for seed in 0..20u64 {
            let m = random_psd(20, seed);
            let by_power = lambda_max(&m, 1e-14, 20_000).unwrap();
            let (vals, _) = sym_eigen(&m).unwrap();
            assert!(
                (by_power - vals[0]).abs() <= 1e-8 * vals[0].max(1.0),
                "seed {seed}: power {by_power} vs eigen {}",
                vals[0]
            );
        }
    }

    #[test]
    fn zero_and_identity() {
        let z = DMatrix::<f64>::zeros(5, 5);
        assert_eq!(lambda_max(&z, 1e-12, 100).unwrap(), 0.0);
        let id = DMatrix::<f64>::identity(6, 6);
        assert!((lambda_max(&id, 1e-12, 100).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stalled_start_recovers_via_reseed() {
        // I - J/n annihilates the all-ones start vector exactly.
        let n = 8;
        let m = DMatrix::from_fn(n, n, |i, j| {
            let base = if i == j { 1.0 } else { 0.0 };
            base - 1.0 / n as f64
        });
        let lam = lambda_max(&m, 1e-13, 10_000).unwrap();
        assert!((lam - 1.0).abs() < 1e-9, "got {lam}");
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            lambda_max(&m, 1e-12, 10),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut a = DMatrix::<f64>::identity(3, 3);
        a[(0, 1)] = 0.5;
        assert!(matches!(lambda_max(&a, 1e-12, 10), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn pinv_satisfies_projection_identities() {
        let mut r = rng::stream(42, 1);
        let b = DMatrix::from_fn(6, 3, |_, _| r.gen_range(-1.0..1.0));
        let k = &b * b.transpose(); // rank 3 PSD, 6x6
        let pinv = pinv_psd(&k, PINV_REL_TOL).unwrap();
        let back = &k * &pinv * &k;
        assert!((&back - &k).amax() < 1e-9, "K pinv K != K: {}", (&back - &k).amax());

        let s = pinv_sqrt_psd(&k, PINV_REL_TOL).unwrap();
        let ss = &s * &s;
        assert!((&ss - &pinv).amax() < 1e-9);
    }

    #[test]
    fn near_singular_directions_are_dropped() {
        // Eigenvalues 1 and 1e-16: the tiny one must be treated as null.
        let v1 = DVector::from_vec(vec![1.0, 1.0]).normalize();
        let v2 = DVector::from_vec(vec![1.0, -1.0]).normalize();
        let k = 1.0 * &v1 * v1.transpose() + 1e-16 * &v2 * v2.transpose();
        let pinv = pinv_psd(&k, PINV_REL_TOL).unwrap();
        let expect = &v1 * v1.transpose();
        assert!((&pinv - &expect).amax() < 1e-9);
    }
}
