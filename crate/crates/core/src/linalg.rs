//! Small dense linear-algebra and summary helpers used across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::Scalar;

/// Column means of a draws matrix (rows are draws).
pub fn column_means<T: Scalar>(draws: &DMatrix<T>) -> DVector<T> {
    let n = T::lit(draws.nrows() as f64);
    DVector::from_iterator(draws.ncols(), draws.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance with the `n − 1` denominator; the zero matrix when
/// there is a single draw.
pub fn sample_cov<T: Scalar>(draws: &DMatrix<T>) -> DMatrix<T> {
    let (n, p) = draws.shape();
    if n < 2 {
        return DMatrix::zeros(p, p);
    }
    let mean = column_means(draws);
    let mut centered = draws.clone();
    for mut row in centered.row_iter_mut() {
        for c in 0..p {
            row[c] -= mean[c];
        }
    }
    let mut cov = centered.tr_mul(&centered) / T::lit((n - 1) as f64);
    symmetrize(&mut cov);
    cov
}

pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Linear-interpolation quantile of already sorted data (R's type 7).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Type-7 quantile of unsorted data.
pub fn quantile<T: Scalar>(values: &[T], p: f64) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(&v, p)
}

/// Nearest PSD matrix by symmetric eigenvalue clipping at `floor`.
pub fn clip_eigenvalues<T: Scalar>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let vals = eig.eigenvalues.map(|v| if v < floor { floor } else { v });
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
}

/// Cholesky factor of a covariance estimate, repairing it first if needed:
/// eigenvalues are clipped at `1e-10 · scale` and `1e-8 · scale` is added to
/// the diagonal, where `scale` is the mean diagonal entry (or 1 when that is
/// zero).
pub fn robust_cholesky<T: Scalar>(m: &DMatrix<T>) -> Result<(Cholesky<T, Dyn>, bool)> {
    let mut s = m.clone();
    symmetrize(&mut s);
    if let Some(c) = Cholesky::new(s.clone()) {
        return Ok((c, false));
    }
    let d = s.nrows().max(1);
    let mut scale = s.trace() / T::lit(d as f64);
    if !(scale > T::zero()) {
        scale = T::one();
    }
    let mut repaired = clip_eigenvalues(&s, T::lit(1e-10) * scale);
    for i in 0..repaired.nrows() {
        repaired[(i, i)] += T::lit(1e-8) * scale;
    }
    Cholesky::new(repaired)
        .map(|c| (c, true))
        .ok_or_else(|| Error::Numerical("covariance could not be repaired to positive definite".into()))
}

/// Standard-normal vector, generated in `f64`.
pub fn standard_normals<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<T> {
    DVector::from_iterator(n, (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))))
}

/// Draw from `N(mean, Σ)` given the lower Cholesky factor of Σ.
pub fn mvn_from_lower<T: Scalar, R: Rng + ?Sized>(rng: &mut R, mean: &DVector<T>, lower: &DMatrix<T>) -> DVector<T> {
    let z = standard_normals::<T, _>(rng, mean.len());
    mean + lower * z
}

/// Draw from `N(P⁻¹ b, P⁻¹)` given the Cholesky factorisation of the
/// precision `P = L Lᵀ`: solve `Lᵀ x = z` and add the mean.
pub fn mvn_from_precision<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    chol: &Cholesky<T, Dyn>,
    b: &DVector<T>,
) -> DVector<T> {
    let mean = chol.solve(b);
    let z = standard_normals::<T, _>(rng, b.len());
    let lt = chol.l().transpose();
    let dev = lt.solve_upper_triangular(&z).expect("Cholesky factor is nonsingular");
    mean + dev
}

/// `log |A|` from a Cholesky factorisation.
pub fn log_det<T: Scalar>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let mut s = T::zero();
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    s + s
}
