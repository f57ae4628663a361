//! Symmetric positive definite matrices and the divergences used to compare
//! covariance descriptors.
//!
//! Two dissimilarities are provided:
//!
//! * [`jbld`], the Jensen-Bregman LogDet divergence
//!   `log|(X+Y)/2| - ½ log|XY|`, which is what the compression objective and
//!   the kNN evaluation use;
//! * [`airm`], the affine-invariant Riemannian distance
//!   `‖log(Y^{-1/2} X Y^{-1/2})‖_F`, kept as a reference metric.
//!
//! Log-determinants are always taken from Cholesky pivots, never from
//! determinant products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative jitter applied once when the Cholesky factorization of a
/// midpoint `(X+Y)/2` fails.
const MIDPOINT_JITTER: f64 = 1e-12;

/// A symmetric positive definite `d×d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::NonFiniteInput);
                }
                if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        chol_upper(&m)?;
        Ok(Self { inner: m })
    }

    /// Replaces `m` by `(m + mᵀ)/2` before validating.
    pub fn from_symmetrized(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let sym = (&m + m.transpose()) * 0.5;
        Self::new(sym)
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: data.len() });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn identity(dim: usize) -> Self {
        Self { inner: DMatrix::identity(dim, dim) }
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        // Positive definiteness was checked at construction.
        log_det(&self.inner).expect("SpdMatrix invariant violated")
    }

    /// Congruence transform `A X Aᵀ`.
    pub fn congruence(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a.nrows() });
        }
        Self::from_symmetrized(a * &self.inner * a.transpose())
    }
}

/// Upper-triangular `B` with strictly positive diagonal; `BᵀB` is SPD.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    inner: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        check_square(&b)?;
        let d = b.nrows();
        for i in 0..d {
            for j in 0..i {
                if b[(i, j)] != 0.0 {
                    return Err(Error::BadParameters(format!(
                        "cholesky factor has nonzero entry below the diagonal at ({i}, {j})"
                    )));
                }
            }
            let p = b[(i, i)];
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: i, value: p });
            }
        }
        Ok(Self { inner: b })
    }

    /// Builds a factor from an upper-triangular matrix whose diagonal may
    /// contain negative entries, flipping row signs so the diagonal becomes
    /// positive. `BᵀB` is unchanged by the flip.
    pub fn canonicalize(mut b: DMatrix<f64>) -> Result<Self> {
        check_square(&b)?;
        let d = b.nrows();
        for i in 0..d {
            for j in 0..i {
                b[(i, j)] = 0.0;
            }
            if b[(i, i)] < 0.0 {
                for j in i..d {
                    b[(i, j)] = -b[(i, j)];
                }
            }
        }
        Self::new(b)
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// `BᵀB`.
    pub fn reconstruct(&self) -> SpdMatrix {
        let m = self.inner.transpose() * &self.inner;
        SpdMatrix::new_unchecked((&m + m.transpose()) * 0.5)
    }

    /// `log|BᵀB| = 2 Σ log b_ii`.
    pub fn log_det_reconstruct(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.inner[(i, i)].ln()).sum::<f64>()
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    if m.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// Upper Cholesky factor `B` with `BᵀB = a`. Only the upper triangle of `a`
/// is read.
pub(crate) fn chol_upper(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let mut b = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut s = a[(j, j)];
        for k in 0..j {
            s -= b[(k, j)] * b[(k, j)];
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: s });
        }
        let piv = s.sqrt();
        b[(j, j)] = piv;
        for i in (j + 1)..d {
            let mut t = a[(j, i)];
            for k in 0..j {
                t -= b[(k, j)] * b[(k, i)];
            }
            b[(j, i)] = t / piv;
        }
    }
    Ok(b)
}

/// Inverse of an upper-triangular matrix with nonzero diagonal.
pub(crate) fn upper_inverse(b: &DMatrix<f64>) -> DMatrix<f64> {
    let d = b.nrows();
    let mut inv = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        inv[(j, j)] = 1.0 / b[(j, j)];
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += b[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / b[(i, i)];
        }
    }
    inv
}

fn log_det_from_factor(b: &DMatrix<f64>) -> f64 {
    2.0 * (0..b.nrows()).map(|i| b[(i, i)].ln()).sum::<f64>()
}

/// `log|a|` for symmetric positive definite `a`.
pub fn log_det(a: &DMatrix<f64>) -> Result<f64> {
    Ok(log_det_from_factor(&chol_upper(a)?))
}

/// Inverse and log-determinant of an SPD matrix from one factorization.
pub(crate) fn spd_inverse_log_det(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let b = chol_upper(a)?;
    let binv = upper_inverse(&b);
    let inv = &binv * binv.transpose();
    Ok(((&inv + inv.transpose()) * 0.5, log_det_from_factor(&b)))
}

/// Cholesky factor of the midpoint `(x+y)/2`, with a single jitter retry.
fn midpoint_factor(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mid = (x + y) * 0.5;
    match chol_upper(&mid) {
        Ok(b) => Ok(b),
        Err(_) => {
            let d = mid.nrows();
            let eps = MIDPOINT_JITTER * mid.trace() / d as f64;
            let jittered = mid + DMatrix::<f64>::identity(d, d) * eps;
            chol_upper(&jittered)
        }
    }
}

/// Cholesky factorization `X = BᵀB` with positive diagonal.
pub fn cholesky(x: &SpdMatrix) -> Result<CholeskyFactor> {
    CholeskyFactor::new(chol_upper(x.as_matrix())?)
}

/// Jensen-Bregman LogDet divergence `log|(X+Y)/2| - ½ log|XY|`.
pub fn jbld(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    let mid = midpoint_factor(x.as_matrix(), y.as_matrix())?;
    let v = log_det_from_factor(&mid) - 0.5 * (x.log_det() + y.log_det());
    Ok(v.max(0.0))
}

/// JBLD with the log-determinants of both arguments supplied by the caller.
/// Used in hot loops where per-member log-determinants are cached.
pub(crate) fn jbld_cached(
    x: &DMatrix<f64>,
    log_det_x: f64,
    y: &DMatrix<f64>,
    log_det_y: f64,
) -> Result<f64> {
    let mid = midpoint_factor(x, y)?;
    Ok((log_det_from_factor(&mid) - 0.5 * (log_det_x + log_det_y)).max(0.0))
}

/// Affine-invariant Riemannian distance, `sqrt(Σ log² λ_i)` over the
/// generalized eigenvalues of `(X, Y)`.
pub fn airm(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    // Rounding in the whitening would otherwise leave a residue of ~1e-15.
    if x.as_matrix() == y.as_matrix() {
        return Ok(0.0);
    }
    let b = chol_upper(y.as_matrix())?;
    let binv = upper_inverse(&b);
    // Y = BᵀB, so B^{-T} X B^{-1} shares its spectrum with Y^{-1/2} X Y^{-1/2}.
    let c = binv.transpose() * x.as_matrix() * &binv;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let mut acc = 0.0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if !(l > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: i, value: l });
        }
        acc += l.ln().powi(2);
    }
    Ok(acc.sqrt())
}

/// Gradient of `jbld(X, BᵀB)` with respect to the upper-triangular entries
/// of `B`: `upper(2B(X+BᵀB)^{-1} - B^{-T})`. The strict lower triangle of the
/// result is zero.
pub fn jbld_gradient_chol(x: &SpdMatrix, b: &CholeskyFactor) -> Result<DMatrix<f64>> {
    check_same_dim(x.dim(), b.dim())?;
    let bm = b.as_matrix();
    let y = bm.transpose() * bm;
    let (sum_inv, _) = spd_inverse_log_det(&(x.as_matrix() + y))?;
    Ok(gradient_from_sum_inverse(bm, &sum_inv, 1.0))
}

/// `upper(2B S) - w·diag(1/b_ii)` where `S = Σ_i c_i (X_i+BᵀB)^{-1}` and
/// `w = Σ_i c_i`. Shared by the single-pair gradient and the SCC assembly.
pub(crate) fn gradient_from_sum_inverse(
    b: &DMatrix<f64>,
    weighted_inv: &DMatrix<f64>,
    weight_sum: f64,
) -> DMatrix<f64> {
    let d = b.nrows();
    let mut g = b * weighted_inv * 2.0;
    for i in 0..d {
        for j in 0..i {
            g[(i, j)] = 0.0;
        }
        // The upper part of B^{-T} is its diagonal.
        g[(i, i)] -= weight_sum / b[(i, i)];
    }
    g
}

/// Output of [`jbld_centroid`].
#[derive(Debug, Clone)]
pub struct Centroid {
    pub matrix: SpdMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Sum of JBLD divergences from `x` to every member.
pub fn jbld_objective(x: &SpdMatrix, members: &[SpdMatrix]) -> Result<f64> {
    members.iter().map(|m| jbld(x, m)).sum()
}

/// Approximate JBLD centroid `argmin_X Σ_i D_J(X, X_i)` by the fixed point
/// `X ← [ (1/n) Σ_i ((X + X_i)/2)^{-1} ]^{-1}`, started at the arithmetic
/// mean. Returns the best iterate; `converged` is false when `max_iter` was
/// exhausted before successive iterates came within `tol` (Frobenius).
pub fn jbld_centroid(members: &[SpdMatrix], tol: f64, max_iter: usize) -> Result<Centroid> {
    let first = members.first().ok_or(Error::EmptyInput)?;
    let d = first.dim();
    for m in members {
        check_same_dim(d, m.dim())?;
    }
    let n = members.len() as f64;
    let mut x = members
        .iter()
        .fold(DMatrix::<f64>::zeros(d, d), |acc, m| acc + m.as_matrix())
        / n;
    let mut current = SpdMatrix::from_symmetrized(x.clone())?;
    let mut best_obj = jbld_objective(&current, members)?;
    let mut best = current.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for m in members {
            let (inv, _) = spd_inverse_log_det(&((&x + m.as_matrix()) * 0.5))?;
            acc += inv;
        }
        acc /= n;
        let (next, _) = spd_inverse_log_det(&acc)?;
        let step = (&next - &x).norm();
        x = next;
        current = SpdMatrix::from_symmetrized(x.clone())?;
        let obj = jbld_objective(&current, members)?;
        if obj < best_obj {
            best_obj = obj;
            best = current.clone();
        }
        if step < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("jbld_centroid: no convergence after {max_iter} iterations");
    }
    Ok(Centroid { matrix: best, objective: best_obj, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        use rand_distr::{Distribution, StandardNormal};
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
        SpdMatrix::from_symmetrized(&a * a.transpose() + DMatrix::identity(d, d) * 0.5).unwrap()
    }

    #[test]
    fn cholesky_two_by_two() {
        let x = SpdMatrix::from_row_slice(2, &[4.0, 2.0, 2.0, 5.0]).unwrap();
        let b = cholesky(&x).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert_abs_diff_eq!(b.as_matrix(), &expect, epsilon = 1e-15);
    }

    #[test]
    fn cholesky_identity() {
        let b = cholesky(&SpdMatrix::identity(4)).unwrap();
        assert_eq!(b.as_matrix(), &DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(chol_upper(&m), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
        assert!(SpdMatrix::new(m).is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn jbld_scalar_value() {
        let x = SpdMatrix::from_row_slice(1, &[1.0]).unwrap();
        let y = SpdMatrix::from_row_slice(1, &[4.0]).unwrap();
        assert_abs_diff_eq!(jbld(&x, &y).unwrap(), 0.2231435513142097, epsilon = 1e-12);
    }

    #[test]
    fn airm_scalar_and_diagonal() {
        let x = SpdMatrix::from_row_slice(1, &[std::f64::consts::E.powi(2)]).unwrap();
        let one = SpdMatrix::identity(1);
        assert_abs_diff_eq!(airm(&x, &one).unwrap(), 2.0, epsilon = 1e-12);
        let diag = SpdMatrix::from_row_slice(2, &[1.0, 0.0, 0.0, 4.0]).unwrap();
        assert_abs_diff_eq!(
            airm(&diag, &SpdMatrix::identity(2)).unwrap(),
            4f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch() {
        let a = SpdMatrix::identity(2);
        let b = SpdMatrix::identity(3);
        assert!(matches!(jbld(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(airm(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_scalar() {
        let x = SpdMatrix::from_row_slice(1, &[1.0]).unwrap();
        let b = CholeskyFactor::new(DMatrix::from_element(1, 1, 2.0)).unwrap();
        let g = jbld_gradient_chol(&x, &b).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 0.3, epsilon = 1e-14);
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_spd(4, &mut rng);
        let b = cholesky(&x).unwrap();
        let g = jbld_gradient_chol(&x, &b).unwrap();
        assert!(g.amax() < 1e-8, "{g}");
    }

    #[test]
    fn canonicalize_flips_negative_rows() {
        let b = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, 3.0]);
        let y = b.transpose() * &b;
        let f = CholeskyFactor::canonicalize(b).unwrap();
        assert!(f.as_matrix()[(0, 0)] > 0.0);
        assert_abs_diff_eq!(f.reconstruct().as_matrix(), &y, epsilon = 1e-14);
    }

    #[test]
    fn centroid_of_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_spd(3, &mut rng);
        let c = jbld_centroid(std::slice::from_ref(&x), 1e-12, 100).unwrap();
        assert_abs_diff_eq!(c.matrix.as_matrix(), x.as_matrix(), epsilon = 1e-10);
        let c = jbld_centroid(&[x.clone(), x.clone()], 1e-12, 100).unwrap();
        assert_abs_diff_eq!(c.matrix.as_matrix(), x.as_matrix(), epsilon = 1e-10);
        assert!(c.converged);
    }

    #[test]
    fn centroid_empty() {
        assert!(matches!(jbld_centroid(&[], 1e-9, 10), Err(Error::EmptyInput)));
    }

    #[test]
    fn near_singular_midpoint_is_jittered() {
        // Both inputs valid but the sum factorization is exercised on a
        // badly scaled pair.
        let x = SpdMatrix::from_row_slice(2, &[1.0, 0.0, 0.0, 1e-300]).unwrap();
        let y = SpdMatrix::from_row_slice(2, &[1.0, 0.0, 0.0, 1e-300]).unwrap();
        assert!(jbld(&x, &y).unwrap().abs() < 1e-9);
    }
}
