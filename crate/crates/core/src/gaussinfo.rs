//! Gaussian information kernels: log-determinants, Schur-complement
//! conditioning and the received-signal covariance assemblies used by the
//! uplink and downlink rate expressions.

use std::f64::consts::LN_2;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance on Hermitian symmetry and on negative eigenvalues.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Relative ridge (times trace/dim) added to a near-singular conditioning block.
pub const RIDGE_SCALE: f64 = 1e-12;

static RIDGE_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of times a conditioning covariance needed the ridge since process start.
pub fn ridge_events() -> u64 {
    RIDGE_EVENTS.load(Ordering::Relaxed)
}

/// A Hermitian positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianPSD(CMatrix);

impl HermitianPSD {
    /// Wraps `m` after checking squareness and Hermitian symmetry, then
    /// symmetrizes it as `(m + m^H) / 2`.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Domain(format!(
                "covariance must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let asym = (&m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::Domain(format!(
                "matrix is not Hermitian (asymmetry {asym:e})"
            )));
        }
        Ok(Self(symmetrize(&m)))
    }

    /// Symmetrizes without checking.
    pub(crate) fn from_raw(m: CMatrix) -> Self {
        Self(symmetrize(&m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let v = CVector::from_iterator(d.len(), d.iter().map(|&x| Complex64::new(x, 0.0)));
        Self(CMatrix::from_diagonal(&v))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    /// Real eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Projects onto the PSD cone by clamping negative eigenvalues to zero.
    pub fn project_psd(self) -> Self {
        let eig = SymmetricEigen::new(self.0.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= 0.0 {
            return self;
        }
        let clamped = eig.eigenvalues.map(|v| Complex64::new(v.max(0.0), 0.0));
        let q = &eig.eigenvectors;
        Self::from_raw(q * CMatrix::from_diagonal(&clamped) * q.adjoint())
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        Self(principal_submatrix(&self.0, idx))
    }

    /// Partial order test `self ⪯ other` up to `tol`.
    pub fn loewner_le(&self, other: &HermitianPSD, tol: f64) -> bool {
        let diff = HermitianPSD::from_raw(other.matrix() - self.matrix());
        diff.eigenvalues().first().is_none_or(|&v| v >= -tol)
    }
}

pub(crate) fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn principal_submatrix(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Cholesky factorization that also rejects non-positive pivots, which the
/// complex square root would otherwise accept.
pub(crate) fn cholesky_pd(m: &CMatrix) -> Option<Cholesky<Complex64, Dyn>> {
    let ch = m.clone().cholesky()?;
    let l = ch.l_dirty();
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || !d.re.is_finite() || d.im.abs() > 1e-12 * d.re {
            return None;
        }
    }
    Some(ch)
}

fn smallest_eigenvalue(m: &CMatrix) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `log2 det(m)` for a positive definite matrix, through a Cholesky factor.
pub fn logdet2(m: &HermitianPSD) -> Result<f64> {
    logdet2_raw(m.matrix(), "logdet2")
}

pub(crate) fn logdet2_raw(m: &CMatrix, context: &'static str) -> Result<f64> {
    match cholesky_pd(m) {
        Some(ch) => {
            let l = ch.l_dirty();
            let mut acc = 0.0;
            for i in 0..m.nrows() {
                acc += l[(i, i)].re.ln();
            }
            Ok(2.0 * acc / LN_2)
        }
        None => Err(Error::NotPositiveDefinite { context, eigenvalue: smallest_eigenvalue(m) }),
    }
}

/// Inverse of a positive definite matrix.
pub fn inverse_pd(m: &HermitianPSD) -> Result<CMatrix> {
    inverse_pd_raw(m.matrix(), "inverse_pd")
}

pub(crate) fn inverse_pd_raw(m: &CMatrix, context: &'static str) -> Result<CMatrix> {
    match cholesky_pd(m) {
        Some(ch) => Ok(symmetrize(&ch.inverse())),
        None => Err(Error::NotPositiveDefinite { context, eigenvalue: smallest_eigenvalue(m) }),
    }
}

/// Conditional covariance `Σxx − Σxy Σyy⁻¹ Σxy^H` (Schur complement).
///
/// A block that fails to factor is retried once with a ridge of
/// `RIDGE_SCALE * trace / dim` on its diagonal; see [`ridge_events`].
pub fn conditional_cov(
    sxx: &HermitianPSD,
    sxy: &CMatrix,
    syy: &HermitianPSD,
) -> Result<HermitianPSD> {
    let (nx, ny) = (sxx.dim(), syy.dim());
    if sxy.nrows() != nx || sxy.ncols() != ny {
        return Err(Error::Domain(format!(
            "cross covariance is {}x{}, expected {nx}x{ny}",
            sxy.nrows(),
            sxy.ncols()
        )));
    }
    if ny == 0 {
        return Ok(sxx.clone());
    }
    let chol = match cholesky_pd(syy.matrix()) {
        Some(ch) => ch,
        None => {
            let ridge = RIDGE_SCALE * syy.trace().abs().max(f64::MIN_POSITIVE) / ny as f64;
            let mut shifted = syy.matrix().clone();
            for i in 0..ny {
                shifted[(i, i)] += Complex64::new(ridge, 0.0);
            }
            RIDGE_EVENTS.fetch_add(1, Ordering::Relaxed);
            cholesky_pd(&shifted).ok_or_else(|| Error::NotPositiveDefinite {
                context: "conditional_cov",
                eigenvalue: smallest_eigenvalue(syy.matrix()),
            })?
        }
    };
    // Σyy⁻¹ Σxy^H
    let solved = chol.solve(&sxy.adjoint());
    let out = sxx.matrix() - sxy * solved;
    Ok(HermitianPSD::from_raw(out).project_psd())
}

/// Received-signal covariance at the base stations given the transmitted
/// symbols of the MSs in `excluded`:
/// `Σ_{j∉S} P_j h_j h_j^H + diag(σ²)`, where `h_j` is column `j` of `h`.
pub fn received_cov_ul(
    powers: &[f64],
    h: &CMatrix,
    noise: &[f64],
    excluded: &[usize],
) -> Result<HermitianPSD> {
    if powers.len() != h.ncols() || noise.len() != h.nrows() {
        return Err(Error::Domain(format!(
            "dimension mismatch: {} powers, {} noise variances for a {}x{} channel",
            powers.len(),
            noise.len(),
            h.nrows(),
            h.ncols()
        )));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::Domain(format!("negative transmit power {p}")));
    }
    let n = h.nrows();
    let mut cov = CMatrix::zeros(n, n);
    for (j, &p) in powers.iter().enumerate() {
        if excluded.contains(&j) || p == 0.0 {
            continue;
        }
        let col = h.column(j);
        cov += (col * col.adjoint()) * Complex64::new(p, 0.0);
    }
    for (i, &s) in noise.iter().enumerate() {
        cov[(i, i)] += Complex64::new(s, 0.0);
    }
    Ok(HermitianPSD::from_raw(cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussinfo::testutil::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logdet_identity_and_diag() {
        assert_eq!(logdet2(&HermitianPSD::identity(3)).unwrap(), 0.0);
        let d = HermitianPSD::from_diagonal(&[2.0, 2.0]);
        assert!((logdet2(&d).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigenvalue_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = random_pd(&mut rng, 4);
            let oracle: f64 = m.eigenvalues().iter().map(|v| v.log2()).sum();
            assert!((logdet2(&m).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn logdet_rejects_singular_and_names_eigenvalue() {
        let m = HermitianPSD::from_diagonal(&[1.0, -0.5]);
        match logdet2(&m) {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => {
                assert!((eigenvalue + 0.5).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hermitian_check() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = Complex64::new(0.0, 1.0);
        assert!(HermitianPSD::new(m.clone()).is_err());
        m[(1, 0)] = Complex64::new(0.0, -1.0);
        assert!(HermitianPSD::new(m).is_ok());
    }

    #[test]
    fn conditioning_on_independent_block_is_identity() {
        let sxx = HermitianPSD::from_diagonal(&[1.5, 2.0]);
        let syy = HermitianPSD::from_diagonal(&[3.0]);
        let out = conditional_cov(&sxx, &CMatrix::zeros(2, 1), &syy).unwrap();
        assert!((out.matrix() - sxx.matrix()).norm() < 1e-15);
    }

    #[test]
    fn scalar_conditioning() {
        let rho = 0.6;
        let out = conditional_cov(
            &HermitianPSD::identity(1),
            &CMatrix::from_element(1, 1, Complex64::new(rho, 0.0)),
            &HermitianPSD::identity(1),
        )
        .unwrap();
        assert!((out.matrix()[(0, 0)].re - (1.0 - rho * rho)).abs() < 1e-15);
    }

    #[test]
    fn singular_conditioning_block_uses_ridge() {
        let before = ridge_events();
        let mut syy = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        syy[(1, 1)] = Complex64::new(1.0, 0.0);
        let syy = HermitianPSD::from_raw(syy);
        let sxy = CMatrix::from_element(1, 2, Complex64::new(0.5, 0.0));
        let out = conditional_cov(&HermitianPSD::identity(1), &sxy, &syy).unwrap();
        assert!(ridge_events() > before);
        assert!(out.matrix()[(0, 0)].re.is_finite());
    }

    #[test]
    fn received_cov_scalar_and_full_conditioning() {
        let h = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let c = received_cov_ul(&[1.0], &h, &[1.0], &[]).unwrap();
        assert!((c.matrix()[(0, 0)].re - 2.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_cmatrix(&mut rng, 3, 2);
        let c = received_cov_ul(&[0.7, 1.2], &h, &[0.1, 0.2, 0.3], &[0, 1]).unwrap();
        let d = HermitianPSD::from_diagonal(&[0.1, 0.2, 0.3]);
        assert!((c.matrix() - d.matrix()).norm() < 1e-15);
        assert!(received_cov_ul(&[-1.0, 1.0], &h, &[0.1, 0.2, 0.3], &[]).is_err());
    }

    #[test]
    fn received_cov_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cmatrix(&mut rng, 2, 2);
        let p = [0.4, 1.7];
        let s = [0.3, 0.5];
        let c = received_cov_ul(&p, &h, &s, &[]).unwrap();
        for r in 0..2 {
            for col in 0..2 {
                let mut expect = Complex64::new(0.0, 0.0);
                for j in 0..2 {
                    expect += h[(r, j)] * h[(col, j)].conj() * p[j];
                }
                if r == col {
                    expect += s[r];
                }
                assert!((c.matrix()[(r, col)] - expect).norm() < 1e-14);
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub fn random_complex<R: Rng>(rng: &mut R) -> Complex64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn random_cmatrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMatrix {
        CMatrix::from_fn(r, c, |_, _| random_complex(rng))
    }

    pub fn random_pd<R: Rng>(rng: &mut R, n: usize) -> HermitianPSD {
        let g = random_cmatrix(rng, n, n);
        let mut m = &g * g.adjoint();
        for i in 0..n {
            m[(i, i)] += Complex64::new(0.1, 0.0);
        }
        HermitianPSD::from_raw(m)
    }
}
