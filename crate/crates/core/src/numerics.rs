//! Small dense complex Hermitian matrix primitives.
//!
//! Everything here works on M×M matrices with M at most a few tens; the
//! per-AP blocks in the detector are 1×1 to 8×8. Determinant ratios are
//! always formed as differences of log-determinants obtained from a
//! Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Absolute tolerance used when checking Hermitian symmetry, scaled by the
/// largest entry for matrices with entries above one.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A square complex matrix that equals its own conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Wraps `m` after checking that it is square and Hermitian.
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        for i in 0..n {
            for j in i..n {
                if (m[(i, j)] - m[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::Dimension(format!(
                        "matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary square matrix onto the Hermitian matrices via (A + Aᴴ)/2.
    pub fn symmetrized(m: CMatrix) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let adj = m.adjoint();
        Self((m + adj) * C64::new(0.5, 0.0))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        Self(CMatrix::from_diagonal_element(dim, dim, C64::new(c, 0.0)))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = CVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Self(CMatrix::from_diagonal(&d))
    }

    /// Block-diagonal matrix assembled from the given blocks, in order.
    pub fn block_diagonal(blocks: &[HermitianMatrix]) -> Self {
        let dim: usize = blocks.iter().map(|b| b.dim()).sum();
        let mut m = CMatrix::zeros(dim, dim);
        let mut offset = 0;
        for b in blocks {
            let d = b.dim();
            m.view_mut((offset, offset), (d, d)).copy_from(&b.0);
            offset += d;
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.0[(i, j)] == C64::new(0.0, 0.0)))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * C64::new(c, 0.0))
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    /// Square diagonal block starting at `offset`.
    pub fn block(&self, offset: usize, size: usize) -> Self {
        Self(self.0.view((offset, offset), (size, size)).into_owned())
    }

    /// Real eigenvalues and unitary eigenvectors.
    pub fn eigen(&self) -> (Vec<f64>, CMatrix) {
        let eig = SymmetricEigen::new(self.0.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }

    /// Clamps every eigenvalue from below at `floor`.
    pub fn floor_eigenvalues(&self, floor: f64) -> Self {
        let (vals, vecs) = self.eigen();
        if vals.iter().all(|&v| v >= floor) {
            return self.clone();
        }
        let d = CVector::from_iterator(vals.len(), vals.iter().map(|&v| C64::new(v.max(floor), 0.0)));
        let m = &vecs * CMatrix::from_diagonal(&d) * vecs.adjoint();
        Self::symmetrized(m)
    }

    pub fn factor(&self, context: &'static str) -> Result<PdFactor> {
        PdFactor::new(self, context)
    }

    /// A⁻¹ for positive-definite A.
    pub fn inverse(&self) -> Result<Self> {
        Ok(self.factor("hermitian_inverse")?.inverse())
    }

    /// ln|A| for positive-definite A.
    pub fn logdet(&self) -> Result<f64> {
        Ok(self.factor("logdet")?.logdet())
    }
}

/// Cholesky factor of a positive-definite Hermitian matrix, kept so that the
/// inverse and log-determinant share one factorization.
#[derive(Debug, Clone)]
pub struct PdFactor {
    chol: Cholesky<C64, Dyn>,
}

impl PdFactor {
    pub fn new(a: &HermitianMatrix, context: &'static str) -> Result<Self> {
        let chol = Cholesky::new(a.0.clone()).ok_or(Error::NotPositiveDefinite { context })?;
        let l = chol.l_dirty();
        for i in 0..a.dim() {
            // Complex Cholesky takes sqrt of a negative pivot as ≈ 0 + i·√|d|.
            let d = l[(i, i)];
            if !(d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-8 * d.re) {
                return Err(Error::NotPositiveDefinite { context });
            }
        }
        Ok(Self { chol })
    }

    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> HermitianMatrix {
        HermitianMatrix::symmetrized(self.chol.inverse())
    }

    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        self.chol.solve(b)
    }

    /// Lower-triangular factor L with A = L·Lᴴ.
    pub fn lower(&self) -> CMatrix {
        self.chol.l()
    }
}

/// One CN(0, 1) draw: independent real and imaginary parts of variance 1/2.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Square-root factor S with S·Sᴴ = R for a positive-semidefinite R, used to
/// draw CN(0, R) vectors.
#[derive(Debug, Clone)]
pub enum CovarianceFactor {
    /// R is diagonal; holds the per-component standard deviations.
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

impl CovarianceFactor {
    pub fn new(r: &HermitianMatrix) -> Self {
        if r.is_diagonal() {
            let sd = (0..r.dim()).map(|i| r.0[(i, i)].re.max(0.0).sqrt()).collect();
            return CovarianceFactor::Diagonal(sd);
        }
        // Eigen-based square root tolerates rank deficiency.
        let (vals, vecs) = r.eigen();
        let d = CVector::from_iterator(vals.len(), vals.iter().map(|&v| C64::new(v.max(0.0).sqrt(), 0.0)));
        CovarianceFactor::Dense(vecs * CMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceFactor::Diagonal(sd) => sd.len(),
            CovarianceFactor::Dense(s) => s.nrows(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        match self {
            CovarianceFactor::Diagonal(sd) => {
                CVector::from_iterator(sd.len(), sd.iter().map(|&s| complex_normal(rng) * s))
            }
            CovarianceFactor::Dense(s) => {
                let w = CVector::from_iterator(s.ncols(), (0..s.ncols()).map(|_| complex_normal(rng)));
                s * w
            }
        }
    }

    /// Writes S·w into `out` for a caller-supplied white vector `w`.
    pub fn apply(&self, w: &[C64], out: &mut [C64]) {
        match self {
            CovarianceFactor::Diagonal(sd) => {
                for ((o, &s), &x) in out.iter_mut().zip(sd).zip(w) {
                    *o = x * s;
                }
            }
            CovarianceFactor::Dense(s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..s.ncols()).map(|j| s[(i, j)] * w[j]).sum();
                }
            }
        }
    }
}

/// Draws one circularly-symmetric complex Gaussian vector with covariance `r`.
pub fn sample_gaussian<R: Rng + ?Sized>(r: &HermitianMatrix, rng: &mut R) -> CVector {
    CovarianceFactor::new(r).sample(rng)
}

/// Exponentially correlated block, `beta · r^|i-j| · exp(j·theta·(i-j))`.
pub fn exponential_correlation(dim: usize, beta: f64, r: f64, theta: f64) -> HermitianMatrix {
    let m = CMatrix::from_fn(dim, dim, |i, j| {
        let d = i as f64 - j as f64;
        C64::from_polar(beta * r.powf(d.abs()), theta * d)
    });
    HermitianMatrix::symmetrized(m)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pd(dim: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix {
        let a = CMatrix::from_fn(dim, dim, |_, _| complex_normal(rng));
        let m = &a * a.adjoint() + CMatrix::identity(dim, dim) * C64::new(0.5, 0.0);
        HermitianMatrix::symmetrized(m)
    }

    // Jacobi eigenvalue sweep on the real 2n×2n embedding [[Re, -Im], [Im, Re]];
    // each eigenvalue of the Hermitian matrix appears twice.
    fn jacobi_eigenvalues(h: &HermitianMatrix) -> Vec<f64> {
        let n = h.dim();
        let mut a = vec![vec![0.0; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                let z = h.as_matrix()[(i, j)];
                a[i][j] = z.re;
                a[i + n][j + n] = z.re;
                a[i][j + n] = -z.im;
                a[i + n][j] = z.im;
            }
        }
        let m = 2 * n;
        for _ in 0..100 {
            let off: f64 = (0..m)
                .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[i][j] * a[i][j])
                .sum();
            if off < 1e-28 {
                break;
            }
            for p in 0..m {
                for q in (p + 1)..m {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..m {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..m {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..m).map(|i| a[i][i]).collect()
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        let id = HermitianMatrix::identity(3);
        assert!(max_abs_diff(id.inverse().unwrap().as_matrix(), id.as_matrix()) < 1e-15);
        let d = HermitianMatrix::from_real_diagonal(&[2.0, 4.0]);
        let inv = d.inverse().unwrap();
        let want = HermitianMatrix::from_real_diagonal(&[0.5, 0.25]);
        assert!(max_abs_diff(inv.as_matrix(), want.as_matrix()) < 1e-15);
    }

    #[test]
    fn inverse_multiplies_back_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_pd(4, &mut rng);
            let inv = a.inverse().unwrap();
            let prod = a.as_matrix() * inv.as_matrix();
            assert!(max_abs_diff(&prod, &CMatrix::identity(4, 4)) < 1e-10);
        }
    }

    #[test]
    fn non_pd_input_is_rejected() {
        let a = HermitianMatrix::from_real_diagonal(&[1.0, -1.0]);
        assert!(matches!(a.inverse(), Err(Error::NotPositiveDefinite { .. })));
        assert!(HermitianMatrix::zeros(2).logdet().is_err());
    }

    #[test]
    fn logdet_trivial_cases() {
        assert_eq!(HermitianMatrix::identity(5).logdet().unwrap(), 0.0);
        let e = std::f64::consts::E;
        let d = HermitianMatrix::from_real_diagonal(&[e, e]);
        assert!((d.logdet().unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn logdet_matches_jacobi_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random_pd(3, &mut rng);
            let eig = jacobi_eigenvalues(&a);
            assert_eq!(eig.len(), 6);
            let oracle = 0.5 * eig.iter().map(|v| v.ln()).sum::<f64>();
            assert!((a.logdet().unwrap() - oracle).abs() < 1e-9, "{} vs {oracle}", a.logdet().unwrap());
        }
    }

    #[test]
    fn hermitian_check_rejects_asymmetric() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = C64::new(1.0, 1.0);
        m[(1, 0)] = C64::new(1.0, 1.0);
        assert!(HermitianMatrix::new(m.clone()).is_err());
        m[(1, 0)] = C64::new(1.0, -1.0);
        assert!(HermitianMatrix::new(m).is_ok());
    }

    #[test]
    fn zero_covariance_samples_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = HermitianMatrix::zeros(3);
        for _ in 0..10 {
            assert!(sample_gaussian(&z, &mut rng).iter().all(|x| *x == C64::new(0.0, 0.0)));
        }
        // a non-diagonal rank-deficient matrix goes through the eigen path
        let ones = HermitianMatrix::symmetrized(CMatrix::from_element(2, 2, C64::new(1.0, 0.0)));
        let v = sample_gaussian(&ones, &mut rng);
        assert!((v[0] - v[1]).norm() < 1e-12);
    }

    fn empirical_covariance(r: &HermitianMatrix, draws: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = CovarianceFactor::new(r);
        let mut acc = CMatrix::zeros(r.dim(), r.dim());
        for _ in 0..draws {
            let v = f.sample(&mut rng);
            acc += &v * v.adjoint();
        }
        acc / C64::new(draws as f64, 0.0)
    }

    #[test]
    fn identity_covariance_is_reproduced() {
        let r = HermitianMatrix::identity(3);
        let c = empirical_covariance(&r, 100_000, 3);
        let err = (c - r.as_matrix()).norm() / r.frobenius();
        assert!(err < 0.03, "relative Frobenius error {err}");
    }

    #[test]
    fn diagonal_variances_and_circular_symmetry() {
        let r = HermitianMatrix::from_real_diagonal(&[4.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut re2 = [0.0; 2];
        let mut im2 = [0.0; 2];
        let mut reim = [0.0; 2];
        for _ in 0..n {
            let v = sample_gaussian(&r, &mut rng);
            for i in 0..2 {
                re2[i] += v[i].re * v[i].re;
                im2[i] += v[i].im * v[i].im;
                reim[i] += v[i].re * v[i].im;
            }
        }
        for (i, want) in [4.0, 1.0].iter().enumerate() {
            let (vr, vi) = (re2[i] / n as f64, im2[i] / n as f64);
            assert!(((vr + vi) / want - 1.0).abs() < 0.03);
            assert!((vr / (want / 2.0) - 1.0).abs() < 0.03);
            assert!((vi / (want / 2.0) - 1.0).abs() < 0.03);
            assert!((reim[i] / n as f64).abs() < 0.02 * want);
        }
    }

    #[test]
    fn correlated_covariance_is_reproduced() {
        let r = exponential_correlation(3, 2.0, 0.5, 0.7);
        let c = empirical_covariance(&r, 100_000, 9);
        let err = (c - r.as_matrix()).norm() / r.frobenius();
        assert!(err < 0.03, "relative Frobenius error {err}");
        assert!((r.trace() / 3.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_floor_restores_definiteness() {
        let a = HermitianMatrix::from_real_diagonal(&[1.0, -1e-3]);
        let f = a.floor_eigenvalues(1e-12);
        assert!(f.logdet().is_ok());
    }

    proptest! {
        #[test]
        fn inverse_is_an_involution(seed in 0u64..10_000, dim in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(dim, &mut rng);
            let back = a.inverse().unwrap().inverse().unwrap();
            let rel = (back.as_matrix() - a.as_matrix()).norm() / a.frobenius();
            prop_assert!(rel < 1e-8);
        }

        #[test]
        fn logdet_of_inverse_negates(seed in 0u64..10_000, dim in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(dim, &mut rng);
            let s = a.logdet().unwrap() + a.inverse().unwrap().logdet().unwrap();
            prop_assert!(s.abs() < 1e-8);
        }
    }
}
