//! Small dense complex linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on dynamically sized matrices; the channel models
//! never know N, M or K at compile time.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Compensated (Kahan–Babuška/Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator of reals.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// One draw of CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| complex_normal(rng))
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// `Re(xᴴ A x)`; for Hermitian `A` the imaginary part vanishes.
pub fn quadratic_form(x: &CVector, a: &CMatrix) -> f64 {
    let ax = a * x;
    x.dotc(&ax).re
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diagonal().iter().copied().sum()
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.nrows();
    (0..n).all(|i| (0..n).all(|j| (a[(i, j)] - a[(j, i)].conj()).norm() <= tol))
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn hermitian_eigen_range(a: &CMatrix) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = a.clone().symmetric_eigenvalues();
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Hermitian square root `L` with `L Lᴴ = A`, via eigendecomposition.
///
/// Negative eigenvalues are clamped to zero. A warning is logged when the
/// clamped mass exceeds `1e-9·tr(A)`; anything below `-1e-6·tr(A)` is an error.
pub fn hermitian_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let scale = trace(a).re.abs().max(f64::MIN_POSITIVE);
    let eig = a.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-6 * scale {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    if min < -1e-9 * scale {
        log::warn!("clamping eigenvalue {min:e} of a nearly semidefinite matrix (trace {scale:e})");
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*r);
    }
    Ok(&scaled * u.adjoint())
}

/// Solves `A X = B` for Hermitian positive definite `A` (Cholesky).
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solve("matrix is not Hermitian positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn hermitian_inverse(a: &CMatrix) -> Result<CMatrix> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solve("matrix is not Hermitian positive definite".into()))?;
    Ok(chol.inverse())
}

/// Kronecker product, written out so the block structure is explicit.
pub fn kronecker(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}
