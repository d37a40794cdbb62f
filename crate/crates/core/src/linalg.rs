//! Small dense complex linear-algebra helpers shared by the estimation modules.
//!
//! Matrices here are tiny (T×T with T the period, or (N+1)T square block
//! systems), so everything is dense and goes through `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `e^{iθ}`
#[inline]
pub fn cis(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn scaled_identity(dim: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(dim, dim, c(s, 0.0))
}

/// `(M + M*)/2`
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn vec_max_abs(v: &CVec) -> f64 {
    v.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigen-decomposition of the Hermitian part of `m`, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 1 {
        return (vec![m[(0, 0)].re], identity(1));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Applies a scalar function to the spectrum of a Hermitian matrix.
pub fn hermitian_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let n = m.nrows();
    let mut scaled = vectors.clone();
    for j in 0..n {
        let s = f(values[j]);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigen(m).0[0]
}

/// Principal square root of the PSD part (negative eigenvalues clipped to zero).
pub fn psd_sqrt(m: &CMat) -> CMat {
    hermitian_map(m, |x| x.max(0.0).sqrt())
}

/// Projection onto the PSD cone in Frobenius norm.
pub fn psd_part(m: &CMat) -> CMat {
    hermitian_map(m, |x| x.max(0.0))
}

/// Spectral condition number of a Hermitian matrix; infinite when singular or indefinite.
pub fn condition_number(m: &CMat) -> f64 {
    let (values, _) = hermitian_eigen(m);
    let lo = values[0];
    let hi = *values.last().unwrap();
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a Hermitian positive definite matrix, `None` if not numerically PD.
pub fn hpd_inverse(m: &CMat) -> Option<CMat> {
    let n = m.nrows();
    if n == 1 {
        let x = m[(0, 0)].re;
        return (x > 0.0 && x.is_finite()).then(|| CMat::from_element(1, 1, c(1.0 / x, 0.0)));
    }
    let chol = hermitian_part(m).cholesky()?;
    // Complex Cholesky takes square roots of negative pivots without failing.
    let l = chol.l_dirty();
    if !(0..n).all(|i| l[(i, i)].re > 0.0 && l[(i, i)].im.abs() <= 1e-12 * l[(i, i)].re) {
        return None;
    }
    let inv = chol.inverse();
    inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then(|| hermitian_part(&inv))
}

/// Solves `H Λ H = M` for Hermitian PSD `H`, given `Λ` Hermitian PD and `M` PSD:
/// `H = Λ^{-1/2} (Λ^{1/2} M Λ^{1/2})^{1/2} Λ^{-1/2}`.
pub fn riccati_root(lambda: &CMat, m: &CMat) -> Option<CMat> {
    let (values, _) = hermitian_eigen(lambda);
    if !(values[0] > 0.0) {
        return None;
    }
    let half = hermitian_map(lambda, |x| x.sqrt());
    let inv_half = hermitian_map(lambda, |x| 1.0 / x.sqrt());
    let inner = psd_sqrt(&hermitian_part(&(&half * m * &half)));
    Some(hermitian_part(&(&inv_half * inner * &inv_half)))
}

/// Geometric mean `A # B = A^{1/2}(A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}` for PD `A`.
pub fn geometric_mean(a: &CMat, b: &CMat) -> Option<CMat> {
    let (values, _) = hermitian_eigen(a);
    if !(values[0] > 0.0) {
        return None;
    }
    let half = hermitian_map(a, |x| x.sqrt());
    let inv_half = hermitian_map(a, |x| 1.0 / x.sqrt());
    let inner = psd_sqrt(&hermitian_part(&(&inv_half * b * &inv_half)));
    Some(hermitian_part(&(&half * inner * &half)))
}

/// `Tr(Bᵀ M)`, the entrywise pairing `Σ_ij B_ij M_ij`; real for Hermitian arguments.
pub fn entry_pairing(b: &CMat, m: &CMat) -> f64 {
    b.iter().zip(m.iter()).map(|(x, y)| x * y).sum::<C64>().re
}

pub fn trace_re(m: &CMat) -> f64 {
    m.trace().re
}

/// Bilinear pairing `xᵀ y` (no conjugation).
pub fn bilinear(x: &CVec, y: &CVec) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// Quadratic form `xᵀ M conj(x)` for a row vector `x`; real when `M` is Hermitian.
pub fn row_quadratic(x: &CVec, m: &CMat) -> f64 {
    let xc = x.map(|z| z.conj());
    bilinear(x, &(m * xc)).re
}

/// Outer product `conj(x) xᵀ`, i.e. `(xᵀ)* (xᵀ)` for a row vector `x`.
pub fn row_outer(x: &CVec) -> CMat {
    x.map(|z| z.conj()) * x.transpose()
}
