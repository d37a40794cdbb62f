//! Gladyshev correspondence between a periodically correlated scalar sequence
//! and its `T`-variate stationary generating sequence.
//!
//! Two `T`-variate stationary sequences describe the same process: the
//! generating sequence `ξ⃗` with `ζ(j) = Σ_k e^{2πijk/T} ξ_k(j)` and the blocked
//! sequence `ζ⃗(j) = (ζ(jT), …, ζ(jT+T-1))`. Their densities are related by
//! `F^ζ(λ) = T V(λ) F^ξ(λ/T) V(λ)^{-1}`.

use std::f64::consts::PI;

use crate::density::{SpectralDensity, TrigPoly};
use crate::error::{Result, SpiError};
use crate::grid::{check_grid_size, MatrixGrid};
use crate::linalg::{c, cis, hermitian_part, CMat, CVec, C64};

fn check_period(period: usize) -> Result<()> {
    if period == 0 {
        return Err(SpiError::Input("period T must be >= 1".into()));
    }
    Ok(())
}

/// `W_kj = e^{2πikj/T} / √T`.
fn fourier_matrix(period: usize) -> CMat {
    let t = period as f64;
    CMat::from_fn(period, period, |k, j| cis(2.0 * PI * (k * j) as f64 / t) / t.sqrt())
}

/// `diag(e^{ikμ})`.
fn phase_diag(period: usize, mu: f64) -> CMat {
    CMat::from_diagonal(&CVec::from_fn(period, |k, _| cis(k as f64 * mu)))
}

/// The unitary matrix `v_kj = e^{2πikj/T + ikλ/T} / √T`.
pub fn build_v(period: usize, lambda: f64) -> Result<CMat> {
    check_period(period)?;
    Ok(phase_diag(period, lambda / period as f64) * fourier_matrix(period))
}

/// Lifts scalar weights `a(j)`, `j = 0..N`, to `a_k(j) = a(j) e^{2πikj/T}`.
pub fn lift_weights(a: &[C64], period: usize) -> Result<Vec<CVec>> {
    check_period(period)?;
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SpiError::Input("weights must be finite".into()));
    }
    Ok(a.iter().enumerate().map(|(j, &v)| lift_at(v, j as i64, period)).collect())
}

/// Lifted vector for one weight at absolute time `j`.
pub fn lift_at(value: C64, j: i64, period: usize) -> CVec {
    let t = period as i64;
    CVec::from_fn(period, |k, _| value * modulation(j, k as i64, t))
}

/// `e^{2πijk/T}` with the exponent reduced mod `T` for exactness at large `j`.
fn modulation(j: i64, k: i64, t: i64) -> C64 {
    cis(2.0 * PI * (j * k).rem_euclid(t) as f64 / t as f64)
}

/// `ζ(j) = Σ_k e^{2πijk/T} ξ_k(j)`.
pub fn pc_reconstruct(xi: &CVec, j: i64, period: usize) -> Result<C64> {
    check_period(period)?;
    if xi.len() != period {
        return Err(SpiError::DimensionMismatch(format!("expected {period} components, got {}", xi.len())));
    }
    let t = period as i64;
    Ok(xi.iter().enumerate().map(|(k, x)| x * modulation(j, k as i64, t)).sum())
}

/// Reconstructs a run of consecutive values starting at time `j0`.
pub fn pc_reconstruct_series(xi: &[CVec], j0: i64, period: usize) -> Result<Vec<C64>> {
    xi.iter().enumerate().map(|(i, v)| pc_reconstruct(v, j0 + i as i64, period)).collect()
}

/// Generating-sequence density → blocked density, sampled on `size` points.
///
/// Values of `F^ξ` at `λ/T` come from exact evaluation for trigonometric
/// polynomials, direct lookup when `λ/T` is a grid point of a grid density
/// (e.g. a `T·size` grid), and trigonometric interpolation otherwise.
pub fn generating_to_blocked(f_xi: &SpectralDensity, period: usize, size: usize) -> Result<SpectralDensity> {
    check_period(period)?;
    check_grid_size(size)?;
    if f_xi.dim() != period {
        return Err(SpiError::DimensionMismatch(format!("density is {0}x{0}, period is {period}", f_xi.dim())));
    }
    if period == 1 {
        return Ok(SpectralDensity::Grid(f_xi.sample(size)?));
    }
    let t = period as f64;
    let grid = MatrixGrid::from_fn(size, |l| {
        let v = build_v(period, l).expect("period checked");
        hermitian_part(&(&v * f_xi.eval(l / t) * v.adjoint() * c(t, 0.0)))
    })?;
    Ok(SpectralDensity::Grid(grid))
}

/// Blocked density → generating-sequence density.
///
/// A trigonometric-polynomial input gives an exact trigonometric polynomial.
/// A grid input is sampled on `size` points (use `T` times the input size to
/// keep every point an exact lookup).
pub fn blocked_to_generating(f_zeta: &SpectralDensity, period: usize, size: usize) -> Result<SpectralDensity> {
    check_period(period)?;
    if f_zeta.dim() != period {
        return Err(SpiError::DimensionMismatch(format!("density is {0}x{0}, period is {period}", f_zeta.dim())));
    }
    if period == 1 {
        return Ok(f_zeta.clone());
    }
    let t = period as f64;
    let w = fourier_matrix(period);
    match f_zeta {
        SpectralDensity::TrigPoly(p) => {
            // Entry (p,q) of E(μ)* F^ζ(Tμ) E(μ) carries frequency Td + q - p.
            let k = p.degree() as i64;
            let ti = period as i64;
            let top = (ti * k + ti - 1) as usize;
            let mut y = vec![CMat::zeros(period, period); top + 1];
            for d in -k..=k {
                let z = p.coefficient(d);
                for a in 0..period {
                    for b in 0..period {
                        let f = ti * d + b as i64 - a as i64;
                        if f >= 0 {
                            y[f as usize][(a, b)] += z[(a, b)];
                        }
                    }
                }
            }
            let coefs = y.iter().map(|m| w.adjoint() * m * &w / c(t, 0.0)).collect();
            Ok(SpectralDensity::TrigPoly(TrigPoly::new(coefs)?))
        }
        SpectralDensity::Grid(g) => {
            check_grid_size(size)?;
            let grid = MatrixGrid::from_fn(size, |mu| {
                let v = phase_diag(period, mu) * &w;
                hermitian_part(&(v.adjoint() * g.eval(t * mu) * &v / c(t, 0.0)))
            })?;
            Ok(SpectralDensity::Grid(grid))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::random_band_limited;
    use crate::grid::grid_points;
    use crate::linalg::{identity, max_abs, min_eigenvalue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn v_examples_and_unitarity() {
        assert!(max_abs(&(build_v(1, 0.4).unwrap() - identity(1))) < 1e-15);
        let s = 1.0 / 2f64.sqrt();
        let expected = CMat::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]);
        assert!(max_abs(&(build_v(2, 0.0).unwrap() - expected)) < 1e-15);
        for t in 1..=8 {
            for l in grid_points(64) {
                let v = build_v(t, l).unwrap();
                assert!(max_abs(&(&v * v.adjoint() - identity(t))) < 1e-12);
            }
        }
        let v = build_v(3, 0.7).unwrap();
        assert!(max_abs(&(&v * v.adjoint() - identity(3))) < 1e-13);
        assert!(build_v(0, 0.0).is_err());
    }

    #[test]
    fn v_entries_follow_the_formula() {
        let (t, l) = (3usize, 0.7f64);
        let v = build_v(t, l).unwrap();
        for k in 0..t {
            for j in 0..t {
                let e = cis(2.0 * PI * (k * j) as f64 / t as f64 + k as f64 * l / t as f64) / (t as f64).sqrt();
                assert!((v[(k, j)] - e).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn lifting_and_reconstruction() {
        let a = [c(1.0, 0.0), c(1.0, 0.0)];
        let lifted = lift_weights(&a, 2).unwrap();
        assert!((lifted[1][0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((lifted[1][1] - c(-1.0, 0.0)).norm() < 1e-15);
        let lifted = lift_weights(&[c(2.0, 1.0)], 4).unwrap();
        assert!(lifted[0].iter().all(|z| (z - c(2.0, 1.0)).norm() < 1e-15));
        for j in 0..5 {
            let norm = lift_weights(&[c(0.3, -0.4); 5], 3).unwrap()[j].norm();
            assert!((norm - 3f64.sqrt() * 0.5).abs() < 1e-14);
        }
        let z = pc_reconstruct(&CVec::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]), 1, 2).unwrap();
        assert!(z.norm() < 1e-15);
        let delta = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        for j in -4..4 {
            assert_eq!(pc_reconstruct(&delta, j, 3).unwrap(), c(1.0, 0.0));
        }
    }

    #[test]
    fn lifted_functional_equals_scalar_functional() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        use rand::Rng;
        for t in 1..=4 {
            let a: Vec<C64> = (0..5).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let xi: Vec<CVec> =
                (0..5).map(|_| CVec::from_fn(t, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>()))).collect();
            let zeta = pc_reconstruct_series(&xi, 0, t).unwrap();
            let lifted = lift_weights(&a, t).unwrap();
            let scalar: C64 = a.iter().zip(&zeta).map(|(x, y)| x * y).sum();
            let vector: C64 = lifted.iter().zip(&xi).map(|(x, y)| crate::linalg::bilinear(x, y)).sum();
            assert!((scalar - vector).norm() < 1e-13);
        }
    }

    #[test]
    fn identity_density_maps_to_scaled_identity() {
        let b = generating_to_blocked(&SpectralDensity::identity(2), 2, 64).unwrap();
        for l in grid_points(64) {
            assert!(max_abs(&(b.eval(l) - identity(2) * c(2.0, 0.0))) < 1e-13);
        }
    }

    #[test]
    fn period_one_is_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let d = random_band_limited(1, 2, 1.0, 0.1, &mut rng);
        let b = generating_to_blocked(&d, 1, 64).unwrap();
        let g = blocked_to_generating(&d, 1, 64).unwrap();
        for l in grid_points(64) {
            assert!(max_abs(&(b.eval(l) - d.eval(l))) < 1e-14);
            assert!(max_abs(&(g.eval(l) - d.eval(l))) < 1e-14);
        }
    }

    #[test]
    fn round_trips_are_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for t in 2..=4 {
            let blocked = random_band_limited(t, 2, 1.0, 0.05, &mut rng);
            // trigonometric-polynomial path
            let gen = blocked_to_generating(&blocked, t, 128).unwrap();
            assert!(matches!(gen, SpectralDensity::TrigPoly(_)));
            let back = generating_to_blocked(&gen, t, 64).unwrap();
            for l in grid_points(64) {
                assert!(max_abs(&(back.eval(l) - blocked.eval(l))) < 1e-10);
            }
            // grid path with index arithmetic
            let blocked_grid = SpectralDensity::Grid(blocked.sample(64).unwrap());
            let gen = blocked_to_generating(&blocked_grid, t, 64 * t).unwrap();
            let back = generating_to_blocked(&gen, t, 64).unwrap();
            for l in grid_points(64) {
                assert!(max_abs(&(back.eval(l) - blocked.eval(l))) < 1e-10);
            }
        }
    }

    #[test]
    fn conversions_preserve_psd() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for i in 0..100 {
            let t = 2 + i % 3;
            let d = random_band_limited(t, 1 + i % 3, 1.0, 0.0, &mut rng);
            let b = generating_to_blocked(&d, t, 32).unwrap();
            let g = blocked_to_generating(&d, t, 32).unwrap();
            for l in grid_points(32) {
                assert!(min_eigenvalue(&b.eval(l)) >= -1e-10);
                assert!(min_eigenvalue(&g.eval(l)) >= -1e-10);
            }
        }
    }
}
