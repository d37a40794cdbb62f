mod common;

use common::{ar_family, cell, point_functional, SPHERE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use spi_core::density::random_band_limited;
use spi_core::gladyshev::pc_reconstruct;
use spi_core::harmonics::evaluate_harmonic;
use spi_core::linalg::{c, CMat};
use spi_core::simulator::{
    autocovariance, gaussian_projection_oracle, monte_carlo_mse, render_field, replicate_rng, simulate_field,
    simulate_stationary, SpectralSampler,
};
use spi_core::{
    solve_interpolation_noiseless, DensityFamily, FunctionalSpec, HarmonicIndex, InterpolationOptions,
    SpectralDensity, SphereGrid, C64,
};

struct Moments {
    n: f64,
    sum: C64,
    sum_sq: f64,
}

impl Moments {
    fn new() -> Self {
        Self { n: 0.0, sum: c(0.0, 0.0), sum_sq: 0.0 }
    }

    fn push(&mut self, z: C64) {
        self.n += 1.0;
        self.sum += z;
        self.sum_sq += z.norm_sqr();
    }

    fn mean(&self) -> C64 {
        self.sum / self.n
    }

    fn stderr(&self) -> f64 {
        ((self.sum_sq / self.n - self.mean().norm_sqr()) / self.n).sqrt()
    }
}

#[test]
fn ar_autocovariances_are_reproduced() {
    let f = ar_family();
    let d = f.get(0).unwrap();
    let sampler = SpectralSampler::new(d, 256).unwrap();
    let mut lags: Vec<Moments> = (0..=4).map(|_| Moments::new()).collect();
    for r in 0..10_000 {
        let xi = sampler.draw(5, &mut replicate_rng(17, r)).unwrap();
        for (lag, m) in lags.iter_mut().enumerate() {
            m.push(xi[lag][0] * xi[0][0].conj());
        }
    }
    for (lag, m) in lags.iter().enumerate() {
        let want = autocovariance(d, lag as i64, 256).unwrap()[(0, 0)];
        assert!((m.mean() - want).norm() <= 3.0 * m.stderr(), "lag {lag}: {} vs {want} ± {}", m.mean(), m.stderr());
    }
    assert!((autocovariance(d, 1, 256).unwrap()[(0, 0)].re - 0.5).abs() < 1e-15);
}

#[test]
fn periodic_sequences_are_periodically_correlated() {
    let t = 2;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let d = random_band_limited(t, 1, 1.0, 0.2, &mut rng);
    let sampler = SpectralSampler::new(&d, 256).unwrap();
    let mut diffs: Vec<Moments> = (0..16).map(|_| Moments::new()).collect();
    for r in 0..8_000 {
        let xi = sampler.draw(4 + t, &mut replicate_rng(23, r)).unwrap();
        let zeta: Vec<C64> = xi.iter().enumerate().map(|(j, v)| pc_reconstruct(v, j as i64, t).unwrap()).collect();
        for j in 0..4 {
            for k in 0..4 {
                diffs[4 * j + k].push(zeta[j + t] * zeta[k + t].conj() - zeta[j] * zeta[k].conj());
            }
        }
    }
    for (i, m) in diffs.iter().enumerate() {
        assert!(m.mean().norm() <= 4.0 * m.stderr(), "pair {i}: {} ± {}", m.mean(), m.stderr());
    }
}

#[test]
fn monte_carlo_error_of_the_ar_estimate() {
    let f = ar_family();
    let spec = point_functional(1);
    let sol = solve_interpolation_noiseless(&f, &spec, &InterpolationOptions::default()).unwrap();
    let h = sol.spectral_characteristic_coeffs(64).unwrap();
    let mc = monte_carlo_mse(&f, None, &spec, &h, 10_000, 9, 1024).unwrap();
    assert!((mc.mse - 0.75).abs() <= 3.0 * mc.stderr, "{} ± {}", mc.mse, mc.stderr);
    let again = monte_carlo_mse(&f, None, &spec, &h, 10_000, 9, 1024).unwrap();
    assert_eq!(mc.mse.to_bits(), again.mse.to_bits());

    // Ignoring the observations leaves the full variance 1.25.
    let mut zero = h.clone();
    for lags in zero.harmonics.values_mut() {
        for (_, v) in lags.iter_mut() {
            v.fill(c(0.0, 0.0));
        }
    }
    let blind = monte_carlo_mse(&f, None, &spec, &zero, 10_000, 9, 1024).unwrap();
    assert!((blind.mse - 1.25).abs() <= 3.0 * blind.stderr, "{} ± {}", blind.mse, blind.stderr);
}

#[test]
fn zero_functional_has_zero_empirical_error() {
    let f = ar_family();
    let mut spec = FunctionalSpec::new(1, 0, SPHERE).unwrap();
    spec.set(0, 1, 0, c(0.0, 0.0)).unwrap();
    let sol = solve_interpolation_noiseless(&f, &point_functional(1), &InterpolationOptions::default()).unwrap();
    let mut h = sol.spectral_characteristic_coeffs(8).unwrap();
    for lags in h.harmonics.values_mut() {
        for (_, v) in lags.iter_mut() {
            v.fill(c(0.0, 0.0));
        }
    }
    let mc = monte_carlo_mse(&f, None, &spec, &h, 200, 0, 256).unwrap();
    assert_eq!(mc.mse, 0.0);
}

#[test]
fn identical_seeds_give_identical_realisations() {
    let d = SpectralDensity::identity(2);
    let a = simulate_stationary(&d, 32, 5, 256).unwrap();
    let b = simulate_stationary(&d, 32, 5, 256).unwrap();
    assert_eq!(a, b);
    let other = simulate_stationary(&d, 32, 6, 256).unwrap();
    assert_ne!(a, other);
}

#[test]
fn rendered_field_reproduces_coefficient_functionals() {
    let t = 2;
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let f = DensityFamily::new(
        t,
        [(0, random_band_limited(t, 1, 1.0, 0.2, &mut rng)), (2, random_band_limited(t, 1, 1.0, 0.2, &mut rng))].into(),
    )
    .unwrap();
    let harmonics: Vec<HarmonicIndex> =
        std::iter::once(HarmonicIndex { m: 0, l: 1 }).chain((1..=5).map(|l| HarmonicIndex { m: 2, l })).collect();
    let realization = simulate_field(&f, &harmonics, -2, 6, 31, 256, "test").unwrap();
    let grid = SphereGrid::default_for(3).unwrap();
    let field = render_field(&realization, &grid).unwrap();
    let weights: Vec<(HarmonicIndex, C64)> =
        harmonics.iter().enumerate().map(|(i, idx)| (*idx, c(0.3 * i as f64 - 0.5, 0.1 * i as f64))).collect();
    for (row, j) in field.iter().zip(realization.times()) {
        let mut quadrature = c(0.0, 0.0);
        for ((p, w), z) in grid.points.iter().zip(&grid.weights).zip(row) {
            let a: C64 = weights.iter().map(|(idx, v)| v * evaluate_harmonic(*idx, p).unwrap()).sum();
            quadrature += a * z * *w;
        }
        let i = (j - realization.first_time) as usize;
        let exact: C64 = weights.iter().map(|(idx, v)| v * realization.series[idx][i]).sum();
        assert!((quadrature - exact).norm() < 1e-6 * exact.norm().max(1.0), "{quadrature} vs {exact}");
    }
    // Constant harmonic only: the field is ζ_0^1 / √ω_n everywhere.
    let only = simulate_field(&f, &[HarmonicIndex { m: 0, l: 1 }], 0, 3, 2, 256, "test").unwrap();
    let flat = render_field(&only, &grid).unwrap();
    for (row, z) in flat.iter().zip(&only.series[&HarmonicIndex { m: 0, l: 1 }]) {
        let want = z / (4.0 * std::f64::consts::PI).sqrt();
        assert!(row.iter().all(|v| (v - want).norm() < 1e-12));
    }
}

#[test]
fn white_noise_oracle_ignores_the_window() {
    // Each ζ has variance T under F = I.
    let f = DensityFamily::uniform(SpectralDensity::constant(CMat::identity(2, 2)).unwrap(), [0]).unwrap();
    let mut spec = FunctionalSpec::new(2, 1, SPHERE).unwrap();
    spec.set_sequence(0, 1, &[c(1.0, 0.5), c(-0.3, 0.2)]).unwrap();
    for window in [1, 4, 16] {
        let oracle = gaussian_projection_oracle(&f, None, &spec, window, 256).unwrap();
        assert!((oracle.mse - 2.0 * (1.25 + 0.13)).abs() < 1e-12, "{}", oracle.mse);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn oracle_error_shrinks_with_the_window(period in 1usize..=3, horizon in 0usize..=2, seed in any::<u64>()) {
        let cell = cell(period, horizon, seed);
        let mut last = f64::INFINITY;
        for window in [1, 2, 4, 8, 16] {
            let oracle = gaussian_projection_oracle(&cell.f, Some(&cell.g), &cell.spec, window, 256).unwrap();
            prop_assert!(oracle.mse >= 0.0);
            prop_assert!(oracle.mse <= oracle.variance * (1.0 + 1e-12));
            prop_assert!(oracle.mse <= last * (1.0 + 1e-9), "J = {}: {} > {}", window, oracle.mse, last);
            last = oracle.mse;
        }
    }
}
