#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use spi_core::density::random_band_limited;
use spi_core::harmonics::harmonic_dimension;
use spi_core::linalg::{c, CMat};
use spi_core::{DensityFamily, FunctionalSpec, SpectralDensity};

pub const SPHERE: usize = 3;

pub fn scalar(x: f64) -> CMat {
    CMat::from_element(1, 1, c(x, 0.0))
}

/// `f(λ) = 1.25 + cos λ` on degree 0.
pub fn ar_family() -> DensityFamily {
    DensityFamily::uniform(SpectralDensity::trig_poly(vec![scalar(1.25), scalar(0.5)]).unwrap(), [0]).unwrap()
}

/// `A = ζ_0^1(0)`.
pub fn point_functional(period: usize) -> FunctionalSpec {
    let mut spec = FunctionalSpec::new(period, 0, SPHERE).unwrap();
    spec.set(0, 1, 0, c(1.0, 0.0)).unwrap();
    spec
}

pub fn random_spec(rng: &mut impl Rng, period: usize, horizon: usize, degrees: &[usize]) -> FunctionalSpec {
    let mut spec = FunctionalSpec::new(period, horizon, SPHERE).unwrap();
    for &m in degrees {
        for l in 1..=harmonic_dimension(m, SPHERE).unwrap().min(2) {
            for j in 0..=horizon {
                spec.set(m, l, j, c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).unwrap();
            }
        }
    }
    spec
}

/// One cell of the test matrix: band-limited signal and noise on degrees 0 and 1.
pub struct Cell {
    pub period: usize,
    pub horizon: usize,
    pub f: DensityFamily,
    pub g: DensityFamily,
    pub spec: FunctionalSpec,
}

pub fn cell(period: usize, horizon: usize, seed: u64) -> Cell {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let f = DensityFamily::new(
        period,
        [(0, random_band_limited(period, 2, 1.0, 0.3, &mut rng)), (1, random_band_limited(period, 2, 1.0, 0.3, &mut rng))]
            .into(),
    )
    .unwrap();
    let g = DensityFamily::uniform(random_band_limited(period, 1, 0.3, 0.1, &mut rng), [0, 1]).unwrap();
    let spec = random_spec(&mut rng, period, horizon, &[0, 1]);
    Cell { period, horizon, f, g, spec }
}
