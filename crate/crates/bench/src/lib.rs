//! Inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use spi_core::density::random_band_limited;
use spi_core::linalg::c;
use spi_core::{DensityFamily, FunctionalSpec};

/// Signal and noise on degree 1 of S², with a gap of `horizon + 1` steps.
pub fn problem(period: usize, horizon: usize) -> (DensityFamily, DensityFamily, FunctionalSpec) {
    let mut rng = ChaCha20Rng::seed_from_u64(period as u64 * 31 + horizon as u64);
    let f = DensityFamily::uniform(random_band_limited(period, 2, 1.0, 0.3, &mut rng), [1]).unwrap();
    let g = DensityFamily::uniform(random_band_limited(period, 1, 0.3, 0.1, &mut rng), [1]).unwrap();
    let mut spec = FunctionalSpec::new(period, horizon, 3).unwrap();
    for l in 1..=3 {
        let weights: Vec<_> = (0..=horizon).map(|j| c(1.0 / (1 + j + l) as f64, 0.1 * l as f64)).collect();
        spec.set_sequence(1, l, &weights).unwrap();
    }
    (f, g, spec)
}
