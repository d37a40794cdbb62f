mod common;

use std::f64::consts::PI;

use common::scalar;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use spi_core::density::random_band_limited;
use spi_core::gladyshev::{blocked_to_generating, build_v, generating_to_blocked, lift_weights, pc_reconstruct};
use spi_core::harmonics::{addition_kernel, evaluate_harmonic, harmonic_dimension};
use spi_core::linalg::{c, max_abs, CMat, CVec};
use spi_core::{check_minimality, DensityFamily, HarmonicIndex, MinimalityOptions, SpectralDensity, SphereGeometry};

fn unit_vector(raw: &[f64]) -> Option<Vec<f64>> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 1e-3).then(|| raw.iter().map(|v| v / norm).collect())
}

#[test]
fn minimality_under_grid_refinement() {
    let opts = MinimalityOptions::default();
    let unit_root = DensityFamily::uniform(SpectralDensity::trig_poly(vec![scalar(2.0), scalar(-1.0)]).unwrap(), [0]).unwrap();
    let ar = DensityFamily::uniform(SpectralDensity::trig_poly(vec![scalar(1.25), scalar(0.5)]).unwrap(), [0]).unwrap();
    for size in [256, 1024, 4096] {
        let bad = check_minimality(&unit_root, size, &opts).unwrap();
        assert_eq!(bad.failing(), vec![0], "grid {size}");
        assert!(bad.degrees[0].reason.is_some());
        let good = check_minimality(&ar, size, &opts).unwrap();
        assert_eq!(good.passing(), vec![0], "grid {size}");
        assert!((good.degrees[0].trace_integral - 2.0 * PI * 4.0 / 3.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn mixing_matrix_is_unitary(period in 1usize..=6, lambda in -PI..PI) {
        let v = build_v(period, lambda).unwrap();
        let defect = max_abs(&(&v * v.adjoint() - CMat::identity(period, period)));
        prop_assert!(defect < 1e-12, "{}", defect);
    }

    #[test]
    fn lifted_weights_reproduce_the_scalar_functional(
        period in 1usize..=4,
        raw in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6),
        seed in any::<u64>(),
    ) {
        let a: Vec<_> = raw.iter().map(|&(re, im)| c(re, im)).collect();
        let lifted = lift_weights(&a, period).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let xi: Vec<CVec> = (0..a.len())
            .map(|_| CVec::from_fn(period, |_, _| c(rand::Rng::random::<f64>(&mut rng), rand::Rng::random::<f64>(&mut rng))))
            .collect();
        // Σ_j a(j) ζ(j) with ζ(j) reconstructed from ξ⃗(j) equals Σ_j ⟨a⃗(j), ξ⃗(j)⟩.
        let direct: spi_core::C64 = a.iter().zip(&xi).enumerate()
            .map(|(j, (aj, x))| aj * pc_reconstruct(x, j as i64, period).unwrap()).sum();
        let lifted_value: spi_core::C64 = lifted.iter().zip(&xi).map(|(l, x)| l.transpose() * x).map(|m| m[(0, 0)]).sum();
        prop_assert!((direct - lifted_value).norm() < 1e-12 * (1.0 + direct.norm()));
    }

    #[test]
    fn density_conversion_round_trip(period in 2usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let blocked = random_band_limited(period, 2, 1.0, 0.1, &mut rng);
        let generating = blocked_to_generating(&blocked, period, 128).unwrap();
        let back = generating_to_blocked(&generating, period, 64).unwrap();
        let worst = |a: &SpectralDensity, b: &SpectralDensity, size: usize| {
            let (a, b) = (a.sample(size).unwrap(), b.sample(size).unwrap());
            a.values().iter().zip(b.values()).map(|(x, y)| max_abs(&(x - y))).fold(0.0, f64::max)
        };
        prop_assert!(worst(&blocked, &back, 64) < 1e-10);
        // Grid path: a T-times finer generating grid keeps every lookup exact.
        let grid = SpectralDensity::Grid(blocked.sample(64).unwrap());
        let fine = blocked_to_generating(&grid, period, 64 * period).unwrap();
        let again = generating_to_blocked(&fine, period, 64).unwrap();
        prop_assert!(worst(&blocked, &again, 64) < 1e-10);
    }

    #[test]
    fn addition_theorem_on_the_sphere(m in 0usize..=6, x in prop::collection::vec(-1.0f64..1.0, 3), y in prop::collection::vec(-1.0f64..1.0, 3)) {
        let (Some(x), Some(y)) = (unit_vector(&x), unit_vector(&y)) else { return Ok(()) };
        let sum: f64 = (1..=harmonic_dimension(m, 3).unwrap())
            .map(|l| {
                let idx = HarmonicIndex { m, l };
                evaluate_harmonic(idx, &x).unwrap() * evaluate_harmonic(idx, &y).unwrap()
            })
            .sum();
        let cos = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        let kernel = addition_kernel(m, &SphereGeometry::new(3).unwrap(), cos).unwrap();
        prop_assert!((sum - kernel).abs() < 1e-10, "{} vs {}", sum, kernel);
    }

    #[test]
    fn addition_theorem_on_the_circle(m in 0usize..=8, a in -PI..PI, b in -PI..PI) {
        let (x, y) = ([a.cos(), a.sin()], [b.cos(), b.sin()]);
        let sum: f64 = (1..=harmonic_dimension(m, 2).unwrap())
            .map(|l| {
                let idx = HarmonicIndex { m, l };
                evaluate_harmonic(idx, &x).unwrap() * evaluate_harmonic(idx, &y).unwrap()
            })
            .sum();
        let kernel = addition_kernel(m, &SphereGeometry::new(2).unwrap(), (a - b).cos()).unwrap();
        prop_assert!((sum - kernel).abs() < 1e-12, "{} vs {}", sum, kernel);
    }
}
