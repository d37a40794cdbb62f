//! Spectral simulation of generating sequences, field synthesis, Monte Carlo
//! error estimates and an exact Gaussian conditional-variance oracle.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::density::{DensityFamily, SpectralDensity};
use crate::error::{Result, SpiError};
use crate::gladyshev::{lift_weights, pc_reconstruct};
use crate::grid::{check_grid_size, direct_coefficient};
use crate::harmonics::{evaluate_harmonic, HarmonicIndex, SphereGrid};
use crate::interpolation::{window_lags, FunctionalSpec, WindowedCharacteristic};
use crate::linalg::{bilinear, c, condition_number, hermitian_eigen, hermitian_part, max_abs, psd_sqrt, CMat, CVec, C64, ZERO};

/// Default observation window `J` for oracle and Monte Carlo comparisons.
pub const DEFAULT_WINDOW: usize = 64;

/// Largest characteristic mass outside the window that a comparison accepts.
pub const TAIL_LIMIT: f64 = 1e-8;

/// Refuses a windowed characteristic whose truncation would bias a comparison
/// against the analytic error.
pub fn check_tail(characteristic: &WindowedCharacteristic) -> Result<()> {
    let tail = characteristic.max_tail_mass();
    if tail > TAIL_LIMIT {
        return Err(SpiError::Refused(format!(
            "characteristic mass {tail:.3e} outside window J = {} exceeds {TAIL_LIMIT:e}; widen the window",
            characteristic.window
        )));
    }
    Ok(())
}

/// Draws stationary `T`-variate series with a given density by spectral
/// synthesis on an `S`-point grid: independent `CN(0, F(λ_s)/S)` amplitudes,
/// summed against `e^{ijλ_s}`. Autocovariances are exact for densities of
/// bandwidth below `S/2`.
#[derive(Debug, Clone)]
pub struct SpectralSampler {
    dim: usize,
    size: usize,
    factors: Vec<CMat>,
}

impl SpectralSampler {
    pub fn new(density: &SpectralDensity, size: usize) -> Result<Self> {
        check_grid_size(size)?;
        let samples = density.sample(size)?;
        let dim = density.dim();
        let mut factors = Vec::with_capacity(size);
        for (s, v) in samples.values().iter().enumerate() {
            let (values, _) = hermitian_eigen(v);
            if values[0] < -1e-10 * max_abs(v).max(1.0) {
                return Err(SpiError::Input(format!(
                    "density is not positive semidefinite at grid point {s} (min eigenvalue {:.3e})",
                    values[0]
                )));
            }
            factors.push(psd_sqrt(&hermitian_part(v)) / c((size as f64).sqrt(), 0.0));
        }
        Ok(Self { dim, size, factors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `len` consecutive values of one realisation.
    pub fn draw<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Vec<CVec>> {
        if len > self.size {
            return Err(SpiError::Input(format!("series length {len} exceeds simulation grid {}", self.size)));
        }
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let mut amplitudes = Vec::with_capacity(self.size);
        for f in &self.factors {
            let w = CVec::from_fn(self.dim, |_, _| {
                c(rng.sample::<f64, _>(StandardNormal) * half, rng.sample::<f64, _>(StandardNormal) * half)
            });
            amplitudes.push(f * w);
        }
        let fft = FftPlanner::<f64>::new().plan_fft_inverse(self.size);
        let mut out = vec![CVec::zeros(self.dim); len];
        let mut buf = vec![ZERO; self.size];
        for k in 0..self.dim {
            for (b, a) in buf.iter_mut().zip(&amplitudes) {
                *b = a[k];
            }
            fft.process(&mut buf);
            for (j, o) in out.iter_mut().enumerate() {
                // e^{ijλ_s} = (-1)^j e^{2πijs/S}
                o[k] = if j % 2 == 0 { buf[j] } else { -buf[j] };
            }
        }
        Ok(out)
    }
}

/// Generator for replicate `index` of the run seeded with `seed`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One realisation of length `len` of a stationary sequence with density `density`.
pub fn simulate_stationary(density: &SpectralDensity, len: usize, seed: u64, grid: usize) -> Result<Vec<CVec>> {
    SpectralSampler::new(density, grid)?.draw(len, &mut replicate_rng(seed, 0))
}

/// Lag covariance `E ξ(j+d) ξ(j)* = (1/2π) ∫ e^{idλ} F(λ) dλ`, exact for
/// trigonometric polynomials and a direct grid sum otherwise.
pub fn autocovariance(density: &SpectralDensity, lag: i64, grid: usize) -> Result<CMat> {
    match density {
        SpectralDensity::TrigPoly(p) => Ok(p.coefficient(-lag)),
        SpectralDensity::Grid(g) => {
            let values = if g.size() == grid { g.clone() } else { g.resample(grid)? };
            Ok(direct_coefficient(values.values(), -lag))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Conditional variance of the functional given the observation window.
    pub mse: f64,
    /// Unconditional variance of the functional.
    pub variance: f64,
    /// Largest condition number of an observation covariance matrix.
    pub condition_number: f64,
    pub window: usize,
    /// Diagonal shift added to a singular observation covariance (0 when none).
    pub regularization: f64,
}

/// Exact conditional variance of `A_N ζ` given observations at
/// `j ∈ [-J, -1] ∪ [N+1, N+J]`, built directly from lag covariances.
/// `g = None` means noiseless observations. `grid` is only used for densities
/// given as grid samples.
pub fn gaussian_projection_oracle(
    f: &DensityFamily,
    g: Option<&DensityFamily>,
    spec: &FunctionalSpec,
    window: usize,
    grid: usize,
) -> Result<OracleResult> {
    if window == 0 {
        return Err(SpiError::Input("window J must be >= 1".into()));
    }
    let t = spec.period();
    let horizon = spec.horizon() as i64;
    let obs = window_lags(spec.horizon(), window);
    let mut result = OracleResult { mse: 0.0, variance: 0.0, condition_number: 1.0, window, regularization: 0.0 };
    for (idx, weights) in spec.harmonics() {
        let fm = f.get(idx.m).ok_or_else(|| SpiError::Input(format!("no spectral density for degree {}", idx.m)))?;
        let gm = match g {
            Some(g) => g.get(idx.m),
            None => None,
        };
        let max_lag = horizon + 2 * window as i64 + 1;
        let mut cov_f = BTreeMap::new();
        let mut cov_y = BTreeMap::new();
        for d in -max_lag..=max_lag {
            let rf = autocovariance(fm, d, grid)?;
            let ry = match gm {
                Some(gm) => &rf + autocovariance(gm, d, grid)?,
                None => rf.clone(),
            };
            cov_f.insert(d, rf);
            cov_y.insert(d, ry);
        }
        let a = lift_weights(weights, t)?;
        let mut var = ZERO;
        for (j, aj) in a.iter().enumerate() {
            for (k, ak) in a.iter().enumerate() {
                let ac = ak.map(|z| z.conj());
                var += bilinear(aj, &(&cov_f[&(j as i64 - k as i64)] * ac));
            }
        }
        let dim = obs.len() * t;
        let mut sigma = CMat::zeros(dim, dim);
        for (p, &op) in obs.iter().enumerate() {
            for (q, &oq) in obs.iter().enumerate() {
                sigma.view_mut((p * t, q * t), (t, t)).copy_from(&cov_y[&(op - oq)]);
            }
        }
        // cross[q] = E X conj(y(o_q)) as a row: Σ_j a(j)ᵀ R_F(j - o_q)
        let mut cross = CVec::zeros(dim);
        for (q, &oq) in obs.iter().enumerate() {
            let mut row = CVec::zeros(t);
            for (j, aj) in a.iter().enumerate() {
                row += cov_f[&(j as i64 - oq)].transpose() * aj;
            }
            cross.rows_mut(q * t, t).copy_from(&row);
        }
        let sigma = hermitian_part(&sigma);
        result.condition_number = result.condition_number.max(condition_number(&sigma));
        let mut shift = 0.0;
        let scale = sigma.trace().re / dim as f64;
        let chol = loop {
            let shifted = &sigma + CMat::identity(dim, dim) * c(shift, 0.0);
            if let Some(ch) = shifted.cholesky() {
                let l = ch.l_dirty();
                if (0..dim).all(|i| l[(i, i)].re > 0.0 && l[(i, i)].im.abs() <= 1e-12 * l[(i, i)].re) {
                    break ch;
                }
            }
            shift = if shift == 0.0 { 1e-14 * scale.max(f64::MIN_POSITIVE) } else { shift * 10.0 };
            if shift > scale {
                return Err(SpiError::Input("observation covariance is numerically singular".into()));
            }
        };
        result.regularization = result.regularization.max(shift);
        // cross Σ⁻¹ cross*, with cross as a row: solve Σ x = cross* (column)
        let rhs = cross.map(|z| z.conj());
        let x = chol.solve(&rhs);
        let explained = bilinear(&cross, &x).re;
        result.variance += var.re;
        result.mse += var.re - explained;
    }
    Ok(result)
}

/// Empirical mean-square error of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub mse: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Pairwise summation in a fixed tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn family_samplers(family: &DensityFamily, degrees: &[usize], grid: usize) -> Result<BTreeMap<usize, SpectralSampler>> {
    degrees
        .iter()
        .filter_map(|&m| family.get(m).map(|d| SpectralSampler::new(d, grid).map(|s| (m, s))))
        .collect()
}

/// Squared error `|A_N ζ - Â ζ|²` for each replicate, in replicate order.
pub fn monte_carlo_errors(
    f: &DensityFamily,
    g: Option<&DensityFamily>,
    spec: &FunctionalSpec,
    characteristic: &WindowedCharacteristic,
    replicates: usize,
    seed: u64,
    grid: usize,
) -> Result<Vec<f64>> {
    let horizon = spec.horizon();
    let window = characteristic.window;
    let len = horizon + 2 * window + 1;
    if len > grid {
        return Err(SpiError::Input(format!("simulation grid {grid} shorter than the {len} simulated times")));
    }
    let harmonics: Vec<(HarmonicIndex, Vec<CVec>)> =
        spec.harmonics().map(|(idx, _)| Ok((idx, spec.lifted(idx)?))).collect::<Result<_>>()?;
    let degrees = spec.active_degrees();
    let f_samplers = family_samplers(f, &degrees, grid)?;
    for m in &degrees {
        if !f_samplers.contains_key(m) {
            return Err(SpiError::Input(format!("no spectral density for degree {m}")));
        }
    }
    let g_samplers = match g {
        Some(g) => family_samplers(g, &degrees, grid)?,
        None => BTreeMap::new(),
    };
    let offset = window as i64;
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let mut err = ZERO;
            for (idx, a) in &harmonics {
                let xi = f_samplers[&idx.m].draw(len, &mut rng)?;
                let eta = match g_samplers.get(&idx.m) {
                    Some(s) => Some(s.draw(len, &mut rng)?),
                    None => None,
                };
                let at = |j: i64| (j + offset) as usize;
                for (j, aj) in a.iter().enumerate() {
                    err += bilinear(aj, &xi[at(j as i64)]);
                }
                if let Some(coefs) = characteristic.harmonics.get(idx) {
                    for (j, h) in coefs {
                        let mut y = xi[at(*j)].clone();
                        if let Some(eta) = &eta {
                            y += &eta[at(*j)];
                        }
                        err -= bilinear(h, &y);
                    }
                }
            }
            Ok(err.norm_sqr())
        })
        .collect()
}

/// Monte Carlo estimate of `E|A_N ζ - Â ζ|²` with its standard error.
pub fn monte_carlo_mse(
    f: &DensityFamily,
    g: Option<&DensityFamily>,
    spec: &FunctionalSpec,
    characteristic: &WindowedCharacteristic,
    replicates: usize,
    seed: u64,
    grid: usize,
) -> Result<MonteCarloResult> {
    if replicates < 2 {
        return Err(SpiError::Input("at least two replicates are needed".into()));
    }
    let errors = monte_carlo_errors(f, g, spec, characteristic, replicates, seed, grid)?;
    let n = errors.len() as f64;
    let mean = pairwise_sum(&errors) / n;
    let dev: Vec<f64> = errors.iter().map(|e| (e - mean) * (e - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    Ok(MonteCarloResult { mse: mean, stderr: (var / n).sqrt(), replicates, seed })
}

/// Simulated harmonic coefficients `ζ_m^l(j)` of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub period: usize,
    pub seed: u64,
    pub first_time: i64,
    pub series: BTreeMap<HarmonicIndex, Vec<C64>>,
    /// Free-form label of the density family used.
    pub provenance: String,
}

impl FieldRealization {
    pub fn times(&self) -> impl Iterator<Item = i64> + '_ {
        let len = self.series.values().next().map_or(0, |s| s.len());
        (0..len as i64).map(move |i| self.first_time + i)
    }
}

/// Simulates `ζ_m^l(j)`, `j = first..first+len-1`, for the listed harmonics
/// from generating sequences with densities `family`.
pub fn simulate_field(
    family: &DensityFamily,
    harmonics: &[HarmonicIndex],
    first_time: i64,
    len: usize,
    seed: u64,
    grid: usize,
    provenance: &str,
) -> Result<FieldRealization> {
    let mut rng = replicate_rng(seed, 0);
    let mut series = BTreeMap::new();
    let mut samplers = BTreeMap::new();
    for idx in harmonics {
        if !samplers.contains_key(&idx.m) {
            let d = family.get(idx.m).ok_or_else(|| SpiError::Input(format!("no spectral density for degree {}", idx.m)))?;
            samplers.insert(idx.m, SpectralSampler::new(d, grid)?);
        }
        let xi = samplers[&idx.m].draw(len, &mut rng)?;
        let zeta = xi
            .iter()
            .enumerate()
            .map(|(i, v)| pc_reconstruct(v, first_time + i as i64, family.period()))
            .collect::<Result<Vec<_>>>()?;
        series.insert(*idx, zeta);
    }
    Ok(FieldRealization { period: family.period(), seed, first_time, series, provenance: provenance.to_string() })
}

/// `ζ(j, x) = Σ_{m,l} S_m^l(x) ζ_m^l(j)` at every time and grid point; rows are times.
pub fn render_field(realization: &FieldRealization, grid: &SphereGrid) -> Result<Vec<Vec<C64>>> {
    let basis: Vec<(HarmonicIndex, Vec<f64>)> = realization
        .series
        .keys()
        .map(|idx| Ok((*idx, grid.points.iter().map(|p| evaluate_harmonic(*idx, p)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<_>>()?;
    let len = realization.series.values().next().map_or(0, |s| s.len());
    Ok((0..len)
        .map(|i| {
            (0..grid.len())
                .map(|p| basis.iter().map(|(idx, vals)| realization.series[idx][i] * vals[p]).sum())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::random_band_limited;
    use crate::interpolation::{solve_interpolation, solve_interpolation_noiseless, InterpolationOptions};
    use rand::SeedableRng;

    fn ar() -> SpectralDensity {
        SpectralDensity::trig_poly(vec![CMat::from_element(1, 1, c(1.25, 0.0)), CMat::from_element(1, 1, c(0.5, 0.0))]).unwrap()
    }

    fn point(period: usize) -> FunctionalSpec {
        let mut spec = FunctionalSpec::new(period, 0, 3).unwrap();
        spec.set(0, 1, 0, c(1.0, 0.0)).unwrap();
        spec
    }

    #[test]
    fn identical_seeds_give_identical_series() {
        let a = simulate_stationary(&ar(), 50, 42, 256).unwrap();
        let b = simulate_stationary(&ar(), 50, 42, 256).unwrap();
        assert_eq!(a, b);
        let c2 = simulate_stationary(&ar(), 50, 43, 256).unwrap();
        assert_ne!(a, c2);
    }

    #[test]
    fn ar_lag_covariances() {
        let sampler = SpectralSampler::new(&ar(), 64).unwrap();
        let reps = 10_000;
        let mut lag0 = Vec::new();
        let mut lag1 = Vec::new();
        for r in 0..reps {
            let x = sampler.draw(2, &mut replicate_rng(1, r)).unwrap();
            lag0.push(x[0][0].norm_sqr());
            lag1.push((x[1][0] * x[0][0].conj()).re);
        }
        for (vals, target) in [(lag0, 1.25), (lag1, 0.5)] {
            let mean = pairwise_sum(&vals) / reps as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt();
            assert!((mean - target).abs() < 3.0 * se + 1e-12, "{mean} vs {target} (se {se})");
        }
    }

    #[test]
    fn white_noise_oracle_is_weight_energy() {
        let f = DensityFamily::uniform(SpectralDensity::identity(2), [0]).unwrap();
        let mut spec = FunctionalSpec::new(2, 1, 3).unwrap();
        spec.set_sequence(0, 1, &[c(1.0, 0.5), c(-0.5, 0.0)]).unwrap();
        let energy = spec.energy(HarmonicIndex { m: 0, l: 1 });
        for j in [1, 4, 9] {
            let o = gaussian_projection_oracle(&f, None, &spec, j, 64).unwrap();
            assert!((o.mse - energy).abs() < 1e-12);
        }
    }

    #[test]
    fn ar_oracle_matches_single_gap_value() {
        let f = DensityFamily::uniform(ar(), [0]).unwrap();
        let o = gaussian_projection_oracle(&f, None, &point(1), 64, 64).unwrap();
        assert!((o.mse - 0.75).abs() < 1e-8, "{}", o.mse);
        assert!((o.variance - 1.25).abs() < 1e-14);
        let mut last = f64::INFINITY;
        for j in 1..12 {
            let m = gaussian_projection_oracle(&f, None, &point(1), j, 64).unwrap().mse;
            assert!(m <= last + 1e-14);
            last = m;
        }
    }

    #[test]
    fn analytic_mse_matches_oracle_for_periodic_noisy_fields() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for t in 1..=3 {
            for n in 0..=2 {
                let f = DensityFamily::uniform(random_band_limited(t, 2, 1.0, 0.3, &mut rng), [0, 1]).unwrap();
                let g = DensityFamily::uniform(random_band_limited(t, 1, 0.5, 0.2, &mut rng), [0, 1]).unwrap();
                let mut spec = FunctionalSpec::new(t, n, 3).unwrap();
                for (m, l) in [(0, 1), (1, 1), (1, 3)] {
                    for j in 0..=n {
                        spec.set(m, l, j, c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).unwrap();
                    }
                }
                let opts = InterpolationOptions { grid: 512, ..Default::default() };
                let sol = solve_interpolation(&f, &g, &spec, &opts).unwrap();
                let oracle = gaussian_projection_oracle(&f, Some(&g), &spec, 60, 512).unwrap();
                assert!((sol.mse - oracle.mse).abs() < 1e-6 * oracle.mse, "T={t} N={n}: {} vs {}", sol.mse, oracle.mse);
                let clean = solve_interpolation_noiseless(&f, &spec, &opts).unwrap();
                let clean_oracle = gaussian_projection_oracle(&f, None, &spec, 60, 512).unwrap();
                assert!((clean.mse - clean_oracle.mse).abs() < 1e-6 * clean_oracle.mse);
            }
        }
    }

    #[test]
    fn monte_carlo_for_ar_example() {
        let f = DensityFamily::uniform(ar(), [0]).unwrap();
        let sol = solve_interpolation_noiseless(&f, &point(1), &InterpolationOptions::default()).unwrap();
        let w = sol.spectral_characteristic_coeffs(30).unwrap();
        let mc = monte_carlo_mse(&f, None, &point(1), &w, 10_000, 7, 128).unwrap();
        assert!((mc.mse - 0.75).abs() < 3.0 * mc.stderr, "{mc:?}");
        let again = monte_carlo_mse(&f, None, &point(1), &w, 10_000, 7, 128).unwrap();
        assert_eq!(mc, again);
        // ignoring the observations leaves the full variance
        let mut zero = w.clone();
        for v in zero.harmonics.values_mut() {
            for (_, h) in v.iter_mut() {
                h.fill(ZERO);
            }
        }
        let naive = monte_carlo_mse(&f, None, &point(1), &zero, 10_000, 7, 128).unwrap();
        assert!((naive.mse - 1.25).abs() < 3.0 * naive.stderr);
        let zero_fn = point(1).scaled(ZERO);
        let z = monte_carlo_mse(&f, None, &zero_fn, &zero, 100, 7, 128).unwrap();
        assert_eq!(z.mse, 0.0);
    }

    #[test]
    fn rendering_constant_harmonic() {
        let f = DensityFamily::uniform(ar(), [0]).unwrap();
        let r = simulate_field(&f, &[HarmonicIndex { m: 0, l: 1 }], -2, 5, 3, 64, "ar").unwrap();
        let grid = SphereGrid::sphere(4, 8);
        let field = render_field(&r, &grid).unwrap();
        let scale = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        for (i, row) in field.iter().enumerate() {
            let z = r.series[&HarmonicIndex { m: 0, l: 1 }][i] * scale;
            assert!(row.iter().all(|v| (v - z).norm() < 1e-14));
        }
        assert_eq!(r.times().collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
    }

    #[test]
    fn rejects_indefinite_density() {
        let bad = SpectralDensity::Grid(
            crate::grid::MatrixGrid::from_fn(16, |_| CMat::from_element(1, 1, c(-1.0, 0.0))).unwrap(),
        );
        assert!(SpectralSampler::new(&bad, 16).is_err());
    }
}
