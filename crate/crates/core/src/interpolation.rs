//! Optimal linear interpolation of a functional of the unobserved values
//! `j = 0..N` from observations at all other times, for known densities.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityFamily;
use crate::error::{Result, SpiError};
use crate::gladyshev::lift_weights;
use crate::grid::{check_grid_size, grid_points, lag_index, vector_coefficients, MatrixGrid, DEFAULT_GRID};
use crate::harmonics::{harmonic_dimension, HarmonicIndex};
use crate::linalg::{bilinear, cis, hpd_inverse, row_quadratic, scaled_identity, vec_max_abs, CMat, CVec, C64};
use crate::spectral_ops::{
    assemble_operator, check_minimality, solve_coefficients, stack, unstack, BlockToeplitz, MinimalityOptions,
    MinimalityReport,
};

/// Harmonic weights `a_m^l(j)`, `j = 0..N`, of the functional
/// `A_N ζ = Σ_j ∫ a(j,x) ζ(j,x) m_n(dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSpec {
    period: usize,
    horizon: usize,
    dimension: usize,
    weights: BTreeMap<HarmonicIndex, Vec<C64>>,
}

impl FunctionalSpec {
    /// Empty functional for period `T`, gap `0..=N` and ambient dimension `n`.
    pub fn new(period: usize, horizon: usize, dimension: usize) -> Result<Self> {
        if period == 0 {
            return Err(SpiError::Input("period T must be >= 1".into()));
        }
        harmonic_dimension(0, dimension)?;
        Ok(Self { period, horizon, dimension, weights: BTreeMap::new() })
    }

    /// Sets `a_m^l(j)`.
    pub fn set(&mut self, m: usize, l: usize, j: usize, value: C64) -> Result<()> {
        let idx = HarmonicIndex::new(m, l, self.dimension)?;
        if j > self.horizon {
            return Err(SpiError::Input(format!("weight lag j={j} outside 0..={}", self.horizon)));
        }
        if !value.re.is_finite() || !value.im.is_finite() {
            return Err(SpiError::Input(format!("weight a({m},{l},{j}) is not finite")));
        }
        self.weights.entry(idx).or_insert_with(|| vec![C64::new(0.0, 0.0); self.horizon + 1])[j] = value;
        Ok(())
    }

    /// Sets the whole weight sequence of one harmonic.
    pub fn set_sequence(&mut self, m: usize, l: usize, values: &[C64]) -> Result<()> {
        if values.len() != self.horizon + 1 {
            return Err(SpiError::Input(format!("expected {} weights, got {}", self.horizon + 1, values.len())));
        }
        for (j, v) in values.iter().enumerate() {
            self.set(m, l, j, *v)?;
        }
        Ok(())
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Ambient dimension `n` of the sphere `S_n`.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self, idx: HarmonicIndex) -> Option<&[C64]> {
        self.weights.get(&idx).map(|v| v.as_slice())
    }

    pub fn harmonics(&self) -> impl Iterator<Item = (HarmonicIndex, &[C64])> {
        self.weights.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn active_degrees(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.weights.keys().map(|k| k.m).collect();
        out.dedup();
        out
    }

    /// Lifted weights `a⃗_m^l(j)`.
    pub fn lifted(&self, idx: HarmonicIndex) -> Result<Vec<CVec>> {
        let w = self.weights(idx).ok_or_else(|| SpiError::Input(format!("no weights for ({}, {})", idx.m, idx.l)))?;
        lift_weights(w, self.period)
    }

    /// `Σ_j |a⃗(j)|²` for one harmonic.
    pub fn energy(&self, idx: HarmonicIndex) -> f64 {
        self.weights(idx).map_or(0.0, |w| w.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.period as f64)
    }

    /// Same functional with all weights multiplied by `s`.
    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        for w in out.weights.values_mut() {
            for z in w.iter_mut() {
                *z *= s;
            }
        }
        out
    }
}

/// `Σ_{j=0}^{N} x(j) e^{ijλ}` on the grid.
pub fn lag_polynomial(parts: &[CVec], size: usize) -> Vec<CVec> {
    grid_points(size)
        .into_iter()
        .map(|l| {
            let mut acc = CVec::zeros(parts[0].len());
            for (j, p) in parts.iter().enumerate() {
                acc += p * cis(j as f64 * l);
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationOptions {
    pub grid: usize,
    /// Shift `δ ≥ 0` added to `H_m` (or `F_m`) before inversion.
    pub regularization: f64,
    pub minimality: MinimalityOptions,
}

impl Default for InterpolationOptions {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID, regularization: 0.0, minimality: MinimalityOptions::default() }
    }
}

/// Numerical checks of the optimality conditions for one harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicDiagnostics {
    /// `max_λ |r_F H⁻¹ - (Aᵀ - r_G H⁻¹)|`.
    pub dual_form_defect: f64,
    /// Largest Fourier coefficient of `(A-h)ᵀF - hᵀG` at lags outside `0..N`.
    pub orthogonality_residual: f64,
    /// Largest Fourier coefficient of `h` at lags `0..N`.
    pub membership_residual: f64,
    /// `|Δ_quadratic - Δ_integral|` for this harmonic.
    pub mse_form_gap: f64,
}

/// Solution for one harmonic `(m, l)`; grid functions are row vectors stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSolution {
    pub index: HarmonicIndex,
    pub weights: Vec<CVec>,
    pub coefficients: Vec<CVec>,
    /// `h(λ_s)`.
    pub characteristic: Vec<CVec>,
    /// `r_F(λ_s) = Aᵀ F - Cᵀ`.
    pub r_f: Vec<CVec>,
    /// `r_G(λ_s) = Aᵀ G + Cᵀ`.
    pub r_g: Vec<CVec>,
    /// `⟨c, B c⟩ + ⟨a, R a⟩` (or `⟨B⁻¹a, a⟩` without noise).
    pub mse: f64,
    /// Integral form of the same quantity.
    pub mse_integral: f64,
    pub diagnostics: HarmonicDiagnostics,
}

impl HarmonicSolution {
    /// `C(λ_s) = Σ_j c⃗(j) e^{ijλ_s}`.
    pub fn coefficient_polynomial(&self) -> Vec<CVec> {
        lag_polynomial(&self.coefficients, self.characteristic.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSolution {
    pub period: usize,
    pub horizon: usize,
    pub grid: usize,
    pub noiseless: bool,
    pub regularization: f64,
    /// Solutions in `(m, l)` order.
    pub harmonics: Vec<HarmonicSolution>,
    pub mse: f64,
    pub mse_integral: f64,
    pub degrees_used: Vec<usize>,
    pub excluded_degrees: Vec<usize>,
    /// `Σ |a⃗|²` over harmonics of excluded degrees.
    pub excluded_energy: f64,
    pub minimality: Option<MinimalityReport>,
}

impl InterpolationSolution {
    pub fn harmonic(&self, idx: HarmonicIndex) -> Option<&HarmonicSolution> {
        self.harmonics.iter().find(|h| h.index == idx)
    }

    /// Worst diagnostics over all harmonics.
    pub fn worst_diagnostics(&self) -> HarmonicDiagnostics {
        let mut out = HarmonicDiagnostics {
            dual_form_defect: 0.0,
            orthogonality_residual: 0.0,
            membership_residual: 0.0,
            mse_form_gap: (self.mse - self.mse_integral).abs(),
        };
        for h in &self.harmonics {
            out.dual_form_defect = out.dual_form_defect.max(h.diagnostics.dual_form_defect);
            out.orthogonality_residual = out.orthogonality_residual.max(h.diagnostics.orthogonality_residual);
            out.membership_residual = out.membership_residual.max(h.diagnostics.membership_residual);
        }
        out
    }

    /// Fourier coefficients of `h` at lags `[-J, -1] ∪ [N+1, N+J]`.
    pub fn spectral_characteristic_coeffs(&self, window: usize) -> Result<WindowedCharacteristic> {
        if window == 0 {
            return Err(SpiError::Input("window J must be >= 1".into()));
        }
        let size = self.grid;
        if self.horizon + window >= size / 2 {
            return Err(SpiError::Input(format!(
                "window {window} with gap 0..={} exceeds the grid resolution {size}",
                self.horizon
            )));
        }
        let lags = window_lags(self.horizon, window);
        let mut harmonics = BTreeMap::new();
        let mut tail_mass = BTreeMap::new();
        for h in &self.harmonics {
            let coefs = vector_coefficients(&h.characteristic);
            let kept: Vec<(i64, CVec)> = lags.iter().map(|&j| (j, coefs[lag_index(j, size)].clone())).collect();
            let mut retained = vec![false; size];
            for &j in &lags {
                retained[lag_index(j, size)] = true;
            }
            for j in 0..=self.horizon as i64 {
                retained[lag_index(j, size)] = true;
            }
            let tail: f64 = coefs.iter().zip(&retained).filter(|(_, r)| !**r).map(|(v, _)| v.norm_squared()).sum();
            harmonics.insert(h.index, kept);
            tail_mass.insert(h.index, tail);
        }
        Ok(WindowedCharacteristic { period: self.period, horizon: self.horizon, window, harmonics, tail_mass })
    }
}

/// Observation lags `[-J, -1] ∪ [N+1, N+J]` in increasing order.
pub fn window_lags(horizon: usize, window: usize) -> Vec<i64> {
    let (n, w) = (horizon as i64, window as i64);
    (-w..=-1).chain(n + 1..=n + w).collect()
}

/// Truncated spectral characteristic `h⃗_m^l(j)` on the observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedCharacteristic {
    pub period: usize,
    pub horizon: usize,
    pub window: usize,
    pub harmonics: BTreeMap<HarmonicIndex, Vec<(i64, CVec)>>,
    /// `Σ |h⃗(j)|²` over lags outside the window and the gap.
    pub tail_mass: BTreeMap<HarmonicIndex, f64>,
}

impl WindowedCharacteristic {
    pub fn max_tail_mass(&self) -> f64 {
        self.tail_mass.values().copied().fold(0.0, f64::max)
    }

    /// `Σ_{m,l} Σ_j h⃗(j)ᵀ y(j)` for observations `y(j) = ξ⃗(j) + η⃗(j)`.
    pub fn apply_estimate(&self, observations: &BTreeMap<HarmonicIndex, BTreeMap<i64, CVec>>) -> Result<C64> {
        let mut total = C64::new(0.0, 0.0);
        for (idx, coefs) in &self.harmonics {
            let obs = observations
                .get(idx)
                .ok_or_else(|| SpiError::Input(format!("no observations for harmonic ({}, {})", idx.m, idx.l)))?;
            for (j, h) in coefs {
                let y = obs.get(j).ok_or_else(|| {
                    SpiError::Input(format!("missing observation at j={j} for harmonic ({}, {})", idx.m, idx.l))
                })?;
                if y.len() != h.len() {
                    return Err(SpiError::DimensionMismatch(format!("observation at j={j} has {} components", y.len())));
                }
                total += bilinear(h, y);
            }
        }
        Ok(total)
    }
}

fn sample_family(family: &DensityFamily, degrees: &[usize], size: usize) -> Result<BTreeMap<usize, MatrixGrid>> {
    degrees
        .iter()
        .map(|&m| {
            let d = family
                .get(m)
                .ok_or_else(|| SpiError::Input(format!("no spectral density for degree {m}")))?;
            Ok((m, d.sample(size)?))
        })
        .collect()
}

fn check_inputs(f: &DensityFamily, g: Option<&DensityFamily>, spec: &FunctionalSpec, options: &InterpolationOptions) -> Result<()> {
    check_grid_size(options.grid)?;
    if f.period() != spec.period() {
        return Err(SpiError::DimensionMismatch(format!(
            "density period {} does not match functional period {}",
            f.period(),
            spec.period()
        )));
    }
    if let Some(g) = g {
        if g.period() != f.period() {
            return Err(SpiError::DimensionMismatch(format!("signal period {} vs noise period {}", f.period(), g.period())));
        }
    }
    if !(options.regularization >= 0.0 && options.regularization.is_finite()) {
        return Err(SpiError::Input("regularization must be finite and >= 0".into()));
    }
    if spec.horizon() + 1 >= options.grid / 2 {
        return Err(SpiError::Input(format!("gap 0..={} too long for grid {}", spec.horizon(), options.grid)));
    }
    Ok(())
}

fn excluded_energy(spec: &FunctionalSpec, excluded: &[usize]) -> f64 {
    spec.harmonics().filter(|(idx, _)| excluded.contains(&idx.m)).fold(0.0, |acc, (idx, _)| acc + spec.energy(idx))
}

/// Known-density solution with observation noise of density `G`.
pub fn solve_interpolation(
    f: &DensityFamily,
    g: &DensityFamily,
    spec: &FunctionalSpec,
    options: &InterpolationOptions,
) -> Result<InterpolationSolution> {
    check_inputs(f, Some(g), spec, options)?;
    let active = spec.active_degrees();
    let f_s = sample_family(f, &active, options.grid)?;
    let g_s: BTreeMap<usize, MatrixGrid> = active
        .iter()
        .map(|&m| match g.get(m) {
            Some(d) => Ok((m, d.sample(options.grid)?)),
            None => Ok((m, MatrixGrid::from_fn(options.grid, |_| CMat::zeros(spec.period(), spec.period()))?)),
        })
        .collect::<Result<_>>()?;
    let h_family = DensityFamily::new(
        spec.period(),
        active
            .iter()
            .map(|&m| {
                let sum: Vec<CMat> = f_s[&m].values().iter().zip(g_s[&m].values()).map(|(a, b)| a + b).collect();
                Ok((m, crate::density::SpectralDensity::Grid(MatrixGrid::new(sum)?)))
            })
            .collect::<Result<_>>()?,
    )?;
    let report = check_minimality(&h_family, options.grid, &options.minimality)?;
    let (used, excluded) = split_degrees(&report, &active)?;
    let f_used = f_s.into_iter().filter(|(m, _)| used.contains(m)).collect();
    let g_used = g_s.into_iter().filter(|(m, _)| used.contains(m)).collect();
    let mut sol = solve_sampled(&f_used, Some(&g_used), spec, options.regularization)?;
    sol.excluded_energy = excluded_energy(spec, &excluded);
    sol.excluded_degrees = excluded;
    sol.minimality = Some(report);
    Ok(sol)
}

/// Known-density solution from noiseless observations.
pub fn solve_interpolation_noiseless(
    f: &DensityFamily,
    spec: &FunctionalSpec,
    options: &InterpolationOptions,
) -> Result<InterpolationSolution> {
    check_inputs(f, None, spec, options)?;
    let active = spec.active_degrees();
    let report = check_minimality(
        &DensityFamily::new(
            f.period(),
            active
                .iter()
                .map(|&m| {
                    f.get(m)
                        .cloned()
                        .map(|d| (m, d))
                        .ok_or_else(|| SpiError::Input(format!("no spectral density for degree {m}")))
                })
                .collect::<Result<_>>()?,
        )?,
        options.grid,
        &options.minimality,
    )?;
    let (used, excluded) = split_degrees(&report, &active)?;
    let f_used = sample_family(f, &used, options.grid)?;
    let mut sol = solve_sampled(&f_used, None, spec, options.regularization)?;
    sol.excluded_energy = excluded_energy(spec, &excluded);
    sol.excluded_degrees = excluded;
    sol.minimality = Some(report);
    Ok(sol)
}

fn split_degrees(report: &MinimalityReport, active: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let used: Vec<usize> = active.iter().copied().filter(|m| report.get(*m).is_some_and(|d| d.passed)).collect();
    let excluded: Vec<usize> = active.iter().copied().filter(|m| !used.contains(m)).collect();
    if used.is_empty() && !active.is_empty() {
        return Err(SpiError::EmptyMinimalSet { excluded });
    }
    Ok((used, excluded))
}

struct DegreeSystem {
    f: MatrixGrid,
    g: Option<MatrixGrid>,
    h_inv: Vec<CMat>,
    b: BlockToeplitz,
    d: Option<BlockToeplitz>,
    r: Option<BlockToeplitz>,
}

fn build_degree(m: usize, f: &MatrixGrid, g: Option<&MatrixGrid>, horizon: usize, delta: f64) -> Result<DegreeSystem> {
    let t = f.dim();
    let shift = scaled_identity(t, delta);
    let h_inv: Option<Vec<CMat>> = match g {
        Some(g) => f.values().iter().zip(g.values()).map(|(a, b)| hpd_inverse(&(a + b + &shift))).collect(),
        None => f.values().iter().map(|a| hpd_inverse(&(a + &shift))).collect(),
    };
    let h_inv = h_inv.ok_or_else(|| SpiError::Minimality { degree: m, reason: "density is singular on the grid".into() })?;
    let b = assemble_operator(&MatrixGrid::new(h_inv.clone())?, horizon)?;
    let (d, r) = match g {
        Some(g) => {
            let fh: Vec<CMat> = f.values().iter().zip(&h_inv).map(|(a, hi)| a * hi).collect();
            let fhg: Vec<CMat> = fh.iter().zip(g.values()).map(|(x, gg)| x * gg).collect();
            (
                Some(assemble_operator(&MatrixGrid::new(fh)?, horizon)?),
                Some(assemble_operator(&MatrixGrid::new(fhg)?, horizon)?),
            )
        }
        None => (None, None),
    };
    Ok(DegreeSystem { f: f.clone(), g: g.cloned(), h_inv, b, d, r })
}

fn solve_harmonic(m: usize, sys: &DegreeSystem, idx: HarmonicIndex, weights: Vec<CVec>, horizon: usize) -> Result<HarmonicSolution> {
    let size = sys.f.size();
    let a = stack(&weights);
    let coef = solve_coefficients(&sys.b, sys.d.as_ref(), &a, m)?;
    let t = weights[0].len();
    let coefficients = unstack(&coef, t);
    let a_poly = lag_polynomial(&weights, size);
    let c_poly = lag_polynomial(&coefficients, size);

    let mut characteristic = Vec::with_capacity(size);
    let mut r_f = Vec::with_capacity(size);
    let mut r_g = Vec::with_capacity(size);
    let mut residual_row = Vec::with_capacity(size);
    let mut dual_defect: f64 = 0.0;
    let mut integral = 0.0;
    for s in 0..size {
        let fs = &sys.f.values()[s];
        let hi = &sys.h_inv[s];
        let (av, cv) = (&a_poly[s], &c_poly[s]);
        let rf = fs.transpose() * av - cv;
        let rg = match &sys.g {
            Some(g) => g.values()[s].transpose() * av + cv,
            None => cv.clone(),
        };
        let h = hi.transpose() * &rf;
        let alt = av - hi.transpose() * &rg;
        dual_defect = dual_defect.max(vec_max_abs(&(&h - &alt)));
        integral += match &sys.g {
            Some(g) => row_quadratic(&rg, &(hi * fs * hi)) + row_quadratic(&rf, &(hi * &g.values()[s] * hi)),
            None => row_quadratic(cv, hi),
        };
        let mut orth = fs.transpose() * (av - &h);
        if let Some(g) = &sys.g {
            orth -= g.values()[s].transpose() * &h;
        }
        residual_row.push(orth);
        characteristic.push(h);
        r_f.push(rf);
        r_g.push(rg);
    }
    let mse_integral = integral / size as f64;
    let mse = match (&sys.r, &sys.d) {
        (Some(r), Some(_)) => sys.b.apply(&coef).dotc(&coef).re + r.apply(&a).dotc(&a).re,
        _ => coef.dotc(&a).re,
    };
    // dotc(x, y) = x* y; ⟨c, Bc⟩ = c* B c.
    let h_coefs = vector_coefficients(&characteristic);
    let membership = (0..=horizon as i64).map(|j| h_coefs[lag_index(j, size)].norm()).fold(0.0, f64::max);
    let o_coefs = vector_coefficients(&residual_row);
    let half = (size / 2) as i64;
    let orthogonality = (-half + 1..half)
        .filter(|j| !(0..=horizon as i64).contains(j))
        .map(|j| o_coefs[lag_index(j, size)].norm())
        .fold(0.0, f64::max);
    Ok(HarmonicSolution {
        index: idx,
        weights,
        coefficients,
        characteristic,
        r_f,
        r_g,
        mse,
        mse_integral,
        diagnostics: HarmonicDiagnostics {
            dual_form_defect: dual_defect,
            orthogonality_residual: orthogonality,
            membership_residual: membership,
            mse_form_gap: (mse - mse_integral).abs(),
        },
    })
}

/// Solves on already-sampled densities without the minimality pre-check.
/// `g = None` selects the noiseless formulas. Every active degree of `spec`
/// must be present in `f` (and `g`).
pub fn solve_sampled(
    f: &BTreeMap<usize, MatrixGrid>,
    g: Option<&BTreeMap<usize, MatrixGrid>>,
    spec: &FunctionalSpec,
    regularization: f64,
) -> Result<InterpolationSolution> {
    let size = f.values().next().map_or(DEFAULT_GRID, |v| v.size());
    let degrees: Vec<usize> = spec.active_degrees().into_iter().filter(|m| f.contains_key(m)).collect();
    let per_degree: Vec<Vec<HarmonicSolution>> = degrees
        .par_iter()
        .map(|&m| {
            let gm = match g {
                Some(g) => Some(g.get(&m).ok_or_else(|| SpiError::Input(format!("no noise density for degree {m}")))?),
                None => None,
            };
            let sys = build_degree(m, &f[&m], gm, spec.horizon(), regularization)?;
            spec.harmonics()
                .filter(|(idx, _)| idx.m == m)
                .map(|(idx, _)| solve_harmonic(m, &sys, idx, spec.lifted(idx)?, spec.horizon()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let harmonics: Vec<HarmonicSolution> = per_degree.into_iter().flatten().collect();
    let mse = harmonics.iter().map(|h| h.mse).sum();
    let mse_integral = harmonics.iter().map(|h| h.mse_integral).sum();
    Ok(InterpolationSolution {
        period: spec.period(),
        horizon: spec.horizon(),
        grid: size,
        noiseless: g.is_none(),
        regularization,
        harmonics,
        mse,
        mse_integral,
        degrees_used: degrees,
        excluded_degrees: Vec::new(),
        excluded_energy: 0.0,
        minimality: None,
    })
}

/// `Δ(h; F, G) = Σ (1/2π) ∫ (A-h)ᵀ F conj(A-h) + hᵀ G conj(h) dλ` for a fixed
/// characteristic `h` given on the grid; `g = None` drops the noise term.
pub fn mse_for_characteristic(
    spec: &FunctionalSpec,
    characteristic: &BTreeMap<HarmonicIndex, Vec<CVec>>,
    f: &BTreeMap<usize, MatrixGrid>,
    g: Option<&BTreeMap<usize, MatrixGrid>>,
) -> Result<f64> {
    let mut total = 0.0;
    for (idx, h) in characteristic {
        let fm = f.get(&idx.m).ok_or_else(|| SpiError::Input(format!("no density for degree {}", idx.m)))?;
        let size = fm.size();
        if h.len() != size {
            return Err(SpiError::DimensionMismatch("characteristic and density grids differ".into()));
        }
        let a_poly = lag_polynomial(&spec.lifted(*idx)?, size);
        let mut acc = 0.0;
        for s in 0..size {
            let e = &a_poly[s] - &h[s];
            acc += row_quadratic(&e, &fm.values()[s]);
            if let Some(g) = g {
                let gm = g.get(&idx.m).ok_or_else(|| SpiError::Input(format!("no noise density for degree {}", idx.m)))?;
                acc += row_quadratic(&h[s], &gm.values()[s]);
            }
        }
        total += acc / size as f64;
    }
    Ok(total)
}

/// Characteristic of every harmonic of a solution, keyed by index.
pub fn characteristic_map(sol: &InterpolationSolution) -> BTreeMap<HarmonicIndex, Vec<CVec>> {
    sol.harmonics.iter().map(|h| (h.index, h.characteristic.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{random_band_limited, SpectralDensity};
    use crate::linalg::c;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn ar_family() -> DensityFamily {
        let d = SpectralDensity::trig_poly(vec![
            CMat::from_element(1, 1, c(1.25, 0.0)),
            CMat::from_element(1, 1, c(0.5, 0.0)),
        ])
        .unwrap();
        DensityFamily::uniform(d, [0]).unwrap()
    }

    fn point_functional(period: usize, horizon: usize) -> FunctionalSpec {
        let mut spec = FunctionalSpec::new(period, horizon, 3).unwrap();
        spec.set(0, 1, 0, c(1.0, 0.0)).unwrap();
        spec
    }

    fn random_spec(rng: &mut ChaCha20Rng, period: usize, horizon: usize, degrees: &[usize]) -> FunctionalSpec {
        let mut spec = FunctionalSpec::new(period, horizon, 3).unwrap();
        for &m in degrees {
            for l in 1..=harmonic_dimension(m, 3).unwrap().min(2) {
                for j in 0..=horizon {
                    spec.set(m, l, j, c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).unwrap();
                }
            }
        }
        spec
    }

    #[test]
    fn ar_single_gap_closed_form() {
        let opts = InterpolationOptions::default();
        let sol = solve_interpolation_noiseless(&ar_family(), &point_functional(1, 0), &opts).unwrap();
        assert!((sol.mse - 0.75).abs() < 1e-9);
        assert!((sol.mse_integral - 0.75).abs() < 1e-9);
        let h = &sol.harmonics[0];
        assert!((h.coefficients[0][0] - c(0.75, 0.0)).norm() < 1e-9);
        assert!(h.diagnostics.membership_residual < 1e-10);
        for (s, l) in grid_points(opts.grid).into_iter().enumerate() {
            let expected = 1.0 - 0.75 / (1.25 + l.cos());
            assert!((h.characteristic[s][0] - c(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn white_noise_is_unpredictable() {
        let sigma2 = 2.0;
        let f = DensityFamily::uniform(SpectralDensity::identity(1).scale(sigma2).unwrap(), [0]).unwrap();
        let mut spec = FunctionalSpec::new(1, 2, 3).unwrap();
        spec.set_sequence(0, 1, &[c(1.0, 0.0), c(0.0, -1.0), c(2.0, 0.5)]).unwrap();
        let energy: f64 = 1.0 + 1.0 + 4.25;
        let g = DensityFamily::uniform(SpectralDensity::zero(1), [0]).unwrap();
        let sol = solve_interpolation(&f, &g, &spec, &InterpolationOptions::default()).unwrap();
        assert!((sol.mse - sigma2 * energy).abs() < 1e-10);
        assert!(sol.harmonics[0].characteristic.iter().all(|h| h.norm() < 1e-12));
    }

    #[test]
    fn noise_free_general_path_matches_noiseless_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let opts = InterpolationOptions { grid: 256, ..Default::default() };
        for i in 0..20 {
            let t = 1 + i % 3;
            let n = i % 3;
            let f = DensityFamily::new(
                t,
                [(0, random_band_limited(t, 2, 1.0, 0.3, &mut rng)), (1, random_band_limited(t, 1, 1.0, 0.3, &mut rng))].into(),
            )
            .unwrap();
            let g = DensityFamily::new(t, [(0, SpectralDensity::zero(t)), (1, SpectralDensity::zero(t))].into()).unwrap();
            let spec = random_spec(&mut rng, t, n, &[0, 1]);
            let general = solve_interpolation(&f, &g, &spec, &opts).unwrap();
            let noiseless = solve_interpolation_noiseless(&f, &spec, &opts).unwrap();
            assert!((general.mse - noiseless.mse).abs() < 1e-9 * noiseless.mse.max(1e-300));
        }
    }

    #[test]
    fn invariants_hold_on_random_noisy_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let opts = InterpolationOptions { grid: 256, ..Default::default() };
        for i in 0..12 {
            let t = 1 + i % 3;
            let n = (i / 3) % 3;
            let f = DensityFamily::uniform(random_band_limited(t, 2, 1.0, 0.2, &mut rng), [0, 1]).unwrap();
            let g = DensityFamily::uniform(random_band_limited(t, 1, 0.5, 0.1, &mut rng), [0, 1]).unwrap();
            let spec = random_spec(&mut rng, t, n, &[0, 1]);
            let sol = solve_interpolation(&f, &g, &spec, &opts).unwrap();
            let d = sol.worst_diagnostics();
            assert!(d.dual_form_defect < 1e-9, "{d:?}");
            assert!(d.orthogonality_residual < 1e-7, "{d:?}");
            assert!(d.membership_residual < 1e-7, "{d:?}");
            assert!(d.mse_form_gap < 1e-8 * sol.mse.max(1.0), "{d:?}");
            assert!(sol.mse > 0.0);
            // more information (no noise) never hurts
            let clean = solve_interpolation_noiseless(&f, &spec, &opts).unwrap();
            assert!(sol.mse >= clean.mse - 1e-12);
            // quadratic in the weights
            let scaled = solve_interpolation(&f, &g, &spec.scaled(c(1.5, -2.0)), &opts).unwrap();
            assert!((scaled.mse - 6.25 * sol.mse).abs() < 1e-9 * scaled.mse);
            // fixed characteristic evaluation reproduces the optimum
            let f_s = sample_family(&f, &[0, 1], 256).unwrap();
            let g_s = sample_family(&g, &[0, 1], 256).unwrap();
            let at_opt = mse_for_characteristic(&spec, &characteristic_map(&sol), &f_s, Some(&g_s)).unwrap();
            assert!((at_opt - sol.mse).abs() < 1e-8 * sol.mse.max(1.0));
        }
    }

    #[test]
    fn excluded_degrees_are_reported() {
        let good = SpectralDensity::identity(1);
        let bad = SpectralDensity::trig_poly(vec![
            CMat::from_element(1, 1, c(2.0, 0.0)),
            CMat::from_element(1, 1, c(-1.0, 0.0)),
        ])
        .unwrap();
        let f = DensityFamily::new(1, [(0, good), (1, bad.clone())].into()).unwrap();
        let mut spec = point_functional(1, 0);
        spec.set(1, 2, 0, c(1.0, 0.0)).unwrap();
        let sol = solve_interpolation_noiseless(&f, &spec, &InterpolationOptions::default()).unwrap();
        assert_eq!(sol.degrees_used, vec![0]);
        assert_eq!(sol.excluded_degrees, vec![1]);
        assert!((sol.excluded_energy - 1.0).abs() < 1e-15);
        let only_bad = DensityFamily::uniform(bad, [0]).unwrap();
        let err = solve_interpolation_noiseless(&only_bad, &point_functional(1, 0), &InterpolationOptions::default());
        assert!(matches!(err, Err(SpiError::EmptyMinimalSet { .. })));
    }

    #[test]
    fn windowed_characteristic_of_ar_example() {
        let sol = solve_interpolation_noiseless(&ar_family(), &point_functional(1, 0), &InterpolationOptions::default()).unwrap();
        let mut last = f64::INFINITY;
        for j in 1..=20 {
            let w = sol.spectral_characteristic_coeffs(j).unwrap();
            let tail = w.max_tail_mass();
            assert!(tail <= last);
            last = tail;
        }
        let w = sol.spectral_characteristic_coeffs(1).unwrap();
        let idx = HarmonicIndex { m: 0, l: 1 };
        // h = 1 - 0.75/f has lag ±1 coefficients -0.75·(-0.5)/0.75 = 0.5
        for (_, v) in &w.harmonics[&idx] {
            assert!((v[0] - c(0.5, 0.0)).norm() < 1e-12);
        }
        let obs: BTreeMap<HarmonicIndex, BTreeMap<i64, CVec>> =
            [(idx, [(-1, CVec::from_element(1, c(2.0, 1.0))), (1, CVec::from_element(1, c(0.0, 0.0)))].into())].into();
        assert!((w.apply_estimate(&obs).unwrap() - c(1.0, 0.5)).norm() < 1e-12);
        let missing: BTreeMap<HarmonicIndex, BTreeMap<i64, CVec>> = [(idx, [(-1, CVec::from_element(1, c(2.0, 1.0)))].into())].into();
        assert!(w.apply_estimate(&missing).is_err());
    }

    #[test]
    fn input_errors() {
        let mut spec = FunctionalSpec::new(1, 1, 3).unwrap();
        assert!(spec.set(1, 4, 0, c(1.0, 0.0)).is_err());
        assert!(spec.set(0, 1, 2, c(1.0, 0.0)).is_err());
        let spec2 = point_functional(2, 0);
        assert!(matches!(
            solve_interpolation_noiseless(&ar_family(), &spec2, &InterpolationOptions::default()),
            Err(SpiError::DimensionMismatch(_))
        ));
    }
}
