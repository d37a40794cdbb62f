//! Numerical verification of the saddle-point inequalities at a candidate
//! least-favourable pair, and the minimax characteristic built from it.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::side::{Constraint, Samples};
use super::solver::{to_grids, LeastFavourableSolution};
use crate::density::random_band_limited;
use crate::error::{Result, SpiError};
use crate::harmonics::HarmonicIndex;
use crate::interpolation::{
    characteristic_map, lag_polynomial, mse_for_characteristic, solve_sampled, WindowedCharacteristic,
};
use crate::linalg::{c, cis, hermitian_eigen, row_outer, scaled_identity, CMat, CVec};
use crate::grid::grid_point;
use crate::simulator::replicate_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleOptions {
    /// Number of random admissible density pairs (and of random characteristics).
    pub samples: usize,
    pub seed: u64,
    /// Allowed excess of `Δ(h⁰; F, G)` over `Δ(h⁰; F⁰, G⁰)`.
    pub tolerance: f64,
    /// Bound on the directional derivative of `Δ(h⁰; ·)` into sampled directions.
    pub derivative_tolerance: f64,
    /// Also check `Δ(h(F, G); F, G) ≤ Δ⁰` on fresh class members.
    pub maximality: bool,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self { samples: 200, seed: 0, tolerance: 1e-6, derivative_tolerance: 1e-5, maximality: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub samples: usize,
    /// `Δ(h⁰; F⁰, G⁰)` in integral form.
    pub reference: f64,
    /// `max Δ(h⁰; F, G) - Δ⁰` over sampled class members.
    pub max_excess: Option<f64>,
    /// `min Δ(h; F⁰, G⁰) - Δ⁰` over sampled admissible characteristics.
    pub min_characteristic_gap: Option<f64>,
    pub max_directional_derivative: Option<f64>,
    pub maximality_samples: usize,
    /// `max Δ(h(F, G); F, G) - Δ⁰`.
    pub max_maximality_excess: Option<f64>,
    pub violations: usize,
    pub first_violation: Option<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleKind {
    Fresh,
    Convex,
    WorstSpike,
    RandomSpike,
}

fn sample_kind(i: usize) -> SampleKind {
    match i % 4 {
        0 => SampleKind::Fresh,
        1 => SampleKind::Convex,
        2 => SampleKind::WorstSpike,
        _ => SampleKind::RandomSpike,
    }
}

fn random_base<R: Rng + ?Sized>(dim: usize, degrees: &[usize], size: usize, rng: &mut R) -> Result<Samples> {
    degrees
        .iter()
        .map(|&m| {
            let k = rng.random_range(0..=3);
            let delta = rng.random_range(0.01..0.5);
            let d = random_band_limited(dim, k, 1.0, delta, rng);
            Ok((m, d.sample(size)?.into_values()))
        })
        .collect()
}

/// Mass at one grid point in direction `v`, plus a small isotropic floor.
fn spike_base(dim: usize, degrees: &[usize], size: usize, at: (usize, usize), v: &CVec) -> Samples {
    degrees
        .iter()
        .map(|&m| {
            let values = (0..size)
                .map(|s| {
                    let mut x = scaled_identity(dim, 1e-6);
                    if (m, s) == at {
                        x += row_outer(&v.map(|z| z.conj())) * c(size as f64, 0.0);
                    }
                    x
                })
                .collect();
            (m, values)
        })
        .collect()
}

/// `Σ_l conj(e) eᵀ` for the error `e = A - h` (signal side) or `e = h` (noise side).
pub(super) fn gradients(
    sol: &LeastFavourableSolution,
    characteristic: &BTreeMap<HarmonicIndex, Vec<CVec>>,
) -> Result<(Samples, Samples)> {
    let size = sol.grid();
    let dim = sol.class.period();
    let mut xf: Samples = BTreeMap::new();
    let mut xg: Samples = BTreeMap::new();
    for (idx, h) in characteristic {
        let a = lag_polynomial(&sol.spec.lifted(*idx)?, size);
        let fx = xf.entry(idx.m).or_insert_with(|| vec![CMat::zeros(dim, dim); size]);
        for s in 0..size {
            fx[s] += row_outer(&(&a[s] - &h[s]));
        }
        let gx = xg.entry(idx.m).or_insert_with(|| vec![CMat::zeros(dim, dim); size]);
        for s in 0..size {
            gx[s] += row_outer(&h[s]);
        }
    }
    Ok((xf, xg))
}

/// Location and direction maximising the top eigenvalue of `x / w_m`.
fn worst_point(x: &Samples, con: &Constraint) -> ((usize, usize), CVec) {
    let mut best = (f64::NEG_INFINITY, (0, 0), CVec::zeros(con.dim));
    for (m, values) in x {
        let w = con.weights[m];
        for (s, v) in values.iter().enumerate() {
            let (vals, vecs) = hermitian_eigen(v);
            let top = vals[con.dim - 1] / w;
            if top > best.0 {
                best = (top, (*m, s), vecs.column(con.dim - 1).into_owned());
            }
        }
    }
    (best.1, best.2)
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVec {
    let v = CVec::from_fn(dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let n = v.norm();
    v / c(n.max(1e-300), 0.0)
}

fn blend(a: &Samples, b: &Samples, theta: f64) -> Samples {
    a.iter()
        .map(|(m, v)| (*m, v.iter().zip(&b[m]).map(|(x, y)| x * c(1.0 - theta, 0.0) + y * c(theta, 0.0)).collect()))
        .collect()
}

struct Draw {
    f: Samples,
    g: Option<Samples>,
    kind: SampleKind,
}

fn draw_member<R: Rng + ?Sized>(
    con: &Constraint,
    current: &Samples,
    gradient: &Samples,
    kind: SampleKind,
    rng: &mut R,
) -> Result<Samples> {
    let degrees: Vec<usize> = con.weights.keys().copied().collect();
    let (dim, size) = (con.dim, con.size);
    let base = random_base(dim, &degrees, size, rng)?;
    let extra = random_base(dim, &degrees, size, rng)?;
    let spike = |at: (usize, usize), v: &CVec| spike_base(dim, &degrees, size, at, v);
    Ok(match kind {
        SampleKind::Fresh => con.member(&base, &extra)?,
        SampleKind::Convex => {
            let theta = rng.random_range(0.02..0.98);
            blend(current, &con.member(&base, &extra)?, theta)
        }
        SampleKind::WorstSpike | SampleKind::RandomSpike => {
            let (at, v) = if kind == SampleKind::WorstSpike {
                worst_point(gradient, con)
            } else {
                let m = degrees[rng.random_range(0..degrees.len())];
                ((m, rng.random_range(0..size)), random_direction(dim, rng))
            };
            let s = spike(at, &v);
            if con.contaminated() {
                con.member(&base, &s)?
            } else {
                con.member(&s, &extra)?
            }
        }
    })
}

/// Checks `Δ(h⁰; F, G) ≤ Δ(h⁰; F⁰, G⁰) ≤ Δ(h; F⁰, G⁰)` on random class members
/// and random admissible characteristics `h = h⁰ + δ`, with `δ` supported on
/// the observed lags.
pub fn verify_saddle(sol: &LeastFavourableSolution, options: &SaddleOptions) -> Result<SaddleReport> {
    let size = sol.grid();
    let degrees: Vec<usize> = sol.f.keys().copied().collect();
    let f_con = sol.class.f_constraint(&degrees, size)?;
    let g_con = sol.class.g_constraint(&degrees, size)?;
    let f0: Samples = sol.f.iter().map(|(m, g)| (*m, g.values().to_vec())).collect();
    let g0: Option<Samples> = sol.g.as_ref().map(|g| g.iter().map(|(m, g)| (*m, g.values().to_vec())).collect());
    let h0 = characteristic_map(&sol.interpolation);
    let reference = mse_for_characteristic(&sol.spec, &h0, &sol.f, sol.g.as_ref())?;
    let mut report = SaddleReport {
        samples: options.samples,
        reference,
        max_excess: None,
        min_characteristic_gap: None,
        max_directional_derivative: None,
        maximality_samples: 0,
        max_maximality_excess: None,
        violations: 0,
        first_violation: None,
        passed: true,
    };
    if options.samples == 0 {
        return Ok(report);
    }
    let (xf, xg) = gradients(sol, &h0)?;
    let tau = 1e-3;

    struct Outcome {
        excess: f64,
        derivative: f64,
        maximality: Option<f64>,
        char_gap: f64,
        kind: SampleKind,
    }

    let outcomes: Vec<Outcome> = (0..options.samples)
        .into_par_iter()
        .map(|i| -> Result<Outcome> {
            let mut rng = replicate_rng(options.seed, i as u64);
            let kind = sample_kind(i);
            let f = draw_member(&f_con, &f0, &xf, kind, &mut rng)?;
            let g = match (&g_con, &g0) {
                (Some(con), Some(cur)) => Some(draw_member(con, cur, &xg, kind, &mut rng)?),
                _ => None,
            };
            let draw = Draw { f, g, kind };
            let fg = to_grids(&draw.f)?;
            let gg = draw.g.as_ref().map(to_grids).transpose()?;
            let value = mse_for_characteristic(&sol.spec, &h0, &fg, gg.as_ref())?;
            let fs = to_grids(&blend(&f0, &draw.f, tau))?;
            let gs = match (&g0, &draw.g) {
                (Some(a), Some(b)) => Some(to_grids(&blend(a, b, tau))?),
                _ => None,
            };
            let derivative = (mse_for_characteristic(&sol.spec, &h0, &fs, gs.as_ref())? - reference) / tau;
            let maximality = if options.maximality && draw.kind == SampleKind::Fresh {
                solve_sampled(&fg, gg.as_ref(), &sol.spec, 0.0).ok().map(|s| s.mse - reference)
            } else {
                None
            };
            // Random admissible characteristic: h⁰ plus terms at observed lags.
            let mut perturbed = BTreeMap::new();
            let horizon = sol.spec.horizon() as i64;
            let amp: f64 = rng.random_range(1e-3..1.0);
            for (idx, h) in &h0 {
                let lags: Vec<i64> = (-3..=-1).chain(horizon + 1..=horizon + 3).collect();
                let coefs: Vec<CVec> = lags
                    .iter()
                    .map(|_| {
                        CVec::from_fn(sol.class.period(), |_, _| {
                            c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * amp
                        })
                    })
                    .collect();
                let values: Vec<CVec> = h
                    .iter()
                    .enumerate()
                    .map(|(s, hs)| {
                        let l = grid_point(s, size);
                        let mut out = hs.clone();
                        for (j, cj) in lags.iter().zip(&coefs) {
                            out += cj * cis(*j as f64 * l);
                        }
                        out
                    })
                    .collect();
                perturbed.insert(*idx, values);
            }
            let char_gap = mse_for_characteristic(&sol.spec, &perturbed, &sol.f, sol.g.as_ref())? - reference;
            Ok(Outcome { excess: value - reference, derivative, maximality, char_gap, kind: draw.kind })
        })
        .collect::<Result<_>>()?;

    for (i, o) in outcomes.iter().enumerate() {
        report.max_excess = Some(report.max_excess.map_or(o.excess, |x| x.max(o.excess)));
        report.max_directional_derivative =
            Some(report.max_directional_derivative.map_or(o.derivative, |x| x.max(o.derivative)));
        report.min_characteristic_gap =
            Some(report.min_characteristic_gap.map_or(o.char_gap, |x| x.min(o.char_gap)));
        if let Some(mx) = o.maximality {
            report.maximality_samples += 1;
            report.max_maximality_excess = Some(report.max_maximality_excess.map_or(mx, |x| x.max(mx)));
        }
        let mut fail = Vec::new();
        if o.excess > options.tolerance {
            fail.push(format!("Δ(h⁰;F,G) exceeds Δ⁰ by {:.3e} ({:?} sample)", o.excess, o.kind));
        }
        if o.derivative > options.derivative_tolerance {
            fail.push(format!("directional derivative {:.3e}", o.derivative));
        }
        if o.char_gap < -options.tolerance {
            fail.push(format!("characteristic perturbation lowers Δ by {:.3e}", -o.char_gap));
        }
        if let Some(mx) = o.maximality {
            if mx > options.tolerance {
                fail.push(format!("Δ(h(F,G);F,G) exceeds Δ⁰ by {mx:.3e}"));
            }
        }
        if !fail.is_empty() {
            report.violations += 1;
            if report.first_violation.is_none() {
                report.first_violation = Some(format!("sample {i}: {}", fail.join("; ")));
            }
        }
    }
    report.passed = report.violations == 0;
    Ok(report)
}

/// Windowed spectral characteristic of a verified least-favourable solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxCharacteristic {
    pub characteristic: WindowedCharacteristic,
    /// Guaranteed mean-square error over the class.
    pub mse: f64,
    pub tag: &'static str,
}

/// The minimax characteristic `h⁰ = h(F⁰, G⁰)`; refuses solutions that did
/// not converge or failed saddle verification.
pub fn minimax_characteristic(
    sol: &LeastFavourableSolution,
    saddle: &SaddleReport,
    window: usize,
) -> Result<MinimaxCharacteristic> {
    if !sol.report.converged {
        return Err(SpiError::Refused(format!(
            "least-favourable iteration did not converge ({})",
            sol.report.note.as_deref().unwrap_or("no detail")
        )));
    }
    if !saddle.passed {
        return Err(SpiError::Refused(format!(
            "saddle verification failed: {}",
            saddle.first_violation.as_deref().unwrap_or("no detail")
        )));
    }
    Ok(MinimaxCharacteristic {
        characteristic: sol.interpolation.spectral_characteristic_coeffs(window)?,
        mse: sol.interpolation.mse,
        tag: "minimax",
    })
}
