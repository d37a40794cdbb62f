//! Matrix-valued functions sampled on the uniform frequency grid
//! `λ_s = -π + 2πs/S`, `s = 0..S-1`, with FFT-based Fourier coefficients and
//! trigonometric interpolation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::FftPlanner;

use crate::error::{Result, SpiError};
use crate::linalg::{c, cis, CMat, CVec, C64, ZERO};

/// Default number of frequency grid points.
pub const DEFAULT_GRID: usize = 1024;

pub fn grid_point(s: usize, size: usize) -> f64 {
    -PI + 2.0 * PI * s as f64 / size as f64
}

pub fn grid_points(size: usize) -> Vec<f64> {
    (0..size).map(|s| grid_point(s, size)).collect()
}

pub fn check_grid_size(size: usize) -> Result<()> {
    if size < 4 || size % 2 != 0 {
        return Err(SpiError::Input(format!("grid size must be even and >= 4, got {size}")));
    }
    Ok(())
}

/// Samples `M(λ_s)` of a square-matrix function on the uniform grid.
#[derive(Debug, Clone)]
pub struct MatrixGrid {
    dim: usize,
    values: Vec<CMat>,
    coefs: OnceLock<Vec<CMat>>,
}

impl PartialEq for MatrixGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.values == other.values
    }
}

impl MatrixGrid {
    pub fn new(values: Vec<CMat>) -> Result<Self> {
        check_grid_size(values.len())?;
        let dim = values[0].nrows();
        if dim == 0 {
            return Err(SpiError::DimensionMismatch("empty matrices on grid".into()));
        }
        for (s, v) in values.iter().enumerate() {
            if v.nrows() != dim || v.ncols() != dim {
                return Err(SpiError::DimensionMismatch(format!(
                    "grid sample {s} is {}x{}, expected {dim}x{dim}",
                    v.nrows(),
                    v.ncols()
                )));
            }
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(SpiError::Input(format!("grid sample {s} is not finite")));
            }
        }
        Ok(Self { dim, values, coefs: OnceLock::new() })
    }

    pub fn from_fn(size: usize, f: impl Fn(f64) -> CMat) -> Result<Self> {
        check_grid_size(size)?;
        Self::new((0..size).map(|s| f(grid_point(s, size))).collect())
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[CMat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<CMat> {
        self.values
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Result<Self> {
        Self::new(self.values.iter().map(f).collect())
    }

    /// Discrete coefficients `(1/S) Σ_s M(λ_s) e^{-inλ_s}`, stored at index `n mod S`.
    fn raw_coefficients(&self) -> &[CMat] {
        self.coefs.get_or_init(|| {
            let size = self.size();
            let fft = FftPlanner::<f64>::new().plan_fft_forward(size);
            let mut out = vec![CMat::zeros(self.dim, self.dim); size];
            let mut buf = vec![ZERO; size];
            for i in 0..self.dim {
                for j in 0..self.dim {
                    for (b, v) in buf.iter_mut().zip(&self.values) {
                        *b = v[(i, j)];
                    }
                    fft.process(&mut buf);
                    for (k, b) in buf.iter().enumerate() {
                        // λ_s = -π + 2πs/S contributes the phase e^{inπ} = (-1)^n.
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        out[k][(i, j)] = b * (sign / size as f64);
                    }
                }
            }
            out
        })
    }

    /// Fourier coefficient `(1/2π) ∫ M(λ) e^{-idλ} dλ` by the exact grid sum.
    pub fn coefficient(&self, lag: i64) -> Result<CMat> {
        let size = self.size();
        if lag.unsigned_abs() as usize > size / 2 {
            return Err(SpiError::LagOutOfRange { lag, grid: size });
        }
        Ok(self.raw_coefficients()[lag.rem_euclid(size as i64) as usize].clone())
    }

    /// Trigonometric interpolant at an arbitrary frequency; the Nyquist term is
    /// split symmetrically so that Hermitian samples give Hermitian values.
    /// Frequencies that fall on the grid (mod 2π) return the stored sample.
    pub fn eval(&self, lambda: f64) -> CMat {
        let size = self.size();
        let pos = ((lambda + PI) / (2.0 * PI) * size as f64).rem_euclid(size as f64);
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            return self.values[(nearest as usize) % size].clone();
        }
        let coefs = self.raw_coefficients();
        let half = size / 2;
        let mut out = coefs[0].clone();
        for n in 1..half {
            out += &coefs[n] * cis(n as f64 * lambda);
            out += &coefs[size - n] * cis(-(n as f64) * lambda);
        }
        out += &coefs[half] * c((half as f64 * lambda).cos(), 0.0);
        out
    }

    /// Re-samples the trigonometric interpolant on a grid of another size.
    pub fn resample(&self, size: usize) -> Result<Self> {
        if size == self.size() {
            return Ok(self.clone());
        }
        Self::from_fn(size, |l| self.eval(l))
    }
}

/// Discrete coefficients of a vector function sampled on the grid, stored at
/// index `n mod S` (see [`MatrixGrid::coefficient`]).
pub fn vector_coefficients(values: &[CVec]) -> Vec<CVec> {
    let size = values.len();
    let dim = values.first().map_or(0, |v| v.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(size);
    let mut out = vec![CVec::zeros(dim); size];
    let mut buf = vec![ZERO; size];
    for i in 0..dim {
        for (b, v) in buf.iter_mut().zip(values) {
            *b = v[i];
        }
        fft.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            out[k][i] = b * (sign / size as f64);
        }
    }
    out
}

/// Index of lag `n` in the output of [`vector_coefficients`].
pub fn lag_index(n: i64, size: usize) -> usize {
    n.rem_euclid(size as i64) as usize
}

/// Per-lag coefficients of a matrix function given through closures, for use
/// in tests and oracles: direct (non-FFT) grid sum.
pub fn direct_coefficient(values: &[CMat], lag: i64) -> CMat {
    let size = values.len();
    let mut acc = CMat::zeros(values[0].nrows(), values[0].ncols());
    for (s, v) in values.iter().enumerate() {
        acc += v * cis(-(lag as f64) * grid_point(s, size));
    }
    acc / C64::new(size as f64, 0.0)
}
