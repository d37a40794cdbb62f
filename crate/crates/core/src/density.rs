//! Matrix spectral densities of the generating sequences, per harmonic degree.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SpiError};
use crate::grid::{check_grid_size, grid_point, MatrixGrid};
use crate::linalg::{c, cis, hermitian_defect, hermitian_eigen, hermitian_part, max_abs, scaled_identity, CMat};

const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Hermitian trigonometric polynomial `Σ_{|d|≤K} Z_d e^{idλ}` with `Z_{-d} = Z_d*`,
/// stored by its non-negative lags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    coefs: Vec<CMat>,
}

impl TrigPoly {
    pub fn new(mut coefs: Vec<CMat>) -> Result<Self> {
        let Some(first) = coefs.first() else {
            return Err(SpiError::Input("trigonometric polynomial needs at least the lag-0 coefficient".into()));
        };
        let dim = first.nrows();
        if dim == 0 {
            return Err(SpiError::DimensionMismatch("empty coefficient matrix".into()));
        }
        for (d, z) in coefs.iter().enumerate() {
            if z.nrows() != dim || z.ncols() != dim {
                return Err(SpiError::DimensionMismatch(format!(
                    "lag {d} coefficient is {}x{}, expected {dim}x{dim}",
                    z.nrows(),
                    z.ncols()
                )));
            }
            if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(SpiError::Input(format!("lag {d} coefficient is not finite")));
            }
        }
        let defect = hermitian_defect(&coefs[0]);
        if defect > HERMITIAN_TOL * max_abs(&coefs[0]).max(1.0) {
            return Err(SpiError::Input(format!("lag-0 coefficient is not Hermitian (defect {defect:.3e})")));
        }
        coefs[0] = hermitian_part(&coefs[0]);
        Ok(Self { coefs })
    }

    pub fn constant(m: CMat) -> Result<Self> {
        Self::new(vec![m])
    }

    pub fn dim(&self) -> usize {
        self.coefs[0].nrows()
    }

    /// Highest lag `K`.
    pub fn degree(&self) -> usize {
        self.coefs.len() - 1
    }

    pub fn lags(&self) -> &[CMat] {
        &self.coefs
    }

    /// `Z_n`, the coefficient of `e^{inλ}`.
    pub fn coefficient(&self, n: i64) -> CMat {
        let k = n.unsigned_abs() as usize;
        match self.coefs.get(k) {
            Some(z) if n >= 0 => z.clone(),
            Some(z) => z.adjoint(),
            None => CMat::zeros(self.dim(), self.dim()),
        }
    }

    pub fn eval(&self, lambda: f64) -> CMat {
        let mut out = self.coefs[0].clone();
        for (d, z) in self.coefs.iter().enumerate().skip(1) {
            let term = z * cis(d as f64 * lambda);
            out += &term + term.adjoint();
        }
        out
    }
}

/// A `T×T` Hermitian PSD matrix function of frequency, either as exact
/// trigonometric polynomial or as grid samples.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralDensity {
    TrigPoly(TrigPoly),
    Grid(MatrixGrid),
}

impl SpectralDensity {
    /// Density from non-negative lag coefficients; checks PSD on a fine grid.
    pub fn trig_poly(coefs: Vec<CMat>) -> Result<Self> {
        let d = Self::TrigPoly(TrigPoly::new(coefs)?);
        d.check_psd(d.native_check_grid())?;
        Ok(d)
    }

    /// Density from grid samples; checks Hermitian symmetry and PSD pointwise.
    pub fn grid(values: Vec<CMat>) -> Result<Self> {
        let g = MatrixGrid::new(values)?;
        for (s, v) in g.values().iter().enumerate() {
            let defect = hermitian_defect(v);
            if defect > HERMITIAN_TOL * max_abs(v).max(1.0) {
                return Err(SpiError::Input(format!("grid sample {s} is not Hermitian (defect {defect:.3e})")));
            }
        }
        let g = g.map(hermitian_part)?;
        let d = Self::Grid(g);
        d.check_psd(d.native_check_grid())?;
        Ok(d)
    }

    pub fn constant(m: CMat) -> Result<Self> {
        Self::trig_poly(vec![m])
    }

    pub fn identity(dim: usize) -> Self {
        Self::TrigPoly(TrigPoly { coefs: vec![CMat::identity(dim, dim)] })
    }

    pub fn zero(dim: usize) -> Self {
        Self::TrigPoly(TrigPoly { coefs: vec![CMat::zeros(dim, dim)] })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::TrigPoly(p) => p.dim(),
            Self::Grid(g) => g.dim(),
        }
    }

    fn native_check_grid(&self) -> usize {
        match self {
            Self::TrigPoly(p) => (4 * (p.degree() + 1)).next_power_of_two().max(64),
            Self::Grid(g) => g.size(),
        }
    }

    pub fn eval(&self, lambda: f64) -> CMat {
        match self {
            Self::TrigPoly(p) => p.eval(lambda),
            Self::Grid(g) => g.eval(lambda),
        }
    }

    /// Samples on the `size`-point grid (trigonometric interpolation for grid
    /// densities of a different size).
    pub fn sample(&self, size: usize) -> Result<MatrixGrid> {
        check_grid_size(size)?;
        match self {
            Self::TrigPoly(p) => MatrixGrid::from_fn(size, |l| p.eval(l)),
            Self::Grid(g) => g.resample(size),
        }
    }

    /// `(1/2π) ∫ F(λ) e^{-inλ} dλ`; exact for trigonometric polynomials, grid
    /// sum on the `size`-point grid otherwise.
    pub fn coefficient(&self, n: i64, size: usize) -> Result<CMat> {
        match self {
            Self::TrigPoly(p) => Ok(p.coefficient(n)),
            Self::Grid(g) if g.size() == size => g.coefficient(n),
            Self::Grid(g) => g.resample(size)?.coefficient(n),
        }
    }

    /// Bandwidth of a trigonometric-polynomial density.
    pub fn bandwidth(&self) -> Option<usize> {
        match self {
            Self::TrigPoly(p) => Some(p.degree()),
            Self::Grid(_) => None,
        }
    }

    pub fn scale(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(SpiError::Domain(format!("density scale must be finite and >= 0, got {s}")));
        }
        Ok(match self {
            Self::TrigPoly(p) => Self::TrigPoly(TrigPoly { coefs: p.coefs.iter().map(|z| z * c(s, 0.0)).collect() }),
            Self::Grid(g) => Self::Grid(g.map(|v| v * c(s, 0.0))?),
        })
    }

    /// Pointwise sum; exact for two trigonometric polynomials, on the `size` grid otherwise.
    pub fn add(&self, other: &Self, size: usize) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(SpiError::DimensionMismatch(format!("cannot add {0}x{0} and {1}x{1} densities", self.dim(), other.dim())));
        }
        match (self, other) {
            (Self::TrigPoly(a), Self::TrigPoly(b)) => {
                let k = a.degree().max(b.degree());
                let coefs = (0..=k as i64).map(|d| a.coefficient(d) + b.coefficient(d)).collect();
                Ok(Self::TrigPoly(TrigPoly { coefs }))
            }
            _ => {
                let a = self.sample(size)?;
                let b = other.sample(size)?;
                Ok(Self::Grid(MatrixGrid::new(a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect())?))
            }
        }
    }

    /// Largest negative eigenvalue violation and Hermitian defect on the grid.
    pub fn check_psd(&self, size: usize) -> Result<()> {
        check_grid_size(size)?;
        for s in 0..size {
            let l = grid_point(s, size);
            let v = self.eval(l);
            let scale = max_abs(&v).max(1.0);
            let min = hermitian_eigen(&v).0[0];
            if min < -PSD_TOL * scale {
                return Err(SpiError::Input(format!(
                    "density is not positive semidefinite at λ = {l:.6} (min eigenvalue {min:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Per-degree spectral densities of a `T`-variate generating sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFamily {
    period: usize,
    degrees: BTreeMap<usize, SpectralDensity>,
}

impl DensityFamily {
    pub fn new(period: usize, degrees: BTreeMap<usize, SpectralDensity>) -> Result<Self> {
        if period == 0 {
            return Err(SpiError::Input("period T must be >= 1".into()));
        }
        for (m, d) in &degrees {
            if d.dim() != period {
                return Err(SpiError::DimensionMismatch(format!(
                    "degree {m} density is {0}x{0}, expected {period}x{period}",
                    d.dim()
                )));
            }
        }
        Ok(Self { period, degrees })
    }

    /// Same density at every listed degree.
    pub fn uniform(density: SpectralDensity, degrees: impl IntoIterator<Item = usize>) -> Result<Self> {
        let period = density.dim();
        Self::new(period, degrees.into_iter().map(|m| (m, density.clone())).collect())
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn get(&self, m: usize) -> Option<&SpectralDensity> {
        self.degrees.get(&m)
    }

    pub fn degrees(&self) -> impl Iterator<Item = (usize, &SpectralDensity)> {
        self.degrees.iter().map(|(m, d)| (*m, d))
    }

    pub fn degree_set(&self) -> Vec<usize> {
        self.degrees.keys().copied().collect()
    }

    pub fn insert(&mut self, m: usize, density: SpectralDensity) -> Result<()> {
        if density.dim() != self.period {
            return Err(SpiError::DimensionMismatch(format!("degree {m} density has wrong size")));
        }
        self.degrees.insert(m, density);
        Ok(())
    }

    /// Pointwise sum over the union of degrees (missing degrees count as zero).
    pub fn add(&self, other: &Self, size: usize) -> Result<Self> {
        if self.period != other.period {
            return Err(SpiError::DimensionMismatch(format!(
                "period mismatch: {} vs {}",
                self.period, other.period
            )));
        }
        let mut degrees = BTreeMap::new();
        for m in self.degrees.keys().chain(other.degrees.keys()) {
            let sum = match (self.get(*m), other.get(*m)) {
                (Some(a), Some(b)) => a.add(b, size)?,
                (Some(a), None) | (None, Some(a)) => a.clone(),
                (None, None) => unreachable!(),
            };
            degrees.insert(*m, sum);
        }
        Self::new(self.period, degrees)
    }
}

/// Random band-limited density `P(λ)P(λ)* + δI` with `P` a matrix
/// trigonometric polynomial of degree `k` with Gaussian coefficients scaled by `scale`.
pub fn random_band_limited<R: Rng + ?Sized>(dim: usize, k: usize, scale: f64, delta: f64, rng: &mut R) -> SpectralDensity {
    let mut draw = || c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * scale;
    let p: Vec<CMat> = (0..=k).map(|_| CMat::from_fn(dim, dim, |_, _| draw())).collect();
    let mut coefs = vec![CMat::zeros(dim, dim); k + 1];
    for (n, out) in coefs.iter_mut().enumerate() {
        for j in n..=k {
            *out += &p[j] * p[j - n].adjoint();
        }
    }
    coefs[0] = hermitian_part(&coefs[0]) + scaled_identity(dim, delta);
    SpectralDensity::TrigPoly(TrigPoly { coefs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::grid_points;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn trig_poly_matches_direct_formula() {
        let z1 = CMat::from_element(1, 1, c(0.5, 0.0));
        let f = SpectralDensity::trig_poly(vec![CMat::from_element(1, 1, c(1.25, 0.0)), z1]).unwrap();
        for l in grid_points(16) {
            assert!((f.eval(l)[(0, 0)].re - (1.25 + l.cos())).abs() < 1e-14);
        }
        assert_eq!(f.coefficient(-1, 64).unwrap()[(0, 0)], c(0.5, 0.0));
        assert_eq!(f.coefficient(3, 64).unwrap()[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn rejects_indefinite_and_non_hermitian() {
        let bad = SpectralDensity::trig_poly(vec![
            CMat::from_element(1, 1, c(0.5, 0.0)),
            CMat::from_element(1, 1, c(0.5, 0.0)),
        ]);
        assert!(bad.is_err());
        let nh = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(SpectralDensity::constant(nh).is_err());
    }

    #[test]
    fn random_band_limited_is_psd_with_exact_coefficients() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = random_band_limited(3, 2, 1.0, 0.1, &mut rng);
            d.check_psd(128).unwrap();
            let g = d.sample(64).unwrap();
            for lag in -3i64..=3 {
                let diff = max_abs(&(g.coefficient(lag).unwrap() - d.coefficient(lag, 64).unwrap()));
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn family_sum_covers_union_of_degrees() {
        let a = DensityFamily::uniform(SpectralDensity::identity(2), [0, 1]).unwrap();
        let b = DensityFamily::uniform(SpectralDensity::identity(2), [1, 2]).unwrap();
        let s = a.add(&b, 64).unwrap();
        assert_eq!(s.degree_set(), vec![0, 1, 2]);
        assert_eq!(s.get(1).unwrap().eval(0.3), scaled_identity(2, 2.0));
        let c3 = DensityFamily::uniform(SpectralDensity::identity(3), [0]).unwrap();
        assert!(a.add(&c3, 64).is_err());
    }
}
