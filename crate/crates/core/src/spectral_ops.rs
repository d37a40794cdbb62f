//! Fourier coefficients of matrix functions, block-Toeplitz operator assembly,
//! the minimality check and the coefficient solve.

use serde::{Deserialize, Serialize};

use crate::density::DensityFamily;
use crate::error::{Result, SpiError};
use crate::grid::{check_grid_size, MatrixGrid};
use crate::linalg::{condition_number, hpd_inverse, trace_re, CMat, CVec};

/// `(1/2π) ∫ M(λ) e^{-idλ} dλ` over the sampling grid of `values`.
pub fn fourier_coefficient(values: &MatrixGrid, lag: i64) -> Result<CMat> {
    values.coefficient(lag)
}

/// Block-Toeplitz operator with `(k, j)` block `(1/2π) ∫ M(λ)ᵀ e^{i(j-k)λ} dλ`,
/// `k, j = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockToeplitz {
    horizon: usize,
    block_size: usize,
    /// Blocks for `d = j - k` in `-N..=N`, stored at index `d + N`.
    blocks: Vec<CMat>,
    assembled: CMat,
}

impl BlockToeplitz {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Block for `d = j - k`.
    pub fn block(&self, d: i64) -> Option<&CMat> {
        let idx = d + self.horizon as i64;
        (0..self.blocks.len() as i64).contains(&idx).then(|| &self.blocks[idx as usize])
    }

    /// The full `(N+1)T × (N+1)T` matrix.
    pub fn matrix(&self) -> &CMat {
        &self.assembled
    }

    pub fn apply(&self, x: &CVec) -> CVec {
        &self.assembled * x
    }
}

/// Assembles the operator of a grid-sampled matrix function for horizon `N`.
pub fn assemble_operator(values: &MatrixGrid, horizon: usize) -> Result<BlockToeplitz> {
    let t = values.dim();
    let n = horizon as i64;
    // block(d) with d = j - k is the coefficient at lag -d, transposed.
    let blocks = (-n..=n).map(|d| values.coefficient(-d).map(|m| m.transpose())).collect::<Result<Vec<_>>>()?;
    let size = (horizon + 1) * t;
    let mut assembled = CMat::zeros(size, size);
    for k in 0..=horizon {
        for j in 0..=horizon {
            let b = &blocks[(j as i64 - k as i64 + n) as usize];
            assembled.view_mut((k * t, j * t), (t, t)).copy_from(b);
        }
    }
    Ok(BlockToeplitz { horizon, block_size: t, blocks, assembled })
}

/// Stacks per-lag vectors `x(0), …, x(N)` into one `(N+1)T` vector.
pub fn stack(parts: &[CVec]) -> CVec {
    let t = parts.first().map_or(0, |p| p.len());
    CVec::from_fn(parts.len() * t, |i, _| parts[i / t][i % t])
}

/// Splits a stacked vector back into per-lag blocks of size `t`.
pub fn unstack(x: &CVec, t: usize) -> Vec<CVec> {
    (0..x.len() / t).map(|j| x.rows(j * t, t).into_owned()).collect()
}

/// Solves `B c = D a` with a Cholesky factorisation of `B`; a failed
/// factorisation is reported as a minimality violation of `degree`.
pub fn solve_coefficients(b: &BlockToeplitz, d: Option<&BlockToeplitz>, a: &CVec, degree: usize) -> Result<CVec> {
    let rhs = match d {
        Some(d) => d.apply(a),
        None => a.clone(),
    };
    solve_hpd(b.matrix(), &rhs, degree)
}

pub(crate) fn solve_hpd(b: &CMat, rhs: &CVec, degree: usize) -> Result<CVec> {
    if b.nrows() != rhs.len() {
        return Err(SpiError::DimensionMismatch(format!("operator is {0}x{0}, vector has {1} entries", b.nrows(), rhs.len())));
    }
    let hermitian = crate::linalg::hermitian_part(b);
    let chol = hermitian.clone().cholesky().ok_or_else(|| SpiError::Minimality {
        degree,
        reason: "block operator is not positive definite".into(),
    })?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-12 * l[(i, i)].re) {
        return Err(SpiError::Minimality { degree, reason: "block operator is not positive definite".into() });
    }
    let c = chol.solve(rhs);
    let resid = (&hermitian * &c - rhs).norm();
    if !(resid <= 1e-8 * rhs.norm().max(f64::MIN_POSITIVE)) && rhs.norm() > 0.0 {
        return Err(SpiError::Minimality {
            degree,
            reason: format!("block operator is numerically singular (solve residual {resid:.3e})"),
        });
    }
    Ok(c)
}

/// Thresholds for the minimality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalityOptions {
    /// Largest admissible condition number of `H_m(λ)` on the grid.
    pub max_condition: f64,
    /// Largest admissible relative change of the trace integral under grid doubling.
    pub max_growth: f64,
}

impl Default for MinimalityOptions {
    fn default() -> Self {
        Self { max_condition: 1e10, max_growth: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeMinimality {
    pub degree: usize,
    /// `∫ Tr H_m(λ)^{-1} dλ` on the working grid.
    pub trace_integral: f64,
    /// The same on the doubled grid.
    pub refined_trace_integral: f64,
    pub max_condition: f64,
    pub passed: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    pub degrees: Vec<DegreeMinimality>,
}

impl MinimalityReport {
    /// Degrees that satisfy the minimality condition.
    pub fn passing(&self) -> Vec<usize> {
        self.degrees.iter().filter(|d| d.passed).map(|d| d.degree).collect()
    }

    pub fn failing(&self) -> Vec<usize> {
        self.degrees.iter().filter(|d| !d.passed).map(|d| d.degree).collect()
    }

    pub fn get(&self, degree: usize) -> Option<&DegreeMinimality> {
        self.degrees.iter().find(|d| d.degree == degree)
    }
}

fn trace_integral(values: &MatrixGrid) -> (f64, f64) {
    let size = values.size();
    let mut sum = 0.0;
    let mut cond: f64 = 0.0;
    for v in values.values() {
        cond = cond.max(condition_number(v));
        match hpd_inverse(v) {
            Some(inv) => sum += trace_re(&inv),
            None => return (f64::INFINITY, f64::INFINITY),
        }
    }
    (sum * 2.0 * std::f64::consts::PI / size as f64, cond)
}

/// Checks `∫ Tr H_m(λ)^{-1} dλ < ∞` per degree on the `size` grid and its doubling.
pub fn check_minimality(h: &DensityFamily, size: usize, options: &MinimalityOptions) -> Result<MinimalityReport> {
    check_grid_size(size)?;
    let mut degrees = Vec::new();
    for (m, density) in h.degrees() {
        let (coarse, cond) = trace_integral(&density.sample(size)?);
        let (fine, cond_fine) = trace_integral(&density.sample(2 * size)?);
        let max_condition = cond.max(cond_fine);
        let reason = if !coarse.is_finite() || !fine.is_finite() {
            Some("density is singular on the grid".to_string())
        } else if (fine - coarse).abs() > options.max_growth * coarse.abs() {
            Some(format!("trace integral grows under refinement ({coarse:.6e} -> {fine:.6e})"))
        } else if !(max_condition < options.max_condition) {
            Some(format!("condition number {max_condition:.3e} exceeds {:.3e}", options.max_condition))
        } else {
            None
        };
        degrees.push(DegreeMinimality {
            degree: m,
            trace_integral: coarse,
            refined_trace_integral: fine,
            max_condition,
            passed: reason.is_none(),
            reason,
        });
    }
    Ok(MinimalityReport { degrees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{random_band_limited, SpectralDensity};
    use crate::grid::grid_points;
    use crate::linalg::{c, hermitian_defect, identity, max_abs, min_eigenvalue, scaled_identity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::PI;

    fn scalar_family(coefs: &[f64]) -> DensityFamily {
        let d = SpectralDensity::trig_poly(coefs.iter().map(|&x| CMat::from_element(1, 1, c(x, 0.0))).collect()).unwrap();
        DensityFamily::uniform(d, [0]).unwrap()
    }

    #[test]
    fn identity_operator() {
        let g = MatrixGrid::from_fn(64, |_| identity(2)).unwrap();
        assert!(max_abs(&(fourier_coefficient(&g, 0).unwrap() - identity(2))) < 1e-14);
        assert!(max_abs(&fourier_coefficient(&g, 3).unwrap()) < 1e-14);
        let op = assemble_operator(&g, 2).unwrap();
        assert!(max_abs(&(op.matrix() - identity(6))) < 1e-14);
    }

    #[test]
    fn ar_inverse_operator() {
        let g = MatrixGrid::from_fn(256, |l| CMat::from_element(1, 1, c(1.0 / (1.25 + l.cos()), 0.0))).unwrap();
        let op = assemble_operator(&g, 1).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[c(4.0 / 3.0, 0.0), c(-2.0 / 3.0, 0.0), c(-2.0 / 3.0, 0.0), c(4.0 / 3.0, 0.0)]);
        assert!(max_abs(&(op.matrix() - expected)) < 1e-12);
        let op0 = assemble_operator(&g, 0).unwrap();
        let coef = solve_coefficients(&op0, None, &CVec::from_element(1, c(1.0, 0.0)), 0).unwrap();
        assert!((coef[0] - c(0.75, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn operator_structure_on_random_densities() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..10 {
            let d = random_band_limited(2, 2, 1.0, 0.2, &mut rng);
            let inv = d.sample(64).unwrap().map(|v| hpd_inverse(v).unwrap()).unwrap();
            let op = assemble_operator(&inv, 3).unwrap();
            assert!(hermitian_defect(op.matrix()) < 1e-10);
            assert!(min_eigenvalue(op.matrix()) > 0.0);
            for d in -3i64..=3 {
                let lhs = op.block(-d).unwrap();
                let rhs = op.block(d).unwrap().adjoint();
                assert!(max_abs(&(lhs - rhs)) < 1e-12);
            }
            // Toeplitz structure against the defining integral
            let t = 2;
            for (k, j) in [(0usize, 3usize), (1, 2), (3, 0), (2, 2), (1, 0)] {
                let direct = crate::grid::direct_coefficient(inv.values(), k as i64 - j as i64).transpose();
                let blk = op.matrix().view((k * t, j * t), (t, t)).into_owned();
                assert!(max_abs(&(blk - direct)) < 1e-12);
            }
        }
    }

    #[test]
    fn coefficients_reconstruct_band_limited_functions() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let d = random_band_limited(3, 4, 1.0, 0.0, &mut rng);
        let g = d.sample(32).unwrap();
        for (s, l) in grid_points(32).into_iter().enumerate() {
            let mut acc = CMat::zeros(3, 3);
            for n in -4i64..=4 {
                acc += fourier_coefficient(&g, n).unwrap() * crate::linalg::cis(n as f64 * l);
            }
            assert!(max_abs(&(acc - &g.values()[s])) < 1e-12);
        }
    }

    #[test]
    fn cholesky_solve_matches_dense_solver() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10 {
            let d = random_band_limited(2, 1, 1.0, 0.3, &mut rng);
            let inv = d.sample(64).unwrap().map(|v| hpd_inverse(v).unwrap()).unwrap();
            let op = assemble_operator(&inv, 2).unwrap();
            let rhs = CVec::from_fn(6, |i, _| c(i as f64 - 2.0, 0.5));
            let ours = solve_coefficients(&op, None, &rhs, 0).unwrap();
            let dense = op.matrix().clone().lu().solve(&rhs).unwrap();
            assert!((ours - &dense).norm() < 1e-9 * dense.norm());
        }
    }

    #[test]
    fn white_noise_solve_scales_weights() {
        let sigma2 = 2.5;
        let inv = MatrixGrid::from_fn(16, |_| scaled_identity(1, 1.0 / sigma2)).unwrap();
        let op = assemble_operator(&inv, 2).unwrap();
        let a = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)]);
        let coef = solve_coefficients(&op, None, &a, 0).unwrap();
        assert!((coef - a * c(sigma2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn singular_operator_names_degree() {
        let g = MatrixGrid::from_fn(16, |_| CMat::zeros(1, 1)).unwrap();
        let op = assemble_operator(&g, 0).unwrap();
        let err = solve_coefficients(&op, None, &CVec::from_element(1, c(1.0, 0.0)), 4).unwrap_err();
        assert!(matches!(err, SpiError::Minimality { degree: 4, .. }));
    }

    #[test]
    fn minimality_examples() {
        let opts = MinimalityOptions::default();
        let id = DensityFamily::uniform(SpectralDensity::identity(2), [0, 3]).unwrap();
        let report = check_minimality(&id, 1024, &opts).unwrap();
        assert_eq!(report.passing(), vec![0, 3]);
        assert!((report.degrees[0].trace_integral - 4.0 * PI).abs() < 1e-10);

        let ar = check_minimality(&scalar_family(&[1.25, 0.5]), 1024, &opts).unwrap();
        assert!(ar.degrees[0].passed);
        assert!((ar.degrees[0].trace_integral - 2.0 * PI * 4.0 / 3.0).abs() < 1e-6);

        let unit_root = check_minimality(&scalar_family(&[2.0, -1.0]), 1024, &opts).unwrap();
        assert!(!unit_root.degrees[0].passed);
        assert_eq!(unit_root.failing(), vec![0]);
    }
}
