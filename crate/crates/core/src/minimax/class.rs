//! The four `D₀ × D_ε` class pairs and their single-class noiseless variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::side::{Budget, Constraint, Samples};
use crate::density::DensityFamily;
use crate::error::{Result, SpiError};
use crate::harmonics::{harmonic_dimension, SphereGeometry};
use crate::linalg::{c, hermitian_defect, hermitian_eigen, max_abs, CMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    /// Trace budgets.
    Pair1,
    /// Per-channel diagonal budgets.
    Pair2,
    /// Budgets on `⟨B, ·⟩`.
    Pair3,
    /// Matrix budgets with Loewner contamination bounds.
    Pair4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    /// Signal density in `D₀`, noise density in `D_ε`.
    NoisyPair,
    /// Noiseless observations, signal density in `D₀`.
    #[serde(rename = "noiseless-D0", alias = "noiseless-d0")]
    NoiselessD0,
    /// Noiseless observations, signal density in `D_ε`.
    #[serde(rename = "noiseless-Deps", alias = "noiseless-deps")]
    NoiselessDeps,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Pair1 => "pair1",
            Self::Pair2 => "pair2",
            Self::Pair3 => "pair3",
            Self::Pair4 => "pair4",
        };
        f.write_str(s)
    }
}

impl FromStr for ClassKind {
    type Err = SpiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair1" => Ok(Self::Pair1),
            "pair2" => Ok(Self::Pair2),
            "pair3" => Ok(Self::Pair3),
            "pair4" => Ok(Self::Pair4),
            other => Err(SpiError::Input(format!("unknown class kind '{other}'"))),
        }
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NoisyPair => "noisy-pair",
            Self::NoiselessD0 => "noiseless-D0",
            Self::NoiselessDeps => "noiseless-Deps",
        };
        f.write_str(s)
    }
}

impl FromStr for ClassMode {
    type Err = SpiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy-pair" => Ok(Self::NoisyPair),
            "noiseless-D0" | "noiseless-d0" => Ok(Self::NoiselessD0),
            "noiseless-Deps" | "noiseless-deps" => Ok(Self::NoiselessDeps),
            other => Err(SpiError::Input(format!("unknown class mode '{other}'"))),
        }
    }
}

/// Class parameters; only those used by the kind and mode need be set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassParams {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub p_k: Option<Vec<f64>>,
    pub q_k: Option<Vec<f64>>,
    pub b1: Option<CMat>,
    pub b2: Option<CMat>,
    pub p_matrix: Option<CMat>,
    pub q_matrix: Option<CMat>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyClass {
    kind: ClassKind,
    mode: ClassMode,
    period: usize,
    dimension: usize,
    params: ClassParams,
    u: Option<DensityFamily>,
    v: Option<DensityFamily>,
}

fn check_positive(name: &str, x: Option<f64>) -> Result<f64> {
    match x {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(SpiError::Input(format!("{name} must be positive, got {v}"))),
        None => Err(SpiError::Input(format!("parameter {name} is required"))),
    }
}

fn check_positive_vec(name: &str, x: Option<&Vec<f64>>, t: usize) -> Result<()> {
    let v = x.ok_or_else(|| SpiError::Input(format!("parameter {name} is required")))?;
    if v.len() != t {
        return Err(SpiError::DimensionMismatch(format!("{name} has {} entries, expected T = {t}", v.len())));
    }
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(SpiError::Input(format!("{name} entries must be positive, got {bad}")));
    }
    Ok(())
}

fn check_pd(name: &str, x: Option<&CMat>, t: usize) -> Result<()> {
    let m = x.ok_or_else(|| SpiError::Input(format!("parameter {name} is required")))?;
    if m.nrows() != t || m.ncols() != t {
        return Err(SpiError::DimensionMismatch(format!("{name} is {}x{}, expected {t}x{t}", m.nrows(), m.ncols())));
    }
    let scale = max_abs(m).max(1e-300);
    if hermitian_defect(m) > 1e-12 * scale {
        return Err(SpiError::Input(format!("{name} is not Hermitian")));
    }
    if !(hermitian_eigen(m).0[0] > 0.0) {
        return Err(SpiError::Input(format!("{name} is not positive definite")));
    }
    Ok(())
}

impl UncertaintyClass {
    pub fn new(
        kind: ClassKind,
        mode: ClassMode,
        period: usize,
        dimension: usize,
        params: ClassParams,
        u: Option<DensityFamily>,
        v: Option<DensityFamily>,
    ) -> Result<Self> {
        if period == 0 {
            return Err(SpiError::Input("period T must be >= 1".into()));
        }
        SphereGeometry::new(dimension)?;
        let eps = params.epsilon;
        if !(0.0..=1.0).contains(&eps) {
            return Err(SpiError::Input(format!("ε must lie in [0, 1], got {eps}")));
        }
        let t = period;
        let needs_d0 = mode != ClassMode::NoiselessDeps;
        let needs_deps = mode != ClassMode::NoiselessD0;
        if needs_d0 {
            match kind {
                ClassKind::Pair1 => drop(check_positive("p", params.p)?),
                ClassKind::Pair2 => check_positive_vec("p_k", params.p_k.as_ref(), t)?,
                ClassKind::Pair3 => {
                    check_positive("p", params.p)?;
                    check_pd("B1", params.b1.as_ref(), t)?;
                }
                ClassKind::Pair4 => check_pd("P", params.p_matrix.as_ref(), t)?,
            }
        }
        if needs_deps {
            match kind {
                ClassKind::Pair1 => drop(check_positive("q", params.q)?),
                ClassKind::Pair2 => check_positive_vec("q_k", params.q_k.as_ref(), t)?,
                ClassKind::Pair3 => {
                    check_positive("q", params.q)?;
                    check_pd("B2", params.b2.as_ref(), t)?;
                    if mode == ClassMode::NoiselessDeps {
                        check_pd("B1", params.b1.as_ref(), t)?;
                    }
                }
                ClassKind::Pair4 => check_pd("Q", params.q_matrix.as_ref(), t)?,
            }
            if eps < 1.0 && u.is_none() {
                return Err(SpiError::Input("anchor density U is required when ε < 1".into()));
            }
        }
        for (name, fam) in [("U", &u), ("V", &v)] {
            if let Some(f) = fam {
                if f.period() != t {
                    return Err(SpiError::DimensionMismatch(format!(
                        "anchor {name} has period {}, class has T = {t}",
                        f.period()
                    )));
                }
            }
        }
        Ok(Self { kind, mode, period, dimension, params, u, v })
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    pub fn mode(&self) -> ClassMode {
        self.mode
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn params(&self) -> &ClassParams {
        &self.params
    }

    pub fn epsilon(&self) -> f64 {
        self.params.epsilon
    }

    pub fn anchor_u(&self) -> Option<&DensityFamily> {
        self.u.as_ref()
    }

    pub fn anchor_v(&self) -> Option<&DensityFamily> {
        self.v.as_ref()
    }

    pub fn noisy(&self) -> bool {
        self.mode == ClassMode::NoisyPair
    }

    /// Budget weights `h(m, n) / ω_n` of the given degrees.
    pub fn weights(&self, degrees: &[usize]) -> Result<BTreeMap<usize, f64>> {
        let omega = SphereGeometry::new(self.dimension)?.omega();
        degrees.iter().map(|&m| Ok((m, harmonic_dimension(m, self.dimension)? as f64 / omega))).collect()
    }

    fn anchor_samples(&self, degrees: &[usize], size: usize) -> Result<Samples> {
        let scale = 1.0 - self.params.epsilon;
        let mut out = Samples::new();
        for &m in degrees {
            let values = match &self.u {
                Some(u) => {
                    let d = u.get(m).ok_or_else(|| SpiError::Input(format!("anchor U has no density for degree {m}")))?;
                    d.check_psd(size)?;
                    d.sample(size)?.into_values().into_iter().map(|v| v * c(scale, 0.0)).collect()
                }
                None => vec![CMat::zeros(self.period, self.period); size],
            };
            out.insert(m, values);
        }
        Ok(out)
    }

    fn d0_budget(&self) -> Budget {
        let t = self.period;
        let p = &self.params;
        match self.kind {
            ClassKind::Pair1 => {
                Budget::Moment { shape: CMat::identity(t, t), pairing: CMat::identity(t, t), value: p.p.unwrap() }
            }
            ClassKind::Pair2 => Budget::Channels { values: p.p_k.clone().unwrap() },
            ClassKind::Pair3 => {
                let b1 = p.b1.clone().unwrap();
                Budget::Moment { shape: b1.transpose(), pairing: b1, value: p.p.unwrap() }
            }
            ClassKind::Pair4 => Budget::Matrix { value: p.p_matrix.clone().unwrap() },
        }
    }

    fn deps_budget(&self) -> Budget {
        let t = self.period;
        let p = &self.params;
        match self.kind {
            ClassKind::Pair1 => {
                Budget::Moment { shape: CMat::identity(t, t), pairing: CMat::identity(t, t), value: p.q.unwrap() }
            }
            ClassKind::Pair2 => Budget::Channels { values: p.q_k.clone().unwrap() },
            ClassKind::Pair3 => {
                let b2 = p.b2.clone().unwrap();
                // The single-class equation carries B₁ while the class is defined through B₂.
                let shape = if self.mode == ClassMode::NoiselessDeps {
                    p.b1.clone().unwrap().transpose()
                } else {
                    b2.transpose()
                };
                Budget::Moment { shape, pairing: b2, value: p.q.unwrap() }
            }
            ClassKind::Pair4 => Budget::Matrix { value: p.q_matrix.clone().unwrap() },
        }
    }

    /// Constraints on the signal density `F`.
    pub(crate) fn f_constraint(&self, degrees: &[usize], size: usize) -> Result<Constraint> {
        let weights = self.weights(degrees)?;
        let (budget, anchor) = match self.mode {
            ClassMode::NoiselessDeps => (self.deps_budget(), Some(self.anchor_samples(degrees, size)?)),
            _ => (self.d0_budget(), None),
        };
        Ok(Constraint { budget, anchor, weights, dim: self.period, size })
    }

    /// Constraints on the noise density `G` (noisy pairs only).
    pub(crate) fn g_constraint(&self, degrees: &[usize], size: usize) -> Result<Option<Constraint>> {
        if self.mode != ClassMode::NoisyPair {
            return Ok(None);
        }
        let weights = self.weights(degrees)?;
        Ok(Some(Constraint {
            budget: self.deps_budget(),
            anchor: Some(self.anchor_samples(degrees, size)?),
            weights,
            dim: self.period,
            size,
        }))
    }

    /// Checks that the class restricted to `degrees` is non-empty on a grid of `size` points.
    pub fn check_feasible(&self, degrees: &[usize], size: usize) -> Result<()> {
        let pinned = self.params.epsilon == 0.0;
        self.f_constraint(degrees, size)?.check_feasible(pinned)?;
        if let Some(g) = self.g_constraint(degrees, size)? {
            g.check_feasible(pinned)?;
        }
        Ok(())
    }
}
