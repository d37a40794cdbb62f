//! JSON documents exchanged with the command line front-end.
//!
//! Complex numbers are `[re, im]` pairs and matrices are lists of rows. Every
//! document carries a `schema` tag; reals are written in shortest round-trip
//! form, so parsing an emitted document gives back an equal value.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::density::{DensityFamily, SpectralDensity};
use crate::error::{Result, SpiError};
use crate::harmonics::HarmonicIndex;
use crate::interpolation::{FunctionalSpec, HarmonicDiagnostics, InterpolationSolution, WindowedCharacteristic};
use crate::linalg::{c, CMat, CVec, C64};
use crate::minimax::{
    ClassKind, ClassMode, ClassParams, ConvergenceReport, DegreeMultiplier, LeastFavourableSolution, Pairing,
    ResidualReport, SaddleReport, UncertaintyClass,
};

pub type Complex = [f64; 2];
pub type Matrix = Vec<Vec<Complex>>;

pub fn complex(z: C64) -> Complex {
    [z.re, z.im]
}

pub fn from_complex(z: Complex) -> C64 {
    c(z[0], z[1])
}

pub fn matrix(m: &CMat) -> Matrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| complex(m[(i, j)])).collect()).collect()
}

pub fn vector(v: &CVec) -> Vec<Complex> {
    v.iter().map(|z| complex(*z)).collect()
}

/// Square `dim × dim` matrix from rows; `field` names the location in errors.
pub fn from_matrix(rows: &Matrix, dim: usize, field: &str) -> Result<CMat> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(SpiError::Input(format!("{field}: expected a {dim}x{dim} matrix")));
    }
    if rows.iter().flatten().flatten().any(|x| !x.is_finite()) {
        return Err(SpiError::Input(format!("{field}: entries must be finite")));
    }
    Ok(CMat::from_fn(dim, dim, |i, j| from_complex(rows[i][j])))
}

pub fn from_vector(v: &[Complex], dim: usize, field: &str) -> Result<CVec> {
    if v.len() != dim {
        return Err(SpiError::Input(format!("{field}: expected {dim} entries, got {}", v.len())));
    }
    Ok(CVec::from_iterator(dim, v.iter().map(|z| from_complex(*z))))
}

/// Serialization shared by all documents.
pub trait Document: Serialize + DeserializeOwned {
    const SCHEMA: &'static str;

    fn schema(&self) -> &str;

    fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| SpiError::Input(format!("{} document: at `{}`: {}", Self::SCHEMA, e.path(), e.inner())))?;
        if doc.schema() != Self::SCHEMA {
            return Err(SpiError::Input(format!(
                "schema: expected \"{}\", found \"{}\"",
                Self::SCHEMA,
                doc.schema()
            )));
        }
        Ok(doc)
    }

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialize");
        s.push('\n');
        s
    }
}

macro_rules! document {
    ($t:ty, $tag:expr) => {
        impl Document for $t {
            const SCHEMA: &'static str = $tag;
            fn schema(&self) -> &str {
                &self.schema
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Non-negative lag coefficients `Z_0, …, Z_K` of `Σ_{|d|≤K} Z_d e^{idλ}`.
    TrigPoly,
    /// Samples on the grid `λ_s = -π + 2πs/S`.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeData {
    pub m: usize,
    pub data: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityDocument {
    pub schema: String,
    #[serde(rename = "T")]
    pub period: usize,
    pub representation: Representation,
    pub degrees: Vec<DegreeData>,
}

document!(DensityDocument, "spi-density/1");

impl DensityDocument {
    /// Trigonometric form when every degree has one, grid samples otherwise
    /// (at the size of the first grid density).
    pub fn from_family(family: &DensityFamily) -> Result<Self> {
        let size = family.degrees().find_map(|(_, d)| match d {
            SpectralDensity::Grid(g) => Some(g.size()),
            SpectralDensity::TrigPoly(_) => None,
        });
        let degrees = family
            .degrees()
            .map(|(m, d)| {
                let data = match (size, d) {
                    (None, SpectralDensity::TrigPoly(p)) => p.lags().iter().map(matrix).collect(),
                    (Some(s), d) => d.sample(s)?.values().iter().map(matrix).collect(),
                    (None, SpectralDensity::Grid(_)) => unreachable!(),
                };
                Ok(DegreeData { m, data })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema: Self::SCHEMA.into(),
            period: family.period(),
            representation: if size.is_some() { Representation::Grid } else { Representation::TrigPoly },
            degrees,
        })
    }

    pub fn to_family(&self) -> Result<DensityFamily> {
        let t = self.period;
        if t == 0 {
            return Err(SpiError::Input("T: period must be >= 1".into()));
        }
        let mut degrees = BTreeMap::new();
        for (i, d) in self.degrees.iter().enumerate() {
            let at = |k: usize| format!("degrees[{i}].data[{k}]");
            if d.data.is_empty() {
                return Err(SpiError::Input(format!("degrees[{i}].data: empty")));
            }
            let mats: Vec<CMat> =
                d.data.iter().enumerate().map(|(k, x)| from_matrix(x, t, &at(k))).collect::<Result<_>>()?;
            let density = match self.representation {
                Representation::TrigPoly => SpectralDensity::trig_poly(mats),
                Representation::Grid => SpectralDensity::grid(mats),
            }
            .map_err(|e| SpiError::Input(format!("degrees[{i}] (m={}): {e}", d.m)))?;
            if degrees.insert(d.m, density).is_some() {
                return Err(SpiError::Input(format!("degrees[{i}]: degree m={} listed twice", d.m)));
            }
        }
        DensityFamily::new(t, degrees)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    pub m: usize,
    pub l: usize,
    pub j: usize,
    pub value: Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalDocument {
    pub schema: String,
    #[serde(rename = "T")]
    pub period: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    /// Dimension of the ambient space of the sphere `S_n`.
    pub n: usize,
    pub weights: Vec<WeightEntry>,
}

document!(FunctionalDocument, "spi-functional/1");

impl FunctionalDocument {
    pub fn from_spec(spec: &FunctionalSpec) -> Self {
        let weights = spec
            .harmonics()
            .flat_map(|(idx, w)| {
                w.iter().enumerate().map(move |(j, v)| WeightEntry { m: idx.m, l: idx.l, j, value: complex(*v) })
            })
            .collect();
        Self {
            schema: Self::SCHEMA.into(),
            period: spec.period(),
            horizon: spec.horizon(),
            n: spec.dimension(),
            weights,
        }
    }

    pub fn to_spec(&self) -> Result<FunctionalSpec> {
        let mut spec = FunctionalSpec::new(self.period, self.horizon, self.n)?;
        for (i, w) in self.weights.iter().enumerate() {
            if !(w.value[0].is_finite() && w.value[1].is_finite()) {
                return Err(SpiError::Input(format!("weights[{i}].value: must be finite")));
            }
            spec.set(w.m, w.l, w.j, from_complex(w.value)).map_err(|e| SpiError::Input(format!("weights[{i}]: {e}")))?;
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<Matrix>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p_matrix: Option<Matrix>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<Matrix>,
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorsDocument {
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<DensityDocument>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<DensityDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDocument {
    pub schema: String,
    pub kind: ClassKind,
    pub mode: ClassMode,
    #[serde(rename = "T")]
    pub period: usize,
    pub n: usize,
    pub params: ParamsDocument,
    #[serde(default)]
    pub anchors: AnchorsDocument,
}

document!(ClassDocument, "spi-class/1");

impl ClassDocument {
    pub fn from_class(class: &UncertaintyClass) -> Result<Self> {
        let p = class.params();
        let anchor = |f: Option<&DensityFamily>| f.map(DensityDocument::from_family).transpose();
        Ok(Self {
            schema: Self::SCHEMA.into(),
            kind: class.kind(),
            mode: class.mode(),
            period: class.period(),
            n: class.dimension(),
            params: ParamsDocument {
                p: p.p,
                q: p.q,
                p_k: p.p_k.clone(),
                q_k: p.q_k.clone(),
                b1: p.b1.as_ref().map(matrix),
                b2: p.b2.as_ref().map(matrix),
                p_matrix: p.p_matrix.as_ref().map(matrix),
                q_matrix: p.q_matrix.as_ref().map(matrix),
                epsilon: p.epsilon,
            },
            anchors: AnchorsDocument { u: anchor(class.anchor_u())?, v: anchor(class.anchor_v())? },
        })
    }

    pub fn to_class(&self) -> Result<UncertaintyClass> {
        let t = self.period;
        let mat = |x: &Option<Matrix>, field: &str| x.as_ref().map(|m| from_matrix(m, t, field)).transpose();
        let p = &self.params;
        let params = ClassParams {
            p: p.p,
            q: p.q,
            p_k: p.p_k.clone(),
            q_k: p.q_k.clone(),
            b1: mat(&p.b1, "params.b1")?,
            b2: mat(&p.b2, "params.b2")?,
            p_matrix: mat(&p.p_matrix, "params.P")?,
            q_matrix: mat(&p.q_matrix, "params.Q")?,
            epsilon: p.epsilon,
        };
        let anchor = |d: &Option<DensityDocument>, field: &str| {
            d.as_ref()
                .map(|d| d.to_family().map_err(|e| SpiError::Input(format!("anchors.{field}: {e}"))))
                .transpose()
        };
        UncertaintyClass::new(
            self.kind,
            self.mode,
            t,
            self.n,
            params,
            anchor(&self.anchors.u, "U")?,
            anchor(&self.anchors.v, "V")?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagValue {
    pub j: i64,
    pub value: Vec<Complex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicDocument {
    pub m: usize,
    pub l: usize,
    /// `c⃗(j)`, `j = 0..N`.
    pub coefficients: Vec<Vec<Complex>>,
    /// `h⃗(j)` on the observation window.
    pub characteristic: Vec<LagValue>,
    pub tail_mass: f64,
    pub mse: f64,
    pub diagnostics: HarmonicDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationDocument {
    pub schema: String,
    /// `"interpolation"` or `"minimax"`.
    pub tag: String,
    #[serde(rename = "T")]
    pub period: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub grid: usize,
    pub window: usize,
    pub noiseless: bool,
    pub regularization: f64,
    pub mse: f64,
    pub mse_integral: f64,
    pub degrees_used: Vec<usize>,
    pub excluded_degrees: Vec<usize>,
    pub excluded_energy: f64,
    pub harmonics: Vec<HarmonicDocument>,
}

document!(InterpolationDocument, "spi-interpolation/1");

impl InterpolationDocument {
    pub fn from_solution(sol: &InterpolationSolution, window: usize, tag: &str) -> Result<Self> {
        let windowed = sol.spectral_characteristic_coeffs(window)?;
        let harmonics = sol
            .harmonics
            .iter()
            .map(|h| HarmonicDocument {
                m: h.index.m,
                l: h.index.l,
                coefficients: h.coefficients.iter().map(vector).collect(),
                characteristic: windowed.harmonics[&h.index]
                    .iter()
                    .map(|(j, v)| LagValue { j: *j, value: vector(v) })
                    .collect(),
                tail_mass: windowed.tail_mass[&h.index],
                mse: h.mse,
                diagnostics: h.diagnostics,
            })
            .collect();
        Ok(Self {
            schema: Self::SCHEMA.into(),
            tag: tag.into(),
            period: sol.period,
            horizon: sol.horizon,
            grid: sol.grid,
            window,
            noiseless: sol.noiseless,
            regularization: sol.regularization,
            mse: sol.mse,
            mse_integral: sol.mse_integral,
            degrees_used: sol.degrees_used.clone(),
            excluded_degrees: sol.excluded_degrees.clone(),
            excluded_energy: sol.excluded_energy,
            harmonics,
        })
    }

    /// The windowed characteristic, for applying the estimate.
    pub fn to_characteristic(&self) -> Result<WindowedCharacteristic> {
        let t = self.period;
        let mut harmonics = BTreeMap::new();
        let mut tail_mass = BTreeMap::new();
        for (i, h) in self.harmonics.iter().enumerate() {
            let idx = HarmonicIndex { m: h.m, l: h.l };
            let lags = h
                .characteristic
                .iter()
                .enumerate()
                .map(|(k, lv)| Ok((lv.j, from_vector(&lv.value, t, &format!("harmonics[{i}].characteristic[{k}]"))?)))
                .collect::<Result<_>>()?;
            harmonics.insert(idx, lags);
            tail_mass.insert(idx, h.tail_mass);
        }
        Ok(WindowedCharacteristic { period: t, horizon: self.horizon, window: self.window, harmonics, tail_mass })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierDocument {
    /// `"F"` or `"G"`.
    pub side: String,
    pub m: usize,
    pub constant: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<Complex>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_one_defect: Option<f64>,
    /// Slack functions on the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<Vec<Matrix>>,
}

impl MultiplierDocument {
    fn new(side: &str, m: usize, d: &DegreeMultiplier) -> Self {
        Self {
            side: side.into(),
            m,
            constant: matrix(&d.constant),
            scalar: d.scalar,
            channels: d.channels.clone(),
            vector: d.vector.as_ref().map(vector),
            rank_one_defect: d.rank_one_defect,
            slack: d.slack.as_ref().map(|s| s.iter().map(matrix).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxDocument {
    pub schema: String,
    pub class: ClassDocument,
    pub functional: FunctionalDocument,
    pub pairing: Pairing,
    pub grid: usize,
    pub mse: f64,
    #[serde(rename = "F")]
    pub f: DensityDocument,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<DensityDocument>,
    pub multipliers: Vec<MultiplierDocument>,
    pub residuals: ResidualReport,
    pub convergence: ConvergenceReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saddle: Option<SaddleReport>,
    /// `h(F⁰, G⁰)`, tagged `"minimax"` only when converged and verified.
    pub characteristic: InterpolationDocument,
}

document!(MinimaxDocument, "spi-minimax/1");

impl MinimaxDocument {
    pub fn from_solution(sol: &LeastFavourableSolution, saddle: Option<&SaddleReport>, window: usize) -> Result<Self> {
        let verified = sol.report.converged && saddle.is_some_and(|s| s.passed);
        let mut multipliers: Vec<MultiplierDocument> =
            sol.f_multipliers.iter().map(|(m, d)| MultiplierDocument::new("F", *m, d)).collect();
        if let Some(g) = &sol.g_multipliers {
            multipliers.extend(g.iter().map(|(m, d)| MultiplierDocument::new("G", *m, d)));
        }
        Ok(Self {
            schema: Self::SCHEMA.into(),
            class: ClassDocument::from_class(&sol.class)?,
            functional: FunctionalDocument::from_spec(&sol.spec),
            pairing: sol.pairing,
            grid: sol.grid(),
            mse: sol.mse(),
            f: DensityDocument::from_family(&sol.f_family()?)?,
            g: sol.g_family()?.as_ref().map(DensityDocument::from_family).transpose()?,
            multipliers,
            residuals: sol.residuals.clone(),
            convergence: sol.report.clone(),
            saddle: saddle.cloned(),
            characteristic: InterpolationDocument::from_solution(
                &sol.interpolation,
                window,
                if verified { "minimax" } else { "candidate" },
            )?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    fn family() -> DensityFamily {
        let z0 = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.3, 0.1), c(0.3, -0.1), c(1.5, 0.0)]);
        let z1 = CMat::from_row_slice(2, 2, &[c(0.4, 0.0), c(0.1, 0.0), c(0.0, 0.2), c(0.3, 0.0)]);
        DensityFamily::uniform(SpectralDensity::trig_poly(vec![z0, z1]).unwrap(), [0, 2]).unwrap()
    }

    #[test]
    fn density_round_trip() {
        let doc = DensityDocument::from_family(&family()).unwrap();
        assert_eq!(doc.representation, Representation::TrigPoly);
        let text = doc.to_json();
        let back = DensityDocument::parse(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_family().unwrap(), family());
    }

    #[test]
    fn grid_density_round_trip_is_exact() {
        let values: Vec<CMat> = (0..64).map(|s| CMat::identity(1, 1) * c(1.0 + 0.1 * (s as f64).sin(), 0.0)).collect();
        let fam = DensityFamily::uniform(SpectralDensity::grid(values).unwrap(), [1]).unwrap();
        let doc = DensityDocument::from_family(&fam).unwrap();
        assert_eq!(doc.representation, Representation::Grid);
        let back = DensityDocument::parse(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_family().unwrap(), fam);
    }

    #[test]
    fn errors_name_the_field() {
        let mut doc = DensityDocument::from_family(&family()).unwrap();
        doc.degrees[1].data[1].pop();
        let err = doc.to_family().unwrap_err().to_string();
        assert!(err.contains("degrees[1].data[1]"), "{err}");

        let text = r#"{"schema": "spi-density/1", "T": 1, "representation": "trigpoly"}"#;
        let err = DensityDocument::parse(text).unwrap_err().to_string();
        assert!(err.contains("degrees"), "{err}");

        let text = r#"{"schema": "spi-density/2", "T": 1, "representation": "grid", "degrees": []}"#;
        let err = DensityDocument::parse(text).unwrap_err().to_string();
        assert!(err.contains("schema"), "{err}");
    }

    #[test]
    fn functional_round_trip() {
        let mut spec = FunctionalSpec::new(2, 1, 3).unwrap();
        spec.set_sequence(1, 2, &[c(0.1, -0.7), c(1.0 / 3.0, 0.0)]).unwrap();
        spec.set_sequence(0, 1, &[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let doc = FunctionalDocument::from_spec(&spec);
        let back = FunctionalDocument::parse(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_spec().unwrap(), spec);
    }

    #[test]
    fn class_round_trip() {
        let params = ClassParams {
            q: Some(1.5),
            b2: Some(CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, 0.0), c(0.2, 0.0), c(2.0, 0.0)])),
            epsilon: 0.25,
            ..Default::default()
        };
        let class =
            UncertaintyClass::new(ClassKind::Pair3, ClassMode::NoiselessDeps, 2, 3, params, Some(family()), None);
        // pair3 noiseless-Deps needs B1 too
        assert!(class.is_err());
        let params = ClassParams {
            q: Some(1.5),
            b1: Some(CMat::identity(2, 2)),
            b2: Some(CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.2, 0.0), c(0.2, 0.0), c(2.0, 0.0)])),
            epsilon: 0.25,
            ..Default::default()
        };
        let class =
            UncertaintyClass::new(ClassKind::Pair3, ClassMode::NoiselessDeps, 2, 3, params, Some(family()), None)
                .unwrap();
        let doc = ClassDocument::from_class(&class).unwrap();
        let text = doc.to_json();
        assert!(text.contains("\"noiseless-Deps\""));
        let back = ClassDocument::parse(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_class().unwrap(), class);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"schema": "spi-functional/1", "T": 1, "N": 0, "n": 3, "weights": [], "extra": 1}"#;
        let err = FunctionalDocument::parse(text).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }
}
