//! Anderson mixing for the density fixed-point map.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::side::Samples;
use crate::linalg::{c, hermitian_part, psd_part, CMat};

pub(super) fn flatten(f: &Samples, g: Option<&Samples>) -> Vec<f64> {
    let mut out = Vec::new();
    for side in std::iter::once(f).chain(g) {
        for v in side.values() {
            for m in v {
                for z in m.iter() {
                    out.push(z.re);
                    out.push(z.im);
                }
            }
        }
    }
    out
}

fn fill(template: &Samples, data: &mut impl Iterator<Item = f64>) -> Samples {
    template
        .iter()
        .map(|(m, v)| {
            let mats = v
                .iter()
                .map(|t| {
                    let mut x = CMat::zeros(t.nrows(), t.ncols());
                    for z in x.iter_mut() {
                        let re = data.next().unwrap_or(0.0);
                        let im = data.next().unwrap_or(0.0);
                        *z = c(re, im);
                    }
                    psd_part(&hermitian_part(&x))
                })
                .collect();
            (*m, mats)
        })
        .collect()
}

/// Inverse of [`flatten`], projected back onto Hermitian PSD samples.
pub(super) fn unflatten(x: &[f64], f: &Samples, g: Option<&Samples>) -> (Samples, Option<Samples>) {
    let mut it = x.iter().copied();
    let nf = fill(f, &mut it);
    let ng = g.map(|g| fill(g, &mut it));
    (nf, ng)
}

/// Type-II Anderson acceleration with restart on growth of the residual.
pub(super) struct Anderson {
    depth: usize,
    xs: VecDeque<Vec<f64>>,
    rs: VecDeque<Vec<f64>>,
    best: f64,
}

impl Anderson {
    pub(super) fn new(depth: usize) -> Self {
        Self { depth, xs: VecDeque::new(), rs: VecDeque::new(), best: f64::INFINITY }
    }

    pub(super) fn reset(&mut self) {
        self.xs.clear();
        self.rs.clear();
    }

    /// Next iterate from `x` and its image `gx`, or `None` for a plain step.
    pub(super) fn next(&mut self, x: &[f64], gx: &[f64], beta: f64) -> Option<Vec<f64>> {
        if self.depth == 0 {
            return None;
        }
        let r: Vec<f64> = gx.iter().zip(x).map(|(a, b)| a - b).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 10.0 * self.best {
            self.xs.clear();
            self.rs.clear();
            self.best = norm;
        }
        self.best = self.best.min(norm);
        self.xs.push_back(x.to_vec());
        self.rs.push_back(r.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.rs.pop_front();
        }
        let k = self.xs.len() - 1;
        if k == 0 {
            return None;
        }
        let n = x.len();
        let mut df = DMatrix::<f64>::zeros(n, k);
        let mut dx = DMatrix::<f64>::zeros(n, k);
        for j in 0..k {
            for i in 0..n {
                df[(i, j)] = self.rs[j + 1][i] - self.rs[j][i];
                dx[(i, j)] = self.xs[j + 1][i] - self.xs[j][i];
            }
        }
        let rv = DVector::from_vec(r.clone());
        let svd = df.clone().svd(true, true);
        let cut = 1e-10 * svd.singular_values.max();
        let gamma = svd.solve(&rv, cut).ok()?;
        if gamma.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let step = &dx * &gamma + (&df * &gamma) * beta;
        Some((0..n).map(|i| x[i] + beta * r[i] - step[i]).collect())
    }
}
