//! Density updates for one side of the class pair. With the residual quadratic
//! `Q_m(λ)` and the other side held fixed, the optimality equation
//! `Q = H K H` is inverted for `H`, the side's density is `H - other`, and the
//! multipliers in `K` are chosen so the class constraints hold.

use std::collections::BTreeMap;

use crate::error::{Result, SpiError};
use crate::linalg::{
    c, entry_pairing, geometric_mean, hermitian_eigen, hermitian_part, hpd_inverse, identity, max_abs, min_eigenvalue, psd_part,
    riccati_root, CMat, CVec,
};

pub(crate) type Samples = BTreeMap<usize, Vec<CMat>>;

/// Budget functional of a class, `Σ_m w_m mean_s (·)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Budget {
    /// `⟨pairing, X⟩ = value`, with `shape` the matrix multiplying the
    /// multiplier in the optimality equation.
    Moment { shape: CMat, pairing: CMat, value: f64 },
    /// Diagonal entries, one budget per channel.
    Channels { values: Vec<f64> },
    /// The full matrix mean.
    Matrix { value: CMat },
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub budget: Budget,
    /// `(1-ε) U_m(λ_s)` for contamination classes.
    pub anchor: Option<Samples>,
    /// `w_m = h(m, n) / ω_n` for the active degrees.
    pub weights: BTreeMap<usize, f64>,
    pub dim: usize,
    pub size: usize,
}

/// Multipliers of one degree: the equation reads `Q = H (constant + slack(λ)) H`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeMultiplier {
    pub constant: CMat,
    /// `α_m²` or `β_m²` for trace and `B`-pairing classes.
    pub scalar: Option<f64>,
    /// `α_mk²` or `β_mk²` for per-channel classes.
    pub channels: Option<Vec<f64>>,
    /// Dominant factor `α⃗_m` of a matrix multiplier and `1 - λ_max / Tr`.
    pub vector: Option<CVec>,
    pub rank_one_defect: Option<f64>,
    /// Slack matrices on the grid (contamination classes only).
    pub slack: Option<Vec<CMat>>,
    pub slack_scalar: Option<Vec<f64>>,
    pub slack_channels: Option<Vec<Vec<f64>>>,
}

impl DegreeMultiplier {
    fn plain(constant: CMat) -> Self {
        Self {
            constant,
            scalar: None,
            channels: None,
            vector: None,
            rank_one_defect: None,
            slack: None,
            slack_scalar: None,
            slack_channels: None,
        }
    }

    /// `K(λ_s)`.
    pub fn at(&self, s: usize) -> CMat {
        match &self.slack {
            Some(sl) => &self.constant + &sl[s],
            None => self.constant.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SideUpdate {
    pub densities: Samples,
    pub multipliers: BTreeMap<usize, DegreeMultiplier>,
}

/// Multiplier state carried between outer iterations.
#[derive(Debug, Clone, Default)]
pub(crate) struct Warm {
    t: Option<f64>,
    d: Option<Vec<f64>>,
    lam: Option<CMat>,
    points: Option<BTreeMap<usize, Vec<Vec<f64>>>>,
}

fn diag(values: &[f64]) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(values.len(), values.iter().map(|&v| c(v, 0.0))))
}

fn frob(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn minus_other(h: CMat, other: Option<&CMat>) -> CMat {
    match other {
        Some(o) => psd_part(&(h - o)),
        None => h,
    }
}

/// `H - other` for the unbounded root `free = root(lambda, q)`; when `H ⪰ other`
/// fails, `H` is recomputed under that bound.
fn above_other(lambda: &CMat, q: &CMat, free: CMat, other: Option<&CMat>) -> CMat {
    match other {
        Some(o) if free.nrows() > 1 && hermitian_eigen(&(&free - o)).0[0] < 0.0 => {
            let h = loewner_point(lambda, q, o, &free);
            psd_part(&(h - o))
        }
        _ => minus_other(free, other),
    }
}

fn root(lambda: &CMat, q: &CMat) -> Result<CMat> {
    riccati_root(lambda, q).ok_or_else(|| SpiError::Domain("multiplier matrix is not positive definite".into()))
}

/// Secant refinement of a root of a nondecreasing `f` near `start`, with
/// bisection once a bracket is known.
fn refine_increasing(f: impl Fn(f64) -> f64, target: f64, start: f64) -> f64 {
    let tol = 1e-13 * target.abs().max(1e-300);
    let (mut a, mut fa) = (start, f(start) - target);
    if fa.abs() <= tol {
        return a;
    }
    let mut b = start * (1.0 - 1e-3 * fa.signum());
    let mut fb = f(b) - target;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..60 {
        for (x, fx) in [(a, fa), (b, fb)] {
            if fx < 0.0 {
                lo = lo.max(x);
            } else {
                hi = hi.min(x);
            }
        }
        if fb.abs() <= tol {
            return b;
        }
        let mut next = if fb != fa { b - fb * (b - a) / (fb - fa) } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * b.max(lo) };
        }
        (a, fa) = (b, fb);
        b = next;
        fb = f(b) - target;
    }
    b
}

/// Root of a nondecreasing `f` with `f(t) = target`, searching from `start`.
fn solve_increasing(f: impl Fn(f64) -> f64, target: f64, start: f64) -> f64 {
    let mut hi = if start.is_finite() && start > 0.0 { start } else { 1.0 };
    let mut lo = 0.0;
    let mut guard = 0;
    while f(hi) < target && guard < 3000 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
    }
    if lo == 0.0 {
        let mut probe = hi * 0.5;
        guard = 0;
        while f(probe) >= target && guard < 3000 && probe > 0.0 {
            hi = probe;
            probe *= 0.5;
            guard += 1;
        }
        lo = probe;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Orthonormal basis of `T×T` Hermitian matrices under `Re Tr(A B)`.
fn hermitian_basis(dim: usize) -> Vec<CMat> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let mut e = CMat::zeros(dim, dim);
        e[(i, i)] = c(1.0, 0.0);
        out.push(e);
        for j in i + 1..dim {
            let mut re = CMat::zeros(dim, dim);
            re[(i, j)] = c(r, 0.0);
            re[(j, i)] = c(r, 0.0);
            out.push(re);
            let mut im = CMat::zeros(dim, dim);
            im[(i, j)] = c(0.0, r);
            im[(j, i)] = c(0.0, -r);
            out.push(im);
        }
    }
    out
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

fn log_det_pd(m: &CMat) -> Option<f64> {
    let (vals, _) = hermitian_eigen(m);
    vals.iter().all(|v| *v > 0.0).then(|| vals.iter().map(|v| v.ln()).sum())
}

/// Minimises `Tr(Λ H) + Tr(Q H⁻¹)` over `H ⪰ lower`, starting from `start`:
/// the pointwise form of the Loewner-bounded optimality equation. Log-barrier
/// path on `Y = H - lower` with Newton steps in a Hermitian basis.
fn loewner_point(lambda: &CMat, q: &CMat, lower: &CMat, start: &CMat) -> CMat {
    let dim = lambda.nrows();
    if let Some(free) = riccati_root(lambda, q) {
        if dim == 1 {
            // Convex in the scalar, so the constrained minimiser is the clipped root.
            return if free[(0, 0)].re >= lower[(0, 0)].re { free } else { lower.clone() };
        }
        if min_eigenvalue(&(&free - lower)) >= 0.0 {
            return free;
        }
    }
    let basis = hermitian_basis(dim);
    let size = frob(start).max(frob(lower)).max(1e-300);
    let mut y = psd_part(&(start - lower)) + identity(dim) * c(1e-3 * size, 0.0);
    let value = |y: &CMat, mu: f64| -> Option<f64> {
        let inv = hpd_inverse(&(lower + y))?;
        Some(entry_pairing(&lambda.transpose(), &(lower + y)) + entry_pairing(&q.transpose(), &inv) - mu * log_det_pd(y)?)
    };
    let Some(mut scale) = value(&y, 0.0).map(f64::abs) else { return lower + y };
    scale = scale.max(1e-300);
    let mut mu = 0.1 * scale / dim as f64;
    while mu * dim as f64 > 1e-14 * scale {
        for _ in 0..50 {
            let (Some(hinv), Some(yinv)) = (hpd_inverse(&(lower + &y)), hpd_inverse(&y)) else { break };
            let x = &hinv * q * &hinv;
            let grad = hermitian_part(&(lambda - &x - &yinv * c(mu, 0.0)));
            let hess_apply = |d: &CMat| -> CMat {
                &hinv * d * &x + &x * d * &hinv + &yinv * d * &yinv * c(mu, 0.0)
            };
            let k = basis.len();
            let g = nalgebra::DVector::from_iterator(k, basis.iter().map(|e| inner(e, &grad)));
            let mut hm = nalgebra::DMatrix::<f64>::zeros(k, k);
            for (b, eb) in basis.iter().enumerate() {
                let hb = hess_apply(eb);
                for (a, ea) in basis.iter().enumerate() {
                    hm[(a, b)] = inner(ea, &hb);
                }
            }
            let hm = (&hm + hm.transpose()) * 0.5;
            let Some(step) = hm.cholesky().map(|ch| ch.solve(&(-&g))) else { break };
            let decrement = -g.dot(&step);
            if !(decrement > 1e-13 * scale) {
                break;
            }
            let dir = basis.iter().zip(step.iter()).fold(CMat::zeros(dim, dim), |acc, (e, s)| acc + e * c(*s, 0.0));
            let current = value(&y, mu).unwrap_or(f64::INFINITY);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = hermitian_part(&(&y + &dir * c(t, 0.0)));
                if let Some(v) = value(&cand, mu) {
                    if v <= current - 0.25 * t * decrement {
                        y = cand;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        mu *= 0.1;
    }
    lower + y
}

impl Constraint {
    fn weight(&self, m: usize) -> f64 {
        self.weights[&m]
    }

    fn weight_sum(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn contaminated(&self) -> bool {
        self.anchor.is_some()
    }

    fn mean_over<T>(&self, x: &Samples, zero: T, f: impl Fn(&CMat) -> T) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Clone,
    {
        let mut total = zero.clone();
        for (m, w) in &self.weights {
            let values = &x[m];
            let mut acc = zero.clone();
            for v in values {
                acc = acc + f(v);
            }
            total = total + acc * (w / values.len() as f64);
        }
        total
    }

    pub fn moment(&self, x: &Samples, pairing: &CMat) -> f64 {
        self.mean_over(x, 0.0, |v| entry_pairing(pairing, v))
    }

    pub fn channels(&self, x: &Samples) -> Vec<f64> {
        (0..self.dim).map(|k| self.mean_over(x, 0.0, |v| v[(k, k)].re)).collect()
    }

    pub fn matrix(&self, x: &Samples) -> CMat {
        let total = self.mean_over(x, MatrixSum(CMat::zeros(self.dim, self.dim)), |v| MatrixSum(v.clone()));
        hermitian_part(&total.0)
    }

    /// Relative error of the budget equalities.
    pub fn budget_error(&self, x: &Samples) -> f64 {
        match &self.budget {
            Budget::Moment { pairing, value, .. } => (self.moment(x, pairing) - value).abs() / value.abs(),
            Budget::Channels { values } => self
                .channels(x)
                .iter()
                .zip(values)
                .map(|(b, v)| (b - v).abs() / v.abs())
                .fold(0.0, f64::max),
            Budget::Matrix { value } => frob(&(self.matrix(x) - value)) / frob(value),
        }
    }

    /// Largest relative violation of budgets, lower bounds and positivity.
    pub fn residual(&self, x: &Samples) -> f64 {
        let mut worst = self.budget_error(x);
        let scale = x.values().flatten().map(max_abs).fold(0.0, f64::max).max(1e-300);
        for (m, values) in x {
            for (s, v) in values.iter().enumerate() {
                let lo = hermitian_eigen(v).0[0];
                worst = worst.max((-lo).max(0.0) / scale);
                if let Some(anchor) = &self.anchor {
                    let a = &anchor[m][s];
                    let gap = match &self.budget {
                        Budget::Moment { pairing, .. } => entry_pairing(pairing, v) - entry_pairing(pairing, a),
                        Budget::Channels { .. } => {
                            (0..self.dim).map(|k| v[(k, k)].re - a[(k, k)].re).fold(f64::INFINITY, f64::min)
                        }
                        Budget::Matrix { .. } => hermitian_eigen(&(v - a)).0[0],
                    };
                    worst = worst.max((-gap).max(0.0) / scale);
                }
            }
        }
        worst
    }

    /// Fails when the anchor part alone exceeds the budget, or when `ε = 0`
    /// pins the budget and it disagrees with the anchor.
    pub fn check_feasible(&self, pinned: bool) -> Result<()> {
        let Some(anchor) = &self.anchor else { return Ok(()) };
        let tol = 1e-9;
        let fail = |what: String| Err(SpiError::Infeasible(what));
        match &self.budget {
            Budget::Moment { pairing, value, .. } => {
                let floor = self.moment(anchor, pairing);
                if floor > value * (1.0 + tol) {
                    return fail(format!("the (1-ε)U part has budget {floor:.6e}, exceeding q = {value:.6e}"));
                }
                if pinned && (floor - value).abs() > 1e-6 * value {
                    return fail(format!("ε = 0 forces budget {floor:.6e}, but q = {value:.6e}"));
                }
            }
            Budget::Channels { values } => {
                for (k, (floor, value)) in self.channels(anchor).iter().zip(values).enumerate() {
                    if *floor > value * (1.0 + tol) {
                        return fail(format!("channel {k}: (1-ε)U budget {floor:.6e} exceeds q_k = {value:.6e}"));
                    }
                    if pinned && (floor - value).abs() > 1e-6 * value {
                        return fail(format!("channel {k}: ε = 0 forces budget {floor:.6e}, but q_k = {value:.6e}"));
                    }
                }
            }
            Budget::Matrix { value } => {
                let rest = value - self.matrix(anchor);
                let lo = hermitian_eigen(&rest).0[0];
                if lo < -tol * frob(value) {
                    return fail(format!("Q - (1-ε)·mean U is not positive semidefinite (min eigenvalue {lo:.3e})"));
                }
                if pinned && frob(&rest) > 1e-6 * frob(value) {
                    return fail("ε = 0 forces the budget of U, which differs from Q".into());
                }
            }
        }
        Ok(())
    }

    /// Budget-matched constant (plus the anchor part for contamination classes).
    pub fn initial(&self) -> Result<Samples> {
        let constant = self.constant_member(self.free_budget()?)?;
        Ok(self
            .weights
            .keys()
            .map(|&m| {
                let values = (0..self.size)
                    .map(|s| match &self.anchor {
                        Some(a) => &a[&m][s] + &constant,
                        None => constant.clone(),
                    })
                    .collect();
                (m, values)
            })
            .collect())
    }

    /// Budget left after the anchor part.
    fn free_budget(&self) -> Result<Budget> {
        let Some(anchor) = &self.anchor else { return Ok(self.budget.clone()) };
        Ok(match &self.budget {
            Budget::Moment { shape, pairing, value } => Budget::Moment {
                shape: shape.clone(),
                pairing: pairing.clone(),
                value: (value - self.moment(anchor, pairing)).max(0.0),
            },
            Budget::Channels { values } => Budget::Channels {
                values: self.channels(anchor).iter().zip(values).map(|(f, v)| (v - f).max(0.0)).collect(),
            },
            Budget::Matrix { value } => Budget::Matrix { value: psd_part(&(value - self.matrix(anchor))) },
        })
    }

    fn constant_member(&self, budget: Budget) -> Result<CMat> {
        let w = self.weight_sum();
        Ok(match budget {
            Budget::Moment { pairing, value, .. } => identity(self.dim) * c(value / (pairing.trace().re * w), 0.0),
            Budget::Channels { values } => diag(&values.iter().map(|v| v / w).collect::<Vec<_>>()),
            Budget::Matrix { value } => value / c(w, 0.0),
        })
    }

    /// Rescales `base` onto the budget `budget` by a congruence that keeps it PSD.
    fn rescale(&self, base: &Samples, budget: &Budget) -> Result<Samples> {
        let map = |f: &dyn Fn(&CMat) -> CMat| -> Samples {
            base.iter().map(|(m, v)| (*m, v.iter().map(f).collect())).collect()
        };
        Ok(match budget {
            Budget::Moment { pairing, value, .. } => {
                let have = self.moment(base, pairing);
                let k = if have > 0.0 { value / have } else { 0.0 };
                map(&|v| v * c(k, 0.0))
            }
            Budget::Channels { values } => {
                let have = self.channels(base);
                let d: Vec<f64> =
                    have.iter().zip(values).map(|(h, v)| if *h > 0.0 { (v / h).sqrt() } else { 0.0 }).collect();
                let dm = diag(&d);
                map(&|v| &dm * v * &dm)
            }
            Budget::Matrix { value } => {
                let have = self.matrix(base);
                let inv = hpd_inverse(&have)
                    .ok_or_else(|| SpiError::Domain("sample density has a singular matrix budget".into()))?;
                let z = geometric_mean(&inv, value)
                    .ok_or_else(|| SpiError::Domain("geometric mean of budgets failed".into()))?;
                map(&|v| hermitian_part(&(&z * v * &z)))
            }
        })
    }

    /// A class member built from PSD samples: `base` is matched pointwise to
    /// the anchor's constrained part and `extra` carries the remaining budget.
    /// Without an anchor `base` alone is rescaled onto the budget.
    pub fn member(&self, base: &Samples, extra: &Samples) -> Result<Samples> {
        let Some(anchor) = &self.anchor else { return self.rescale(base, &self.budget) };
        let mut matched = Samples::new();
        for (m, values) in base {
            let a = &anchor[m];
            let row = values
                .iter()
                .zip(a)
                .map(|(v, a)| match &self.budget {
                    Budget::Moment { pairing, .. } => {
                        let have = entry_pairing(pairing, v);
                        let want = entry_pairing(pairing, a);
                        if have > 0.0 {
                            v * c(want / have, 0.0)
                        } else {
                            a.clone()
                        }
                    }
                    Budget::Channels { .. } => {
                        let d: Vec<f64> = (0..self.dim)
                            .map(|k| {
                                let h = v[(k, k)].re;
                                if h > 0.0 {
                                    (a[(k, k)].re / h).sqrt()
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let dm = diag(&d);
                        &dm * v * &dm
                    }
                    Budget::Matrix { .. } => a.clone(),
                })
                .collect();
            matched.insert(*m, row);
        }
        let rest = self.rescale(extra, &self.free_budget()?)?;
        Ok(matched
            .into_iter()
            .map(|(m, v)| {
                let r = &rest[&m];
                (m, v.into_iter().zip(r).map(|(a, b)| a + b).collect())
            })
            .collect())
    }

    pub fn update(
        &self,
        quad: &Samples,
        other: Option<&Samples>,
        current: &Samples,
        warm: &mut Warm,
    ) -> Result<SideUpdate> {
        let scale = quad.values().flatten().map(max_abs).fold(0.0, f64::max);
        if !(scale > 0.0) {
            // Q ≡ 0: every member is optimal, keep the current density.
            let multipliers = self
                .weights
                .keys()
                .map(|&m| (m, DegreeMultiplier::plain(CMat::zeros(self.dim, self.dim))))
                .collect();
            return Ok(SideUpdate { densities: current.clone(), multipliers });
        }
        let other_at = |m: usize, s: usize| other.map(|o| &o[&m][s]);
        match (&self.budget, &self.anchor) {
            (Budget::Moment { shape, pairing, value }, None) => {
                let mut roots = Samples::new();
                for (&m, &w) in &self.weights {
                    let lam = shape * c(w, 0.0);
                    roots.insert(m, quad[&m].iter().map(|q| root(&lam, q)).collect::<Result<_>>()?);
                }
                // `exact` enforces F ⪰ 0 through the bounded point problem; the
                // clipped form is the cheap first guess for the level.
                let build = |t: f64, exact: bool| -> Samples {
                    roots
                        .iter()
                        .map(|(&m, r)| {
                            let lam = shape * c(self.weight(m) / (t * t), 0.0);
                            let row = r
                                .iter()
                                .zip(&quad[&m])
                                .enumerate()
                                .map(|(s, (r, q))| match exact && t > 0.0 {
                                    true => above_other(&lam, q, r * c(t, 0.0), other_at(m, s)),
                                    false => minus_other(r * c(t, 0.0), other_at(m, s)),
                                })
                                .collect();
                            (m, row)
                        })
                        .collect()
                };
                let t = if other.is_none() {
                    value / self.moment(&roots, pairing)
                } else {
                    let t = solve_increasing(|t| self.moment(&build(t, false), pairing), *value, warm.t.unwrap_or(1.0));
                    if self.dim > 1 {
                        refine_increasing(|t| self.moment(&build(t, true), pairing), *value, t)
                    } else {
                        t
                    }
                };
                warm.t = Some(t);
                let mu = 1.0 / (t * t);
                let multipliers = self
                    .weights
                    .iter()
                    .map(|(&m, &w)| {
                        let mut d = DegreeMultiplier::plain(shape * c(mu * w, 0.0));
                        d.scalar = Some(mu * w);
                        (m, d)
                    })
                    .collect();
                Ok(SideUpdate { densities: build(t, true), multipliers })
            }
            (Budget::Moment { shape, pairing, value }, Some(anchor)) => {
                // H = s(λ) R with R shape R = Q; s ≥ the level that meets the lower bound.
                let mut roots = Samples::new();
                let mut bounds: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
                for &m in self.weights.keys() {
                    let r: Vec<CMat> = quad[&m].iter().map(|q| root(shape, q)).collect::<Result<_>>()?;
                    let b = r
                        .iter()
                        .enumerate()
                        .map(|(s, r)| {
                            let pr = entry_pairing(pairing, r);
                            let po = other_at(m, s).map_or(0.0, |o| entry_pairing(pairing, o));
                            let floor = entry_pairing(pairing, &anchor[&m][s]);
                            (pr > 1e-14 * scale).then(|| (floor + po) / pr)
                        })
                        .collect();
                    roots.insert(m, r);
                    bounds.insert(m, b);
                }
                let level = |t: f64, m: usize, s: usize| -> Option<f64> {
                    bounds[&m][s].map(|b| (t / self.weight(m).sqrt()).max(b))
                };
                let build = |t: f64| -> Samples {
                    roots
                        .iter()
                        .map(|(&m, r)| {
                            let row = r
                                .iter()
                                .enumerate()
                                .map(|(s, r)| match level(t, m, s) {
                                    Some(l) => minus_other(r * c(l, 0.0), other_at(m, s)),
                                    None => current[&m][s].clone(),
                                })
                                .collect();
                            (m, row)
                        })
                        .collect()
                };
                let pinned = self.moment(&build(0.0), pairing) >= value * (1.0 - 1e-13);
                let t = if pinned {
                    0.0
                } else {
                    solve_increasing(|t| self.moment(&build(t), pairing), *value, warm.t.unwrap_or(1.0))
                };
                warm.t = Some(t);
                let mut multipliers = BTreeMap::new();
                for (&m, &w) in &self.weights {
                    let beta = if t > 0.0 {
                        w / (t * t)
                    } else {
                        bounds[&m].iter().flatten().map(|b| 1.0 / (b * b)).fold(0.0, f64::max)
                    };
                    let gamma: Vec<f64> = (0..self.size)
                        .map(|s| match level(t, m, s) {
                            Some(l) => (1.0 / (l * l) - beta).min(0.0),
                            None => 0.0,
                        })
                        .collect();
                    let mut d = DegreeMultiplier::plain(shape * c(beta, 0.0));
                    d.scalar = Some(beta);
                    d.slack = Some(gamma.iter().map(|g| shape * c(*g, 0.0)).collect());
                    d.slack_scalar = Some(gamma);
                    multipliers.insert(m, d);
                }
                Ok(SideUpdate { densities: build(t), multipliers })
            }
            (Budget::Channels { values }, None) => {
                let mut d = warm.d.clone().filter(|d| d.len() == self.dim).unwrap_or_else(|| vec![1.0; self.dim]);
                let build = |d: &[f64]| -> Result<Samples> {
                    let mut out = Samples::new();
                    for (&m, &w) in &self.weights {
                        let lam = diag(&d.iter().map(|x| x * w).collect::<Vec<_>>());
                        let row = quad[&m]
                            .iter()
                            .enumerate()
                            .map(|(s, q)| Ok(above_other(&lam, q, root(&lam, q)?, other_at(m, s))))
                            .collect::<Result<_>>()?;
                        out.insert(m, row);
                    }
                    Ok(out)
                };
                let mut x = build(&d)?;
                let mut pace = Pace::default();
                for _ in 0..1000 {
                    let b = self.channels(&x);
                    let err = b.iter().zip(values).map(|(b, v)| (b - v).abs() / v).fold(0.0, f64::max);
                    let Some(power) = pace.next(err) else { break };
                    for k in 0..self.dim {
                        d[k] *= if b[k] > 0.0 { (b[k] / values[k]).powf(power) } else { 0.25 };
                    }
                    x = build(&d)?;
                }
                warm.d = Some(d.clone());
                let multipliers = self
                    .weights
                    .iter()
                    .map(|(&m, &w)| {
                        let ch: Vec<f64> = d.iter().map(|x| x * w).collect();
                        let mut dm = DegreeMultiplier::plain(diag(&ch));
                        dm.channels = Some(ch);
                        (m, dm)
                    })
                    .collect();
                Ok(SideUpdate { densities: x, multipliers })
            }
            (Budget::Channels { values }, Some(anchor)) => {
                let floors = self.channels(anchor);
                let pinned: Vec<bool> = floors.iter().zip(values).map(|(f, v)| *f >= v * (1.0 - 1e-12)).collect();
                let mut base = warm.d.clone().filter(|d| d.len() == self.dim).unwrap_or_else(|| vec![1.0; self.dim]);
                for k in 0..self.dim {
                    if pinned[k] {
                        base[k] = f64::INFINITY;
                    } else if !base[k].is_finite() {
                        base[k] = 1.0;
                    }
                }
                let mut points = warm.points.clone().unwrap_or_default();
                let sweep = |base: &[f64], points: &mut BTreeMap<usize, Vec<Vec<f64>>>| -> Result<Samples> {
                    let mut out = Samples::new();
                    for (&m, &w) in &self.weights {
                        let starts = points.entry(m).or_insert_with(|| vec![vec![1.0; self.dim]; self.size]);
                        let mut row = Vec::with_capacity(self.size);
                        for (s, q) in quad[&m].iter().enumerate() {
                            let floor: Vec<f64> = (0..self.dim).map(|k| anchor[&m][s][(k, k)].re).collect();
                            let (x, e) = channel_point(q, other_at(m, s), &floor, w, base, &starts[s])?;
                            starts[s] = e;
                            row.push(x);
                        }
                        out.insert(m, row);
                    }
                    Ok(out)
                };
                let mut x = sweep(&base, &mut points)?;
                let mut pace = Pace::default();
                for _ in 0..1000 {
                    let b = self.channels(&x);
                    let err = (0..self.dim)
                        .filter(|&k| !pinned[k])
                        .map(|k| (b[k] - values[k]).abs() / values[k])
                        .fold(0.0, f64::max);
                    let Some(power) = pace.next(err) else { break };
                    for k in 0..self.dim {
                        if !pinned[k] {
                            base[k] *= if b[k] > 0.0 { (b[k] / values[k]).powf(power) } else { 0.25 };
                        }
                    }
                    x = sweep(&base, &mut points)?;
                }
                let mut multipliers = BTreeMap::new();
                for (&m, &w) in &self.weights {
                    let pts = &points[&m];
                    let beta: Vec<f64> = (0..self.dim)
                        .map(|k| {
                            if pinned[k] {
                                pts.iter().map(|e| e[k]).fold(0.0, f64::max) * w
                            } else {
                                base[k] * w
                            }
                        })
                        .collect();
                    let slack: Vec<Vec<f64>> =
                        pts.iter().map(|e| (0..self.dim).map(|k| (e[k] * w - beta[k]).min(0.0)).collect()).collect();
                    let mut dm = DegreeMultiplier::plain(diag(&beta));
                    dm.channels = Some(beta);
                    dm.slack = Some(slack.iter().map(|g| diag(g)).collect());
                    dm.slack_channels = Some(slack);
                    multipliers.insert(m, dm);
                }
                warm.d = Some(base);
                warm.points = Some(points);
                Ok(SideUpdate { densities: x, multipliers })
            }
            (Budget::Matrix { value }, anchor) => {
                let target_inv =
                    hpd_inverse(value).ok_or_else(|| SpiError::Input("matrix budget is not positive definite".into()))?;
                let lower = |m: usize, s: usize| -> CMat {
                    let mut l = CMat::zeros(self.dim, self.dim);
                    if let Some(a) = anchor {
                        l += &a[&m][s];
                    }
                    if let Some(o) = other_at(m, s) {
                        l += o;
                    }
                    l
                };
                let pinned = match anchor {
                    Some(a) => frob(&(value - self.matrix(a))) <= 1e-12 * frob(value),
                    None => false,
                };
                let mut lam = warm.lam.clone().filter(|l| l.nrows() == self.dim).unwrap_or_else(|| identity(self.dim));
                let build = |lam: &CMat, start: Option<&Samples>| -> Result<Samples> {
                    let mut out = Samples::new();
                    for (&m, &w) in &self.weights {
                        let wl = lam * c(w, 0.0);
                        let mut row = Vec::with_capacity(self.size);
                        for (s, q) in quad[&m].iter().enumerate() {
                            let free = root(&wl, q)?;
                            let h = match anchor {
                                Some(_) => {
                                    let lo = lower(m, s);
                                    let init = match start {
                                        Some(st) => {
                                            let mut x = st[&m][s].clone();
                                            if let Some(o) = other_at(m, s) {
                                                x += o;
                                            }
                                            x
                                        }
                                        None => free.clone(),
                                    };
                                    let init = if hermitian_eigen(&(&free - &lo)).0[0] >= 0.0 { free } else { init };
                                    loewner_point(&wl, q, &lo, &init)
                                }
                                None => {
                                    row.push(above_other(&wl, q, free, other_at(m, s)));
                                    continue;
                                }
                            };
                            row.push(minus_other(h, other_at(m, s)));
                        }
                        out.insert(m, row);
                    }
                    Ok(out)
                };
                let x = if pinned {
                    anchor.as_ref().unwrap().clone()
                } else {
                    let mut x = build(&lam, None)?;
                    let mut pace = Pace::default();
                    for _ in 0..1000 {
                        let b = self.matrix(&x);
                        let Some(power) = pace.next(frob(&(&b - value)) / frob(value)) else { break };
                        if hermitian_eigen(&b).0[0] <= 1e-12 * frob(value) {
                            lam *= c(0.25, 0.0);
                        } else {
                            let mut z = geometric_mean(&target_inv, &b)
                                .ok_or_else(|| SpiError::Domain("budget geometric mean failed".into()))?;
                            if power > 1.0 {
                                z = &z * &z;
                            }
                            lam = hermitian_part(&(&z * &lam * &z));
                        }
                        x = build(&lam, Some(&x))?;
                    }
                    x
                };
                // Slack Γ = H⁻¹ Q H⁻¹ - wΛ, projected onto the negative cone.
                let implied = |m: usize, s: usize| -> CMat {
                    let mut h = x[&m][s].clone();
                    if let Some(o) = other_at(m, s) {
                        h += o;
                    }
                    match hpd_inverse(&h) {
                        Some(inv) => hermitian_part(&(&inv * &quad[&m][s] * &inv)),
                        None => CMat::zeros(self.dim, self.dim),
                    }
                };
                if pinned {
                    let top = self
                        .weights
                        .iter()
                        .flat_map(|(&m, &w)| (0..self.size).map(move |s| (m, s, w)))
                        .map(|(m, s, w)| hermitian_eigen(&implied(m, s)).0.last().copied().unwrap_or(0.0) / w)
                        .fold(0.0, f64::max);
                    lam = identity(self.dim) * c(top.max(1e-300), 0.0);
                }
                warm.lam = Some(lam.clone());
                let mut multipliers = BTreeMap::new();
                for (&m, &w) in &self.weights {
                    let wl = &lam * c(w, 0.0);
                    let (vals, vecs) = hermitian_eigen(&wl);
                    let top = *vals.last().unwrap();
                    let trace: f64 = vals.iter().sum();
                    let mut d = DegreeMultiplier::plain(wl.clone());
                    d.vector = Some(vecs.column(self.dim - 1) * c(top.max(0.0).sqrt(), 0.0));
                    d.rank_one_defect = Some(if trace > 0.0 { 1.0 - top / trace } else { 0.0 });
                    if anchor.is_some() {
                        d.slack = Some(
                            (0..self.size).map(|s| -psd_part(&(&wl - implied(m, s)))).collect(),
                        );
                    }
                    multipliers.insert(m, d);
                }
                Ok(SideUpdate { densities: x, multipliers })
            }
        }
    }

    /// Largest positive slack (relative) and largest complementary-slackness
    /// product `|slack| · gap`, both normalised to `[0, 1]`.
    pub fn slackness(&self, x: &Samples, multipliers: &BTreeMap<usize, DegreeMultiplier>) -> (f64, f64) {
        let Some(anchor) = &self.anchor else { return (0.0, 0.0) };
        let (mut sign, mut comp) = (0.0f64, 0.0f64);
        let rel = |g: f64, b: f64| if g.abs() > 0.0 { g.abs() / (b.abs() + g.abs()) } else { 0.0 };
        for (m, mult) in multipliers {
            for s in 0..self.size {
                let v = &x[m][s];
                let a = &anchor[m][s];
                match &self.budget {
                    Budget::Moment { pairing, .. } => {
                        let (Some(beta), Some(gamma)) = (mult.scalar, mult.slack_scalar.as_ref()) else { continue };
                        let g = gamma[s];
                        let have = entry_pairing(pairing, v);
                        let floor = entry_pairing(pairing, a);
                        let gap = (have - floor).max(0.0) / (have.abs() + floor.abs() + 1e-300);
                        sign = sign.max(g.max(0.0) / beta.abs().max(1e-300));
                        comp = comp.max(rel(g, beta) * gap);
                    }
                    Budget::Channels { .. } => {
                        let (Some(beta), Some(gamma)) = (mult.channels.as_ref(), mult.slack_channels.as_ref()) else {
                            continue;
                        };
                        for k in 0..self.dim {
                            let g = gamma[s][k];
                            let have = v[(k, k)].re;
                            let floor = a[(k, k)].re;
                            let gap = (have - floor).max(0.0) / (have.abs() + floor.abs() + 1e-300);
                            sign = sign.max(g.max(0.0) / beta[k].abs().max(1e-300));
                            comp = comp.max(rel(g, beta[k]) * gap);
                        }
                    }
                    Budget::Matrix { .. } => {
                        let Some(slack) = &mult.slack else { continue };
                        let g = &slack[s];
                        let gap = psd_part(&(v - a));
                        let top = hermitian_eigen(g).0.last().copied().unwrap_or(0.0);
                        let norm = frob(&mult.constant) + frob(g);
                        sign = sign.max(top.max(0.0) / frob(&mult.constant).max(1e-300));
                        comp = comp.max(frob(&(g * &gap)) / (norm * (frob(&gap) + frob(a)) + 1e-300));
                    }
                }
            }
        }
        (sign, comp)
    }
}

/// Pointwise solve of `Q = H diag(w e) H` with `e ≤ base` and diagonal floors
/// `x_kk ≥ floor_k`, `x = H - other`. Maximises the concave dual
/// `2 Tr (Λ_e^{1/2} Q Λ_e^{1/2})^{1/2} - Σ_k w e_k want_k` over `0 < e ≤ base`
/// by projected Newton steps in `ln e`; the gradient is `w (H_kk - want_k)`.
fn channel_point(
    q: &CMat,
    other: Option<&CMat>,
    floor: &[f64],
    w: f64,
    base: &[f64],
    start: &[f64],
) -> Result<(CMat, Vec<f64>)> {
    let dim = floor.len();
    let want: Vec<f64> = (0..dim).map(|k| floor[k] + other.map_or(0.0, |o| o[(k, k)].re)).collect();
    let total = |u: &[f64]| -> Result<CMat> { root(&diag(&u.iter().map(|v| v.exp() * w).collect::<Vec<_>>()), q) };
    let cap: Vec<f64> = base.iter().map(|b| if b.is_finite() { b.ln() } else { f64::INFINITY }).collect();
    let mut u: Vec<f64> = (0..dim)
        .map(|k| {
            let s = start[k].min(base[k]);
            if s > 0.0 && s.is_finite() {
                s.ln()
            } else if base[k].is_finite() {
                cap[k]
            } else {
                0.0
            }
        })
        .collect();
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    // Components that may still move: below the cap, or at the cap with a deficit.
    let gap = |h: &CMat, u: &[f64]| -> (Vec<f64>, Vec<bool>) {
        let g: Vec<f64> = (0..dim).map(|k| h[(k, k)].re - want[k]).collect();
        let free = (0..dim).map(|k| u[k] < cap[k] || g[k] < 0.0).collect();
        (g, free)
    };
    let merit = |g: &[f64], free: &[bool]| (0..dim).filter(|&k| free[k]).map(|k| g[k].abs()).fold(0.0, f64::max);
    let mut h = total(&u)?;
    for _ in 0..100 {
        let (g, free) = gap(&h, &u);
        let current = merit(&g, &free);
        if current <= 1e-13 * scale {
            break;
        }
        let idx: Vec<usize> = (0..dim).filter(|&k| free[k]).collect();
        // Jacobian d H_kk / d u_l by forward differences.
        let step = 1e-6;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(idx.len(), idx.len());
        for (b, &l) in idx.iter().enumerate() {
            let mut up = u.clone();
            up[l] += step;
            let hp = total(&up)?;
            for (a, &k) in idx.iter().enumerate() {
                jac[(a, b)] = (hp[(k, k)].re - h[(k, k)].re) / step;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(idx.len(), idx.iter().map(|&k| -g[k]));
        let dir = match jac.lu().solve(&rhs) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ => nalgebra::DVector::from_iterator(idx.len(), idx.iter().map(|&k| g[k].signum())),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut cand = u.clone();
            for (a, &k) in idx.iter().enumerate() {
                cand[k] = (u[k] + t * dir[a].clamp(-20.0, 20.0)).min(cap[k]);
            }
            let hc = total(&cand)?;
            let (gc, fc) = gap(&hc, &cand);
            if merit(&gc, &fc) < current {
                u = cand;
                h = hc;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let e = u.iter().map(|v| v.exp()).collect();
    Ok((minus_other(h, other), e))
}

/// Step control for the budget-matching loops: the budget behaves roughly
/// like `Λ^{-1/2}`, so the squared correction is tried first and the plain
/// one after any increase. Stops at `1e-13` or on stagnation.
struct Pace {
    best: f64,
    power: f64,
    stalled: usize,
}

impl Default for Pace {
    fn default() -> Self {
        Self { best: f64::INFINITY, power: 2.0, stalled: 0 }
    }
}

impl Pace {
    fn next(&mut self, err: f64) -> Option<f64> {
        if err < 1e-13 {
            return None;
        }
        if err < 0.5 * self.best {
            self.stalled = 0;
        } else {
            self.power = 1.0;
            self.stalled += 1;
            if self.stalled > 20 {
                return None;
            }
        }
        self.best = self.best.min(err);
        Some(self.power)
    }
}

/// Newtype so matrices can use the generic weighted mean.
#[derive(Clone)]
struct MatrixSum(CMat);

impl std::ops::Add for MatrixSum {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl std::ops::Mul<f64> for MatrixSum {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self(self.0 * c(rhs, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn herm(re: &[f64], off: (f64, f64)) -> CMat {
        CMat::from_row_slice(2, 2, &[c(re[0], 0.0), c(off.0, off.1), c(off.0, -off.1), c(re[1], 0.0)])
    }

    #[test]
    fn loewner_point_without_active_bound_is_the_riccati_root() {
        let lam = herm(&[1.0, 2.0], (0.3, 0.1));
        let q = herm(&[3.0, 1.0], (0.5, -0.2));
        let free = riccati_root(&lam, &q).unwrap();
        let lower = &free * c(0.5, 0.0);
        let h = loewner_point(&lam, &q, &lower, &identity(2));
        assert!(max_abs(&(&h - &free)) < 1e-6 * max_abs(&free), "{h} vs {free}");
    }

    #[test]
    fn loewner_point_satisfies_kkt_when_bound_binds() {
        let lam = herm(&[1.0, 2.0], (0.3, 0.1));
        let q = herm(&[3.0, 0.2], (0.1, 0.0));
        let lower = herm(&[0.5, 1.5], (0.0, 0.2));
        let h = loewner_point(&lam, &q, &lower, &identity(2));
        let y = &h - &lower;
        assert!(hermitian_eigen(&y).0[0] > -1e-10);
        let inv = hpd_inverse(&h).unwrap();
        let gamma = hermitian_part(&(&lam - &inv * &q * &inv));
        assert!(hermitian_eigen(&gamma).0[0] > -1e-6, "slack not PSD: {gamma}");
        assert!(entry_pairing(&gamma.transpose(), &y).abs() < 1e-6, "complementarity");
        assert!(max_abs(&gamma) > 1e-3, "bound should be active here");
    }

    #[test]
    fn channel_point_meets_floors_with_equality_where_active() {
        let q = herm(&[3.0, 0.2], (0.4, 0.1));
        let floor = [0.1, 0.9];
        let base = [1.0, 1.0];
        let (x, e) = channel_point(&q, None, &floor, 1.0, &base, &[1.0, 1.0]).unwrap();
        for k in 0..2 {
            assert!(x[(k, k)].re >= floor[k] - 1e-10);
            assert!(e[k] <= base[k] + 1e-15);
            if e[k] < base[k] - 1e-12 {
                assert!((x[(k, k)].re - floor[k]).abs() < 1e-10);
            }
        }
        assert!(e[1] < base[1], "second floor should bind");
    }
}
