//! Spherical harmonics on the unit sphere `S_n ⊂ R^n`.
//!
//! Combinatorics (dimension counts, Gegenbauer polynomials, the addition
//! kernel) work for any ambient dimension `n ≥ 2`. Pointwise evaluation of the
//! real orthonormal basis and the quadrature rules are provided for the circle
//! (`n = 2`) and the 2-sphere (`n = 3`) only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};

/// Unit sphere `S_n` in `n`-dimensional Euclidean space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereGeometry {
    n: usize,
    omega: f64,
}

impl SphereGeometry {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(SpiError::Domain(format!("ambient dimension must be >= 2, got {n}")));
        }
        Ok(Self { n, omega: sphere_area(n) })
    }

    /// Ambient dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Surface area `ω_n = 2π^{n/2} / Γ(n/2)`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Gegenbauer parameter `(n-2)/2`.
    pub fn alpha(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }
}

/// `Γ(k/2)` for positive integer `k`, by the half-integer recurrence.
fn gamma_half(k: usize) -> f64 {
    let mut g = if k % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if k % 2 == 0 { 1.0 } else { 0.5 };
    while 2.0 * x < k as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// Degree/order pair `(m, l)` with `1 ≤ l ≤ h(m, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HarmonicIndex {
    pub m: usize,
    pub l: usize,
}

impl HarmonicIndex {
    pub fn new(m: usize, l: usize, n: usize) -> Result<Self> {
        let h = harmonic_dimension(m, n)?;
        if l == 0 || l > h {
            return Err(SpiError::Domain(format!("order l={l} outside 1..={h} for degree m={m}, n={n}")));
        }
        Ok(Self { m, l })
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Dimension `h(m, n)` of the space of degree-`m` spherical harmonics on `S_n`.
pub fn harmonic_dimension(m: usize, n: usize) -> Result<usize> {
    if n < 2 {
        return Err(SpiError::Domain(format!("ambient dimension must be >= 2, got {n}")));
    }
    if m == 0 {
        return Ok(1);
    }
    if n == 2 {
        return Ok(2);
    }
    // (2m+n-2)(m+n-3)! / (m!(n-2)!) = (2m+n-2) C(m+n-3, m) / (n-2)
    let num = (2 * m + n - 2) as u128 * binomial((m + n - 3) as u64, m as u64);
    let den = (n - 2) as u128;
    usize::try_from(num / den).map_err(|_| SpiError::Domain(format!("h({m},{n}) overflows")))
}

/// Gegenbauer polynomial `C_m^α(z)` by the three-term recurrence.
///
/// For `α = 0` the circle convention `C_m^0(cos θ) = (2/m) cos(mθ)` is used
/// (and `C_0^0 = 1`), which keeps the normalised addition kernel finite.
pub fn gegenbauer(m: usize, alpha: f64, z: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if alpha == 0.0 {
        let (mut t_prev, mut t) = (1.0, z);
        for _ in 1..m {
            let next = 2.0 * z * t - t_prev;
            t_prev = t;
            t = next;
        }
        return 2.0 * t / m as f64;
    }
    let (mut c_prev, mut cur) = (1.0, 2.0 * alpha * z);
    for k in 1..m {
        let kf = k as f64;
        let next = (2.0 * (kf + alpha) * z * cur - (kf + 2.0 * alpha - 1.0) * c_prev) / (kf + 1.0);
        c_prev = cur;
        cur = next;
    }
    cur
}

/// Degree-`m` reproducing kernel `h(m,n) C_m(cos)/C_m(1) / ω_n`, which equals
/// `Σ_l S_m^l(x) S_m^l(y)` for `cos_xy = ⟨x, y⟩`.
pub fn addition_kernel(m: usize, geom: &SphereGeometry, cos_xy: f64) -> Result<f64> {
    if !(cos_xy.abs() <= 1.0 + 1e-12) {
        return Err(SpiError::Domain(format!("cosine {cos_xy} outside [-1, 1]")));
    }
    let alpha = geom.alpha();
    let at_one = gegenbauer(m, alpha, 1.0);
    if at_one == 0.0 || !at_one.is_finite() {
        return Err(SpiError::Domain(format!("degenerate normalisation C_{m}(1) = {at_one}")));
    }
    let h = harmonic_dimension(m, geom.n())? as f64;
    Ok(h * gegenbauer(m, alpha, cos_xy.clamp(-1.0, 1.0)) / at_one / geom.omega())
}

/// Value of the real orthonormal spherical harmonic `S_m^l` at a unit vector `x`.
///
/// Ordering of `l`: on the circle `l = 1` is `cos(mφ)` and `l = 2` is `sin(mφ)`;
/// on the 2-sphere `l = 1` is the zonal harmonic, `l = 2k` the `cos(kφ)` and
/// `l = 2k + 1` the `sin(kφ)` tesseral harmonic.
pub fn evaluate_harmonic(idx: HarmonicIndex, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != 2 && n != 3 {
        return Err(SpiError::UnsupportedDimension(n));
    }
    HarmonicIndex::new(idx.m, idx.l, n)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(SpiError::Domain(format!("point is not on the unit sphere (|x| = {norm})")));
    }
    if n == 2 {
        let phi = x[1].atan2(x[0]);
        return Ok(circle_harmonic(idx.m, idx.l, phi));
    }
    let cos_theta = x[2].clamp(-1.0, 1.0);
    let phi = x[1].atan2(x[0]);
    let order = idx.l / 2;
    let leg = normalized_legendre(idx.m, order, cos_theta);
    Ok(match idx.l {
        1 => leg,
        l if l % 2 == 0 => std::f64::consts::SQRT_2 * leg * (order as f64 * phi).cos(),
        _ => std::f64::consts::SQRT_2 * leg * (order as f64 * phi).sin(),
    })
}

fn circle_harmonic(m: usize, l: usize, phi: f64) -> f64 {
    if m == 0 {
        return 1.0 / (2.0 * PI).sqrt();
    }
    let s = 1.0 / PI.sqrt();
    if l == 1 {
        s * (m as f64 * phi).cos()
    } else {
        s * (m as f64 * phi).sin()
    }
}

/// Associated Legendre function normalised so that `P̄_m^k(cos θ) e^{ikφ}` has
/// unit norm on `S_2`.
fn normalized_legendre(m: usize, k: usize, x: f64) -> f64 {
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pkk = (1.0 / (4.0 * PI)).sqrt();
    for i in 1..=k {
        let fi = i as f64;
        pkk *= ((2.0 * fi + 1.0) / (2.0 * fi)).sqrt() * s;
    }
    if m == k {
        return pkk;
    }
    let mut p_prev = pkk;
    let mut p = (2.0 * k as f64 + 3.0).sqrt() * x * pkk;
    for deg in (k + 2)..=m {
        let d = deg as f64;
        let kf = k as f64;
        let a = ((4.0 * d * d - 1.0) / (d * d - kf * kf)).sqrt();
        let b = (((d - 1.0) * (d - 1.0) - kf * kf) / (4.0 * (d - 1.0) * (d - 1.0) - 1.0)).sqrt();
        let next = a * (x * p - b * p_prev);
        p_prev = p;
        p = next;
    }
    p
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 0 { 1.0 } else if k == 1 { x } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (x * pk - pkm1) / (x * x - 1.0);
            let dx = pk / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    (nodes, weights)
}

/// Points on `S_n` with quadrature weights for `∫ f m_n(dx)`.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub n: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl SphereGrid {
    /// Trapezoid rule with `k` equispaced points on the circle.
    pub fn circle(k: usize) -> Self {
        let w = 2.0 * PI / k as f64;
        let points = (0..k)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / k as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect();
        Self { n: 2, points, weights: vec![w; k] }
    }

    /// Gauss–Legendre in `cos θ` times trapezoid in `φ` on the 2-sphere.
    pub fn sphere(n_theta: usize, n_phi: usize) -> Self {
        let (nodes, gw) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut points = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (z, w) in nodes.iter().zip(&gw) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                points.push(vec![s * phi.cos(), s * phi.sin(), *z]);
                weights.push(w * dphi);
            }
        }
        Self { n: 3, points, weights }
    }

    /// Default grid for `n ∈ {2, 3}`: 128 circle points or 64×128 on the sphere.
    pub fn default_for(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Self::circle(128)),
            3 => Ok(Self::sphere(64, 128)),
            _ => Err(SpiError::UnsupportedDimension(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}
