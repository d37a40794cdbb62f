//! Damped fixed-point iteration on the optimality equations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::anderson::{flatten, unflatten, Anderson};
use super::class::UncertaintyClass;
use super::side::{Constraint, DegreeMultiplier, Samples, SideUpdate, Warm};
use crate::density::DensityFamily;
use crate::error::{Result, SpiError};
use crate::grid::{check_grid_size, MatrixGrid};
use crate::interpolation::{lag_polynomial, solve_sampled, FunctionalSpec, InterpolationSolution};
use crate::linalg::{c, hermitian_eigen, max_abs, min_eigenvalue, row_outer, CMat};

/// Which residual quadratic drives which density in the noisy pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// `Σ r_G* r_G` determines `F` (with `α`), `Σ r_F* r_F` determines `G` (with `β + γ`).
    #[default]
    AsWritten,
    /// The opposite assignment.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxOptions {
    pub grid: usize,
    /// Weight `ρ` of the update in `(1-ρ)·current + ρ·update`.
    pub damping: f64,
    pub max_iterations: usize,
    /// History depth of Anderson mixing of the undamped map; 0 gives the plain
    /// damped iteration, which is also the fallback step.
    pub acceleration: usize,
    /// Acceptance threshold for residuals and constraint violations.
    pub tolerance: f64,
    /// Residual at which iteration stops early.
    pub target: f64,
    pub pairing: Pairing,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self { grid: 256, damping: 0.5, max_iterations: 500, acceleration: 5, tolerance: 1e-6, target: 1e-11, pairing: Pairing::AsWritten }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mse: f64,
    pub residual: f64,
    pub constraint: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeResidual {
    /// Relative residual of the equation that determines `F`.
    pub f_side: f64,
    /// Same for `G` (noisy pairs).
    pub g_side: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub per_degree: BTreeMap<usize, DegreeResidual>,
    /// Largest equation residual.
    pub max: f64,
    /// Largest excess of the error gradient over the multiplier, relative.
    pub dual: f64,
    /// Largest relative violation of budgets, lower bounds and positivity.
    pub constraint: f64,
    /// Largest positive part of a slack function, relative to its multiplier.
    pub slack_sign: f64,
    /// Largest normalised product `|slack| · gap`.
    pub complementary: f64,
    /// `1 - λ_max/Tr` of matrix multipliers (pair4).
    pub rank_one_defect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub constraint: f64,
    pub trace: Vec<IterationRecord>,
    /// Why iteration stopped short of convergence, when it did.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastFavourableSolution {
    pub class: UncertaintyClass,
    pub spec: FunctionalSpec,
    pub pairing: Pairing,
    pub f: BTreeMap<usize, MatrixGrid>,
    pub g: Option<BTreeMap<usize, MatrixGrid>>,
    pub f_multipliers: BTreeMap<usize, DegreeMultiplier>,
    pub g_multipliers: Option<BTreeMap<usize, DegreeMultiplier>>,
    pub interpolation: InterpolationSolution,
    pub residuals: ResidualReport,
    pub report: ConvergenceReport,
}

impl LeastFavourableSolution {
    pub fn grid(&self) -> usize {
        self.interpolation.grid
    }

    pub fn mse(&self) -> f64 {
        self.interpolation.mse
    }

    /// `F⁰` as a density family of grid samples.
    pub fn f_family(&self) -> Result<DensityFamily> {
        to_family(self.class.period(), &self.f)
    }

    pub fn g_family(&self) -> Result<Option<DensityFamily>> {
        self.g.as_ref().map(|g| to_family(self.class.period(), g)).transpose()
    }
}

fn to_family(period: usize, grids: &BTreeMap<usize, MatrixGrid>) -> Result<DensityFamily> {
    let degrees = grids
        .iter()
        .map(|(m, g)| Ok((*m, crate::density::SpectralDensity::grid(g.values().to_vec())?)))
        .collect::<Result<_>>()?;
    DensityFamily::new(period, degrees)
}

pub(crate) fn to_grids(x: &Samples) -> Result<BTreeMap<usize, MatrixGrid>> {
    x.iter().map(|(m, v)| Ok((*m, MatrixGrid::new(v.clone())?))).collect()
}

pub(crate) fn sample_family(family: &DensityFamily, degrees: &[usize], size: usize) -> Result<Samples> {
    degrees
        .iter()
        .map(|&m| {
            let d = family.get(m).ok_or_else(|| SpiError::Input(format!("initial density missing degree {m}")))?;
            Ok((m, d.sample(size)?.into_values()))
        })
        .collect()
}

struct Context<'a> {
    class: &'a UncertaintyClass,
    spec: &'a FunctionalSpec,
    f_con: Constraint,
    g_con: Option<Constraint>,
    pairing: Pairing,
}

struct Evaluation {
    sol: InterpolationSolution,
    residuals: ResidualReport,
    f_update: SideUpdate,
    g_update: Option<SideUpdate>,
}

/// `Σ_l conj(r) rᵀ` per degree for `r_F`, `r_G` and the coefficient polynomial `C`.
/// Residual quadratics `Σ_l r_F* r_F`, `Σ_l r_G* r_G`, `Σ_l C* C`, and the
/// gradients `Σ_l (A - h)* (A - h)`, `Σ_l h* h` of the error in the densities.
struct Quadratics {
    qf: Samples,
    qg: Samples,
    qc: Samples,
    xf: Samples,
    xg: Samples,
}

fn quadratics(sol: &InterpolationSolution, degrees: &[usize], dim: usize) -> Quadratics {
    let size = sol.grid;
    let zero = || -> Samples { degrees.iter().map(|&m| (m, vec![CMat::zeros(dim, dim); size])).collect() };
    let mut q = Quadratics { qf: zero(), qg: zero(), qc: zero(), xf: zero(), xg: zero() };
    for h in &sol.harmonics {
        let m = h.index.m;
        let poly = h.coefficient_polynomial();
        let a = lag_polynomial(&h.weights, size);
        for s in 0..size {
            q.qf.get_mut(&m).unwrap()[s] += row_outer(&h.r_f[s]);
            q.qg.get_mut(&m).unwrap()[s] += row_outer(&h.r_g[s]);
            q.qc.get_mut(&m).unwrap()[s] += row_outer(&poly[s]);
            q.xf.get_mut(&m).unwrap()[s] += row_outer(&(&a[s] - &h.characteristic[s]));
            q.xg.get_mut(&m).unwrap()[s] += row_outer(&h.characteristic[s]);
        }
    }
    q
}

/// Per-degree `(equation, dual)` residuals: `max_λ ‖Q - H K H‖` relative to
/// the larger side, and `max_λ λ_max(X - K)⁺ / max_λ ‖K‖` for the gradient
/// `X` of the error in the density. The second is zero at an interior
/// solution and catches near-singular densities the first cannot see.
/// Stationarity on the range of the side's own density, `D (X - K) D`, and
/// the dual excess of `X` over `K`. With `D = H` the first is `Q - HKH`.
fn side_residual(
    grad: &Samples,
    density: &Samples,
    mult: &BTreeMap<usize, DegreeMultiplier>,
) -> BTreeMap<usize, (f64, f64)> {
    let mut out = BTreeMap::new();
    for (m, x) in grad {
        let k = &mult[m];
        let (mut num, mut lhs, mut rhs) = (0.0f64, 0.0f64, 0.0f64);
        let (mut excess, mut kscale) = (0.0f64, 0.0f64);
        for (s, xs) in x.iter().enumerate() {
            let d = &density[m][s];
            let ks = k.at(s);
            let l = d * xs * d;
            let r = d * &ks * d;
            num = num.max(max_abs(&(&l - &r)));
            lhs = lhs.max(max_abs(&l));
            rhs = rhs.max(max_abs(&r));
            excess = excess.max(max_eigenvalue(&(xs - &ks)));
            kscale = kscale.max(max_abs(&ks));
        }
        let den = lhs.max(rhs);
        let eq = if den > 0.0 { num / den } else { 0.0 };
        let dual = if kscale > 0.0 { excess / kscale } else { excess };
        out.insert(*m, (eq, dual));
    }
    out
}

fn max_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigen(m).0.last().copied().unwrap_or(0.0).max(0.0)
}

fn blend(cur: &Samples, upd: &Samples, rho: f64) -> Samples {
    cur.iter()
        .map(|(m, v)| (*m, v.iter().zip(&upd[m]).map(|(x, y)| x * c(1.0 - rho, 0.0) + y * c(rho, 0.0)).collect()))
        .collect()
}

/// Smallest eigenvalue of `F + G` over the grid.
fn floor(f: &Samples, g: Option<&Samples>) -> f64 {
    let mut low = f64::INFINITY;
    for (m, v) in f {
        for (s, x) in v.iter().enumerate() {
            let h = match g {
                Some(g) => x + &g[m][s],
                None => x.clone(),
            };
            low = low.min(min_eigenvalue(&h));
        }
    }
    low
}

/// Relative sup-norm distance.
fn distance(a: &Samples, b: &Samples) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (m, v) in a {
        for (x, y) in v.iter().zip(&b[m]) {
            diff = diff.max(max_abs(&(x - y)));
            scale = scale.max(max_abs(x));
        }
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

impl<'a> Context<'a> {
    fn new(class: &'a UncertaintyClass, spec: &'a FunctionalSpec, size: usize, pairing: Pairing) -> Result<Self> {
        if class.period() != spec.period() {
            return Err(SpiError::DimensionMismatch(format!(
                "class has T = {}, functional has T = {}",
                class.period(),
                spec.period()
            )));
        }
        if class.dimension() != spec.dimension() {
            return Err(SpiError::DimensionMismatch(format!(
                "class is on S_{}, functional on S_{}",
                class.dimension(),
                spec.dimension()
            )));
        }
        check_grid_size(size)?;
        let degrees = spec.active_degrees();
        if degrees.is_empty() {
            return Err(SpiError::Input("functional has no weights".into()));
        }
        class.check_feasible(&degrees, size)?;
        Ok(Self {
            class,
            spec,
            f_con: class.f_constraint(&degrees, size)?,
            g_con: class.g_constraint(&degrees, size)?,
            pairing,
        })
    }

    fn evaluate(&self, f: &Samples, g: Option<&Samples>, warm_f: &mut Warm, warm_g: &mut Warm) -> Result<Evaluation> {
        let sol = solve_sampled(&to_grids(f)?, g.map(to_grids).transpose()?.as_ref(), self.spec, 0.0)?;
        let degrees: Vec<usize> = f.keys().copied().collect();
        let Quadratics { qf, qg, qc, xf, xg } = quadratics(&sol, &degrees, self.class.period());
        let (f_update, g_update) = match (g, &self.g_con) {
            (Some(g), Some(g_con)) => {
                let (f_quad, g_quad) = match self.pairing {
                    Pairing::AsWritten => (&qg, &qf),
                    Pairing::Swapped => (&qf, &qg),
                };
                let fu = self.f_con.update(f_quad, Some(g), f, warm_f)?;
                let gu = g_con.update(g_quad, Some(f), g, warm_g)?;
                (fu, Some((gu, g_quad)))
            }
            _ => (self.f_con.update(&qc, None, f, warm_f)?, None),
        };
        // `r_G` pairs with the gradient in `F`, `r_F` with the gradient in `G`.
        let (f_grad, g_grad) = match self.pairing {
            Pairing::Swapped if g_update.is_some() => (&xg, &xf),
            _ => (&xf, &xg),
        };
        let f_res = side_residual(f_grad, f, &f_update.multipliers);
        let g_res = match (g, &g_update) {
            (Some(g), Some((gu, _))) => Some(side_residual(g_grad, g, &gu.multipliers)),
            _ => None,
        };
        let mut per_degree = BTreeMap::new();
        let (mut max, mut dual) = (0.0f64, 0.0f64);
        for (m, (r, d)) in &f_res {
            let gr = g_res.as_ref().map(|g| g[m]);
            max = max.max(*r).max(gr.map_or(0.0, |g| g.0));
            dual = dual.max(*d).max(gr.map_or(0.0, |g| g.1));
            per_degree.insert(*m, DegreeResidual { f_side: *r, g_side: gr.map(|g| g.0) });
        }
        let mut constraint = self.f_con.residual(f);
        let (mut slack_sign, mut complementary) = self.f_con.slackness(f, &f_update.multipliers);
        if let (Some(g), Some(g_con), Some((gu, _))) = (g, &self.g_con, &g_update) {
            constraint = constraint.max(g_con.residual(g));
            let (s, cpl) = g_con.slackness(g, &gu.multipliers);
            slack_sign = slack_sign.max(s);
            complementary = complementary.max(cpl);
        }
        let rank_one_defect = f_update
            .multipliers
            .values()
            .chain(g_update.iter().flat_map(|(gu, _)| gu.multipliers.values()))
            .filter_map(|d| d.rank_one_defect)
            .reduce(f64::max);
        Ok(Evaluation {
            sol,
            residuals: ResidualReport { per_degree, max, dual, constraint, slack_sign, complementary, rank_one_defect },
            f_update,
            g_update: g_update.map(|(gu, _)| gu),
        })
    }
}

fn accepted(r: &ResidualReport, tol: f64) -> bool {
    r.max < tol && r.dual < tol && r.constraint < tol && r.complementary < tol && r.slack_sign < 1e-8
}

/// Least-favourable densities of `class` for the functional `spec`.
/// Non-convergence is reported in the result rather than as an error.
pub fn solve_least_favourable(
    class: &UncertaintyClass,
    spec: &FunctionalSpec,
    init: Option<(&DensityFamily, Option<&DensityFamily>)>,
    options: &MinimaxOptions,
) -> Result<LeastFavourableSolution> {
    if !(options.damping > 0.0 && options.damping <= 1.0) {
        return Err(SpiError::Input(format!("damping must lie in (0, 1], got {}", options.damping)));
    }
    let size = options.grid;
    let ctx = Context::new(class, spec, size, options.pairing)?;
    let degrees = spec.active_degrees();
    let (mut f, mut g) = match init {
        Some((fi, gi)) => {
            let f = sample_family(fi, &degrees, size)?;
            let g = match (&ctx.g_con, gi) {
                (Some(_), Some(gi)) => Some(sample_family(gi, &degrees, size)?),
                (Some(con), None) => Some(con.initial()?),
                (None, _) => None,
            };
            (f, g)
        }
        None => (ctx.f_con.initial()?, ctx.g_con.as_ref().map(|g| g.initial()).transpose()?),
    };
    let (mut warm_f, mut warm_g) = (Warm::default(), Warm::default());
    let mut trace = Vec::new();
    let mut best: Option<(f64, Evaluation, Samples, Option<Samples>, usize)> = None;
    let mut note = None;
    let mut iterations = 0;
    let mut mixer = Anderson::new(options.acceleration);
    let mut fallback: Option<(Samples, Option<Samples>)> = None;
    loop {
        let ev = match ctx.evaluate(&f, g.as_ref(), &mut warm_f, &mut warm_g) {
            Ok(ev) => ev,
            Err(_) if fallback.is_some() => {
                // The mixed iterate left the admissible region; retake the plain step.
                (f, g) = fallback.take().unwrap();
                mixer.reset();
                continue;
            }
            Err(e) if best.is_some() => {
                note = Some(format!("stopped at iteration {iterations}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut step = distance(&f, &ev.f_update.densities);
        if let (Some(g), Some(gu)) = (&g, &ev.g_update) {
            step = step.max(distance(g, &gu.densities));
        }
        trace.push(IterationRecord {
            iteration: iterations,
            mse: ev.sol.mse,
            residual: ev.residuals.max,
            constraint: ev.residuals.constraint,
            step,
        });
        // Summed so that a plateau in one quantity does not hide progress in the others.
        let r = &ev.residuals;
        let score = r.max + r.dual + r.constraint + r.complementary;
        let done = (ev.residuals.max <= options.target && ev.residuals.constraint < options.tolerance)
            || step <= 1e-15
            || iterations >= options.max_iterations;
        let g_image = ev.g_update.as_ref().map(|gu| &gu.densities);
        let plain_f = blend(&f, &ev.f_update.densities, options.damping);
        let plain_g = g.as_ref().zip(g_image).map(|(g, u)| blend(g, u, options.damping));
        let proposal = mixer
            .next(&flatten(&f, g.as_ref()), &flatten(&ev.f_update.densities, g_image), 1.0)
            .map(|x| unflatten(&x, &f, g.as_ref()));
        let proposed = proposal.is_some();
        let mixed = proposal.filter(|(mf, mg)| floor(mf, mg.as_ref()) >= 0.1 * floor(&plain_f, plain_g.as_ref()));
        if best.as_ref().map_or(true, |b| score <= b.0) {
            best = Some((score, ev, f.clone(), g.clone(), iterations));
        }
        if done {
            break;
        }
        match mixed {
            Some(next) => {
                (f, g) = next;
                fallback = Some((plain_f, plain_g));
            }
            None => {
                if proposed {
                    mixer.reset();
                }
                (f, g) = (plain_f, plain_g);
                fallback = None;
            }
        }
        iterations += 1;
    }
    let (_, ev, f, g, at) = best.unwrap();
    let converged = accepted(&ev.residuals, options.tolerance);
    if !converged && note.is_none() {
        note = Some(format!(
            "best iterate {at}: residual {:.3e}, dual excess {:.3e}, constraint {:.3e}, complementary slackness {:.3e}",
            ev.residuals.max, ev.residuals.dual, ev.residuals.constraint, ev.residuals.complementary
        ));
    }
    Ok(LeastFavourableSolution {
        class: class.clone(),
        spec: spec.clone(),
        pairing: options.pairing,
        f: to_grids(&f)?,
        g: g.as_ref().map(to_grids).transpose()?,
        f_multipliers: ev.f_update.multipliers,
        g_multipliers: ev.g_update.map(|u| u.multipliers),
        interpolation: ev.sol,
        report: ConvergenceReport {
            converged,
            iterations,
            residual: ev.residuals.max,
            constraint: ev.residuals.constraint,
            trace,
            note,
        },
        residuals: ev.residuals,
    })
}

/// Evaluates a given candidate `(F, G)` without iterating: the interpolation
/// solution there, multipliers estimated by one inversion of the equations,
/// and the resulting residuals.
pub fn evaluate_candidate(
    class: &UncertaintyClass,
    spec: &FunctionalSpec,
    f: &DensityFamily,
    g: Option<&DensityFamily>,
    options: &MinimaxOptions,
) -> Result<LeastFavourableSolution> {
    let opts = MinimaxOptions { max_iterations: 0, ..*options };
    solve_least_favourable(class, spec, Some((f, g)), &opts)
}

/// Equation residuals of a candidate `(F, G)`.
pub fn optimality_residual(
    class: &UncertaintyClass,
    spec: &FunctionalSpec,
    f: &DensityFamily,
    g: Option<&DensityFamily>,
    options: &MinimaxOptions,
) -> Result<ResidualReport> {
    Ok(evaluate_candidate(class, spec, f, g, options)?.residuals)
}

/// Sup-norm change (relative) of one damped iteration started at `sol`.
pub fn fixed_point_step(sol: &LeastFavourableSolution, options: &MinimaxOptions) -> Result<f64> {
    let ctx = Context::new(&sol.class, &sol.spec, sol.grid(), sol.pairing)?;
    let f: Samples = sol.f.iter().map(|(m, g)| (*m, g.values().to_vec())).collect();
    let g: Option<Samples> = sol.g.as_ref().map(|g| g.iter().map(|(m, g)| (*m, g.values().to_vec())).collect());
    let ev = ctx.evaluate(&f, g.as_ref(), &mut Warm::default(), &mut Warm::default())?;
    let rho = options.damping;
    let mut worst = 0.0f64;
    for (m, v) in &f {
        for (x, y) in v.iter().zip(&ev.f_update.densities[m]) {
            worst = worst.max(rho * max_abs(&(x - y)));
        }
    }
    if let (Some(g), Some(gu)) = (&g, &ev.g_update) {
        for (m, v) in g {
            for (x, y) in v.iter().zip(&gu.densities[m]) {
                worst = worst.max(rho * max_abs(&(x - y)));
            }
        }
    }
    Ok(worst)
}
