//! The four pipelines behind `spi interpolate | minimax | simulate | validate`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spi_core::document::{
    ClassDocument, DensityDocument, FunctionalDocument, InterpolationDocument, MinimaxDocument,
};
use spi_core::grid::grid_points;
use spi_core::harmonics::harmonic_dimension;
use spi_core::linalg::cis;
use spi_core::minimax::evaluate_candidate;
use spi_core::simulator::{
    check_tail, gaussian_projection_oracle, monte_carlo_mse, render_field, simulate_field, DEFAULT_WINDOW,
};
use spi_core::{
    solve_interpolation, solve_interpolation_noiseless, solve_least_favourable, verify_saddle, DensityFamily, Document,
    FunctionalSpec, HarmonicIndex, InterpolationOptions, MinimaxOptions, SaddleOptions, SphereGrid, DEFAULT_GRID,
};

use crate::config::RunConfig;
use crate::exit::{Failure, UNVERIFIED};
use crate::plot::{line_chart, Series};

/// Default grid of the least-favourable iteration.
pub const MINIMAX_GRID: usize = 256;

/// What a run printed and how it ends.
pub struct Outcome {
    pub code: i32,
    pub summary: Vec<String>,
}

fn load<D: Document>(path: &Path, field: &str) -> Result<D, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{field}: {}: {e}", path.display())))?;
    D::parse(&text).map_err(|e| Failure::from(e).context(format!("{field} ({})", path.display())))
}

fn load_density(path: &Path, field: &str) -> Result<DensityFamily, Failure> {
    load::<DensityDocument>(path, field)?
        .to_family()
        .map_err(|e| Failure::from(e).context(format!("{field} ({})", path.display())))
}

fn load_functional(path: &Path) -> Result<FunctionalSpec, Failure> {
    load::<FunctionalDocument>(path, "functional")?
        .to_spec()
        .map_err(|e| Failure::from(e).context(format!("functional ({})", path.display())))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("out: {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn check_period(what: &str, found: usize, expected: usize) -> Result<(), Failure> {
    if found != expected {
        return Err(Failure::input(format!("dimension mismatch: {what} has T = {found}, functional has T = {expected}")));
    }
    Ok(())
}

fn density_traces(family: &DensityFamily, name: &str, size: usize) -> Result<Vec<Series>, Failure> {
    let lambdas = grid_points(size);
    family
        .degrees()
        .map(|(m, d)| {
            let values = d.sample(size)?;
            Ok(Series {
                label: format!("Tr {name}_{m}"),
                points: lambdas.iter().zip(values.values()).map(|(l, v)| (*l, v.trace().re)).collect(),
            })
        })
        .collect::<spi_core::Result<_>>()
        .map_err(Failure::from)
}

fn characteristic_profiles(doc: &InterpolationDocument, size: usize) -> Result<Vec<Series>, Failure> {
    let lambdas = grid_points(size);
    let ch = doc.to_characteristic()?;
    Ok(ch
        .harmonics
        .iter()
        .map(|(idx, lags)| Series {
            label: format!("|h| (m={}, l={})", idx.m, idx.l),
            points: lambdas
                .iter()
                .map(|&l| {
                    let mut acc = spi_core::CVec::zeros(ch.period);
                    for (j, v) in lags {
                        acc += v * cis(*j as f64 * l);
                    }
                    (l, acc.norm())
                })
                .collect(),
        })
        .collect())
}

pub fn run_interpolate(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let f = load_density(cfg.require(&cfg.density, "density")?, "density")?;
    let g = cfg.noise.as_deref().map(|p| load_density(p, "noise")).transpose()?;
    let spec = load_functional(cfg.require(&cfg.functional, "functional")?)?;
    check_period("density", f.period(), spec.period())?;
    if let Some(g) = &g {
        check_period("noise", g.period(), spec.period())?;
    }
    let grid = cfg.grid.unwrap_or(DEFAULT_GRID);
    let window = cfg.window.unwrap_or(DEFAULT_WINDOW);
    let options = InterpolationOptions { grid, ..Default::default() };
    let sol = match &g {
        Some(g) => solve_interpolation(&f, g, &spec, &options)?,
        None => solve_interpolation_noiseless(&f, &spec, &options)?,
    };
    let doc = InterpolationDocument::from_solution(&sol, window, "interpolation")?;
    write(&cfg.out, "solution.json", &doc.to_json())?;
    let mut summary = vec![
        format!("mse {:.12e}", sol.mse),
        format!("degrees used {:?}", sol.degrees_used),
        format!("max tail mass {:.3e} (window J = {window})", doc.harmonics.iter().map(|h| h.tail_mass).fold(0.0, f64::max)),
    ];
    if !sol.excluded_degrees.is_empty() {
        summary.push(format!(
            "excluded degrees {:?} by the minimality check, functional energy {:.6e}",
            sol.excluded_degrees, sol.excluded_energy
        ));
    }
    if cfg.emit_plots {
        line_chart(&cfg.out.join("density.svg"), "Signal density", "λ", "trace", &density_traces(&f, "F", 512)?)?;
        line_chart(&cfg.out.join("characteristic.svg"), "Spectral characteristic", "λ", "|h(λ)|", &characteristic_profiles(&doc, 512)?)?;
    }
    Ok(Outcome { code: 0, summary })
}

pub fn run_minimax(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let class_path = cfg.require(&cfg.class, "class")?;
    let class = load::<ClassDocument>(class_path, "class")?
        .to_class()
        .map_err(|e| Failure::from(e).context(format!("class ({})", class_path.display())))?;
    let spec = load_functional(cfg.require(&cfg.functional, "functional")?)?;
    check_period("class", class.period(), spec.period())?;
    let tol = cfg.tolerances;
    let options = MinimaxOptions {
        grid: cfg.grid.unwrap_or(MINIMAX_GRID),
        tolerance: tol.minimax,
        max_iterations: tol.max_iterations,
        ..Default::default()
    };
    let sol = match &cfg.candidate {
        Some(c) => {
            let f = load_density(&c.f, "candidate.F")?;
            let g = c.g.as_deref().map(|p| load_density(p, "candidate.G")).transpose()?;
            evaluate_candidate(&class, &spec, &f, g.as_ref(), &options)?
        }
        None => solve_least_favourable(&class, &spec, None, &options)?,
    };
    let saddle = verify_saddle(
        &sol,
        &SaddleOptions { samples: tol.saddle_samples, seed: cfg.seed, tolerance: tol.saddle, ..Default::default() },
    )?;
    let window = cfg.window.unwrap_or(DEFAULT_WINDOW);
    let doc = MinimaxDocument::from_solution(&sol, Some(&saddle), window)?;
    write(&cfg.out, "minimax.json", &doc.to_json())?;
    let verified = sol.report.converged && saddle.passed;
    let mut summary = vec![
        format!("mse {:.12e}", sol.mse()),
        format!(
            "converged {} after {} iterations (residual {:.3e}, dual excess {:.3e}, constraint {:.3e})",
            sol.report.converged, sol.report.iterations, sol.residuals.max, sol.residuals.dual, sol.residuals.constraint
        ),
        format!("saddle check {} over {} samples", if saddle.passed { "passed" } else { "failed" }, saddle.samples),
    ];
    if let Some(note) = &sol.report.note {
        summary.push(format!("note: {note}"));
    }
    if let Some(v) = &saddle.first_violation {
        summary.push(format!("first violation: {v}"));
    }
    if cfg.emit_plots {
        let mut traces = density_traces(&sol.f_family()?, "F", sol.grid())?;
        if let Some(g) = sol.g_family()? {
            traces.extend(density_traces(&g, "G", sol.grid())?);
        }
        line_chart(&cfg.out.join("density.svg"), "Least favourable densities", "λ", "trace", &traces)?;
        let residuals = Series {
            label: "residual".into(),
            points: sol.report.trace.iter().map(|r| (r.iteration as f64, r.residual.max(1e-300).log10())).collect(),
        };
        line_chart(&cfg.out.join("convergence.svg"), "Optimality residual", "iteration", "log10 residual", &[residuals])?;
    }
    Ok(Outcome { code: if verified { 0 } else { UNVERIFIED }, summary })
}

pub fn run_simulate(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let f = load_density(cfg.require(&cfg.density, "density")?, "density")?;
    let spec = load_functional(cfg.require(&cfg.functional, "functional")?)?;
    check_period("density", f.period(), spec.period())?;
    let grid = cfg.grid.unwrap_or(DEFAULT_GRID);
    let n = spec.dimension();
    let mut harmonics = Vec::new();
    for m in spec.active_degrees() {
        for l in 1..=harmonic_dimension(m, n)? {
            harmonics.push(HarmonicIndex { m, l });
        }
    }
    let realization = simulate_field(&f, &harmonics, cfg.first, cfg.length, cfg.seed, grid, "density")?;
    let mut out = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Failure::input(e.to_string());
    out.write_record(["m", "l", "j", "re", "im"]).map_err(io)?;
    for (idx, series) in &realization.series {
        for (j, z) in realization.times().zip(series) {
            out.write_record([idx.m.to_string(), idx.l.to_string(), j.to_string(), z.re.to_string(), z.im.to_string()])
                .map_err(io)?;
        }
    }
    let text = String::from_utf8(out.into_inner().map_err(|e| Failure::input(e.to_string()))?).expect("ascii csv");
    write(&cfg.out, "realization.csv", &text)?;
    let mut summary = vec![
        format!("seed {}", cfg.seed),
        format!("{} harmonics at times {}..{}", harmonics.len(), cfg.first, cfg.first + cfg.length as i64 - 1),
    ];
    if n == 2 || n == 3 {
        let sphere = SphereGrid::default_for(n)?;
        let field = render_field(&realization, &sphere)?;
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(["j", "grid_index", "re", "im"]).map_err(io)?;
        for (j, row) in realization.times().zip(&field) {
            for (p, z) in row.iter().enumerate() {
                out.write_record([j.to_string(), p.to_string(), z.re.to_string(), z.im.to_string()]).map_err(io)?;
            }
        }
        let text = String::from_utf8(out.into_inner().map_err(|e| Failure::input(e.to_string()))?).expect("ascii csv");
        write(&cfg.out, "field.csv", &text)?;
        summary.push(format!("field rendered on {} sphere points", sphere.len()));
    }
    if cfg.emit_plots {
        let series: Vec<Series> = realization
            .series
            .iter()
            .map(|(idx, s)| Series {
                label: format!("Re ζ (m={}, l={})", idx.m, idx.l),
                points: realization.times().zip(s).map(|(j, z)| (j as f64, z.re)).collect(),
            })
            .collect();
        line_chart(&cfg.out.join("realization.svg"), "Simulated harmonic coefficients", "j", "Re ζ", &series)?;
    }
    Ok(Outcome { code: 0, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    /// Allowed `|value - reference|`.
    pub allowed: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationDocument {
    pub schema: String,
    pub seed: u64,
    pub replicates: usize,
    pub window: usize,
    pub grid: usize,
    pub analytic_mse: f64,
    pub oracle_mse: f64,
    pub oracle_condition_number: f64,
    pub oracle_regularization: f64,
    pub empirical_mse: f64,
    pub empirical_stderr: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn run_validate(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let sol = load::<InterpolationDocument>(cfg.require(&cfg.solution, "solution")?, "solution")?;
    let f = load_density(cfg.require(&cfg.density, "density")?, "density")?;
    let g = cfg.noise.as_deref().map(|p| load_density(p, "noise")).transpose()?;
    let spec = load_functional(cfg.require(&cfg.functional, "functional")?)?;
    check_period("density", f.period(), spec.period())?;
    check_period("solution", sol.period, spec.period())?;
    if let Some(g) = &g {
        check_period("noise", g.period(), spec.period())?;
    }
    if sol.horizon != spec.horizon() {
        return Err(Failure::input(format!(
            "dimension mismatch: solution has N = {}, functional has N = {}",
            sol.horizon,
            spec.horizon()
        )));
    }
    let characteristic = sol.to_characteristic()?;
    check_tail(&characteristic)?;
    let grid = cfg.grid.unwrap_or(sol.grid);
    let window = sol.window;
    let oracle = gaussian_projection_oracle(&f, g.as_ref(), &spec, window, grid)?;
    let mc = monte_carlo_mse(&f, g.as_ref(), &spec, &characteristic, cfg.replicates, cfg.seed, grid)?;
    let tol = cfg.tolerances;
    let check = |name: &str, value: f64, allowed: f64| Check {
        name: name.into(),
        value,
        reference: sol.mse,
        allowed,
        passed: (value - sol.mse).abs() <= allowed,
    };
    let checks = vec![
        check("oracle", oracle.mse, tol.oracle * sol.mse.abs() + 1e-14),
        check("monte-carlo", mc.mse, tol.sigmas * mc.stderr + 1e-14),
    ];
    let passed = checks.iter().all(|c| c.passed);
    let doc = ValidationDocument {
        schema: "spi-validation/1".into(),
        seed: cfg.seed,
        replicates: mc.replicates,
        window,
        grid,
        analytic_mse: sol.mse,
        oracle_mse: oracle.mse,
        oracle_condition_number: oracle.condition_number,
        oracle_regularization: oracle.regularization,
        empirical_mse: mc.mse,
        empirical_stderr: mc.stderr,
        checks,
        passed,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("validation document serializes");
    text.push('\n');
    write(&cfg.out, "validation.json", &text)?;
    let mut summary = vec![format!("{:<12} {:>22} {:>22} {:>6}", "check", "value", "analytic", "result")];
    for c in &doc.checks {
        summary.push(format!(
            "{:<12} {:>22.15e} {:>22.15e} {:>6}",
            c.name,
            c.value,
            c.reference,
            if c.passed { "pass" } else { "FAIL" }
        ));
    }
    summary.push(format!("monte-carlo stderr {:.3e} over {} replicates, seed {}", mc.stderr, mc.replicates, cfg.seed));
    if cfg.emit_plots {
        line_chart(&cfg.out.join("density.svg"), "Signal density", "λ", "trace", &density_traces(&f, "F", 512)?)?;
        line_chart(&cfg.out.join("characteristic.svg"), "Spectral characteristic", "λ", "|h(λ)|", &characteristic_profiles(&sol, 512)?)?;
    }
    Ok(Outcome { code: if passed { 0 } else { UNVERIFIED }, summary })
}
