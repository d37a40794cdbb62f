//! Run configuration: a JSON document naming the input documents plus numeric
//! settings, overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exit::Failure;

pub const SCHEMA: &str = "spi-run/1";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    #[serde(rename = "F")]
    pub f: PathBuf,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Residual and constraint acceptance of the least-favourable solver.
    pub minimax: f64,
    pub max_iterations: usize,
    /// Absolute excess allowed by the saddle check.
    pub saddle: f64,
    pub saddle_samples: usize,
    /// Relative gap allowed between analytic and oracle errors.
    pub oracle: f64,
    /// Monte Carlo acceptance in standard errors.
    pub sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { minimax: 1e-6, max_iterations: 500, saddle: 1e-6, saddle_samples: 200, oracle: 1e-6, sigmas: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Command the file was written for; checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Signal density `F`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
    /// Noise density `G`; absent means noiseless observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<PathBuf>,
    /// Evaluate this pair instead of iterating (minimax).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<Candidate>,
    /// Interpolation solution to check (validate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Simulated time span `first..first+length` (simulate).
    #[serde(default)]
    pub first: i64,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub emit_plots: bool,
}

fn default_replicates() -> usize {
    10_000
}

fn default_length() -> usize {
    16
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub window: Option<usize>,
    pub out: Option<PathBuf>,
    pub emit_plots: bool,
}

impl RunConfig {
    /// Reads `path`, applies `overrides`, resolves input paths against the
    /// file's directory and checks the invariants.
    pub fn load(path: &Path, command: &str, overrides: &Overrides) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Failure::input(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
        if cfg.schema != SCHEMA {
            return Err(Failure::input(format!("schema: expected \"{SCHEMA}\", found \"{}\"", cfg.schema)));
        }
        if let Some(c) = &cfg.command {
            if c != command {
                return Err(Failure::input(format!("command: config is for `{c}`, invoked as `{command}`")));
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &mut PathBuf, field: &str| -> Result<(), Failure> {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(Failure::input(format!("{field}: no such file {}", p.display())));
            }
            Ok(())
        };
        for (p, field) in [
            (&mut cfg.density, "density"),
            (&mut cfg.noise, "noise"),
            (&mut cfg.functional, "functional"),
            (&mut cfg.class, "class"),
            (&mut cfg.solution, "solution"),
        ] {
            if let Some(p) = p {
                resolve(p, field)?;
            }
        }
        if let Some(c) = &mut cfg.candidate {
            resolve(&mut c.f, "candidate.F")?;
            if let Some(g) = &mut c.g {
                resolve(g, "candidate.G")?;
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(g) = overrides.grid {
            cfg.grid = Some(g);
        }
        if let Some(w) = overrides.window {
            cfg.window = Some(w);
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        cfg.emit_plots |= overrides.emit_plots;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), Failure> {
        if let Some(s) = self.grid {
            if s < 64 || !s.is_power_of_two() {
                return Err(Failure::input(format!("grid: must be a power of two >= 64, got {s}")));
            }
        }
        if self.window == Some(0) {
            return Err(Failure::input("window: must be >= 1"));
        }
        if self.length == 0 {
            return Err(Failure::input("length: must be >= 1"));
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, Failure> {
        value.as_deref().ok_or_else(|| Failure::input(format!("{field}: required by this command")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "f.json", "{}");
        let cfg = write(dir.path(), "run.json", r#"{"schema": "spi-run/1", "density": "f.json", "grid": 128}"#);
        let c = RunConfig::load(&cfg, "interpolate", &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!(c.density.unwrap(), dir.path().join("f.json"));
        assert_eq!(c.seed, 9);
        assert_eq!(c.grid, Some(128));
        assert_eq!(c.out, dir.path().join("out"));
    }

    #[test]
    fn invalid_settings_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            (r#"{"schema": "spi-run/1", "grid": 100}"#, "grid"),
            (r#"{"schema": "spi-run/1", "window": 0}"#, "window"),
            (r#"{"schema": "spi-run/1", "density": "missing.json"}"#, "density"),
            (r#"{"schema": "spi-run/1", "command": "simulate"}"#, "command"),
            (r#"{"schema": "spi-run/2"}"#, "schema"),
            (r#"{"schema": "spi-run/1", "grdi": 64}"#, "grdi"),
        ];
        for (text, field) in cases {
            let cfg = write(dir.path(), "run.json", text);
            let err = RunConfig::load(&cfg, "interpolate", &Overrides::default()).unwrap_err();
            assert_eq!(err.code, 1);
            assert!(err.message.contains(field), "{}", err.message);
        }
    }
}
