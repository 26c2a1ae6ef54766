//! Run configuration, parsed strictly from JSON.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use specdual::filterbank::{bank_of_delays, matrix_from_rows, pole_filter};
use specdual::{
    Family, Method, PriorModel, ShapingFilter, SolverOptions, StateSpaceFilter, Window,
};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PROBES: usize = 5;
pub const DEFAULT_GRID_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub filter: FilterConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    pub family: FamilyName,
    pub nu: u32,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Number of probes in the constant-gap check, `Θ = 0` included.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Replaces the covariance computed from the data. Verification rejects
    /// any override that breaks consistency with the correlogram.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_override: Option<Vec<Vec<f64>>>,
    /// Symmetric matrices spanning the space the dual variable is restricted to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<Vec<Vec<Vec<f64>>>>,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_probes() -> usize {
    DEFAULT_PROBES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterConfig {
    Delays {
        n: usize,
    },
    /// Poles as `[re, im]` pairs; complex poles need their conjugates.
    Poles {
        poles: Vec<[f64; 2]>,
    },
    StateSpace {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    #[default]
    Identity,
    ShapingFilter {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
        #[serde(rename = "D")]
        d: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Alpha,
    Beta,
    Tau,
}

impl From<FamilyName> for Family {
    fn from(f: FamilyName) -> Self {
        match f {
            FamilyName::Alpha => Family::Alpha,
            FamilyName::Beta => Family::Beta,
            FamilyName::Tau => Family::Tau,
        }
    }
}

impl From<Family> for FamilyName {
    fn from(f: Family) -> Self {
        match f {
            Family::Alpha => FamilyName::Alpha,
            Family::Beta => FamilyName::Beta,
            Family::Tau => FamilyName::Tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Bartlett,
    Rectangular,
}

impl From<WindowKind> for Window {
    fn from(w: WindowKind) -> Self {
        match w {
            WindowKind::Bartlett => Window::Bartlett,
            WindowKind::Rectangular => Window::Rectangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default)]
    pub kind: WindowKind,
    /// `None` picks a lag from the record length.
    #[serde(default)]
    pub max_lag: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    #[default]
    Newton,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: f64,
    pub moment_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_ratio: f64,
    pub method: MethodName,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            grad_tol: o.grad_tol,
            moment_tol: o.moment_tol,
            max_iters: o.max_iters,
            armijo_c: o.armijo_c,
            backtrack_ratio: o.backtrack_ratio,
            method: MethodName::Newton,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            grad_tol: self.grad_tol,
            moment_tol: self.moment_tol,
            max_iters: self.max_iters,
            armijo_c: self.armijo_c,
            backtrack_ratio: self.backtrack_ratio,
            method: match self.method {
                MethodName::Newton => Method::Newton,
                MethodName::Gradient => Method::Gradient,
            },
        }
    }
}

/// Filter, prior and solver options built from a validated config.
#[derive(Debug, Clone)]
pub struct Components {
    pub filter: StateSpaceFilter,
    pub prior: PriorModel,
    pub options: SolverOptions,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn family(&self) -> Family {
        self.family.into()
    }

    /// Checks every field that does not depend on the data and builds the
    /// filter, prior and solver options for `m`-channel input.
    pub fn validate(&self, m: usize) -> Result<Components, CliError> {
        if self.nu == 0 {
            return Err(CliError::Config("nu must be a positive integer".into()));
        }
        if !self.grid_points.is_power_of_two() || self.grid_points < 8 {
            return Err(CliError::Config(format!(
                "grid_points must be a power of two >= 8, got {}",
                self.grid_points
            )));
        }
        if self.probes < 3 {
            return Err(CliError::Config(format!(
                "probes must be at least 3, got {}",
                self.probes
            )));
        }
        if self.family == FamilyName::Alpha && m != 1 {
            return Err(specdual::Error::ScalarOnly(m).into());
        }
        let filter = self.filter.build(m)?;
        if filter.m() != m {
            return Err(CliError::Config(format!(
                "filter takes {} input channels but the data has {m}",
                filter.m()
            )));
        }
        let prior = self.prior.build(m)?;
        let options = self.solver.options();
        options.validate()?;
        Ok(Components {
            filter,
            prior,
            options,
        })
    }
}

impl FilterConfig {
    pub fn build(&self, m: usize) -> Result<StateSpaceFilter, CliError> {
        let filter = match self {
            FilterConfig::Delays { n } => {
                if m != 1 {
                    return Err(CliError::Config(format!(
                        "a bank of delays takes scalar input, the data has {m} channels"
                    )));
                }
                bank_of_delays(*n)?
            }
            FilterConfig::Poles { poles } => {
                let poles: Vec<Complex64> =
                    poles.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                pole_filter(&poles, m)?
            }
            FilterConfig::StateSpace { a, b } => {
                StateSpaceFilter::new(matrix_from_rows(a)?, matrix_from_rows(b)?)?
            }
        };
        Ok(filter)
    }
}

impl PriorConfig {
    pub fn build(&self, m: usize) -> Result<PriorModel, CliError> {
        match self {
            PriorConfig::Identity => Ok(PriorModel::identity(m)),
            PriorConfig::ShapingFilter { a, b, c, d } => {
                let w = ShapingFilter::new(
                    matrix_from_rows(a)?,
                    matrix_from_rows(b)?,
                    matrix_from_rows(c)?,
                    matrix_from_rows(d)?,
                )?;
                if w.dim() != m {
                    return Err(CliError::Config(format!(
                        "prior is {0}x{0} but the data has {m} channels",
                        w.dim()
                    )));
                }
                Ok(PriorModel::ShapingFilter(w))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"filter": {"type": "delays", "n": 4}, "family": "tau", "nu": 1}"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.prior, PriorConfig::Identity);
        assert_eq!(c.window.kind, WindowKind::Bartlett);
        assert_eq!(c.window.max_lag, None);
        assert_eq!(c.seed, 42);
        assert_eq!(c.probes, 5);
        assert_eq!(c.solver, SolverConfig::default());
        assert!(c.validate(1).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = r#"{"filter": {"type": "delays", "n": 4}, "family": "tau", "nu": 1, "extra": 0}"#;
        assert!(RunConfig::from_json(top).is_err());
        let nested = r#"{"filter": {"type": "delays", "n": 4, "m": 1}, "family": "tau", "nu": 1}"#;
        assert!(RunConfig::from_json(nested).is_err());
        let solver = r#"{"filter": {"type": "delays", "n": 4}, "family": "tau", "nu": 1,
                         "solver": {"tolerance": 1e-3}}"#;
        assert!(RunConfig::from_json(solver).is_err());
        let family = r#"{"filter": {"type": "delays", "n": 4}, "family": "gamma", "nu": 1}"#;
        assert!(RunConfig::from_json(family).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"{
            "filter": {"type": "poles", "poles": [[0.9, 0.0], [0.5, 0.5], [0.5, -0.5]]},
            "prior": {"type": "shaping_filter", "A": [[0.3]], "B": [[1.0]], "C": [[0.4]], "D": [[1.0]]},
            "family": "alpha", "nu": 2,
            "window": {"kind": "rectangular", "max_lag": 10},
            "grid_points": 256, "solver": {"method": "gradient", "max_iters": 50},
            "output": "out", "seed": 7, "probes": 6,
            "sigma_override": [[1.0, 0.0], [0.0, 1.0]]
        }"#;
        let c = RunConfig::from_json(text).unwrap();
        let echo = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&echo).unwrap(), c);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.grid_points = 1000;
        assert!(c.validate(1).is_err());
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.nu = 0;
        assert!(c.validate(1).is_err());
        let mut c = RunConfig::from_json(MINIMAL).unwrap();
        c.family = FamilyName::Alpha;
        let err = c.validate(2).unwrap_err().to_string();
        assert!(err.contains("scalar"), "{err}");
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert!(c.validate(2).is_err());
        let unstable = r#"{"filter": {"type": "poles", "poles": [[1.1, 0.0]]}, "family": "beta", "nu": 1}"#;
        assert!(RunConfig::from_json(unstable).unwrap().validate(1).is_err());
    }
}
