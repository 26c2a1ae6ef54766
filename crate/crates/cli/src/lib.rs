//! Batch front end for `specdual`: reads a time series and a JSON config,
//! runs the estimation pipeline and writes spectra and reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use specdual::estimation::{correlogram, default_max_lag, sample_covariances, sigma_hat};
use specdual::filterbank::matrix_from_rows;
use specdual::interpret::{cepstral_factor, dual_constant_check, generate_probes, pem_check};
use specdual::{
    Correlogram, CovarianceEstimate, DivergenceSpec, DualProblem, Family, FrequencyGrid,
    ProblemSpec, SpectralDensity, TimeSeries,
};

pub mod config;
pub mod data;
pub mod output;

use config::{Components, RunConfig};
use output::{round_sig, rounded_matrix, spectrum_hash, write_json, Field, SpectrumFile};

pub const DEFAULT_OUTPUT: &str = "specdual-out";
/// Relative tolerance on the spread of the dual/divergence gap.
pub const SPREAD_TOL: f64 = 1e-6;
pub const PEM_IDENTITY_TOL: f64 = 1e-6;
pub const PEM_PERTURBATIONS: usize = 10;
const PEM_RADIUS: f64 = 1e-2;
const PEM_MIN_TOL: f64 = 1e-10;
const SINGULAR_OMEGA_RATIO: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Data { line: u64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] specdual::Error),
}

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    VerificationFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::NotConverged | Outcome::VerificationFailed => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "specdual", version, about = "Covariance-matching spectral estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a spectral density from a CSV time series.
    Estimate {
        /// CSV file, one row per sample and one column per channel
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the divergence reading of the dual problem on a record.
    Verify {
        /// CSV file, one row per sample and one column per channel
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a divergence between two stored spectra.
    Divergence {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum)]
        family: DivergenceKind,
        /// Family parameter (alpha, beta or tau).
        #[arg(long, allow_hyphen_values = true)]
        param: Option<f64>,
        /// Spectrum file holding the weight `Q` of the weighted families.
        #[arg(long)]
        weight: Option<PathBuf>,
        /// Spectrum to read from each file; defaults to `phi`, then `omega`.
        #[arg(long, value_enum)]
        field: Option<FieldArg>,
    },
    /// Write the windowed correlogram of a CSV time series.
    Correlogram {
        data: PathBuf,
        /// Only the window and grid settings are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        grid_points: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the configuration (default `specdual-out`)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Number of frequency grid points, a power of two
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Seed for the random probes of `verify`
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DivergenceKind {
    Kl,
    Is,
    Alpha,
    Beta,
    Tau,
    B1,
    B2,
    Kl1,
    Kl2,
    IsWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Phi,
    Omega,
}

impl RunArgs {
    /// Loads the config and applies the command-line overrides.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(n) = self.grid_points {
            config.grid_points = n;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.output {
            config.output = Some(o.clone());
        }
        if config.output.is_none() {
            config.output = Some(PathBuf::from(DEFAULT_OUTPUT));
        }
        Ok(config)
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Estimate { data, run } => estimate(&data, &run.resolve()?),
        Command::Verify { data, run } => verify(&data, &run.resolve()?),
        Command::Divergence {
            a,
            b,
            family,
            param,
            weight,
            field,
        } => {
            let field = field.map(|f| match f {
                FieldArg::Phi => Field::Phi,
                FieldArg::Omega => Field::Omega,
            });
            let value = divergence(&a, &b, family, param, weight.as_deref(), field)?;
            println!("{}", round_sig(value));
            Ok(Outcome::Success)
        }
        Command::Correlogram {
            data,
            config,
            output,
            grid_points,
        } => {
            correlogram_only(&data, config.as_deref(), output, grid_points)?;
            Ok(Outcome::Success)
        }
    }
}

/// Everything computed before the solver runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub components: Components,
    pub max_lag: usize,
    pub correlogram: Correlogram,
    pub omega: SpectralDensity,
    pub sigma: CovarianceEstimate,
    pub problem: DualProblem,
    pub warnings: Vec<String>,
}

/// demean, sample covariances, correlogram, positivity, `Σ̂` and the dual
/// problem, in that order.
pub fn prepare(config: &RunConfig, series: &TimeSeries) -> Result<Prepared, CliError> {
    let components = config.validate(series.channels())?;
    let grid = FrequencyGrid::new(config.grid_points)?;
    let mut warnings = Vec::new();
    let (max_lag, correlogram) = build_correlogram(config, series, grid)?;
    let omega = correlogram.density()?;
    let (lo, hi) = omega
        .samples()
        .iter()
        .map(|s| specdual::freqgrid::eigen_range(s))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)));
    if lo < SINGULAR_OMEGA_RATIO * hi {
        warnings.push(format!(
            "correlogram is nearly singular (eigenvalue ratio {:e})",
            lo / hi
        ));
    }
    let sigma = match &config.sigma_override {
        Some(rows) => {
            warnings.push("sigma_override replaces the covariance computed from the data".into());
            CovarianceEstimate::from_matrix(matrix_from_rows(rows)?)?
        }
        None => sigma_hat(&components.filter, &correlogram)?,
    };
    let mut spec = ProblemSpec::new(
        config.family(),
        config.nu,
        components.filter.clone(),
        components.prior.clone(),
        sigma.clone(),
        grid,
    )
    .with_options(components.options);
    if let Some(basis) = &config.subspace {
        let basis = basis
            .iter()
            .map(|rows| matrix_from_rows(rows))
            .collect::<Result<Vec<_>, _>>()?;
        spec = spec.with_subspace(basis);
    }
    let problem = DualProblem::new(spec)?;
    Ok(Prepared {
        components,
        max_lag,
        correlogram,
        omega,
        sigma,
        problem,
        warnings,
    })
}

fn build_correlogram(
    config: &RunConfig,
    series: &TimeSeries,
    grid: FrequencyGrid,
) -> Result<(usize, Correlogram), CliError> {
    let y = series.demean();
    let max_lag = config
        .window
        .max_lag
        .unwrap_or_else(|| default_max_lag(y.len()));
    let lags = sample_covariances(&y, max_lag)?;
    let omega = correlogram(&lags, config.window.kind.into(), grid)?;
    omega.check_positive()?;
    Ok((max_lag, omega))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub samples: usize,
    pub channels: usize,
    pub max_lag: usize,
    pub sigma_hat: Vec<Vec<f64>>,
    pub theta_hat: Vec<Vec<f64>>,
    pub dual_value: f64,
    pub moment_residual: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub phi_hash: String,
    pub warnings: Vec<String>,
}

/// Wall-clock data, kept out of the reproducible outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub format_version: u32,
    pub prepare_seconds: f64,
    pub solve_seconds: f64,
}

fn output_dir(config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    output::ensure_dir(&dir)
}

pub fn estimate(data: &Path, config: &RunConfig) -> Result<Outcome, CliError> {
    let series = data::read_series(data)?;
    let start = Instant::now();
    let mut prepared = prepare(config, &series)?;
    let prepare_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let solution = prepared.problem.solve()?;
    let solve_seconds = start.elapsed().as_secs_f64();
    if !solution.converged {
        prepared.warnings.push(format!(
            "solver stopped after {} iterations without converging",
            solution.iterations
        ));
    }
    let hash = spectrum_hash(&solution.phi_star);
    let dir = output_dir(config)?;

    let mut spectrum = SpectrumFile::new("estimate", prepared.problem.grid(), prepared.omega.dim())
        .with_phi(&solution.phi_star)
        .with_omega(prepared.omega.function());
    spectrum.theta_hat = Some(rounded_matrix(solution.theta_hat.matrix()));
    spectrum.diagnostics = Some(output::Diagnostics {
        converged: solution.converged,
        iterations: solution.iterations,
        dual_value: round_sig(solution.dual_value),
        moment_residual: round_sig(solution.moment_residual),
        gradient_norm: round_sig(solution.gradient_norm),
        phi_hash: hash.clone(),
    });
    write_json(&dir.join("spectrum.json"), &spectrum)?;
    output::write_spectrum_csv(&dir.join("spectrum.csv"), solution.phi_star.function())?;

    let report = RunReport {
        format_version: output::FORMAT_VERSION,
        command: "estimate".into(),
        config: config.clone(),
        samples: series.len(),
        channels: series.channels(),
        max_lag: prepared.max_lag,
        sigma_hat: rounded_matrix(prepared.sigma.matrix()),
        theta_hat: rounded_matrix(solution.theta_hat.matrix()),
        dual_value: round_sig(solution.dual_value),
        moment_residual: round_sig(solution.moment_residual),
        gradient_norm: round_sig(solution.gradient_norm),
        iterations: solution.iterations,
        converged: solution.converged,
        phi_hash: hash,
        warnings: prepared.warnings.clone(),
    };
    write_json(&dir.join("report.json"), &report)?;
    write_json(
        &dir.join("timing.json"),
        &Timing {
            format_version: output::FORMAT_VERSION,
            prepare_seconds,
            solve_seconds,
        },
    )?;
    for w in &prepared.warnings {
        log::warn!("{w}");
    }
    Ok(if solution.converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRecord {
    pub theta: Vec<Vec<f64>>,
    pub dual_value: f64,
    pub divergence: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantCheck {
    pub probes: Vec<ProbeRecord>,
    pub constant_spread: f64,
    pub dual_at_zero: f64,
    pub spread_tolerance: f64,
    pub spread_ok: bool,
    pub analytic_constant: f64,
    pub analytic_deviation: f64,
    pub analytic_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion_term: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PemRecord {
    pub direct: f64,
    pub criterion: f64,
    pub identity_residual: f64,
    pub identity_ok: bool,
    pub increases: Vec<f64>,
    pub locally_minimal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionRecord {
    pub converged: bool,
    pub iterations: usize,
    pub dual_value: f64,
    pub moment_residual: f64,
    pub phi_hash: String,
}

/// The `ν = 1` solution of the other family among Beta and Tau.
#[derive(Debug, Clone, Serialize)]
pub struct Counterpart {
    pub family: config::FamilyName,
    pub phi_hash: String,
    pub max_relative_difference: f64,
    pub hashes_match: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub constant_check: ConstantCheck,
    pub solution: SolutionRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pem: Option<PemRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterpart: Option<Counterpart>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl VerifyReport {
    /// Whether every check recorded in the report succeeded.
    pub fn all_checks_pass(&self) -> bool {
        self.constant_check.spread_ok
            && self.constant_check.analytic_ok
            && self.solution.converged
            && self
                .pem
                .as_ref()
                .is_none_or(|p| p.identity_ok && p.locally_minimal)
            && self.counterpart.as_ref().is_none_or(|c| c.hashes_match)
    }
}

pub fn verify_report(config: &RunConfig, series: &TimeSeries) -> Result<VerifyReport, CliError> {
    let prepared = prepare(config, series)?;
    let problem = &prepared.problem;
    let probes = generate_probes(problem, config.probes, config.seed)?;
    let check = dual_constant_check(problem, &prepared.omega, &probes)?;
    let constant_check = ConstantCheck {
        probes: check
            .probes
            .iter()
            .map(|p| ProbeRecord {
                theta: rounded_matrix(p.theta.matrix()),
                dual_value: round_sig(p.dual_value),
                divergence: round_sig(p.divergence),
                difference: round_sig(p.difference),
            })
            .collect(),
        constant_spread: round_sig(check.constant_spread),
        dual_at_zero: round_sig(check.dual_at_zero),
        spread_tolerance: round_sig(SPREAD_TOL * (1.0 + check.dual_at_zero.abs())),
        spread_ok: check.spread_within(SPREAD_TOL),
        analytic_constant: round_sig(check.analytic_constant),
        analytic_deviation: round_sig(check.analytic_deviation),
        analytic_ok: check.analytic_within(SPREAD_TOL),
        completion_term: check.completion_term.map(round_sig),
    };

    let solution = problem.solve()?;
    let mut warnings = prepared.warnings.clone();
    if !solution.converged {
        warnings.push(format!(
            "solver stopped after {} iterations without converging",
            solution.iterations
        ));
    }
    let phi_hash = spectrum_hash(&solution.phi_star);

    let pem = if prepared.omega.dim() == 1 && config.nu == 1 {
        let radius = PEM_RADIUS * solution.theta_hat.matrix().norm().max(1.0);
        let p = pem_check(
            problem,
            &solution.theta_hat,
            &prepared.omega,
            PEM_PERTURBATIONS,
            config.seed,
            radius,
        )?;
        Some(PemRecord {
            direct: round_sig(p.direct),
            criterion: round_sig(p.criterion),
            identity_residual: round_sig(p.identity_residual),
            identity_ok: p.identity_residual <= PEM_IDENTITY_TOL,
            increases: p.increases.iter().copied().map(round_sig).collect(),
            locally_minimal: p.locally_minimal(PEM_MIN_TOL),
        })
    } else {
        None
    };

    let other = match config.family() {
        Family::Beta if config.nu == 1 => Some(Family::Tau),
        Family::Tau if config.nu == 1 => Some(Family::Beta),
        _ => None,
    };
    let counterpart = match other {
        Some(family) => {
            let mut spec = problem.spec().clone();
            spec.family = family;
            let alt = DualProblem::new(spec)?.solve()?;
            let h = spectrum_hash(&alt.phi_star);
            Some(Counterpart {
                family: family.into(),
                max_relative_difference: round_sig(max_relative_difference(
                    &solution.phi_star,
                    &alt.phi_star,
                )),
                hashes_match: h == phi_hash,
                phi_hash: h,
            })
        }
        None => None,
    };

    let mut report = VerifyReport {
        format_version: output::FORMAT_VERSION,
        command: "verify".into(),
        config: config.clone(),
        constant_check,
        solution: SolutionRecord {
            converged: solution.converged,
            iterations: solution.iterations,
            dual_value: round_sig(solution.dual_value),
            moment_residual: round_sig(solution.moment_residual),
            phi_hash,
        },
        pem,
        counterpart,
        warnings,
        passed: false,
    };
    report.passed = report.all_checks_pass();
    Ok(report)
}

/// `max_θ ‖A(θ) - B(θ)‖ / ‖B(θ)‖`.
pub fn max_relative_difference(a: &SpectralDensity, b: &SpectralDensity) -> f64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).norm() / y.norm())
        .fold(0.0, f64::max)
}

pub fn verify(data: &Path, config: &RunConfig) -> Result<Outcome, CliError> {
    let series = data::read_series(data)?;
    let report = verify_report(config, &series)?;
    let dir = output_dir(config)?;
    write_json(&dir.join("verify.json"), &report)?;
    Ok(if report.passed {
        Outcome::Success
    } else {
        Outcome::VerificationFailed
    })
}

fn scalar_factor_of(d: &SpectralDensity, what: &str) -> Result<specdual::MatrixFunction, CliError> {
    if d.dim() != 1 {
        return Err(CliError::Input(format!(
            "{what} needs a spectral factor, which is only computed for scalar spectra"
        )));
    }
    Ok(cepstral_factor(d)?.to_function()?)
}

pub fn divergence(
    a: &Path,
    b: &Path,
    kind: DivergenceKind,
    param: Option<f64>,
    weight: Option<&Path>,
    field: Option<Field>,
) -> Result<f64, CliError> {
    let phi = SpectrumFile::load(a)?.density(field)?;
    let psi = SpectrumFile::load(b)?.density(field)?;
    if phi.grid() != psi.grid() || phi.dim() != psi.dim() {
        return Err(CliError::Input(format!(
            "spectra differ in shape: {} points of {}x{} against {} points of {}x{}",
            phi.grid().len(),
            phi.dim(),
            phi.dim(),
            psi.grid().len(),
            psi.dim(),
            psi.dim()
        )));
    }
    let param = || {
        param.ok_or_else(|| CliError::Input(format!("--param is required for {kind:?}")))
    };
    let weight = || -> Result<SpectralDensity, CliError> {
        let path =
            weight.ok_or_else(|| CliError::Input(format!("--weight is required for {kind:?}")))?;
        SpectrumFile::load(path)?.density(field)
    };
    let spec = match kind {
        DivergenceKind::Kl => DivergenceSpec::Kl,
        DivergenceKind::Is => DivergenceSpec::Is,
        DivergenceKind::Alpha => DivergenceSpec::Alpha(param()?),
        DivergenceKind::Beta => DivergenceSpec::Beta(param()?),
        DivergenceKind::Tau => DivergenceSpec::Tau {
            tau: param()?,
            factor: scalar_factor_of(&psi, "tau")?,
        },
        DivergenceKind::B1 => DivergenceSpec::B1Weighted {
            beta: param()?,
            factor: scalar_factor_of(&weight()?, "b1")?,
        },
        DivergenceKind::B2 => DivergenceSpec::B2Weighted {
            beta: param()?,
            weight: weight()?,
        },
        DivergenceKind::Kl1 => DivergenceSpec::Kl1Weighted {
            factor: scalar_factor_of(&weight()?, "kl1")?,
        },
        DivergenceKind::Kl2 => DivergenceSpec::Kl2Weighted { weight: weight()? },
        DivergenceKind::IsWeighted => DivergenceSpec::IsWeighted { weight: weight()? },
    };
    Ok(spec.evaluate(&phi, &psi)?)
}

pub fn correlogram_only(
    data: &Path,
    config: Option<&Path>,
    output: Option<PathBuf>,
    grid_points: Option<usize>,
) -> Result<PathBuf, CliError> {
    let series = data::read_series(data)?;
    let mut window = config::WindowConfig::default();
    let mut points = config::DEFAULT_GRID_POINTS;
    let mut dir = None;
    if let Some(path) = config {
        let c = RunConfig::load(path)?;
        window = c.window;
        points = c.grid_points;
        dir = c.output;
    }
    let points = grid_points.unwrap_or(points);
    let dir = output
        .or(dir)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    let grid = FrequencyGrid::new(points)?;
    let y = series.demean();
    let max_lag = window.max_lag.unwrap_or_else(|| default_max_lag(y.len()));
    let omega = correlogram(&sample_covariances(&y, max_lag)?, window.kind.into(), grid)?;
    let dir = output::ensure_dir(&dir)?;
    let file = SpectrumFile::new("correlogram", grid, series.channels()).with_omega(omega.function());
    write_json(&dir.join("correlogram.json"), &file)?;
    output::write_spectrum_csv(&dir.join("correlogram.csv"), omega.function())?;
    if let Err(e) = omega.check_positive() {
        log::warn!("{e}");
    }
    Ok(dir)
}
