//! The dual objective read as a weighted divergence from the correlogram, and
//! the prediction-error reading of the `ν = 1` solutions.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::divergence::{b1_raw, b2_raw, beta_raw, is_raw, is_weighted_raw};
use crate::dual::{moment_residual, DualProblem, DualVariable, Family};
use crate::error::{Error, Result};
use crate::estimation::{CovarianceEstimate, CovarianceSequence};
use crate::filterbank::{output_covariance, StateSpaceFilter};
use crate::freqgrid::{
    hermitian_part, inverse, log_det, matrix_log, matrix_power, mean_trace,
    FrequencyGrid, MatrixFunction, RMatrix, SpectralDensity,
};

/// Largest correlogram-condition residual accepted by [`dual_constant_check`].
pub const CORRELOGRAM_TOL: f64 = 1e-8;
/// Probe margins are pushed up to this value (or half the margin at zero).
pub const PROBE_MARGIN: f64 = 0.1;
const FACTOR_QUALITY_TOL: f64 = 1e-6;

/// One probe of the constant-gap check.
#[derive(Debug, Clone)]
pub struct Probe {
    pub theta: DualVariable,
    pub dual_value: f64,
    pub divergence: f64,
    /// `J(Θ) - divergence`.
    pub difference: f64,
}

#[derive(Debug, Clone)]
pub struct InterpretationReport {
    pub family: Family,
    pub nu: u32,
    pub probes: Vec<Probe>,
    /// `max - min` of the probe differences.
    pub constant_spread: f64,
    /// `J(0)`, the scale the spread is judged against.
    pub dual_at_zero: f64,
    /// Closed-form value of the gap.
    pub analytic_constant: f64,
    /// Largest `|difference - analytic_constant|` over the probes.
    pub analytic_deviation: f64,
    /// For Tau with `ν > 1`, `tr ∫ ν²/(1-ν) (W⁻¹ΩW⁻*)^(1-1/ν)`, the
    /// Θ-independent term whose addition to `J` completes the divergence.
    pub completion_term: Option<f64>,
}

impl InterpretationReport {
    pub fn spread_within(&self, rel_tol: f64) -> bool {
        self.constant_spread <= rel_tol * (1.0 + self.dual_at_zero.abs())
    }

    pub fn analytic_within(&self, rel_tol: f64) -> bool {
        self.analytic_deviation <= rel_tol * (1.0 + self.analytic_constant.abs())
    }
}

fn require_same_grid(problem: &DualProblem, omega: &SpectralDensity) -> Result<()> {
    problem.response().check_same_grid(omega.function())?;
    if omega.dim() != problem.spec().filter.m() {
        return Err(Error::Dimension(format!(
            "correlogram is {0}x{0}, filter has {1} inputs",
            omega.dim(),
            problem.spec().filter.m()
        )));
    }
    Ok(())
}

fn inverse_adjoint_factor(problem: &DualProblem) -> Result<MatrixFunction> {
    problem
        .prior_factor()
        .try_map(|w| Ok(inverse(w)?.adjoint()))
}

fn prior_power(problem: &DualProblem, p: f64) -> Result<SpectralDensity> {
    SpectralDensity::new(
        problem
            .prior_density()
            .function()
            .try_map(|s| matrix_power(s, p))?,
    )
}

/// The weighted divergence between `Ω` and the primal density at `Θ` that
/// differs from `J(Θ)` by a Θ-independent constant:
/// Tau `S_B1,Ψ⁻¹`, Alpha `S_B2,Ψ^(1/ν)`, Beta `S_B`, all with parameter
/// `1 - 1/ν` (the Itakura-Saito limits for `ν = 1`).
pub fn weighted_objective(
    problem: &DualProblem,
    theta: &DualVariable,
    omega: &SpectralDensity,
) -> Result<f64> {
    require_same_grid(problem, omega)?;
    let phi = problem.primal_from_dual(theta)?;
    let nu = problem.nu();
    let beta = 1.0 - 1.0 / nu as f64;
    match (problem.family(), nu) {
        (Family::Tau | Family::Beta, 1) => is_raw(omega, &phi),
        (Family::Tau, _) => b1_raw(omega, &phi, beta, &inverse_adjoint_factor(problem)?),
        (Family::Beta, _) => beta_raw(omega, &phi, beta),
        (Family::Alpha, 1) => is_weighted_raw(omega, &phi, problem.prior_density()),
        (Family::Alpha, _) => b2_raw(omega, &phi, beta, &prior_power(problem, 1.0 / nu as f64)?),
    }
}

fn trace_mean(
    grid: FrequencyGrid,
    mut f: impl FnMut(usize) -> Result<Complex64>,
) -> Result<f64> {
    let values = (0..grid.len()).map(&mut f).collect::<Result<Vec<_>>>()?;
    mean_trace(values.into_iter(), grid.len())
}

/// `J(Θ) - weighted_objective(Θ)` in closed form, valid when `Σ̂ = ∫ G Ω G*`.
pub fn analytic_gap(problem: &DualProblem, omega: &SpectralDensity) -> Result<f64> {
    require_same_grid(problem, omega)?;
    let nu = problem.nu() as f64;
    let beta = 1.0 - 1.0 / nu;
    let grid = omega.grid();
    let psi = problem.prior_density();
    let m = omega.dim() as f64;
    match (problem.family(), problem.nu()) {
        (Family::Tau | Family::Beta, 1) => trace_mean(grid, |k| {
            let o = omega.sample(k);
            let ratio = (o * inverse(psi.sample(k))?).trace();
            Ok(Complex64::from(log_det(o)? + m) - ratio)
        }),
        (Family::Tau, _) => {
            let w = problem.prior_factor();
            trace_mean(grid, |k| {
                let wi = inverse(w.sample(k))?;
                let x = hermitian_part(&(&wi * omega.sample(k) * wi.adjoint()));
                Ok(matrix_power(&x, beta)?.trace() * (nu * nu / (nu - 1.0)) - x.trace() * nu)
            })
        }
        (Family::Beta, _) => trace_mean(grid, |k| {
            let o = omega.sample(k);
            let weighted = (o * matrix_power(psi.sample(k), -1.0 / nu)?).trace();
            Ok(matrix_power(o, beta)?.trace() * (nu * nu / (nu - 1.0)) - weighted * nu)
        }),
        (Family::Alpha, 1) => trace_mean(grid, |k| {
            let o = omega.sample(k);
            let p = psi.sample(k);
            Ok((p * (matrix_log(o)? - matrix_log(p)?) - o + p).trace())
        }),
        (Family::Alpha, _) => trace_mean(grid, |k| {
            let o = omega.sample(k);
            let q = matrix_power(psi.sample(k), 1.0 / nu)?;
            Ok((q * matrix_power(o, beta)?).trace() * (nu * nu / (nu - 1.0)) - o.trace() * nu)
        }),
    }
}

/// `tr ∫ ν²/(1-ν) (W⁻¹ΩW⁻*)^(1-1/ν)` for Tau with `ν > 1`.
pub fn completion_term(problem: &DualProblem, omega: &SpectralDensity) -> Result<Option<f64>> {
    if problem.family() != Family::Tau || problem.nu() == 1 {
        return Ok(None);
    }
    require_same_grid(problem, omega)?;
    let nu = problem.nu() as f64;
    let w = problem.prior_factor();
    trace_mean(omega.grid(), |k| {
        let wi = inverse(w.sample(k))?;
        let x = hermitian_part(&(&wi * omega.sample(k) * wi.adjoint()));
        Ok(matrix_power(&x, 1.0 - 1.0 / nu)?.trace() * (nu * nu / (1.0 - nu)))
    })
    .map(Some)
}

/// Evaluates `J(Θ) - weighted_objective(Θ)` on each probe and checks that it
/// does not depend on `Θ`.
pub fn dual_constant_check(
    problem: &DualProblem,
    omega: &SpectralDensity,
    probes: &[DualVariable],
) -> Result<InterpretationReport> {
    if probes.len() < 3 {
        return Err(Error::Parameter(format!(
            "the constant check needs at least 3 probes, got {}",
            probes.len()
        )));
    }
    require_same_grid(problem, omega)?;
    let residual = moment_residual(omega, &problem.spec().filter, problem.sigma())?;
    if residual > CORRELOGRAM_TOL {
        return Err(Error::CorrelogramMismatch { residual });
    }
    let mut out = Vec::with_capacity(probes.len());
    for theta in probes {
        let dual_value = problem.dual_value(theta)?;
        let divergence = weighted_objective(problem, theta, omega)?;
        out.push(Probe {
            theta: theta.clone(),
            dual_value,
            divergence,
            difference: dual_value - divergence,
        });
    }
    let lo = out.iter().map(|p| p.difference).fold(f64::INFINITY, f64::min);
    let hi = out.iter().map(|p| p.difference).fold(f64::NEG_INFINITY, f64::max);
    let analytic_constant = analytic_gap(problem, omega)?;
    let analytic_deviation = out
        .iter()
        .map(|p| (p.difference - analytic_constant).abs())
        .fold(0.0, f64::max);
    Ok(InterpretationReport {
        family: problem.family(),
        nu: problem.nu(),
        probes: out,
        constant_spread: hi - lo,
        dual_at_zero: problem.dual_value(&DualVariable::zeros(problem.dim()))?,
        analytic_constant,
        analytic_deviation,
        completion_term: completion_term(problem, omega)?,
    })
}

/// `Θ = 0` followed by `count - 1` seeded random directions in the feasible
/// space, each scaled by bisection to the largest multiple (at most unit
/// Frobenius norm) whose certificate margin stays above
/// `min(PROBE_MARGIN, margin(0)/2)`.
pub fn generate_probes(problem: &DualProblem, count: usize, seed: u64) -> Result<Vec<DualVariable>> {
    let n = problem.dim();
    let mut probes = vec![DualVariable::zeros(n)];
    let target = PROBE_MARGIN.min(0.5 * problem.feasible(&probes[0])?.margin);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while probes.len() < count {
        let dir = random_direction(problem, &mut rng);
        let margin_at = |s: f64| -> Result<f64> {
            Ok(problem.feasible(&DualVariable::new(&dir * s)?)?.margin)
        };
        let scale = if margin_at(1.0)? >= target {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if margin_at(mid)? >= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        probes.push(DualVariable::new(&dir * scale)?);
    }
    Ok(probes)
}

/// Unit-norm direction in the feasible space with Gaussian basis coordinates.
fn random_direction(problem: &DualProblem, rng: &mut ChaCha8Rng) -> RMatrix {
    let d = problem.basis().len();
    let coords = nalgebra::DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let dir = problem.from_coordinates(&coords);
    let norm = dir.norm();
    dir / norm
}

/// Minimum-phase factor `L` of a scalar density on the grid, `|L|² = Φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFactor {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl ScalarFactor {
    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn modulus_squared(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn to_function(&self) -> Result<MatrixFunction> {
        MatrixFunction::scalar(self.grid, &self.values)
    }

    /// `Φ / |L|²`, the density of the normalized prediction error.
    pub fn whiten(&self, phi: &SpectralDensity) -> Result<SpectralDensity> {
        let values = phi
            .scalar_values()
            .ok_or(Error::Dimension("whitening needs a scalar density".into()))?;
        if phi.grid() != self.grid {
            return Err(Error::Dimension("density and factor use different grids".into()));
        }
        let out: Vec<f64> = values
            .iter()
            .zip(&self.values)
            .map(|(p, l)| p / l.norm_sqr())
            .collect();
        SpectralDensity::from_scalar_values(self.grid, &out)
    }
}

/// Cepstral (homomorphic) minimum-phase factorization of a scalar density.
pub fn cepstral_factor(phi: &SpectralDensity) -> Result<ScalarFactor> {
    let values = phi.scalar_values().ok_or(Error::ScalarOnly(phi.dim()))?;
    let nf = values.len();
    if !nf.is_power_of_two() {
        return Err(Error::Parameter(format!(
            "cepstral factorization needs a power-of-two grid, got {nf}"
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::from(v.ln())).collect();
    planner.plan_fft_inverse(nf).process(&mut buf);
    let half = nf / 2;
    for (n, c) in buf.iter_mut().enumerate() {
        let scale = match n {
            0 => 0.5,
            n if n < half => 1.0,
            n if n == half => 0.5,
            _ => 0.0,
        };
        // real part only: the cepstrum of a real symmetric log-spectrum is real
        *c = Complex64::from(c.re * scale / nf as f64);
    }
    planner.plan_fft_forward(nf).process(&mut buf);
    let factor: Vec<Complex64> = buf.iter().map(|c| c.exp()).collect();
    let worst = factor
        .iter()
        .zip(&values)
        .map(|(l, p)| (l.norm_sqr() - p).abs() / p)
        .fold(0.0, f64::max);
    if !(worst <= FACTOR_QUALITY_TOL) {
        return Err(Error::Factorization(format!(
            "|L|² reproduces the density only to {worst:e}"
        )));
    }
    Ok(ScalarFactor {
        grid: phi.grid(),
        values: factor,
    })
}

/// `V(Θ) = S_IS(Λ_Θ‖1)` (Tau, Beta) or `S_IS,Ψ(Λ_Θ‖1)` (Alpha), with
/// `Λ_Θ = Ω / |L_Θ|²` and `L_Θ` the minimum-phase factor of the `ν = 1` primal.
pub fn pem_criterion(problem: &DualProblem, theta: &DualVariable, omega: &SpectralDensity) -> Result<f64> {
    if problem.spec().filter.m() != 1 {
        return Err(Error::ScalarOnly(problem.spec().filter.m()));
    }
    if problem.nu() != 1 {
        return Err(Error::Parameter(format!(
            "the prediction-error criterion is defined for nu = 1, got {}",
            problem.nu()
        )));
    }
    require_same_grid(problem, omega)?;
    let phi = problem.primal_from_dual(theta)?;
    let lambda = cepstral_factor(&phi)?.whiten(omega)?;
    let one = SpectralDensity::identity(omega.grid(), 1);
    match problem.family() {
        Family::Alpha => is_weighted_raw(&lambda, &one, problem.prior_density()),
        Family::Beta | Family::Tau => is_raw(&lambda, &one),
    }
}

/// The prediction-error identity at a solution and a local-minimality probe.
#[derive(Debug, Clone)]
pub struct PemCheck {
    /// `S_IS(Ω‖Φ)`, or `S_IS,Ψ(Ω‖Φ)` for Alpha, evaluated directly.
    pub direct: f64,
    /// `V(Θ̂)` through the whitened correlogram.
    pub criterion: f64,
    pub identity_residual: f64,
    /// `V(Θ̂ + D) - V(Θ̂)` for each perturbation `D`.
    pub increases: Vec<f64>,
}

impl PemCheck {
    pub fn locally_minimal(&self, rel_tol: f64) -> bool {
        let floor = -rel_tol * (1.0 + self.criterion.abs());
        self.increases.iter().all(|d| *d >= floor)
    }
}

/// Compares `V(Θ̂)` with the direct distance from `Ω` to the primal density
/// and evaluates `V` at `count` seeded feasible perturbations of norm at most
/// `radius`.
pub fn pem_check(
    problem: &DualProblem,
    theta_hat: &DualVariable,
    omega: &SpectralDensity,
    count: usize,
    seed: u64,
    radius: f64,
) -> Result<PemCheck> {
    let criterion = pem_criterion(problem, theta_hat, omega)?;
    let phi = problem.primal_from_dual(theta_hat)?;
    let direct = match problem.family() {
        Family::Alpha => is_weighted_raw(omega, &phi, problem.prior_density())?,
        Family::Beta | Family::Tau => is_raw(omega, &phi)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut increases = Vec::with_capacity(count);
    while increases.len() < count {
        let dir = random_direction(problem, &mut rng);
        let mut step = radius;
        let trial = loop {
            let trial = DualVariable::new(theta_hat.matrix() + &dir * step)?;
            if problem.feasible(&trial)?.feasible {
                break trial;
            }
            step *= 0.5;
            if step < radius * 1e-9 {
                return Err(Error::Numerical(
                    "no feasible perturbation found around the solution".into(),
                ));
            }
        };
        increases.push(pem_criterion(problem, &trial, omega)? - criterion);
    }
    Ok(PemCheck {
        direct,
        criterion,
        identity_residual: (direct - criterion).abs(),
        increases,
    })
}

/// Autoregressive model `x(t) = Σ a_k x(t-k) + e(t)`, `Var e = σ²`.
#[derive(Debug, Clone)]
pub struct ArModel {
    pub coefficients: Vec<f64>,
    pub variance: f64,
    /// `σ² / |1 - Σ a_k e^{-jkθ}|²` on the grid.
    pub spectrum: SpectralDensity,
}

/// Levinson-Durbin recursion on scalar lags `R₀..R_p`.
pub fn levinson_durbin(lags: &CovarianceSequence, grid: FrequencyGrid) -> Result<ArModel> {
    let r = lags
        .scalar_lags()
        .ok_or(Error::ScalarOnly(lags.channels()))?;
    if !(r[0] > 0.0) {
        return Err(Error::DegenerateToeplitz(0));
    }
    let mut a: Vec<f64> = Vec::with_capacity(r.len() - 1);
    let mut err = r[0];
    for k in 1..r.len() {
        let acc = r[k] - (1..k).map(|i| a[i - 1] * r[k - i]).sum::<f64>();
        let kappa = acc / err;
        let prev = a.clone();
        for i in 1..k {
            a[i - 1] = prev[i - 1] - kappa * prev[k - i - 1];
        }
        a.push(kappa);
        err *= 1.0 - kappa * kappa;
        if !(err > 1e-14 * r[0]) {
            return Err(Error::DegenerateToeplitz(k));
        }
    }
    let spectrum = SpectralDensity::from_scalar_fn(grid, |theta| {
        let mut poly = Complex64::from(1.0);
        for (k, ak) in a.iter().enumerate() {
            poly -= Complex64::from_polar(*ak, -((k + 1) as f64) * theta);
        }
        err / poly.norm_sqr()
    })?;
    Ok(ArModel {
        coefficients: a,
        variance: err,
        spectrum,
    })
}

/// `Φ(θ)` of the scalar process `x(t) = Σ a_k x(t-k) + Σ b_k e(t-k)`,
/// `b₀ = 1`, `Var e = σ²`.
pub fn arma_spectrum(ar: &[f64], ma: &[f64], variance: f64, grid: FrequencyGrid) -> Result<SpectralDensity> {
    SpectralDensity::from_scalar_fn(grid, |theta| {
        let mut den = Complex64::from(1.0);
        for (k, a) in ar.iter().enumerate() {
            den -= Complex64::from_polar(*a, -((k + 1) as f64) * theta);
        }
        let mut num = Complex64::from(1.0);
        for (k, b) in ma.iter().enumerate() {
            num += Complex64::from_polar(*b, -((k + 1) as f64) * theta);
        }
        variance * num.norm_sqr() / den.norm_sqr()
    })
}

/// `Σ̂ = ∫ G Ω G*` for a density given directly on the grid.
pub fn consistent_sigma(filter: &StateSpaceFilter, omega: &SpectralDensity) -> Result<CovarianceEstimate> {
    CovarianceEstimate::from_matrix(output_covariance(filter, omega)?)
}
