//! Divergence indices between spectral densities: Kullback-Leibler,
//! Itakura-Saito, the Alpha, Beta and Tau families, and the two weighted Beta
//! families together with their weighted KL / IS limits.
//!
//! Every index is `tr ∫` of a pointwise expression. At the endpoint values of
//! the family parameter (0 and 1) the generic expression is singular and the
//! functions dispatch to the corresponding limit index instead.
//!
//! Results that come out negative by less than the quadrature tolerance are
//! clamped to zero (and logged); anything more negative is an error.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::freqgrid::{
    hermitian_part, inverse, log_det, matrix_log, matrix_power, mean_trace, CMatrix,
    MatrixFunction, SpectralDensity,
};

/// Negative values above `-CLAMP_TOL · scale` are treated as quadrature noise.
const CLAMP_TOL: f64 = 1e-9;
/// Relative tolerance for `W W* = Ψ` on the grid.
const FACTOR_TOL: f64 = 1e-9;

fn check_pair(phi: &SpectralDensity, psi: &SpectralDensity) -> Result<()> {
    phi.function().check_same_grid(psi.function())?;
    if phi.dim() != psi.dim() {
        return Err(Error::Dimension(format!(
            "densities are {}x{} and {}x{}",
            phi.dim(),
            phi.dim(),
            psi.dim(),
            psi.dim()
        )));
    }
    Ok(())
}

fn check_weight(phi: &SpectralDensity, w: &MatrixFunction) -> Result<()> {
    phi.function().check_same_grid(w)?;
    if w.rows() != phi.dim() || w.cols() != phi.dim() {
        return Err(Error::Dimension(format!(
            "weight samples are {}x{}, densities are {}x{}",
            w.rows(),
            w.cols(),
            phi.dim(),
            phi.dim()
        )));
    }
    Ok(())
}

/// Checks `factor · factor* = density` at every grid point.
pub fn check_factor(density: &SpectralDensity, factor: &MatrixFunction) -> Result<()> {
    check_weight(density, factor)?;
    for (k, (d, w)) in density.samples().iter().zip(factor.samples()).enumerate() {
        let err = (w * w.adjoint() - d).norm();
        if err > FACTOR_TOL * d.norm() {
            return Err(Error::Parameter(format!(
                "spectral factor does not reproduce the density at grid point {k} (error {err:e})"
            )));
        }
    }
    Ok(())
}

/// `tr ∫ f(Φ(θ), Ψ(θ), k)`.
fn integrate_pairwise(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    mut f: impl FnMut(&CMatrix, &CMatrix, usize) -> Result<Complex64>,
) -> Result<f64> {
    check_pair(phi, psi)?;
    let values = phi
        .samples()
        .iter()
        .zip(psi.samples())
        .enumerate()
        .map(|(k, (p, s))| f(p, s, k))
        .collect::<Result<Vec<_>>>()?;
    mean_trace(values.into_iter(), phi.grid().len())
}

fn scale_of(phi: &SpectralDensity, psi: &SpectralDensity) -> f64 {
    1.0 + phi.dim() as f64 * phi.k2().max(psi.k2())
}

fn finish(raw: f64, scale: f64, what: &str) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw >= -CLAMP_TOL * scale {
        log::warn!("{what}: clamped negative value {raw:e} to zero");
        Ok(0.0)
    } else {
        Err(Error::NegativeDivergence(raw))
    }
}

fn congruence(w: &CMatrix, x: &CMatrix) -> CMatrix {
    hermitian_part(&(w.adjoint() * x * w))
}

/// Positive entries of a 1×1 pair and `ln(s/p)`.
fn scalar_pair(p: &CMatrix, s: &CMatrix) -> Option<(f64, f64, f64)> {
    if p.nrows() != 1 {
        return None;
    }
    let (p, s) = (p[(0, 0)].re, s[(0, 0)].re);
    (p > 0.0 && s > 0.0).then(|| (p, s, s.ln() - p.ln()))
}

fn kl_point(p: &CMatrix, s: &CMatrix) -> Result<CMatrix> {
    if let Some((p, _, u)) = scalar_pair(p, s) {
        return Ok(CMatrix::from_element(1, 1, Complex64::from(p * (u.exp_m1() - u))));
    }
    let logs = matrix_log(p)? - matrix_log(s)?;
    Ok(p * logs - p + s)
}

fn is_point(p: &CMatrix, s: &CMatrix) -> Result<CMatrix> {
    if let Some((_, _, u)) = scalar_pair(p, s) {
        return Ok(CMatrix::from_element(1, 1, Complex64::from(u + (-u).exp_m1())));
    }
    let m = p.nrows();
    Ok(matrix_log(s)? - matrix_log(p)? + p * inverse(s)? - CMatrix::identity(m, m))
}

fn beta_point(p: &CMatrix, s: &CMatrix, beta: f64) -> Result<CMatrix> {
    if let Some((p, _, u)) = scalar_pair(p, s) {
        let v = p.powf(beta) / (beta * (beta - 1.0))
            * ((beta - 1.0) * (beta * u).exp_m1() - beta * ((beta - 1.0) * u).exp_m1());
        return Ok(CMatrix::from_element(1, 1, Complex64::from(v)));
    }
    let b = Complex64::from(beta);
    Ok(matrix_power(p, beta)? / (b * (b - 1.0)) - p * matrix_power(s, beta - 1.0)? / (b - 1.0)
        + matrix_power(s, beta)? / b)
}

pub(crate) fn kl_raw(phi: &SpectralDensity, psi: &SpectralDensity) -> Result<f64> {
    integrate_pairwise(phi, psi, |p, s, _| Ok(kl_point(p, s)?.trace()))
}

pub(crate) fn is_raw(phi: &SpectralDensity, psi: &SpectralDensity) -> Result<f64> {
    integrate_pairwise(phi, psi, |p, s, _| {
        if scalar_pair(p, s).is_some() {
            return Ok(is_point(p, s)?.trace());
        }
        let m = p.nrows() as f64;
        let trace = (p * inverse(s)?).trace();
        Ok(Complex64::from(log_det(s)? - log_det(p)? - m) + trace)
    })
}

/// `S_KL(Φ‖Ψ) = tr ∫ [Φ(log Φ - log Ψ) - Φ + Ψ]`.
pub fn kl(phi: &SpectralDensity, psi: &SpectralDensity) -> Result<f64> {
    finish(kl_raw(phi, psi)?, scale_of(phi, psi), "kl")
}

/// `S_IS(Φ‖Ψ) = tr ∫ [log Ψ - log Φ + ΦΨ⁻¹ - I]`.
pub fn is_dist(phi: &SpectralDensity, psi: &SpectralDensity) -> Result<f64> {
    finish(is_raw(phi, psi)?, scale_of(phi, psi), "itakura-saito")
}

pub(crate) fn alpha_raw(phi: &SpectralDensity, psi: &SpectralDensity, alpha: f64) -> Result<f64> {
    if phi.dim() != 1 || psi.dim() != 1 {
        return Err(Error::ScalarOnly(phi.dim().max(psi.dim())));
    }
    if alpha == 0.0 {
        return kl_raw(psi, phi);
    }
    if alpha == 1.0 {
        return kl_raw(phi, psi);
    }
    integrate_pairwise(phi, psi, |p, s, _| {
        let (p, s) = (p[(0, 0)].re, s[(0, 0)].re);
        let u = s.ln() - p.ln();
        let v = p / (alpha * (alpha - 1.0))
            * (((1.0 - alpha) * u).exp_m1() + (alpha - 1.0) * u.exp_m1());
        Ok(Complex64::from(v))
    })
}

/// Alpha divergence (scalar densities only); `α = 0` gives `S_KL(Ψ‖Φ)` and
/// `α = 1` gives `S_KL(Φ‖Ψ)`.
pub fn alpha_div(phi: &SpectralDensity, psi: &SpectralDensity, alpha: f64) -> Result<f64> {
    finish(alpha_raw(phi, psi, alpha)?, scale_of(phi, psi), "alpha")
}

pub(crate) fn beta_raw(phi: &SpectralDensity, psi: &SpectralDensity, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return is_raw(phi, psi);
    }
    if beta == 1.0 {
        return kl_raw(phi, psi);
    }
    integrate_pairwise(phi, psi, |p, s, _| Ok(beta_point(p, s, beta)?.trace()))
}

/// `S_B^(β)(Φ‖Ψ) = tr ∫ [Φ^β/(β(β-1)) - ΦΨ^(β-1)/(β-1) + Ψ^β/β]`;
/// `β = 0` gives Itakura-Saito, `β = 1` Kullback-Leibler.
pub fn beta_div(phi: &SpectralDensity, psi: &SpectralDensity, beta: f64) -> Result<f64> {
    finish(beta_raw(phi, psi, beta)?, scale_of(phi, psi), "beta")
}

/// `W⁻¹ Φ W⁻*` pointwise.
pub fn normalize_by_factor(phi: &SpectralDensity, factor: &MatrixFunction) -> Result<SpectralDensity> {
    check_weight(phi, factor)?;
    let samples = phi
        .samples()
        .iter()
        .zip(factor.samples())
        .map(|(p, w)| {
            let wi = inverse(w)?;
            Ok(hermitian_part(&(&wi * p * wi.adjoint())))
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralDensity::new(MatrixFunction::new(phi.grid(), samples)?)
}

pub(crate) fn tau_raw(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    tau: f64,
    w_psi: &MatrixFunction,
) -> Result<f64> {
    check_pair(phi, psi)?;
    check_factor(psi, w_psi)?;
    if tau == 0.0 {
        return is_raw(phi, psi);
    }
    if tau == 1.0 {
        let normalized = normalize_by_factor(phi, w_psi)?;
        return kl_raw(&normalized, &SpectralDensity::identity(phi.grid(), phi.dim()));
    }
    let t = Complex64::from(tau);
    integrate_pairwise(phi, psi, |p, s, k| {
        let m = p.nrows();
        let wi = inverse(w_psi.sample(k))?;
        let x = hermitian_part(&(&wi * p * wi.adjoint()));
        let bracket = matrix_power(&x, tau)? / (t * (t - 1.0)) - p * inverse(s)? / (t - 1.0)
            + CMatrix::identity(m, m) / t;
        Ok(bracket.trace())
    })
}

/// `S_T^(τ)(Φ‖Ψ) = tr ∫ [(W⁻¹ΦW⁻*)^τ/(τ(τ-1)) - ΦΨ⁻¹/(τ-1) + I/τ]` with
/// `Ψ = W W*`; `τ = 0` gives `S_IS(Φ‖Ψ)`, `τ = 1` gives `S_KL(W⁻¹ΦW⁻*‖I)`.
pub fn tau_div(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    tau: f64,
    w_psi: &MatrixFunction,
) -> Result<f64> {
    finish(tau_raw(phi, psi, tau, w_psi)?, scale_of(phi, psi), "tau")
}

fn congruent_pair(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    w_q: &MatrixFunction,
) -> Result<(SpectralDensity, SpectralDensity)> {
    check_pair(phi, psi)?;
    check_weight(phi, w_q)?;
    let map = |d: &SpectralDensity| -> Result<SpectralDensity> {
        let samples = d
            .samples()
            .iter()
            .zip(w_q.samples())
            .map(|(x, w)| congruence(w, x))
            .collect();
        SpectralDensity::new(MatrixFunction::new(d.grid(), samples)?)
    };
    Ok((map(phi)?, map(psi)?))
}

pub(crate) fn b1_raw(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    beta: f64,
    w_q: &MatrixFunction,
) -> Result<f64> {
    if beta == 0.0 {
        check_weight(phi, w_q)?;
        return is_raw(phi, psi);
    }
    let (p, s) = congruent_pair(phi, psi, w_q)?;
    beta_raw(&p, &s, beta)
}

/// Weighted Beta divergence of the first type,
/// `S_B1,Q(Φ‖Ψ) = S_B(W_Q* Φ W_Q ‖ W_Q* Ψ W_Q)` with `Q = W_Q W_Q*`.
pub fn b1_weighted(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    beta: f64,
    w_q: &MatrixFunction,
) -> Result<f64> {
    finish(b1_raw(phi, psi, beta, w_q)?, scale_of(phi, psi), "weighted beta (type 1)")
}

pub(crate) fn kl1_raw(phi: &SpectralDensity, psi: &SpectralDensity, w_q: &MatrixFunction) -> Result<f64> {
    let (p, s) = congruent_pair(phi, psi, w_q)?;
    kl_raw(&p, &s)
}

/// `S_KL1,Q(Φ‖Ψ) = S_KL(W_Q* Φ W_Q ‖ W_Q* Ψ W_Q)`.
pub fn kl1_weighted(phi: &SpectralDensity, psi: &SpectralDensity, w_q: &MatrixFunction) -> Result<f64> {
    finish(kl1_raw(phi, psi, w_q)?, scale_of(phi, psi), "weighted kl (type 1)")
}

/// `tr ∫ Q · herm(bracket)`. For scalar densities the Hermitian part is a
/// no-op; for noncommuting matrices it keeps the trace real and equals the
/// real part of `tr(Q · bracket)`.
fn integrate_trace_weighted(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    q: &SpectralDensity,
    bracket: impl Fn(&CMatrix, &CMatrix) -> Result<CMatrix>,
) -> Result<f64> {
    check_pair(phi, q)?;
    integrate_pairwise(phi, psi, |p, s, k| {
        Ok((q.sample(k) * hermitian_part(&bracket(p, s)?)).trace())
    })
}

/// Type-2 weighted indices are only guaranteed nonnegative for scalar densities.
fn finish_type2(raw: f64, phi: &SpectralDensity, psi: &SpectralDensity, q: &SpectralDensity, what: &str) -> Result<f64> {
    if phi.dim() > 1 {
        return Ok(raw);
    }
    finish(raw, scale_of(phi, psi) * (1.0 + q.k2()), what)
}

pub(crate) fn b2_raw(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    beta: f64,
    q: &SpectralDensity,
) -> Result<f64> {
    if beta == 0.0 {
        return is_weighted_raw(phi, psi, q);
    }
    if beta == 1.0 {
        return kl2_raw(phi, psi, q);
    }
    integrate_trace_weighted(phi, psi, q, |p, s| beta_point(p, s, beta))
}

/// Weighted Beta divergence of the second type,
/// `S_B2,Q(Φ‖Ψ) = tr ∫ Q [Φ^β/(β(β-1)) - ΦΨ^(β-1)/(β-1) + Ψ^β/β]`.
/// `β = 0` gives `S_IS,Q(Φ‖Ψ)`, `β = 1` gives `S_KL2,Q(Φ‖Ψ)`.
pub fn b2_weighted(
    phi: &SpectralDensity,
    psi: &SpectralDensity,
    beta: f64,
    q: &SpectralDensity,
) -> Result<f64> {
    finish_type2(b2_raw(phi, psi, beta, q)?, phi, psi, q, "weighted beta (type 2)")
}

pub(crate) fn kl2_raw(phi: &SpectralDensity, psi: &SpectralDensity, q: &SpectralDensity) -> Result<f64> {
    integrate_trace_weighted(phi, psi, q, kl_point)
}

/// `S_KL2,Q(Φ‖Ψ) = tr ∫ Q [Φ(log Φ - log Ψ) - Φ + Ψ]`.
pub fn kl2_weighted(phi: &SpectralDensity, psi: &SpectralDensity, q: &SpectralDensity) -> Result<f64> {
    finish_type2(kl2_raw(phi, psi, q)?, phi, psi, q, "weighted kl (type 2)")
}

pub(crate) fn is_weighted_raw(phi: &SpectralDensity, psi: &SpectralDensity, q: &SpectralDensity) -> Result<f64> {
    integrate_trace_weighted(phi, psi, q, is_point)
}

/// `S_IS,Q(Φ‖Ψ) = tr ∫ Q [log Ψ - log Φ + ΦΨ⁻¹ - I]`.
pub fn is_weighted(phi: &SpectralDensity, psi: &SpectralDensity, q: &SpectralDensity) -> Result<f64> {
    finish_type2(is_weighted_raw(phi, psi, q)?, phi, psi, q, "weighted itakura-saito")
}

/// A fully specified divergence index, as selected from a front-end.
#[derive(Debug, Clone)]
pub enum DivergenceSpec {
    Kl,
    Is,
    Alpha(f64),
    Beta(f64),
    Tau { tau: f64, factor: MatrixFunction },
    B1Weighted { beta: f64, factor: MatrixFunction },
    B2Weighted { beta: f64, weight: SpectralDensity },
    Kl1Weighted { factor: MatrixFunction },
    Kl2Weighted { weight: SpectralDensity },
    IsWeighted { weight: SpectralDensity },
}

impl DivergenceSpec {
    pub fn evaluate(&self, phi: &SpectralDensity, psi: &SpectralDensity) -> Result<f64> {
        match self {
            Self::Kl => kl(phi, psi),
            Self::Is => is_dist(phi, psi),
            Self::Alpha(a) => alpha_div(phi, psi, *a),
            Self::Beta(b) => beta_div(phi, psi, *b),
            Self::Tau { tau, factor } => tau_div(phi, psi, *tau, factor),
            Self::B1Weighted { beta, factor } => b1_weighted(phi, psi, *beta, factor),
            Self::B2Weighted { beta, weight } => b2_weighted(phi, psi, *beta, weight),
            Self::Kl1Weighted { factor } => kl1_weighted(phi, psi, factor),
            Self::Kl2Weighted { weight } => kl2_weighted(phi, psi, weight),
            Self::IsWeighted { weight } => is_weighted(phi, psi, weight),
        }
    }
}
