use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use rustfft::FftPlanner;

use specdual::divergence::{
    alpha_div, b1_weighted, b2_weighted, beta_div, is_dist, is_weighted, kl, kl1_weighted,
    kl2_weighted, normalize_by_factor, tau_div,
};
use specdual::dual::symmetric_basis;
use specdual::estimation::{correlogram, sample_covariances};
use specdual::filterbank::{bank_of_delays, output_covariance, pole_filter};
use specdual::freqgrid::{integrate, matrix_power};
use specdual::interpret::{arma_spectrum, cepstral_factor, consistent_sigma};
use specdual::*;

const NF: usize = 128;

fn grid() -> FrequencyGrid {
    FrequencyGrid::new(NF).unwrap()
}

/// `|σ(1 + b e^{-jθ})/(1 - a e^{-jθ})|²` together with that factor.
#[derive(Debug, Clone, Copy)]
struct Rational {
    a: f64,
    b: f64,
    s: f64,
}

impl Rational {
    fn factor_at(&self, theta: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, -theta);
        self.s * (1.0 + self.b * z) / (1.0 - self.a * z)
    }

    fn density(&self) -> SpectralDensity {
        SpectralDensity::from_scalar_fn(grid(), |t| self.factor_at(t).norm_sqr()).unwrap()
    }

    fn factor(&self) -> MatrixFunction {
        MatrixFunction::from_fn(grid(), |t| CMatrix::from_element(1, 1, self.factor_at(t))).unwrap()
    }
}

fn rational() -> impl Strategy<Value = Rational> {
    (-0.8f64..0.8, -0.8f64..0.8, 0.3f64..2.0).prop_map(|(a, b, s)| Rational { a, b, s })
}

/// Unit-variance instances with pole and zero inside `|z| ≤ 0.5`, so `sup Φ < 4`.
fn mild_rational() -> impl Strategy<Value = Rational> {
    (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(a, b)| Rational {
        a,
        b,
        s: ((1.0 - a * a) / (1.0 + b * b + 2.0 * a * b)).sqrt(),
    })
}

/// 2×2 factor `W(θ) = D + R e^{-jθ}` with `‖R‖ < min σ(D)`, so `W` is invertible.
fn matrix_factor() -> impl Strategy<Value = (RMatrix, RMatrix)> {
    (
        prop::collection::vec(-0.4f64..0.4, 4),
        prop::collection::vec(-0.3f64..0.3, 4),
        0.8f64..1.5,
    )
        .prop_map(|(d, r, s)| {
            let d = RMatrix::from_row_slice(2, 2, &d) + RMatrix::identity(2, 2) * s;
            let r = RMatrix::from_row_slice(2, 2, &r);
            (d, r)
        })
        .prop_filter("invertible on the circle", |(d, r)| {
            let sv = d.clone().svd(false, false).singular_values;
            r.norm() < 0.9 * sv.min()
        })
}

fn matrix_density(f: &(RMatrix, RMatrix)) -> (SpectralDensity, MatrixFunction) {
    let (d, r) = f;
    let w = MatrixFunction::from_fn(grid(), |t| {
        freqgrid::to_complex(d) + freqgrid::to_complex(r) * Complex64::from_polar(1.0, -t)
    })
    .unwrap();
    let psi = SpectralDensity::new(w.map(|s| s * s.adjoint()).unwrap()).unwrap();
    (psi, w)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rectangle_rule_is_exact_for_low_degree_polynomials(
        coeffs in prop::collection::vec(-1.0f64..1.0, 1..10)
    ) {
        // Σ c_k e^{-jkθ} with k < nf integrates to c_0
        let f = MatrixFunction::from_fn(grid(), |t| {
            let v: Complex64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| Complex64::from_polar(*c, -(k as f64) * t))
                .sum();
            CMatrix::from_element(1, 1, v)
        })
        .unwrap();
        let i = integrate(&f)[(0, 0)];
        prop_assert!((i - Complex64::from(coeffs[0])).norm() < 1e-13);
    }

    #[test]
    fn matrix_power_inverts(f in matrix_factor(), p in 0.2f64..3.0) {
        let (psi, _) = matrix_density(&f);
        for s in psi.samples().iter().step_by(17) {
            let up = matrix_power(s, p).unwrap();
            let back = matrix_power(&up, 1.0 / p).unwrap();
            prop_assert!((&back - s).norm() <= 1e-9 * s.norm());
            let prod = &up * matrix_power(s, -p).unwrap();
            prop_assert!((prod - CMatrix::identity(2, 2)).norm() <= 1e-9);
        }
    }

    #[test]
    fn scalar_divergences_are_nonnegative(x in rational(), y in rational(), t in -1.5f64..2.5) {
        prop_assume!(t.abs() > 1e-3 && (t - 1.0).abs() > 1e-3);
        let (phi, psi) = (x.density(), y.density());
        let w = y.factor();
        prop_assert!(kl(&phi, &psi).unwrap() >= -1e-9);
        prop_assert!(is_dist(&phi, &psi).unwrap() >= -1e-9);
        prop_assert!(alpha_div(&phi, &psi, t).unwrap() >= -1e-9);
        prop_assert!(beta_div(&phi, &psi, t).unwrap() >= -1e-9);
        prop_assert!(tau_div(&phi, &psi, t, &w).unwrap() >= -1e-9);
        prop_assert!(b1_weighted(&phi, &psi, t, &w).unwrap() >= -1e-9);
        prop_assert!(b2_weighted(&phi, &psi, t, &psi).unwrap() >= -1e-9);
        prop_assert!(kl1_weighted(&phi, &psi, &w).unwrap() >= -1e-9);
        prop_assert!(kl2_weighted(&phi, &psi, &psi).unwrap() >= -1e-9);
        prop_assert!(is_weighted(&phi, &psi, &psi).unwrap() >= -1e-9);
    }

    #[test]
    fn matrix_divergences_are_nonnegative(
        f in matrix_factor(), g in matrix_factor(), t in -1.0f64..2.0
    ) {
        prop_assume!(t.abs() > 1e-3 && (t - 1.0).abs() > 1e-3);
        let (phi, _) = matrix_density(&f);
        let (psi, w) = matrix_density(&g);
        prop_assert!(kl(&phi, &psi).unwrap() >= -1e-9);
        prop_assert!(is_dist(&phi, &psi).unwrap() >= -1e-9);
        prop_assert!(beta_div(&phi, &psi, t).unwrap() >= -1e-9);
        prop_assert!(tau_div(&phi, &psi, t, &w).unwrap() >= -1e-9);
        prop_assert!(b1_weighted(&phi, &psi, t, &w).unwrap() >= -1e-9);
    }

    #[test]
    fn identical_arguments_give_zero(x in rational(), t in -1.5f64..2.5) {
        let phi = x.density();
        let w = x.factor();
        prop_assert!(kl(&phi, &phi).unwrap() <= 1e-10);
        prop_assert!(is_dist(&phi, &phi).unwrap() <= 1e-10);
        prop_assert!(alpha_div(&phi, &phi, t).unwrap() <= 1e-10);
        prop_assert!(beta_div(&phi, &phi, t).unwrap() <= 1e-10);
        prop_assert!(tau_div(&phi, &phi, t, &w).unwrap() <= 1e-10);
        prop_assert!(b1_weighted(&phi, &phi, t, &w).unwrap() <= 1e-10);
        prop_assert!(b2_weighted(&phi, &phi, t, &phi).unwrap() <= 1e-10);
    }

    #[test]
    fn small_divergence_means_close_spectra(x in mild_rational(), eps in -1e-4f64..1e-4) {
        let phi = x.density();
        let psi = SpectralDensity::from_scalar_fn(grid(), |t| x.factor_at(t).norm_sqr() * (1.0 + eps)).unwrap();
        let worst = phi
            .samples()
            .iter()
            .zip(psi.samples())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        for d in [is_dist(&phi, &psi), kl(&phi, &psi), beta_div(&phi, &psi, 0.5)] {
            if d.unwrap() < 1e-10 {
                prop_assert!(worst < 1e-4);
            }
        }
    }

    #[test]
    fn endpoint_parameters_approach_limits(x in rational(), y in rational()) {
        let (phi, psi) = (x.density(), y.density());
        let w = y.factor();
        let band = |limit: f64| 1e-3 * (1.0 + limit);
        let k = kl(&phi, &psi).unwrap();
        let k_rev = kl(&psi, &phi).unwrap();
        let i = is_dist(&phi, &psi).unwrap();
        let norm = normalize_by_factor(&phi, &w).unwrap();
        let k_tau = kl(&norm, &SpectralDensity::identity(grid(), 1)).unwrap();
        let k1 = kl1_weighted(&phi, &psi, &w).unwrap();
        let k2 = kl2_weighted(&phi, &psi, &psi).unwrap();
        let iw = is_weighted(&phi, &psi, &psi).unwrap();
        for d in [1e-4, -1e-4] {
            prop_assert!(close(alpha_div(&phi, &psi, 1.0 + d).unwrap(), k, band(k)));
            prop_assert!(close(alpha_div(&phi, &psi, d).unwrap(), k_rev, band(k_rev)));
            prop_assert!(close(beta_div(&phi, &psi, 1.0 + d).unwrap(), k, band(k)));
            prop_assert!(close(beta_div(&phi, &psi, d).unwrap(), i, band(i)));
            prop_assert!(close(tau_div(&phi, &psi, d, &w).unwrap(), i, band(i)));
            prop_assert!(close(tau_div(&phi, &psi, 1.0 + d, &w).unwrap(), k_tau, band(k_tau)));
            prop_assert!(close(b1_weighted(&phi, &psi, 1.0 + d, &w).unwrap(), k1, band(k1)));
            prop_assert!(close(b1_weighted(&phi, &psi, d, &w).unwrap(), i, band(i)));
            prop_assert!(close(b2_weighted(&phi, &psi, 1.0 + d, &psi).unwrap(), k2, band(k2)));
            prop_assert!(close(b2_weighted(&phi, &psi, d, &psi).unwrap(), iw, band(iw)));
        }
    }

    #[test]
    fn weighted_reductions(x in rational(), y in rational(), t in -1.5f64..2.5) {
        prop_assume!(t.abs() > 1e-3 && (t - 1.0).abs() > 1e-3);
        let (phi, psi) = (x.density(), y.density());
        let w = y.factor();
        let one = MatrixFunction::constant(grid(), &CMatrix::identity(1, 1));
        let id = SpectralDensity::identity(grid(), 1);
        let b = beta_div(&phi, &psi, t).unwrap();
        prop_assert!(close(b1_weighted(&phi, &psi, t, &one).unwrap(), b, 1e-10 * (1.0 + b)));
        prop_assert!(close(b2_weighted(&phi, &psi, t, &id).unwrap(), b, 1e-10 * (1.0 + b)));
        // Q = Ψ⁻¹ through the factor W_Q = W_Ψ⁻*
        let w_q = w.map(|s| s.clone().try_inverse().unwrap().adjoint()).unwrap();
        let tau = tau_div(&phi, &psi, t, &w).unwrap();
        prop_assert!(close(b1_weighted(&phi, &psi, t, &w_q).unwrap(), tau, 1e-10 * (1.0 + tau)));
        let tau_as_beta = beta_div(&normalize_by_factor(&phi, &w).unwrap(), &id, t).unwrap();
        prop_assert!(close(tau_as_beta, tau, 1e-10 * (1.0 + tau)));
        // Q = Ψ^(1-β) gives the Alpha family
        let q = SpectralDensity::from_scalar_fn(grid(), |th| y.factor_at(th).norm_sqr().powf(1.0 - t)).unwrap();
        let a = alpha_div(&phi, &psi, t).unwrap();
        prop_assert!(close(b2_weighted(&phi, &psi, t, &q).unwrap(), a, 1e-10 * (1.0 + a)));
    }

    #[test]
    fn itakura_saito_factor_invariance(x in rational(), y in rational(), z in rational()) {
        let (phi, psi, q) = (x.density(), y.density(), z.density());
        let w = y.factor();
        let id = SpectralDensity::identity(grid(), 1);
        let norm = normalize_by_factor(&phi, &w).unwrap();
        let direct = is_dist(&phi, &psi).unwrap();
        prop_assert!(close(direct, is_dist(&norm, &id).unwrap(), 1e-10 * (1.0 + direct)));
        let weighted = is_weighted(&phi, &psi, &q).unwrap();
        prop_assert!(close(weighted, is_weighted(&norm, &id, &q).unwrap(), 1e-10 * (1.0 + weighted)));
    }

    #[test]
    fn type_two_dominates_scaled_beta(x in rational(), y in rational(), q in rational(), t in -1.0f64..2.0) {
        prop_assume!(t.abs() > 1e-3 && (t - 1.0).abs() > 1e-3);
        let (phi, psi, weight) = (x.density(), y.density(), q.density());
        let k = weight.k1();
        let lhs = k * beta_div(&phi, &psi, t).unwrap();
        prop_assert!(lhs <= b2_weighted(&phi, &psi, t, &weight).unwrap() + 1e-9);
    }

    #[test]
    fn bartlett_correlogram_matches_fejer_oracle(
        data in prop::collection::vec(-3.0f64..3.0, 16..80),
        max_lag in 1usize..12
    ) {
        let n = data.len();
        let max_lag = max_lag.min(n - 1);
        let y = TimeSeries::scalar(&data).unwrap().demean();
        let lags = sample_covariances(&y, max_lag).unwrap();
        let omega = correlogram(&lags, Window::Bartlett, grid()).unwrap();

        // periodogram on a grid fine enough to carry every biased lag exactly
        let l = (2 * n).next_power_of_two();
        let mut buf: Vec<Complex64> = y.data().iter().map(|v| Complex64::from(*v)).collect();
        buf.resize(l, Complex64::from(0.0));
        FftPlanner::new().plan_fft_forward(l).process(&mut buf);
        let periodogram: Vec<f64> = buf.iter().map(|v| v.norm_sqr() / n as f64).collect();
        let fejer = |x: f64| {
            let s: Complex64 = (0..=max_lag).map(|k| Complex64::from_polar(1.0, -(k as f64) * x)).sum();
            s.norm_sqr() / (max_lag as f64 + 1.0)
        };
        for (k, sample) in omega.function().samples().iter().enumerate() {
            let theta = grid().theta(k);
            let oracle: f64 = periodogram
                .iter()
                .enumerate()
                .map(|(i, p)| p * fejer(theta - 2.0 * PI * i as f64 / l as f64))
                .sum::<f64>()
                / l as f64;
            prop_assert!((sample[(0, 0)].re - oracle).abs() <= 1e-10 * (1.0 + oracle));
            prop_assert!(sample[(0, 0)].re >= -1e-12);
        }
    }

    #[test]
    fn rectangular_delay_covariance_is_toeplitz(
        lags in prop::collection::vec(-0.4f64..0.4, 1..6), n in 2usize..6
    ) {
        let mut r = vec![2.5];
        r.extend(lags);
        let seq = CovarianceSequence::scalar(&r).unwrap();
        let omega = correlogram(&seq, Window::Rectangular, grid()).unwrap();
        let phi = SpectralDensity::new(omega.function().clone());
        prop_assume!(phi.is_ok());
        let sigma = output_covariance(&bank_of_delays(n).unwrap(), &phi.unwrap()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let expected = r.get(i.abs_diff(j)).copied().unwrap_or(0.0);
                prop_assert!((sigma[(i, j)] - expected).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn correlogram_has_real_symmetry(data in prop::collection::vec(-2.0f64..2.0, 40..80)) {
        let rows: Vec<Vec<f64>> = data.chunks(2).filter(|c| c.len() == 2).map(|c| c.to_vec()).collect();
        let y = TimeSeries::from_rows(&rows).unwrap().demean();
        let seq = sample_covariances(&y, 4).unwrap();
        let omega = correlogram(&seq, Window::Bartlett, grid()).unwrap();
        let g = grid();
        for k in 0..g.len() {
            let a = omega.function().sample(k);
            let b = omega.function().sample(g.mirror(k));
            prop_assert!((a.transpose() - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn output_covariance_is_psd(x in rational(), p in 0.1f64..0.9) {
        let f = pole_filter(&[Complex64::new(p, 0.0), Complex64::new(-p / 2.0, 0.0), Complex64::new(0.3, 0.0)], 1).unwrap();
        let sigma = output_covariance(&f, &x.density()).unwrap();
        let eig = sigma.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-12 * eig.max());
    }

    #[test]
    fn cepstral_factor_round_trip(x in rational(), y in rational()) {
        prop_assume!(x.a.abs() <= 0.95 && x.b.abs() <= 0.95);
        let phi = SpectralDensity::from_scalar_fn(grid(), |t| x.factor_at(t).norm_sqr() * y.factor_at(t).norm_sqr()).unwrap();
        let l = cepstral_factor(&phi).unwrap();
        for (m, p) in l.modulus_squared().iter().zip(phi.scalar_values().unwrap()) {
            prop_assert!((m - p).abs() <= 1e-8 * p);
        }
        prop_assert!(l.values().iter().all(|v| v.norm() > 0.0));
    }

    #[test]
    fn pem_identity_for_rational_pairs(x in rational(), y in rational()) {
        let (omega, phi) = (x.density(), y.density());
        let lambda = cepstral_factor(&phi).unwrap().whiten(&omega).unwrap();
        let one = SpectralDensity::identity(grid(), 1);
        let direct = is_dist(&omega, &phi).unwrap();
        prop_assert!((direct - is_dist(&lambda, &one).unwrap()).abs() <= 1e-6);
    }
}

fn random_direction(seed: u64, basis: &[RMatrix]) -> RMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = basis[0].nrows();
    let mut d = RMatrix::zeros(n, n);
    for e in basis {
        d += e * rng.random_range(-1.0..1.0);
    }
    let norm = d.norm();
    d / norm
}

#[test]
fn finite_differences_match_gradient() {
    let g = FrequencyGrid::new(256).unwrap();
    let filter = pole_filter(&[Complex64::new(0.7, 0.0), Complex64::from_polar(0.8, 1.0), Complex64::from_polar(0.8, -1.0)], 1).unwrap();
    let omega = arma_spectrum(&[0.4], &[0.2], 1.0, g).unwrap();
    let prior = PriorModel::ShapingFilter(
        ShapingFilter::new(
            RMatrix::from_element(1, 1, 0.5),
            RMatrix::from_element(1, 1, 1.0),
            RMatrix::from_element(1, 1, 0.25),
            RMatrix::from_element(1, 1, 1.0),
        )
        .unwrap(),
    );
    for family in Family::ALL {
        for nu in [1, 2] {
            let spec = ProblemSpec::new(family, nu, filter.clone(), prior.clone(), consistent_sigma(&filter, &omega).unwrap(), g);
            let p = DualProblem::new(spec).unwrap();
            let theta = DualVariable::new(RMatrix::from_fn(3, 3, |i, j| 0.04 * (1.0 + (i * j) as f64))).unwrap();
            let grad = p.dual_gradient(&theta).unwrap();
            for seed in 0..5 {
                let d = random_direction(seed, &symmetric_basis(3));
                let h = 1e-5;
                let plus = p.dual_value(&DualVariable::new(theta.matrix() + &d * h).unwrap()).unwrap();
                let minus = p.dual_value(&DualVariable::new(theta.matrix() - &d * h).unwrap()).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let exact = grad.dot(&d);
                assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{family} nu={nu}: {fd} vs {exact}");
            }
        }
    }
}

#[test]
fn zero_is_optimal_exactly_when_prior_matches() {
    let g = FrequencyGrid::new(256).unwrap();
    let f = bank_of_delays(3).unwrap();
    let psi = SpectralDensity::identity(g, 1);
    let matched = consistent_sigma(&f, &psi).unwrap();
    let p = DualProblem::new(ProblemSpec::new(Family::Beta, 2, f.clone(), PriorModel::identity(1), matched, g)).unwrap();
    assert!(p.dual_gradient(&DualVariable::zeros(3)).unwrap().norm() < 1e-14);
    let other = consistent_sigma(&f, &arma_spectrum(&[0.3], &[], 1.0, g).unwrap()).unwrap();
    let p = DualProblem::new(ProblemSpec::new(Family::Beta, 2, f, PriorModel::identity(1), other, g)).unwrap();
    let sol = p.solve().unwrap();
    assert!(sol.converged);
    assert!(sol.theta_hat.matrix().norm() > 1e-3);
}
