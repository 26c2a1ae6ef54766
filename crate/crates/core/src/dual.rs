//! Dual problems of the Alpha, Beta and Tau spectrum approximation problems.
//!
//! Every family shares one structure. With a family-specific certificate
//! `M(Θ) = C + ν⁻¹ K* Θ K`, the primal solution is `Φ_Θ = L M^{-ν} L*` and
//! the dual gradient is `Σ̂ - ∫ G Φ_Θ G*`:
//!
//! | family | `C`        | `K`     | `L`   |
//! |--------|------------|---------|-------|
//! | Alpha  | `1`        | `G`     | `W_Ψ` |
//! | Beta   | `Ψ^{-1/ν}` | `G`     | `I`   |
//! | Tau    | `I`        | `G W_Ψ` | `W_Ψ` |

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimation::CovarianceEstimate;
use crate::filterbank::{output_covariance, real_symmetric_part, PriorModel, StateSpaceFilter};
use crate::freqgrid::{
    eigen_range, hermitian_part, integer_power, inverse, log_det, matrix_power, to_complex, CMatrix,
    FrequencyGrid, MatrixFunction, RMatrix, SpectralDensity,
};

/// Line-search iterates must keep at least this certificate margin.
pub const MARGIN_FLOOR: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 80;
const NEWTON_DAMPING_THRESHOLD: f64 = 0.25;
const HESSIAN_RANK_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
const SUBSPACE_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Alpha,
    Beta,
    Tau,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Alpha, Family::Beta, Family::Tau];

    pub fn name(self) -> &'static str {
        match self {
            Family::Alpha => "alpha",
            Family::Beta => "beta",
            Family::Tau => "tau",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(Family::Alpha),
            "beta" => Ok(Family::Beta),
            "tau" => Ok(Family::Tau),
            other => Err(Error::Parameter(format!(
                "unknown family '{other}', expected alpha, beta or tau"
            ))),
        }
    }
}

/// Search direction used by [`DualProblem::solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Newton direction, falling back to the gradient if the Hessian is not PD.
    Newton,
    /// Plain steepest descent.
    Gradient,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "newton" => Ok(Method::Newton),
            "gradient" => Ok(Method::Gradient),
            other => Err(Error::Parameter(format!(
                "unknown solver method '{other}', expected newton or gradient"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub grad_tol: f64,
    /// Relative to `‖Σ̂‖_F`.
    pub moment_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_ratio: f64,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-7,
            moment_tol: 1e-6,
            max_iters: 500,
            armijo_c: 1e-4,
            backtrack_ratio: 0.5,
            method: Method::Newton,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("moment_tol", self.moment_tol),
            ("armijo_c", self.armijo_c),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.armijo_c >= 1.0 {
            return Err(Error::Parameter("armijo_c must be below 1".into()));
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return Err(Error::Parameter(format!(
                "backtrack_ratio must lie in (0, 1), got {}",
                self.backtrack_ratio
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric Lagrange multiplier `Θ` of the moment constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariable {
    theta: RMatrix,
}

impl DualVariable {
    pub fn new(theta: RMatrix) -> Result<Self> {
        if !theta.is_square() {
            return Err(Error::Dimension(format!(
                "dual variable must be square, got {}x{}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        let asym = (&theta - theta.transpose()).norm();
        if asym > SYMMETRY_TOL * (1.0 + theta.norm()) {
            return Err(Error::Parameter(format!(
                "dual variable is not symmetric (asymmetry {asym:e})"
            )));
        }
        let theta = (&theta + theta.transpose()) * 0.5;
        Ok(Self { theta })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            theta: RMatrix::zeros(n, n),
        }
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.theta
    }

    pub fn into_matrix(self) -> RMatrix {
        self.theta
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }
}

/// Everything that determines one spectrum approximation problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub family: Family,
    pub nu: u32,
    pub filter: StateSpaceFilter,
    pub prior: PriorModel,
    pub sigma: CovarianceEstimate,
    pub grid: FrequencyGrid,
    /// Symmetric matrices spanning the subspace `Θ` is restricted to.
    pub subspace: Option<Vec<RMatrix>>,
    pub options: SolverOptions,
}

impl ProblemSpec {
    pub fn new(
        family: Family,
        nu: u32,
        filter: StateSpaceFilter,
        prior: PriorModel,
        sigma: CovarianceEstimate,
        grid: FrequencyGrid,
    ) -> Self {
        Self {
            family,
            nu,
            filter,
            prior,
            sigma,
            grid,
            subspace: None,
            options: SolverOptions::default(),
        }
    }

    pub fn with_subspace(mut self, basis: Vec<RMatrix>) -> Self {
        self.subspace = Some(basis);
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }
}

/// Verdict of the positivity certificate on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Smallest eigenvalue of the certificate over the grid.
    pub margin: f64,
    /// Angle where the margin is attained.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dual_value: f64,
    pub gradient_norm: f64,
    pub step: f64,
    pub margin: f64,
    pub newton: bool,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub theta_hat: DualVariable,
    pub phi_star: SpectralDensity,
    pub dual_value: f64,
    pub moment_residual: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
struct PointData {
    c: CMatrix,
    k: CMatrix,
    k_adj: CMatrix,
    gl: CMatrix,
    gl_adj: CMatrix,
    /// Scalar weight of the value integrand (`Ψ` for Alpha, 1 otherwise).
    weight: f64,
}

/// A [`ProblemSpec`] with all grid quantities precomputed.
#[derive(Debug, Clone)]
pub struct DualProblem {
    spec: ProblemSpec,
    points: Vec<PointData>,
    basis: Vec<RMatrix>,
    psi: SpectralDensity,
    factor: MatrixFunction,
    response: MatrixFunction,
    value_offset: f64,
}

impl DualProblem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.options.validate()?;
        if spec.nu == 0 {
            return Err(Error::Parameter("nu must be a positive integer".into()));
        }
        let n = spec.filter.n();
        let m = spec.filter.m();
        if spec.family == Family::Alpha && m != 1 {
            return Err(Error::ScalarOnly(m));
        }
        if spec.prior.dim() != m {
            return Err(Error::Dimension(format!(
                "prior is {0}x{0} but the filter has {m} inputs",
                spec.prior.dim()
            )));
        }
        if spec.sigma.dim() != n {
            return Err(Error::Dimension(format!(
                "covariance estimate is {0}x{0} but the filter state has dimension {n}",
                spec.sigma.dim()
            )));
        }
        if !spec.sigma.is_positive_definite() {
            return Err(Error::SingularCovariance {
                min_eig: spec.sigma.min_eigenvalue(),
            });
        }
        let basis = match &spec.subspace {
            Some(list) => orthonormalize(list, n)?,
            None => symmetric_basis(n),
        };

        let grid = spec.grid;
        let nu = spec.nu as f64;
        let response = spec.filter.evaluate(grid)?;
        let factor = spec.prior.factor(grid)?;
        let psi = spec.prior.density(grid)?;
        let mut points = Vec::with_capacity(grid.len());
        let mut log_det_psi = 0.0;
        for idx in 0..grid.len() {
            let g = response.sample(idx);
            let w = factor.sample(idx);
            let p = psi.sample(idx);
            let (c, k, l) = match spec.family {
                Family::Alpha => (CMatrix::identity(1, 1), g.clone(), w.clone()),
                Family::Beta => (
                    matrix_power(p, -1.0 / nu)?,
                    g.clone(),
                    CMatrix::identity(m, m),
                ),
                Family::Tau => (CMatrix::identity(m, m), g * w, w.clone()),
            };
            let weight = match spec.family {
                Family::Alpha => p[(0, 0)].re,
                _ => 1.0,
            };
            if spec.family == Family::Tau && spec.nu == 1 {
                log_det_psi += log_det(p)?;
            }
            let gl = g * &l;
            points.push(PointData {
                k_adj: k.adjoint(),
                k,
                gl_adj: gl.adjoint(),
                gl,
                c,
                weight,
            });
        }
        let value_offset = log_det_psi / grid.len() as f64;
        Ok(Self {
            spec,
            points,
            basis,
            psi,
            factor,
            response,
            value_offset,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn nu(&self) -> u32 {
        self.spec.nu
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.spec.grid
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.spec.filter.n()
    }

    pub fn sigma(&self) -> &RMatrix {
        self.spec.sigma.matrix()
    }

    /// Prior density `Ψ` on the grid.
    pub fn prior_density(&self) -> &SpectralDensity {
        &self.psi
    }

    /// Prior factor `W_Ψ` on the grid.
    pub fn prior_factor(&self) -> &MatrixFunction {
        &self.factor
    }

    /// Filter response `G` on the grid.
    pub fn response(&self) -> &MatrixFunction {
        &self.response
    }

    /// Orthonormal basis (trace inner product) of the space `Θ` lives in.
    pub fn basis(&self) -> &[RMatrix] {
        &self.basis
    }

    pub fn coordinates(&self, x: &RMatrix) -> DVector<f64> {
        DVector::from_iterator(self.basis.len(), self.basis.iter().map(|e| e.dot(x)))
    }

    pub fn from_coordinates(&self, coords: &DVector<f64>) -> RMatrix {
        let n = self.dim();
        let mut out = RMatrix::zeros(n, n);
        for (e, c) in self.basis.iter().zip(coords.iter()) {
            out += e * *c;
        }
        out
    }

    /// Orthogonal projection onto the span of the basis.
    pub fn project(&self, x: &RMatrix) -> RMatrix {
        self.from_coordinates(&self.coordinates(x))
    }

    fn check_dim(&self, theta: &DualVariable) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "dual variable is {0}x{0}, problem has n = {1}",
                theta.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn certificates(&self, theta: &RMatrix) -> Vec<CMatrix> {
        let t = to_complex(theta);
        let scale = Complex64::from(1.0 / self.spec.nu as f64);
        self.points
            .iter()
            .map(|p| hermitian_part(&(&p.c + (&p.k_adj * &t * &p.k) * scale)))
            .collect()
    }

    fn verdict(&self, certs: &[CMatrix]) -> Feasibility {
        let mut margin = f64::INFINITY;
        let mut at = 0;
        for (idx, c) in certs.iter().enumerate() {
            let lo = if c.nrows() == 1 {
                c[(0, 0)].re
            } else {
                eigen_range(c).0
            };
            if !(lo >= margin) {
                margin = lo;
                at = idx;
            }
        }
        Feasibility {
            feasible: margin > 0.0,
            margin,
            theta: self.spec.grid.theta(at),
        }
    }

    fn feasible_certificates(&self, theta: &DualVariable) -> Result<Vec<CMatrix>> {
        self.check_dim(theta)?;
        let certs = self.certificates(theta.matrix());
        let v = self.verdict(&certs);
        if !v.feasible {
            return Err(Error::Infeasible {
                margin: v.margin,
                theta: v.theta,
            });
        }
        Ok(certs)
    }

    /// Evaluates the positivity certificate at every grid point.
    pub fn feasible(&self, theta: &DualVariable) -> Result<Feasibility> {
        self.check_dim(theta)?;
        Ok(self.verdict(&self.certificates(theta.matrix())))
    }

    fn value_from(&self, theta: &RMatrix, certs: &[CMatrix]) -> Result<f64> {
        let nu = self.spec.nu;
        let mut acc = 0.0;
        if nu == 1 {
            for (p, c) in self.points.iter().zip(certs) {
                acc -= p.weight * log_det(c)?;
            }
        } else {
            let coeff = nu as f64 / (nu as f64 - 1.0);
            for (p, c) in self.points.iter().zip(certs) {
                let inv = inverse(c)?;
                acc += coeff * p.weight * integer_power(&inv, nu - 1).trace().re;
            }
        }
        Ok(acc / self.points.len() as f64 + self.value_offset + self.sigma().dot(theta))
    }

    /// `J(Θ)`; fails for infeasible `Θ`.
    pub fn dual_value(&self, theta: &DualVariable) -> Result<f64> {
        let certs = self.feasible_certificates(theta)?;
        self.value_from(theta.matrix(), &certs)
    }

    fn primal_samples(&self, certs: &[CMatrix]) -> Result<Vec<CMatrix>> {
        self.points
            .iter()
            .zip(certs)
            .map(|(_, c)| Ok(integer_power(&inverse(c)?, self.spec.nu)))
            .collect()
    }

    fn moment_gap(&self, certs: &[CMatrix]) -> Result<RMatrix> {
        let n = self.dim();
        let mut acc = CMatrix::zeros(n, n);
        for (p, c) in self.points.iter().zip(certs) {
            let x = integer_power(&inverse(c)?, self.spec.nu);
            acc += &p.gl * x * &p.gl_adj;
        }
        acc /= Complex64::from(self.points.len() as f64);
        let fitted = real_symmetric_part(&acc, "fitted covariance")?;
        Ok(self.sigma() - fitted)
    }

    /// `Σ̂ - ∫ G Φ_Θ G*`, not projected onto the subspace.
    pub fn moment_mismatch(&self, theta: &DualVariable) -> Result<RMatrix> {
        let certs = self.feasible_certificates(theta)?;
        self.moment_gap(&certs)
    }

    /// `∇J(Θ)`, projected onto the subspace when one is set.
    pub fn dual_gradient(&self, theta: &DualVariable) -> Result<RMatrix> {
        let gap = self.moment_mismatch(theta)?;
        Ok(match self.spec.subspace {
            Some(_) => self.project(&gap),
            None => gap,
        })
    }

    /// `𝒜_Θ,ν`, `ℬ_Θ,ν` or `𝒯_Θ,ν` on the grid.
    pub fn primal_from_dual(&self, theta: &DualVariable) -> Result<SpectralDensity> {
        let certs = self.feasible_certificates(theta)?;
        self.primal_from(&certs)
    }

    fn primal_from(&self, certs: &[CMatrix]) -> Result<SpectralDensity> {
        let samples: Vec<CMatrix> = self
            .primal_samples(certs)?
            .into_iter()
            .zip(self.factor.samples())
            .map(|(x, w)| match self.spec.family {
                Family::Beta => x,
                Family::Alpha | Family::Tau => w * x * w.adjoint(),
            })
            .collect();
        SpectralDensity::new(MatrixFunction::new(self.spec.grid, samples)?)
    }

    /// Hessian of `J` in the coordinates of [`Self::basis`].
    pub fn hessian(&self, theta: &DualVariable) -> Result<DMatrix<f64>> {
        let certs = self.feasible_certificates(theta)?;
        self.hessian_from(&certs)
    }

    fn hessian_from(&self, certs: &[CMatrix]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let nu = self.spec.nu;
        // T[(i,j),(k,l)] = Σ P_jk R_li, so that tr(D1 P D2 R) = vec(D1)ᵀ T vec(D2)
        let mut t = CMatrix::zeros(n * n, n * n);
        let mut accumulate = |p: &CMatrix, r: &CMatrix| {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let pjk = p[(j, k)];
                        for l in 0..n {
                            t[(i * n + j, k * n + l)] += pjk * r[(l, i)];
                        }
                    }
                }
            }
        };
        for (pt, c) in self.points.iter().zip(certs) {
            let inv = inverse(c)?;
            if c.nrows() == 1 {
                let s = integer_power(&inv, nu + 1)[(0, 0)] * nu as f64;
                let p = &pt.gl * &pt.k_adj * s;
                let r = &pt.k * &pt.gl_adj;
                accumulate(&p, &r);
            } else {
                let powers: Vec<CMatrix> = (0..=nu).map(|e| integer_power(&inv, e)).collect();
                for k in 0..nu as usize {
                    let p = &pt.gl * &powers[k + 1] * &pt.k_adj;
                    let r = &pt.k * &powers[nu as usize - k] * &pt.gl_adj;
                    accumulate(&p, &r);
                }
            }
        }
        let scale = 1.0 / (nu as f64 * self.points.len() as f64);
        let d = self.basis.len();
        let vecs: Vec<DVector<f64>> = self
            .basis
            .iter()
            .map(|e| DVector::from_iterator(n * n, e.transpose().iter().copied()))
            .collect();
        let t_re = t.map(|v| v.re);
        let mut h = DMatrix::zeros(d, d);
        for b in 0..d {
            let tb = &t_re * &vecs[b];
            for a in 0..d {
                h[(a, b)] = vecs[a].dot(&tb) * scale;
            }
        }
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Feasible-start descent from `Θ₀ = 0` with Armijo backtracking.
    pub fn solve(&self) -> Result<Solution> {
        let opts = self.spec.options;
        let sigma_norm = self.sigma().norm();
        let mut x = DVector::zeros(self.basis.len());
        let mut theta = RMatrix::zeros(self.dim(), self.dim());
        let mut certs = self.certificates(&theta);
        let mut value = self.value_from(&theta, &certs)?;
        let mut margin;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut last_step: f64 = 1.0;

        loop {
            let gap = self.moment_gap(&certs)?;
            let g = self.coordinates(&gap);
            let gnorm = g.norm();
            let residual = gap.norm() / sigma_norm;
            let moments_ok = self.spec.subspace.is_some() || residual <= opts.moment_tol;
            if gnorm <= opts.grad_tol && moments_ok {
                converged = true;
                break;
            }
            if iterations >= opts.max_iters {
                break;
            }

            let mut newton = false;
            let mut dir = -&g;
            if opts.method == Method::Newton {
                if let Some(d) = newton_direction(self.hessian_from(&certs)?, &g) {
                    dir = d;
                    newton = true;
                }
            }
            let slope = g.dot(&dir);
            // damped Newton: stay inside the region where the quadratic model is trusted
            let decrement = (-slope).max(0.0).sqrt();
            let mut step = if newton {
                if decrement > NEWTON_DAMPING_THRESHOLD {
                    1.0 / (1.0 + decrement)
                } else {
                    1.0
                }
            } else {
                (2.0 * last_step).min(1e6)
            };
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let trial_x = &x + &dir * step;
                let trial_theta = self.from_coordinates(&trial_x);
                let trial_certs = self.certificates(&trial_theta);
                let v = self.verdict(&trial_certs);
                if v.margin >= MARGIN_FLOOR {
                    let Ok(trial_value) = self.value_from(&trial_theta, &trial_certs) else {
                        step *= opts.backtrack_ratio;
                        continue;
                    };
                    let armijo = trial_value <= value + opts.armijo_c * step * slope;
                    if armijo
                        || self
                            .roundoff_accept(value, trial_value, gnorm, &trial_certs)
                            .unwrap_or(false)
                    {
                        accepted = Some((trial_x, trial_theta, trial_certs, trial_value, v.margin));
                        break;
                    }
                }
                step *= opts.backtrack_ratio;
            }
            let Some((nx, nt, nc, nv, nm)) = accepted else {
                warn!(
                    "line search failed at iteration {iterations} (gradient norm {gnorm:e}); stopping"
                );
                break;
            };
            x = nx;
            theta = nt;
            certs = nc;
            value = nv;
            margin = nm;
            last_step = step;
            iterations += 1;
            trace.push(IterationRecord {
                iteration: iterations,
                dual_value: value,
                gradient_norm: gnorm,
                step,
                margin,
                newton,
            });
            debug!("iter {iterations}: J = {value:.15e}, |grad| = {gnorm:e}, step = {step:e}");
        }

        let gap = self.moment_gap(&certs)?;
        let gradient_norm = self.coordinates(&gap).norm();
        let phi_star = self.primal_from(&certs)?;
        let moment_residual = moment_residual(&phi_star, &self.spec.filter, self.sigma())?;
        Ok(Solution {
            theta_hat: DualVariable::new(theta)?,
            phi_star,
            dual_value: value,
            moment_residual,
            gradient_norm,
            iterations,
            converged,
            trace,
        })
    }

    /// Once the predicted decrease is below rounding error the Armijo test is
    /// meaningless; accept a step that leaves `J` unchanged to rounding and
    /// shrinks the gradient.
    fn roundoff_accept(
        &self,
        value: f64,
        trial_value: f64,
        gnorm: f64,
        trial_certs: &[CMatrix],
    ) -> Result<bool> {
        let noise = 64.0 * f64::EPSILON * (1.0 + value.abs());
        if trial_value > value + noise {
            return Ok(false);
        }
        let trial_gap = self.moment_gap(trial_certs)?;
        Ok(self.coordinates(&trial_gap).norm() < 0.5 * gnorm)
    }
}

/// `-H⁺g` on the range of the Hessian plus `-g` on its kernel. The kernel is
/// nontrivial whenever `Θ ↦ K*ΘK` is not injective (delay banks, for one).
/// `None` if `H` has a clearly negative eigenvalue.
fn newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(top > 0.0) || !top.is_finite() {
        return None;
    }
    let tol = HESSIAN_RANK_TOL * top;
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return None;
    }
    let mut d = DVector::zeros(g.len());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        let c = u.dot(g);
        d -= u * if l > tol { c / l } else { c };
    }
    (d.dot(g) < 0.0 && d.iter().all(|v| v.is_finite())).then_some(d)
}

/// `‖∫ G Φ G* - Σ̂‖_F / ‖Σ̂‖_F`.
pub fn moment_residual(phi: &SpectralDensity, filter: &StateSpaceFilter, sigma: &RMatrix) -> Result<f64> {
    let fitted = output_covariance(filter, phi)?;
    if fitted.shape() != sigma.shape() {
        return Err(Error::Dimension(format!(
            "covariance is {:?}, expected {:?}",
            sigma.shape(),
            fitted.shape()
        )));
    }
    let scale = sigma.norm();
    if scale == 0.0 {
        return Err(Error::Parameter("covariance estimate is zero".into()));
    }
    Ok((fitted - sigma).norm() / scale)
}

/// `E_ii` and `(E_ij + E_ji)/√2`, orthonormal under `⟨X, Y⟩ = tr(XY)`.
pub fn symmetric_basis(n: usize) -> Vec<RMatrix> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = RMatrix::zeros(n, n);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            out.push(e);
        }
    }
    out
}

/// Gram-Schmidt on symmetric matrices; rejects asymmetric or dependent input.
pub fn orthonormalize(list: &[RMatrix], n: usize) -> Result<Vec<RMatrix>> {
    if list.is_empty() {
        return Err(Error::Parameter("subspace basis is empty".into()));
    }
    let mut out: Vec<RMatrix> = Vec::with_capacity(list.len());
    for (idx, v) in list.iter().enumerate() {
        if v.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "subspace matrix {idx} is {}x{}, expected {n}x{n}",
                v.nrows(),
                v.ncols()
            )));
        }
        let norm = v.norm();
        if (v - v.transpose()).norm() > SYMMETRY_TOL * (1.0 + norm) {
            return Err(Error::Parameter(format!("subspace matrix {idx} is not symmetric")));
        }
        let mut w = (v + v.transpose()) * 0.5;
        for _ in 0..2 {
            for e in &out {
                let c = e.dot(&w);
                w -= e * c;
            }
        }
        let rest = w.norm();
        if !(rest > SUBSPACE_RANK_TOL * norm.max(f64::MIN_POSITIVE)) {
            return Err(Error::Parameter(format!(
                "subspace matrix {idx} is linearly dependent on the previous ones"
            )));
        }
        out.push(w / rest);
    }
    Ok(out)
}
