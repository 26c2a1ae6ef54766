//! Measurement filters `G(z) = (zI - A)⁻¹B` and prior shaping filters.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::freqgrid::{
    integrate, to_complex, CMatrix, FrequencyGrid, MatrixFunction, RMatrix, SpectralDensity,
};

/// Resolvents with a larger condition number are treated as unstable.
const MAX_RESOLVENT_COND: f64 = 1e12;
/// Smallest `|det W_Ψ|` accepted on the grid.
const MIN_PRIOR_DET: f64 = 1e-8;
/// Poles closer than this are treated as repeated.
const POLE_MERGE_TOL: f64 = 1e-12;
/// Relative bound on the imaginary / antisymmetric residue of an output covariance.
const COVARIANCE_RESIDUE_TOL: f64 = 1e-9;

/// A strictly stable, reachable pair `(A, B)` with `A` n×n, `B` n×m, `n > m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceFilter {
    a: RMatrix,
    b: RMatrix,
}

impl StateSpaceFilter {
    pub fn new(a: RMatrix, b: RMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{} and B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        let m = b.ncols();
        if m == 0 || n <= m {
            return Err(Error::Parameter(format!(
                "state dimension n = {n} must exceed input dimension m = {m} >= 1"
            )));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::Parameter("filter matrices contain non-finite entries".into()));
        }
        let radius = spectral_radius(&a);
        if radius >= 1.0 {
            return Err(Error::Unstable(radius));
        }
        let rank = reachability_rank(&a, &b);
        if rank < n {
            return Err(Error::Unreachable { rank, n });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &RMatrix {
        &self.a
    }

    pub fn b(&self) -> &RMatrix {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input (channel) dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `G(e^{jθ})` at a single angle.
    pub fn at(&self, theta: f64) -> Result<CMatrix> {
        resolvent_apply(&self.a, &self.b, theta)
    }

    /// Frequency response on every grid point (n×m samples).
    pub fn evaluate(&self, grid: FrequencyGrid) -> Result<MatrixFunction> {
        MatrixFunction::try_from_fn(grid, |_, t| self.at(t))
    }

    /// `[B, AB, …, A^{n-1}B]`.
    pub fn reachability_matrix(&self) -> RMatrix {
        reachability_matrix(&self.a, &self.b)
    }
}

/// `(e^{jθ}I - A)⁻¹ B`, refusing near-singular resolvents.
fn resolvent_apply(a: &RMatrix, b: &RMatrix, theta: f64) -> Result<CMatrix> {
    let n = a.nrows();
    let z = Complex64::from_polar(1.0, theta);
    let resolvent = CMatrix::identity(n, n) * z - to_complex(a);
    let sv = resolvent.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min();
    if !(cond <= MAX_RESOLVENT_COND) {
        return Err(Error::NearInstability { theta, cond });
    }
    resolvent
        .lu()
        .solve(&to_complex(b))
        .ok_or(Error::NearInstability {
            theta,
            cond: f64::INFINITY,
        })
}

pub(crate) fn spectral_radius(a: &RMatrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // the unbounded QR iteration can stall on defective matrices (shift chains)
    match Schur::try_new(a.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max),
        None => gelfand_radius(a),
    }
}

/// `lim ‖A^k‖^{1/k}` by repeated squaring, renormalized to avoid overflow.
fn gelfand_radius(a: &RMatrix) -> f64 {
    let mut power = a.clone();
    let mut log_scale = 0.0;
    let mut exponent = 1.0;
    for _ in 0..40 {
        let norm = power.norm();
        if norm == 0.0 {
            return 0.0;
        }
        power /= norm;
        log_scale += norm.ln();
        power = &power * &power;
        log_scale *= 2.0;
        exponent *= 2.0;
    }
    ((log_scale + power.norm().ln()) / exponent).exp()
}

fn reachability_matrix(a: &RMatrix, b: &RMatrix) -> RMatrix {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = RMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

fn reachability_rank(a: &RMatrix, b: &RMatrix) -> usize {
    let r = reachability_matrix(a, b);
    let sv = r.svd(false, false).singular_values;
    let tol = 1e-10 * sv.max().max(1.0) * a.nrows() as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Bank of `n` delays, `G(z) = [z⁻¹, …, z⁻ⁿ]ᵀ`.
pub fn bank_of_delays(n: usize) -> Result<StateSpaceFilter> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "a bank of delays needs n >= 2, got {n}"
        )));
    }
    let a = RMatrix::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
    let mut b = RMatrix::zeros(n, 1);
    b[(0, 0)] = 1.0;
    StateSpaceFilter::new(a, b)
}

/// Real block-diagonal realization with the given poles for `m` channels.
///
/// Real poles give `p·I_m` blocks, conjugate pairs `ρe^{±jφ}` give
/// `ρ[[cos φ, sin φ], [-sin φ, cos φ]] ⊗ I_m` blocks. Repeated poles are
/// chained through identity blocks on the subdiagonal (a Jordan-like shift
/// chain) so that the pair stays reachable; the input enters the first block
/// of every chain.
pub fn pole_filter(poles: &[Complex64], m: usize) -> Result<StateSpaceFilter> {
    if m == 0 {
        return Err(Error::Parameter("channel dimension must be positive".into()));
    }
    if let Some(p) = poles.iter().find(|p| !(p.norm() < 1.0)) {
        return Err(Error::Unstable(p.norm()));
    }

    // (representative pole, multiplicity), in order of first appearance
    let mut groups: Vec<(Complex64, usize)> = Vec::new();
    let mut used = vec![false; poles.len()];
    for i in 0..poles.len() {
        if used[i] {
            continue;
        }
        let p = poles[i];
        let is_real = p.im.abs() <= POLE_MERGE_TOL;
        let p = if is_real { Complex64::new(p.re, 0.0) } else { p };
        let mut mult = 0;
        for j in i..poles.len() {
            if !used[j] && (poles[j] - p).norm() <= POLE_MERGE_TOL {
                used[j] = true;
                mult += 1;
            }
        }
        if !is_real {
            let conj = p.conj();
            let mut partners = 0;
            for j in 0..poles.len() {
                if !used[j] && (poles[j] - conj).norm() <= POLE_MERGE_TOL {
                    used[j] = true;
                    partners += 1;
                }
            }
            if partners != mult {
                return Err(Error::UnpairedPole { re: p.re, im: p.im });
            }
        }
        groups.push((p, mult));
    }

    let order: usize = groups
        .iter()
        .map(|(p, k)| if p.im == 0.0 { *k } else { 2 * k })
        .sum();
    let n = order * m;
    let mut a = RMatrix::zeros(n, n);
    let mut b = RMatrix::zeros(n, m);
    let eye = RMatrix::identity(m, m);
    let mut offset = 0;
    for (p, mult) in groups {
        let unit: RMatrix = if p.im == 0.0 {
            RMatrix::from_element(1, 1, p.re)
        } else {
            // use the upper-half-plane member so the rotation sign is fixed
            let (rho, phi) = (p.norm(), p.im.abs().atan2(p.re));
            RMatrix::from_row_slice(
                2,
                2,
                &[rho * phi.cos(), rho * phi.sin(), -rho * phi.sin(), rho * phi.cos()],
            )
        };
        let block = unit.kronecker(&eye);
        let size = block.nrows();
        b.view_mut((offset, 0), (m, m)).copy_from(&eye);
        for k in 0..mult {
            let at = offset + k * size;
            a.view_mut((at, at), (size, size)).copy_from(&block);
            if k > 0 {
                a.view_mut((at, at - size), (size, size))
                    .copy_from(&RMatrix::identity(size, size));
            }
        }
        offset += mult * size;
    }
    StateSpaceFilter::new(a, b)
}

/// `Re ∫ G Φ G*` for a precomputed frequency response.
pub fn covariance_from_response(response: &MatrixFunction, phi: &SpectralDensity) -> Result<RMatrix> {
    response.check_same_grid(phi.function())?;
    if response.cols() != phi.dim() {
        return Err(Error::Dimension(format!(
            "filter has {} inputs, density is {}x{}",
            response.cols(),
            phi.dim(),
            phi.dim()
        )));
    }
    let products = response
        .samples()
        .iter()
        .zip(phi.samples())
        .map(|(g, p)| g * p * g.adjoint())
        .collect();
    let integral = integrate(&MatrixFunction::new(response.grid(), products)?);
    real_symmetric_part(&integral, "output covariance")
}

/// Real symmetric part of a complex matrix that should already be real symmetric.
pub(crate) fn real_symmetric_part(m: &CMatrix, what: &str) -> Result<RMatrix> {
    let re = m.map(|v| v.re);
    let im = m.map(|v| v.im);
    let scale = 1.0 + re.norm();
    let asym = (&re - re.transpose()).norm();
    if im.norm() > COVARIANCE_RESIDUE_TOL * scale || asym > COVARIANCE_RESIDUE_TOL * scale {
        return Err(Error::Numerical(format!(
            "{what} has imaginary residue {:e} and asymmetry {asym:e}",
            im.norm()
        )));
    }
    Ok((&re + re.transpose()) * 0.5)
}

/// `Σ = ∫ G Φ G*`, the stationary covariance of the filter output.
pub fn output_covariance(filter: &StateSpaceFilter, phi: &SpectralDensity) -> Result<RMatrix> {
    covariance_from_response(&filter.evaluate(phi.grid())?, phi)
}

/// Realization `(A_w, B_w, C_w, D_w)` of a square shaping filter
/// `W(z) = C_w (zI - A_w)⁻¹ B_w + D_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingFilter {
    a: RMatrix,
    b: RMatrix,
    c: RMatrix,
    d: RMatrix,
}

impl ShapingFilter {
    /// `A_w` may be 0×0 for a static gain.
    pub fn new(a: RMatrix, b: RMatrix, c: RMatrix, d: RMatrix) -> Result<Self> {
        let nw = a.nrows();
        let m = d.nrows();
        if a.ncols() != nw
            || d.ncols() != m
            || b.shape() != (nw, m)
            || c.shape() != (m, nw)
            || m == 0
        {
            return Err(Error::Dimension(format!(
                "shaping filter shapes A {:?}, B {:?}, C {:?}, D {:?} are inconsistent",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        let radius = spectral_radius(&a);
        if radius >= 1.0 {
            return Err(Error::Unstable(radius));
        }
        if d.clone().try_inverse().is_none() {
            return Err(Error::Parameter("D_w must be invertible".into()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn at(&self, theta: f64) -> Result<CMatrix> {
        let d = to_complex(&self.d);
        if self.a.nrows() == 0 {
            return Ok(d);
        }
        Ok(to_complex(&self.c) * resolvent_apply(&self.a, &self.b, theta)? + d)
    }
}

/// A priori spectral density, given through its left spectral factor.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorModel {
    /// `Ψ ≡ I_m`.
    Identity { m: usize },
    /// `Ψ = W_Ψ W_Ψ*`.
    ShapingFilter(ShapingFilter),
}

impl PriorModel {
    pub fn identity(m: usize) -> Self {
        Self::Identity { m }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Identity { m } => *m,
            Self::ShapingFilter(w) => w.dim(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity { .. })
    }

    /// `W_Ψ(e^{jθ})` on the grid; fails if `|det W_Ψ|` drops below `1e-8`.
    pub fn factor(&self, grid: FrequencyGrid) -> Result<MatrixFunction> {
        match self {
            Self::Identity { m } => Ok(MatrixFunction::constant(grid, &CMatrix::identity(*m, *m))),
            Self::ShapingFilter(w) => MatrixFunction::try_from_fn(grid, |_, t| {
                let value = w.at(t)?;
                let det = value.determinant().norm();
                if !(det >= MIN_PRIOR_DET) {
                    return Err(Error::NotMinimumPhase { det, theta: t });
                }
                Ok(value)
            }),
        }
    }

    /// `Ψ = W_Ψ W_Ψ*` on the grid.
    pub fn density(&self, grid: FrequencyGrid) -> Result<SpectralDensity> {
        match self {
            Self::Identity { m } => Ok(SpectralDensity::identity(grid, *m)),
            Self::ShapingFilter(_) => {
                let w = self.factor(grid)?;
                SpectralDensity::new(w.map(|s| s * s.adjoint())?)
            }
        }
    }
}

/// Dense real matrix from nested rows; used by configuration front-ends.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<RMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cplx(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn spectral_radius_of_defective_and_normal_matrices() {
        assert!(spectral_radius(bank_of_delays(4).unwrap().a()) < 1e-6);
        assert_eq!(gelfand_radius(bank_of_delays(4).unwrap().a()), 0.0);
        let jordan = RMatrix::from_row_slice(2, 2, &[0.9, 0.0, 1.0, 0.9]);
        assert!((spectral_radius(&jordan) - 0.9).abs() < 1e-6);
        assert!((gelfand_radius(&jordan) - 0.9).abs() < 1e-6);
        let rot = RMatrix::from_row_slice(2, 2, &[0.0, 1.2, -1.2, 0.0]);
        assert!((gelfand_radius(&rot) - 1.2).abs() < 1e-9);
    }

    #[test]
    fn single_delay_response() {
        // n = 1 violates n > m, so check the resolvent directly
        let a = RMatrix::zeros(1, 1);
        let b = RMatrix::from_element(1, 1, 1.0);
        let g = resolvent_apply(&a, &b, PI).unwrap();
        assert!((g[(0, 0)] - cplx(-1.0, 0.0)).norm() < 1e-15);
        assert!(StateSpaceFilter::new(a, b).is_err());
    }

    #[test]
    fn delay_bank_structure() {
        let f = bank_of_delays(2).unwrap();
        assert_eq!(f.a(), &RMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        assert_eq!(f.b(), &RMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let g = f.at(PI / 2.0).unwrap();
        assert!((g[(0, 0)] - cplx(0.0, -1.0)).norm() < 1e-15);
        assert!((g[(1, 0)] - cplx(-1.0, 0.0)).norm() < 1e-15);

        let g3 = bank_of_delays(3).unwrap().at(0.0).unwrap();
        for i in 0..3 {
            assert!((g3[(i, 0)] - cplx(1.0, 0.0)).norm() < 1e-15);
        }
        let r = bank_of_delays(4).unwrap().reachability_matrix();
        assert_eq!(r, RMatrix::identity(4, 4));
        assert!(matches!(bank_of_delays(1), Err(Error::Parameter(_))));
    }

    #[test]
    fn pole_filter_real_pair() {
        let f = pole_filter(&[cplx(0.9, 0.0), cplx(-0.9, 0.0)], 1).unwrap();
        assert_eq!(f.a(), &RMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, -0.9]));
        assert_eq!(f.b(), &RMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
    }

    #[test]
    fn pole_filter_conjugate_pair() {
        let p = Complex64::from_polar(0.95, PI / 4.0);
        let f = pole_filter(&[p, p.conj()], 1).unwrap();
        let (c, s) = ((PI / 4.0).cos(), (PI / 4.0).sin());
        let expect = RMatrix::from_row_slice(2, 2, &[c, s, -s, c]) * 0.95;
        assert!((f.a() - expect).norm() < 1e-15);
        let schur = Schur::new(f.a().clone());
        let mut eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|x, y| x.im.total_cmp(&y.im));
        assert!((eig[1] - p).norm() < 1e-12);
        assert!((eig[0] - p.conj()).norm() < 1e-12);
    }

    #[test]
    fn pole_filter_repeated_pole_uses_shift_chain() {
        // a naive diagonal realization of {0, 0} is unreachable
        let naive = StateSpaceFilter::new(RMatrix::zeros(2, 2), RMatrix::from_element(2, 1, 1.0));
        assert!(matches!(naive, Err(Error::Unreachable { rank: 1, n: 2 })));
        let f = pole_filter(&[cplx(0.0, 0.0), cplx(0.0, 0.0)], 1).unwrap();
        assert_eq!(f, bank_of_delays(2).unwrap());
        // repeated conjugate pair
        let p = Complex64::from_polar(0.8, 1.0);
        let f = pole_filter(&[p, p.conj(), p, p.conj()], 1).unwrap();
        assert_eq!(f.n(), 4);
    }

    #[test]
    fn pole_filter_errors() {
        assert!(matches!(pole_filter(&[cplx(0.0, 0.0)], 1), Err(Error::Parameter(_))));
        assert!(matches!(pole_filter(&[cplx(1.0, 0.0), cplx(0.2, 0.0)], 1), Err(Error::Unstable(_))));
        assert!(matches!(
            pole_filter(&[cplx(0.5, 0.3), cplx(0.2, 0.0)], 1),
            Err(Error::UnpairedPole { .. })
        ));
    }

    #[test]
    fn multichannel_pole_filter() {
        let f = pole_filter(&[cplx(0.5, 0.0), cplx(-0.3, 0.0)], 2).unwrap();
        assert_eq!((f.n(), f.m()), (4, 2));
    }

    #[test]
    fn pole_response_at_dc() {
        let f = pole_filter(&[cplx(0.9, 0.0), cplx(0.5, 0.0)], 1).unwrap();
        let g = f.at(0.0).unwrap();
        assert!((g[(0, 0)] - cplx(10.0, 0.0)).norm() < 1e-12);
        assert!((g[(1, 0)] - cplx(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn output_covariance_examples() {
        let grid = FrequencyGrid::new(256).unwrap();
        let white = SpectralDensity::identity(grid, 1);
        let s = output_covariance(&bank_of_delays(3).unwrap(), &white).unwrap();
        assert!((s - RMatrix::identity(3, 3)).norm() < 1e-13);

        let ar1 = SpectralDensity::from_scalar_fn(grid, |t| 1.0 / (1.25 - t.cos())).unwrap();
        let s = output_covariance(&bank_of_delays(2).unwrap(), &ar1).unwrap();
        let expect = RMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0]);
        assert!((s - expect).norm() < 1e-12);

        // first-order cross-gramian c / (1 - p_i p_j)
        let grid = FrequencyGrid::new(2048).unwrap();
        let c = 1.7;
        let constant = SpectralDensity::from_scalar_fn(grid, |_| c).unwrap();
        let poles = [0.9, 0.5];
        let f = pole_filter(&[cplx(poles[0], 0.0), cplx(poles[1], 0.0)], 1).unwrap();
        let s = output_covariance(&f, &constant).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(s[(i, j)], c / (1.0 - poles[i] * poles[j]), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn response_conjugate_symmetry() {
        let p = Complex64::from_polar(0.9, 0.7);
        let f = pole_filter(&[p, p.conj(), cplx(0.3, 0.0)], 1).unwrap();
        let grid = FrequencyGrid::new(64).unwrap();
        let g = f.evaluate(grid).unwrap();
        for k in 0..grid.len() {
            let d = g.sample(k).map(|v| v.conj()) - g.sample(grid.mirror(k));
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn prior_examples() {
        let grid = FrequencyGrid::new(64).unwrap();
        let id = PriorModel::identity(2).density(grid).unwrap();
        assert!(id.samples().iter().all(|s| *s == CMatrix::identity(2, 2)));

        let ma = PriorModel::ShapingFilter(
            ShapingFilter::new(
                RMatrix::zeros(1, 1),
                RMatrix::from_element(1, 1, 1.0),
                RMatrix::from_element(1, 1, 0.5),
                RMatrix::from_element(1, 1, 1.0),
            )
            .unwrap(),
        );
        let psi = ma.density(grid).unwrap();
        for (k, t) in grid.thetas().enumerate() {
            assert_abs_diff_eq!(psi.sample(k)[(0, 0)].re, 1.25 + t.cos(), epsilon = 1e-13);
        }

        let ar = PriorModel::ShapingFilter(
            ShapingFilter::new(
                RMatrix::from_element(1, 1, 0.5),
                RMatrix::from_element(1, 1, 1.0),
                RMatrix::from_element(1, 1, 0.5),
                RMatrix::from_element(1, 1, 1.0),
            )
            .unwrap(),
        );
        let psi = ar.density(grid).unwrap();
        for (k, t) in grid.thetas().enumerate() {
            assert_abs_diff_eq!(psi.sample(k)[(0, 0)].re, 1.0 / (1.25 - t.cos()), epsilon = 1e-13);
        }
    }

    #[test]
    fn prior_with_unit_circle_zero_is_rejected() {
        // W(z) = 1 + z^-1 vanishes at θ = π
        let w = ShapingFilter::new(
            RMatrix::zeros(1, 1),
            RMatrix::from_element(1, 1, 1.0),
            RMatrix::from_element(1, 1, 1.0),
            RMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let grid = FrequencyGrid::new(16).unwrap();
        assert!(matches!(
            PriorModel::ShapingFilter(w).factor(grid),
            Err(Error::NotMinimumPhase { .. })
        ));
    }
}
