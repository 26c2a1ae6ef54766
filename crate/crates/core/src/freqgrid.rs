//! Matrix-valued functions sampled on a uniform grid of the unit circle.
//!
//! Integrals over the circle use the normalized measure `dθ / 2π`, discretized
//! by the periodic rectangle rule. That rule is exact for trigonometric
//! polynomials of degree below the number of grid points and converges
//! geometrically for the rational integrands that appear everywhere else in
//! the crate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type RMatrix = DMatrix<f64>;

pub const DEFAULT_GRID_POINTS: usize = 2048;

/// Relative Hermitian-drift tolerance accepted when building a density.
const HERMITIAN_TOL: f64 = 1e-12;
/// Looser tolerance for inputs to the pointwise matrix functions.
const HERMITIAN_INPUT_TOL: f64 = 1e-9;
/// Relative bound on the imaginary residue of a trace integral.
const TRACE_IMAG_TOL: f64 = 1e-9;

/// Uniform grid `θ_k = 2πk / nf`, `k = 0..nf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrequencyGrid {
    points: usize,
}

impl FrequencyGrid {
    /// `points` must be even and at least 4 so that `θ = 0` and `θ = π` are
    /// both grid points.
    pub fn new(points: usize) -> Result<Self> {
        if points < 4 || points % 2 != 0 {
            return Err(Error::Parameter(format!(
                "grid size must be even and >= 4, got {points}"
            )));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.points as f64
    }

    pub fn thetas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points).map(move |k| self.theta(k))
    }

    /// Index of the grid point at `2π - θ_k`.
    pub fn mirror(&self, k: usize) -> usize {
        (self.points - k) % self.points
    }

    /// `e^{jθ_k}`.
    pub fn unit(&self, k: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.theta(k))
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            points: DEFAULT_GRID_POINTS,
        }
    }
}

/// A `rows × cols` complex matrix per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFunction {
    grid: FrequencyGrid,
    rows: usize,
    cols: usize,
    samples: Vec<CMatrix>,
}

impl MatrixFunction {
    pub fn new(grid: FrequencyGrid, samples: Vec<CMatrix>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} samples for a grid of {} points",
                samples.len(),
                grid.len()
            )));
        }
        let (rows, cols) = samples[0].shape();
        if let Some((k, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.shape() != (rows, cols))
        {
            return Err(Error::Dimension(format!(
                "sample {k} is {}x{}, expected {rows}x{cols}",
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(Self {
            grid,
            rows,
            cols,
            samples,
        })
    }

    pub fn from_fn(grid: FrequencyGrid, mut f: impl FnMut(f64) -> CMatrix) -> Result<Self> {
        Self::new(grid, grid.thetas().map(&mut f).collect())
    }

    pub fn try_from_fn(
        grid: FrequencyGrid,
        mut f: impl FnMut(usize, f64) -> Result<CMatrix>,
    ) -> Result<Self> {
        let samples = (0..grid.len())
            .map(|k| f(k, grid.theta(k)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid, samples)
    }

    pub fn constant(grid: FrequencyGrid, value: &CMatrix) -> Self {
        Self {
            grid,
            rows: value.nrows(),
            cols: value.ncols(),
            samples: vec![value.clone(); grid.len()],
        }
    }

    /// Scalar (1×1) function from complex samples.
    pub fn scalar(grid: FrequencyGrid, values: &[Complex64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&v| CMatrix::from_element(1, 1, v)).collect(),
        )
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn samples(&self) -> &[CMatrix] {
        &self.samples
    }

    pub fn sample(&self, k: usize) -> &CMatrix {
        &self.samples[k]
    }

    pub fn into_samples(self) -> Vec<CMatrix> {
        self.samples
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self {
            grid: self.grid,
            rows: self.cols,
            cols: self.rows,
            samples: self.samples.iter().map(|s| s.adjoint()).collect(),
        }
    }

    pub fn map(&self, f: impl FnMut(&CMatrix) -> CMatrix) -> Result<Self> {
        Self::new(self.grid, self.samples.iter().map(f).collect())
    }

    pub fn try_map(&self, f: impl FnMut(&CMatrix) -> Result<CMatrix>) -> Result<Self> {
        Self::new(self.grid, self.samples.iter().map(f).collect::<Result<_>>()?)
    }

    pub(crate) fn check_same_grid(&self, other: &MatrixFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Dimension(format!(
                "grids differ ({} vs {} points)",
                self.grid.len(),
                other.grid.len()
            )));
        }
        Ok(())
    }
}

/// `∫ f` by the rectangle rule, `(1/nf) Σ_k f(θ_k)`.
pub fn integrate(f: &MatrixFunction) -> CMatrix {
    let mut acc = CMatrix::zeros(f.rows, f.cols);
    for s in &f.samples {
        acc += s;
    }
    acc / Complex64::from(f.grid.len() as f64)
}

/// Real part of `tr ∫ f`; rejects a non-negligible imaginary residue.
pub fn trace_integral(f: &MatrixFunction) -> Result<f64> {
    if f.rows != f.cols {
        return Err(Error::Dimension(format!(
            "trace of a {}x{} function",
            f.rows, f.cols
        )));
    }
    mean_trace(f.samples.iter().map(|s| s.trace()), f.grid.len())
}

/// Mean of pointwise complex traces, with the same imaginary-residue guard as
/// [`trace_integral`].
pub(crate) fn mean_trace(values: impl Iterator<Item = Complex64>, points: usize) -> Result<f64> {
    let total: Complex64 = values.sum();
    let mean = total / points as f64;
    if mean.im.abs() > TRACE_IMAG_TOL * (1.0 + mean.re.abs()) {
        return Err(Error::Numerical(format!(
            "trace integral has imaginary residue {:e} (real part {:e})",
            mean.im, mean.re
        )));
    }
    Ok(mean.re)
}

/// A Hermitian, positive definite matrix function: the grid version of a
/// bounded and coercive spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    function: MatrixFunction,
    k1: f64,
    k2: f64,
}

impl SpectralDensity {
    /// Validates Hermitian symmetry and positivity at every grid point and
    /// records the extreme eigenvalues as coercivity/boundedness witnesses.
    pub fn new(function: MatrixFunction) -> Result<Self> {
        if function.rows != function.cols {
            return Err(Error::Dimension(format!(
                "spectral density samples must be square, got {}x{}",
                function.rows, function.cols
            )));
        }
        let mut k1 = f64::INFINITY;
        let mut k2 = f64::NEG_INFINITY;
        let mut samples = Vec::with_capacity(function.samples.len());
        for (k, s) in function.samples.iter().enumerate() {
            let drift = (s - s.adjoint()).norm();
            if drift > HERMITIAN_TOL * s.norm() {
                return Err(Error::Numerical(format!(
                    "sample {k} is not Hermitian (drift {drift:e})"
                )));
            }
            let h = hermitian_part(s);
            let (lo, hi) = eigen_range(&h);
            if !(lo > 0.0) {
                return Err(Error::NotPositiveDefinite { min_eig: lo });
            }
            k1 = k1.min(lo);
            k2 = k2.max(hi);
            samples.push(h);
        }
        Ok(Self {
            function: MatrixFunction { samples, ..function },
            k1,
            k2,
        })
    }

    pub fn constant(grid: FrequencyGrid, value: &CMatrix) -> Result<Self> {
        Self::new(MatrixFunction::constant(grid, value))
    }

    pub fn identity(grid: FrequencyGrid, m: usize) -> Self {
        Self {
            function: MatrixFunction::constant(grid, &CMatrix::identity(m, m)),
            k1: 1.0,
            k2: 1.0,
        }
    }

    /// Scalar density from its values at the grid angles.
    pub fn from_scalar_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(MatrixFunction::from_fn(grid, |t| {
            CMatrix::from_element(1, 1, Complex64::from(f(t)))
        })?)
    }

    pub fn from_scalar_values(grid: FrequencyGrid, values: &[f64]) -> Result<Self> {
        let v: Vec<Complex64> = values.iter().map(|&x| Complex64::from(x)).collect();
        Self::new(MatrixFunction::scalar(grid, &v)?)
    }

    pub fn function(&self) -> &MatrixFunction {
        &self.function
    }

    pub fn into_function(self) -> MatrixFunction {
        self.function
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.function.grid
    }

    pub fn dim(&self) -> usize {
        self.function.rows
    }

    pub fn samples(&self) -> &[CMatrix] {
        &self.function.samples
    }

    pub fn sample(&self, k: usize) -> &CMatrix {
        &self.function.samples[k]
    }

    /// Smallest eigenvalue over the grid.
    pub fn k1(&self) -> f64 {
        self.k1
    }

    /// Largest eigenvalue over the grid.
    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// Real part of the samples of a scalar density.
    pub fn scalar_values(&self) -> Option<Vec<f64>> {
        (self.dim() == 1).then(|| self.samples().iter().map(|s| s[(0, 0)].re).collect())
    }

    /// Checks `Φ(2π - θ) = Φ(θ)ᵀ`, the symmetry of densities of real processes.
    pub fn is_real_symmetric(&self, tol: f64) -> bool {
        let grid = self.grid();
        (0..grid.len()).all(|k| {
            let a = self.sample(k);
            let b = self.sample(grid.mirror(k));
            (a.transpose() - b).norm() <= tol * (1.0 + a.norm())
        })
    }
}

/// `(H + H*) / 2`.
pub fn hermitian_part(h: &CMatrix) -> CMatrix {
    (h + h.adjoint()) * Complex64::from(0.5)
}

pub fn to_complex(m: &RMatrix) -> CMatrix {
    m.map(Complex64::from)
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    if h.nrows() == 1 {
        return (vec![h[(0, 0)].re], CMatrix::identity(1, 1));
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(h.nrows(), h.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn eigen_range(h: &CMatrix) -> (f64, f64) {
    match h.nrows() {
        1 => (h[(0, 0)].re, h[(0, 0)].re),
        2 => {
            // closed form avoids an iterative decomposition in the hot loops
            let a = h[(0, 0)].re;
            let d = h[(1, 1)].re;
            let b = h[(0, 1)];
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            (mean - rad, mean + rad)
        }
        _ => {
            let v = SymmetricEigen::new(h.clone()).eigenvalues;
            (v.min(), v.max())
        }
    }
}

pub fn min_eigenvalue(h: &CMatrix) -> f64 {
    eigen_range(h).0
}

fn check_hermitian_input(h: &CMatrix) -> Result<CMatrix> {
    if h.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let drift = (h - h.adjoint()).norm();
    if drift > HERMITIAN_INPUT_TOL * h.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "matrix is not Hermitian (drift {drift:e})"
        )));
    }
    Ok(hermitian_part(h))
}

/// `U diag(f(λ)) U*` for Hermitian positive definite `H`.
fn spectral_map(h: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let h = check_hermitian_input(h)?;
    if h.nrows() == 1 {
        let l = h[(0, 0)].re;
        if !(l > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eig: l });
        }
        return Ok(CMatrix::from_element(1, 1, Complex64::from(f(l))));
    }
    let (values, u) = hermitian_eigen(&h);
    if !(values[0] > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eig: values[0] });
    }
    let scaled = CMatrix::from_fn(u.nrows(), u.ncols(), |r, c| u[(r, c)] * f(values[c]));
    Ok(hermitian_part(&(scaled * u.adjoint())))
}

/// Fractional power of a Hermitian positive definite matrix.
pub fn matrix_power(h: &CMatrix, p: f64) -> Result<CMatrix> {
    if p == 0.0 {
        // still reject non-PD input
        spectral_map(h, |_| 1.0)?;
        return Ok(CMatrix::identity(h.nrows(), h.ncols()));
    }
    if p == 1.0 {
        spectral_map(h, |l| l)?;
        return Ok(hermitian_part(h));
    }
    spectral_map(h, |l| l.powf(p))
}

/// Principal logarithm of a Hermitian positive definite matrix.
pub fn matrix_log(h: &CMatrix) -> Result<CMatrix> {
    spectral_map(h, f64::ln)
}

/// `log det H` for Hermitian positive definite `H`.
pub fn log_det(h: &CMatrix) -> Result<f64> {
    let h = check_hermitian_input(h)?;
    if h.nrows() == 1 {
        let l = h[(0, 0)].re;
        if !(l > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eig: l });
        }
        return Ok(l.ln());
    }
    match h.clone().cholesky() {
        Some(c) => Ok(c.l().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum()),
        None => Err(Error::NotPositiveDefinite {
            min_eig: min_eigenvalue(&h),
        }),
    }
}

/// Inverse of a square complex matrix, with a fast path for scalars.
pub(crate) fn inverse(m: &CMatrix) -> Result<CMatrix> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        if v.norm() == 0.0 {
            return Err(Error::Numerical("inverting a zero scalar".into()));
        }
        return Ok(CMatrix::from_element(1, 1, v.inv()));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("matrix is singular".into()))
}

/// Integer power of a square matrix by repeated multiplication.
pub(crate) fn integer_power(m: &CMatrix, p: u32) -> CMatrix {
    let mut out = CMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn real(rows: usize, cols: usize, v: &[f64]) -> CMatrix {
        to_complex(&RMatrix::from_row_slice(rows, cols, v))
    }

    #[test]
    fn grid_rejects_odd_and_tiny() {
        assert!(FrequencyGrid::new(3).is_err());
        assert!(FrequencyGrid::new(2).is_err());
        assert!(FrequencyGrid::new(7).is_err());
        let g = FrequencyGrid::new(8).unwrap();
        assert_eq!(g.theta(4), PI);
        assert_eq!(g.mirror(0), 0);
        assert_eq!(g.mirror(3), 5);
        let t: Vec<f64> = g.thetas().collect();
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert!(*t.last().unwrap() < 2.0 * PI);
    }

    #[test]
    fn integrate_constant_identity() {
        let g = FrequencyGrid::new(16).unwrap();
        let f = MatrixFunction::constant(g, &CMatrix::identity(2, 2));
        assert_abs_diff_eq!((integrate(&f) - CMatrix::identity(2, 2)).norm(), 0.0);
    }

    #[test]
    fn integrate_harmonic_vanishes() {
        let g = FrequencyGrid::new(64).unwrap();
        let f = MatrixFunction::from_fn(g, |t| {
            CMatrix::from_element(1, 1, Complex64::from_polar(1.0, t))
        })
        .unwrap();
        assert!(integrate(&f).norm() < 1e-15);
    }

    #[test]
    fn integrate_delay_bank_gram_is_identity() {
        // G(z) = [z^-1, z^-2]^T
        let g = FrequencyGrid::new(32).unwrap();
        let f = MatrixFunction::from_fn(g, |t| {
            let col = CMatrix::from_column_slice(
                2,
                1,
                &[Complex64::from_polar(1.0, -t), Complex64::from_polar(1.0, -2.0 * t)],
            );
            &col * col.adjoint()
        })
        .unwrap();
        assert!((integrate(&f) - CMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn trace_integral_examples() {
        let g = FrequencyGrid::new(8).unwrap();
        let f = MatrixFunction::constant(g, &CMatrix::identity(3, 3));
        assert_abs_diff_eq!(trace_integral(&f).unwrap(), 3.0, epsilon = 1e-15);
        let f = MatrixFunction::constant(g, &real(2, 2, &[2.0, 0.0, 0.0, 0.5]));
        assert_abs_diff_eq!(trace_integral(&f).unwrap(), 2.5, epsilon = 1e-15);

        let g = FrequencyGrid::new(512).unwrap();
        let ar1 = MatrixFunction::from_fn(g, |t| {
            let d = Complex64::new(1.0, 0.0) - 0.5 * Complex64::from_polar(1.0, -t);
            CMatrix::from_element(1, 1, c(1.0 / d.norm_sqr()))
        })
        .unwrap();
        assert_abs_diff_eq!(trace_integral(&ar1).unwrap(), 4.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn trace_integral_rejects_imaginary_residue() {
        let g = FrequencyGrid::new(8).unwrap();
        let f = MatrixFunction::constant(g, &CMatrix::from_element(1, 1, Complex64::new(1.0, 0.5)));
        assert!(matches!(trace_integral(&f), Err(Error::Numerical(_))));
    }

    #[test]
    fn matrix_function_rejects_shape_mismatch() {
        let g = FrequencyGrid::new(4).unwrap();
        let mut s = vec![CMatrix::identity(2, 2); 4];
        s[2] = CMatrix::identity(3, 3);
        assert!(matches!(MatrixFunction::new(g, s), Err(Error::Dimension(_))));
        assert!(MatrixFunction::new(g, vec![CMatrix::identity(2, 2); 3]).is_err());
    }

    #[test]
    fn matrix_power_examples() {
        let i = CMatrix::identity(2, 2);
        assert!((matrix_power(&i, -3.0).unwrap() - &i).norm() < 1e-15);
        let d = real(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let r = matrix_power(&d, 0.5).unwrap();
        assert!((r - real(2, 2, &[2.0, 0.0, 0.0, 3.0])).norm() < 1e-14);
        let h = real(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        // oracle: plain multiplication
        let sq = &h * &h;
        assert!((matrix_power(&h, 2.0).unwrap() - sq).norm() < 1e-13);
        assert!((matrix_power(&h, 0.0).unwrap() - &i).norm() == 0.0);
        assert!((matrix_power(&h, 1.0).unwrap() - &h).norm() == 0.0);
    }

    #[test]
    fn matrix_power_rejects_indefinite() {
        let h = real(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match matrix_power(&h, 0.5) {
            Err(Error::NotPositiveDefinite { min_eig }) => assert_abs_diff_eq!(min_eig, -1.0, epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matrix_log(&real(1, 1, &[0.0])).is_err());
        assert!(matrix_power(&real(2, 2, &[1.0, 2.0, 0.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn matrix_log_examples() {
        let i = CMatrix::identity(3, 3);
        assert!(matrix_log(&i).unwrap().norm() < 1e-15);
        let e = std::f64::consts::E;
        let d = real(2, 2, &[e, 0.0, 0.0, e * e]);
        assert!((matrix_log(&d).unwrap() - real(2, 2, &[1.0, 0.0, 0.0, 2.0])).norm() < 1e-14);
        // round trip through an independent exponential
        let h = real(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let back = matrix_log(&h).unwrap().exp();
        assert!((back - &h).norm() < 1e-10);
    }

    #[test]
    fn log_det_matches_eigenvalues() {
        let h = real(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let (vals, _) = hermitian_eigen(&h);
        let expect: f64 = vals.iter().map(|v| v.ln()).sum();
        assert_abs_diff_eq!(log_det(&h).unwrap(), expect, epsilon = 1e-12);
        let tr = matrix_log(&h).unwrap().trace().re;
        assert_abs_diff_eq!(tr, expect, epsilon = 1e-12);
    }

    #[test]
    fn eigen_range_two_by_two_closed_form() {
        let h = CMatrix::from_row_slice(
            2,
            2,
            &[c(3.0), Complex64::new(1.0, -2.0), Complex64::new(1.0, 2.0), c(-1.0)],
        );
        let (vals, _) = hermitian_eigen(&h);
        let (lo, hi) = eigen_range(&h);
        assert_abs_diff_eq!(lo, vals[0], epsilon = 1e-12);
        assert_abs_diff_eq!(hi, vals[1], epsilon = 1e-12);
    }

    #[test]
    fn spectral_density_validation() {
        let g = FrequencyGrid::new(8).unwrap();
        let bad = MatrixFunction::constant(g, &real(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(matches!(SpectralDensity::new(bad), Err(Error::NotPositiveDefinite { .. })));
        let skew = MatrixFunction::constant(g, &real(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!(matches!(SpectralDensity::new(skew), Err(Error::Numerical(_))));
        let ok = SpectralDensity::from_scalar_fn(g, |t| 2.0 + t.cos()).unwrap();
        assert_abs_diff_eq!(ok.k1(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ok.k2(), 3.0, epsilon = 1e-12);
        assert!(ok.is_real_symmetric(1e-12));
    }
}
