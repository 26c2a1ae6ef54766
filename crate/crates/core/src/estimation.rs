//! Sample covariances, the windowed (Blackman-Tukey) correlogram, and the
//! filter-output covariance estimate computed from it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filterbank::{output_covariance, StateSpaceFilter};
use crate::freqgrid::{
    eigen_range, hermitian_part, to_complex, CMatrix, FrequencyGrid, MatrixFunction, RMatrix,
    SpectralDensity,
};

/// Relative bound below which `Σ̂` counts as singular.
const SIGMA_PD_TOL: f64 = 1e-10;

/// `N × m` record, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: RMatrix,
}

impl TimeSeries {
    pub fn new(data: RMatrix) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() == 0 {
            return Err(Error::Parameter(format!(
                "a time series needs N >= 2 samples and m >= 1 channels, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(((r, c), _)) = data
            .iter()
            .enumerate()
            .map(|(i, v)| ((i % data.nrows(), i / data.nrows()), v))
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::Parameter(format!(
                "non-finite sample at row {r}, column {c}"
            )));
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(crate::filterbank::matrix_from_rows(rows)?)
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(RMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &RMatrix {
        &self.data
    }

    /// Subtracts the column means.
    pub fn demean(&self) -> Self {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        Self { data }
    }
}

/// Biased covariance lags `R̂_0, …, R̂_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSequence {
    lags: Vec<RMatrix>,
}

impl CovarianceSequence {
    /// Wraps known lags; `R̂_0` must be symmetric positive semidefinite.
    pub fn from_lags(lags: Vec<RMatrix>) -> Result<Self> {
        let r0 = lags
            .first()
            .ok_or_else(|| Error::Parameter("at least R_0 is required".into()))?;
        let m = r0.nrows();
        if lags.iter().any(|l| l.shape() != (m, m)) {
            return Err(Error::Dimension("covariance lags must all be m x m".into()));
        }
        let scale = 1.0 + r0.norm();
        if (r0 - r0.transpose()).norm() > 1e-12 * scale {
            return Err(Error::Parameter("R_0 is not symmetric".into()));
        }
        let (lo, _) = eigen_range(&to_complex(r0));
        if lo < -1e-12 * scale {
            return Err(Error::NotPositiveDefinite { min_eig: lo });
        }
        Ok(Self { lags })
    }

    pub fn scalar(lags: &[f64]) -> Result<Self> {
        Self::from_lags(lags.iter().map(|&r| RMatrix::from_element(1, 1, r)).collect())
    }

    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.lags[0].nrows()
    }

    pub fn lag(&self, k: usize) -> &RMatrix {
        &self.lags[k]
    }

    pub fn lags(&self) -> &[RMatrix] {
        &self.lags
    }

    /// Scalar lags as plain numbers.
    pub fn scalar_lags(&self) -> Option<Vec<f64>> {
        (self.channels() == 1).then(|| self.lags.iter().map(|l| l[(0, 0)]).collect())
    }

    /// Block Toeplitz matrix with `(i, k)` block `R_{k-i}` (and `R_{i-k}ᵀ` below
    /// the diagonal) for `n` blocks.
    pub fn toeplitz(&self, n: usize) -> Result<RMatrix> {
        if n == 0 || n - 1 > self.max_lag() {
            return Err(Error::Parameter(format!(
                "Toeplitz of order {n} needs lags up to {}",
                n.saturating_sub(1)
            )));
        }
        let m = self.channels();
        let mut out = RMatrix::zeros(n * m, n * m);
        for i in 0..n {
            for k in 0..n {
                let block = if k >= i {
                    self.lags[k - i].clone()
                } else {
                    self.lags[i - k].transpose()
                };
                out.view_mut((i * m, k * m), (m, m)).copy_from(&block);
            }
        }
        Ok(out)
    }
}

/// `R̂_k = (1/N) Σ_{t=1}^{N-k} y(t+k) y(t)ᵀ` for `k = 0..=max_lag`.
pub fn sample_covariances(y: &TimeSeries, max_lag: usize) -> Result<CovarianceSequence> {
    let n = y.len();
    if max_lag >= n {
        return Err(Error::Parameter(format!(
            "max lag {max_lag} must be below the record length {n}"
        )));
    }
    let m = y.channels();
    let data = y.data();
    let lags = (0..=max_lag)
        .map(|k| {
            let mut r = RMatrix::zeros(m, m);
            for t in 0..n - k {
                for i in 0..m {
                    let lead = data[(t + k, i)];
                    for j in 0..m {
                        r[(i, j)] += lead * data[(t, j)];
                    }
                }
            }
            r / n as f64
        })
        .collect();
    Ok(CovarianceSequence { lags })
}

/// Lag window of the correlogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Rectangular,
    Bartlett,
}

impl Window {
    pub fn weight(self, lag: usize, max_lag: usize) -> f64 {
        match self {
            Window::Rectangular => 1.0,
            Window::Bartlett => 1.0 - lag as f64 / (max_lag as f64 + 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Bartlett => "bartlett",
        }
    }
}

/// Default Blackman-Tukey truncation `⌊√N⌋`, capped at `N - 1`.
pub fn default_max_lag(record_length: usize) -> usize {
    ((record_length as f64).sqrt().floor() as usize).min(record_length.saturating_sub(1))
}

/// Windowed correlogram `Ω` on a grid. Not yet known to be positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlogram {
    function: MatrixFunction,
    window: Window,
    max_lag: usize,
}

/// Minimum eigenvalue of a Hermitian matrix function and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub min_eig: f64,
    pub theta: f64,
}

impl Correlogram {
    pub fn function(&self) -> &MatrixFunction {
        &self.function
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.function.grid()
    }

    pub fn check_positive(&self) -> Result<PositivityReport> {
        check_positive(&self.function)
    }

    /// The correlogram as a validated spectral density.
    pub fn density(&self) -> Result<SpectralDensity> {
        self.check_positive()?;
        SpectralDensity::new(self.function.clone())
    }
}

/// `Ω(θ) = Σ_{|ℓ|≤M} w_ℓ R̂_ℓ e^{-jℓθ}` with `R̂_{-ℓ} = R̂_ℓᵀ`.
pub fn correlogram(
    lags: &CovarianceSequence,
    window: Window,
    grid: FrequencyGrid,
) -> Result<Correlogram> {
    let max_lag = lags.max_lag();
    let weighted: Vec<CMatrix> = lags
        .lags()
        .iter()
        .enumerate()
        .map(|(l, r)| to_complex(r) * Complex64::from(window.weight(l, max_lag)))
        .collect();
    let function = MatrixFunction::from_fn(grid, |theta| {
        let mut acc = weighted[0].clone();
        for (l, r) in weighted.iter().enumerate().skip(1) {
            let phase = Complex64::from_polar(1.0, -(l as f64) * theta);
            acc += r * phase + r.transpose() * phase.conj();
        }
        hermitian_part(&acc)
    })?;
    Ok(Correlogram {
        function,
        window,
        max_lag,
    })
}

/// Scans the grid for the smallest eigenvalue; errors unless it is positive.
pub fn check_positive(f: &MatrixFunction) -> Result<PositivityReport> {
    if f.rows() != f.cols() {
        return Err(Error::Dimension("positivity check needs square samples".into()));
    }
    let grid = f.grid();
    let mut report = PositivityReport {
        min_eig: f64::INFINITY,
        theta: 0.0,
    };
    for (k, s) in f.samples().iter().enumerate() {
        let lo = eigen_range(&hermitian_part(s)).0;
        if lo < report.min_eig {
            report = PositivityReport {
                min_eig: lo,
                theta: grid.theta(k),
            };
        }
    }
    if !(report.min_eig > 0.0) {
        return Err(Error::NonPositiveCorrelogram {
            min_eig: report.min_eig,
            theta: report.theta,
        });
    }
    Ok(report)
}

/// Output-covariance estimate `Σ̂` together with how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    sigma: RMatrix,
    window: Option<Window>,
    max_lag: Option<usize>,
    grid_points: Option<usize>,
    min_eig: f64,
}

impl CovarianceEstimate {
    /// Wraps an externally supplied `Σ̂`; it must be symmetric and PSD.
    pub fn from_matrix(sigma: RMatrix) -> Result<Self> {
        Self::build(sigma, None, None, None)
    }

    fn build(
        sigma: RMatrix,
        window: Option<Window>,
        max_lag: Option<usize>,
        grid_points: Option<usize>,
    ) -> Result<Self> {
        if !sigma.is_square() || sigma.is_empty() {
            return Err(Error::Dimension("covariance estimate must be square".into()));
        }
        let scale = 1.0 + sigma.norm();
        if (&sigma - sigma.transpose()).norm() > 1e-12 * scale {
            return Err(Error::Parameter("covariance estimate is not symmetric".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let min_eig = eigen_range(&to_complex(&sigma)).0;
        if min_eig < -SIGMA_PD_TOL * sigma.trace().abs() {
            return Err(Error::NotPositiveDefinite { min_eig });
        }
        Ok(Self {
            sigma,
            window,
            max_lag,
            grid_points,
            min_eig,
        })
    }

    pub fn matrix(&self) -> &RMatrix {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn window(&self) -> Option<Window> {
        self.window
    }

    pub fn max_lag(&self) -> Option<usize> {
        self.max_lag
    }

    pub fn grid_points(&self) -> Option<usize> {
        self.grid_points
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    /// Minimum eigenvalue above `1e-10 · tr Σ̂`.
    pub fn is_positive_definite(&self) -> bool {
        self.min_eig > SIGMA_PD_TOL * self.sigma.trace()
    }
}

/// `Σ̂ = ∫ G Ω G*`, so that the correlogram condition holds by construction.
pub fn sigma_hat(filter: &StateSpaceFilter, omega: &Correlogram) -> Result<CovarianceEstimate> {
    let density = omega.density()?;
    let sigma = output_covariance(filter, &density)?;
    CovarianceEstimate::build(
        sigma,
        Some(omega.window()),
        Some(omega.max_lag()),
        Some(omega.grid().len()),
    )
}
