//! File formats written and read by the commands.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specdual::{CMatrix, FrequencyGrid, MatrixFunction, RMatrix, SpectralDensity};

use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;
/// Significant digits of every number written to disk.
pub const SIGNIFICANT_DIGITS: usize = 12;
/// Quantization step of the spectrum hash, relative to the largest entry.
pub const HASH_RESOLUTION: f64 = 1e-8;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn format_sig(x: f64) -> String {
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
}

pub fn rounded_matrix(m: &RMatrix) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().copied().map(round_sig).collect())
        .collect()
}

/// Row-major `re, im` pairs of one sample.
fn interleave(s: &CMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * s.len());
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            out.push(s[(i, j)].re);
            out.push(s[(i, j)].im);
        }
    }
    out
}

fn samples(f: &MatrixFunction) -> Vec<Vec<f64>> {
    f.samples()
        .iter()
        .map(|s| interleave(s).into_iter().map(round_sig).collect())
        .collect()
}

/// `theta,re_11,im_11,re_12,...` in row-major order.
pub fn csv_header(dim: usize) -> Vec<String> {
    let mut h = vec!["theta".to_string()];
    for i in 1..=dim {
        for j in 1..=dim {
            h.push(format!("re_{i}{j}"));
            h.push(format!("im_{i}{j}"));
        }
    }
    h
}

pub fn write_spectrum_csv(path: &Path, density: &MatrixFunction) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(csv_header(density.rows()))
        .map_err(|e| csv_error(path, e))?;
    let grid = density.grid();
    for (k, s) in density.samples().iter().enumerate() {
        let mut row = vec![format_sig(grid.theta(k))];
        row.extend(interleave(s).into_iter().map(format_sig));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// SHA-256 of the spectrum quantized to [`HASH_RESOLUTION`] of its largest
/// entry, so solutions equal to within solver tolerance hash alike.
pub fn spectrum_hash(density: &SpectralDensity) -> String {
    let scale = density
        .samples()
        .iter()
        .flat_map(|s| s.iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    let mut h = Sha256::new();
    h.update((density.dim() as u64).to_le_bytes());
    h.update((density.grid().len() as u64).to_le_bytes());
    for s in density.samples() {
        for v in interleave(s) {
            let q = if scale > 0.0 {
                (v / scale / HASH_RESOLUTION).round() as i64
            } else {
                0
            };
            h.update(q.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Spectra on the grid as stored in `spectrum.json` and `correlogram.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumFile {
    pub format_version: u32,
    pub kind: String,
    pub dim: usize,
    pub grid_points: usize,
    pub theta: Vec<f64>,
    /// Row-major `re, im` pairs of the estimate at each grid point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
    /// The correlogram in the same layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub dual_value: f64,
    pub moment_residual: f64,
    pub gradient_norm: f64,
    pub phi_hash: String,
}

/// Which spectrum of a [`SpectrumFile`] to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Phi,
    Omega,
}

impl SpectrumFile {
    pub fn new(kind: &str, grid: FrequencyGrid, dim: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            dim,
            grid_points: grid.len(),
            theta: grid.thetas().map(round_sig).collect(),
            phi: None,
            omega: None,
            theta_hat: None,
            diagnostics: None,
        }
    }

    pub fn with_phi(mut self, phi: &SpectralDensity) -> Self {
        self.phi = Some(samples(phi.function()));
        self
    }

    pub fn with_omega(mut self, omega: &MatrixFunction) -> Self {
        self.omega = Some(samples(omega));
        self
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if file.format_version != FORMAT_VERSION {
            return Err(CliError::Input(format!(
                "{}: unsupported format version {}",
                path.display(),
                file.format_version
            )));
        }
        Ok(file)
    }

    /// The requested spectrum; `None` takes `phi` when present, else `omega`.
    pub fn density(&self, field: Option<Field>) -> Result<SpectralDensity, CliError> {
        let (name, rows) = match field {
            Some(Field::Phi) => ("phi", self.phi.as_ref()),
            Some(Field::Omega) => ("omega", self.omega.as_ref()),
            None => match (&self.phi, &self.omega) {
                (Some(p), _) => ("phi", Some(p)),
                (None, o) => ("omega", o.as_ref()),
            },
        };
        let rows = rows.ok_or_else(|| CliError::Input(format!("file has no '{name}' samples")))?;
        let grid = FrequencyGrid::new(self.grid_points)?;
        if rows.len() != grid.len() {
            return Err(CliError::Input(format!(
                "'{name}' has {} samples for a {}-point grid",
                rows.len(),
                grid.len()
            )));
        }
        let d = self.dim;
        let mats = rows
            .iter()
            .map(|r| {
                if r.len() != 2 * d * d {
                    return Err(CliError::Input(format!(
                        "'{name}' sample has {} values, expected {}",
                        r.len(),
                        2 * d * d
                    )));
                }
                Ok(CMatrix::from_fn(d, d, |i, j| {
                    let k = 2 * (i * d + j);
                    num_complex::Complex64::new(r[k], r[k + 1])
                }))
            })
            .collect::<Result<Vec<_>, _>>()?;
        // rounding to the stored precision can leave a tiny skew part
        let mats = mats
            .iter()
            .map(specdual::freqgrid::hermitian_part)
            .collect();
        Ok(SpectralDensity::new(MatrixFunction::new(grid, mats)?)?)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    let mut f = std::fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(-2.0e-20 / 3.0), -6.66666666667e-21);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(format_sig(1.5), "1.50000000000e0");
    }

    #[test]
    fn header_is_row_major() {
        assert_eq!(csv_header(1), ["theta", "re_11", "im_11"]);
        assert_eq!(
            csv_header(2),
            ["theta", "re_11", "im_11", "re_12", "im_12", "re_21", "im_21", "re_22", "im_22"]
        );
    }

    #[test]
    fn hash_ignores_solver_noise() {
        let g = FrequencyGrid::new(64).unwrap();
        let a = SpectralDensity::from_scalar_fn(g, |t| 2.0 + t.cos()).unwrap();
        let b = SpectralDensity::from_scalar_fn(g, |t| 2.0 + t.cos() + 1e-13 * t.sin()).unwrap();
        let c = SpectralDensity::from_scalar_fn(g, |t| 2.0 + 1.001 * t.cos()).unwrap();
        assert_eq!(spectrum_hash(&a), spectrum_hash(&b));
        assert_ne!(spectrum_hash(&a), spectrum_hash(&c));
        assert_eq!(spectrum_hash(&a).len(), 64);
    }

    #[test]
    fn spectrum_file_round_trip() {
        let g = FrequencyGrid::new(16).unwrap();
        let phi = SpectralDensity::from_scalar_fn(g, |t| 1.5 + 0.5 * t.cos()).unwrap();
        let file = SpectrumFile::new("estimate", g, 1).with_phi(&phi);
        let text = serde_json::to_string(&file).unwrap();
        let back: SpectrumFile = serde_json::from_str(&text).unwrap();
        let d = back.density(None).unwrap();
        for (x, y) in d.samples().iter().zip(phi.samples()) {
            assert!((x - y).norm() < 1e-11);
        }
        assert!(back.density(Some(Field::Omega)).is_err());
    }
}
