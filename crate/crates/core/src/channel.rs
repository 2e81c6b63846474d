//! Narrowband channel gains from each unit cell to a single-antenna receiver.
//!
//! Fading gains follow `h = psi_t^{1/2} g` with `g` i.i.d. zero-mean,
//! unit-variance circularly symmetric complex Gaussian (`psi_r = 1` for one
//! receive antenna), so `E[h h^H] = psi_t`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::error::{invalid, Error, Result};
use crate::seed::child_rng;

/// Transmit-side correlation matrix `psi_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    Identity,
    /// `psi_t[i][j] = rho^|i-j|`.
    Exponential { rho: f64 },
    /// Explicit real symmetric matrix with unit diagonal.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ChannelKind {
    /// Free-space steering gains towards `theta_deg`, `h_n = exp(j k0 n p cos theta)`.
    LineOfSight { theta_deg: f64 },
    RayleighIid,
    DoublyCorrelated { psi_t: Correlation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    pub gains: Vec<Complex64>,
    pub seed: u64,
}

impl Correlation {
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            Self::Identity => Ok(DMatrix::identity(n, n)),
            Self::Exponential { rho } => {
                if !(-1.0..=1.0).contains(rho) {
                    return Err(invalid(format!("exponential correlation rho={rho} outside [-1, 1]")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rho.powi(i.abs_diff(j) as i32)))
            }
            Self::Matrix(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch(format!("correlation matrix must be {n}x{n}")));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

/// Symmetric PSD square root. Returns `None` for a diagonal input with unit
/// entries so the identity path consumes the generator exactly like the i.i.d. kind.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch("correlation matrix must be square".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(invalid("correlation matrix is not symmetric"));
            }
        }
        if (m[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(invalid("correlation matrix needs a unit diagonal (unit average power)"));
        }
    }
    let is_identity = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0));
    if is_identity {
        return Ok(None);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(Some(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

fn gaussian_vector(rng: &mut impl Rng, n: usize) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

/// Draws one channel for `config.n_cells` cells from the given seed.
pub fn generate_channel(kind: &ChannelKind, config: &ArrayConfig, seed: u64) -> Result<ChannelRealization> {
    let n = config.n_cells;
    let gains = match kind {
        ChannelKind::LineOfSight { theta_deg } => {
            let psi = config.wavenumber() * config.cell_period_m * theta_deg.to_radians().cos();
            (0..n).map(|k| Complex64::from_polar(1.0, k as f64 * psi)).collect()
        }
        ChannelKind::RayleighIid => gaussian_vector(&mut child_rng(seed, "channel"), n),
        ChannelKind::DoublyCorrelated { psi_t } => {
            let root = psd_sqrt(&psi_t.matrix(n)?)?;
            let g = gaussian_vector(&mut child_rng(seed, "channel"), n);
            match root {
                None => g,
                Some(r) => (0..n)
                    .map(|i| (0..n).map(|j| g[j] * r[(i, j)]).sum())
                    .collect(),
            }
        }
    };
    Ok(ChannelRealization { kind: kind.clone(), gains, seed })
}

/// `count` independent realizations, realization `i` seeded by label `"<role>-<i>"`.
pub fn generate_ensemble(
    kind: &ChannelKind,
    config: &ArrayConfig,
    master: u64,
    role: &str,
    count: usize,
) -> Result<Vec<ChannelRealization>> {
    (0..count)
        .map(|i| generate_channel(kind, config, crate::seed::derive_seed(master, &format!("channel/{role}-{i}"))))
        .collect()
}
