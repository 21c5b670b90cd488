// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-covariance estimation, singular value decomposition, rank selection
//! and construction of the editing projections.
//!
//! All math here runs in 64-bit. Given neutral samples `H` and paired samples
//! `H'` (both `d × n`, one demonstration per column), the cross-covariance is
//! `Ω = H H'ᵀ / n`. Its left singular vectors, ordered by singular value, are
//! the directions of neutral activations that covary most with the paired set.
//! The positive projection keeps the leading directions of `Ω⁺`; the negative
//! projection keeps the strict complement of the leading directions of `Ω⁻`.

use nalgebra::DMatrix;

use crate::config::validate_threshold;
use crate::error::{Result, SeaError};

/// Relative floor below which singular values count as zero in rank selection.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Magnitude below which an entry is skipped when fixing column signs.
const SIGN_EPS: f64 = 1e-10;

/// `U · diag(σ) · Vᵀ` of a square matrix, with σ non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// Share of squared singular mass per direction; sums to one.
    pub fn explained_variance_ratios(&self) -> Result<Vec<f64>> {
        explained_variance_ratios(&self.sigma)
    }
}

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SeaError::NonFinite(what.to_owned()))
    }
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.column_mean();
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// Empirical cross-covariance `(1/n) Σᵢ aᵢ bᵢᵀ` of paired columns.
///
/// With `center` set, each set's column mean is subtracted first. The result
/// has as many rows as `a` and as many columns as `b` has rows.
pub fn cross_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>, center: bool) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(SeaError::Shape(format!(
            "cross-covariance needs paired samples: {} vs {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let n = a.ncols();
    if n == 0 {
        return Err(SeaError::Invalid("cross-covariance of zero samples".into()));
    }
    ensure_finite(a, "cross-covariance input")?;
    ensure_finite(b, "cross-covariance input")?;
    let omega = if center {
        center_columns(a) * center_columns(b).transpose()
    } else {
        a * b.transpose()
    };
    Ok(omega / n as f64)
}

/// Full SVD of a square matrix with singular values in non-increasing order.
///
/// Columns with equal singular values keep the order the backend produced
/// them in; each column of `U` is signed so its first entry of magnitude above
/// `1e-10` is positive, and the matching `V` column is flipped with it.
pub fn svd(a: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    if a.nrows() != a.ncols() {
        return Err(SeaError::Shape(format!(
            "svd expects a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "svd input")?;
    let d = a.nrows();
    if d == 0 {
        return Err(SeaError::Shape("svd of an empty matrix".into()));
    }

    let raw = a.clone().svd_unordered(true, true);
    let u_raw = raw.u.ok_or_else(|| SeaError::Numerical("svd did not produce U".into()))?;
    let vt_raw = raw.v_t.ok_or_else(|| SeaError::Numerical("svd did not produce V".into()))?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| raw.singular_values[j].total_cmp(&raw.singular_values[i]));

    let mut u = DMatrix::zeros(d, d);
    let mut v = DMatrix::zeros(d, d);
    let mut sigma = Vec::with_capacity(d);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_raw.column(src).into_owned();
        let mut vc = vt_raw.row(src).transpose();
        if let Some(first) = uc.iter().find(|x| x.abs() > SIGN_EPS) {
            if *first < 0.0 {
                uc.neg_mut();
                vc.neg_mut();
            }
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        sigma.push(raw.singular_values[src].max(0.0));
    }
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(SeaError::Numerical("svd produced non-finite singular values".into()));
    }
    Ok(SpectralDecomposition { u, sigma, v })
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    if sigma.is_empty() {
        return Err(SeaError::Invalid("empty singular-value list".into()));
    }
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(SeaError::Invalid("singular values must be finite and non-negative".into()));
    }
    if sigma.windows(2).any(|w| w[1] > w[0]) {
        return Err(SeaError::Invalid("singular values must be non-increasing".into()));
    }
    Ok(())
}

/// Smallest `k` whose leading `k` squared singular values carry at least a
/// `threshold` share of the total squared mass.
///
/// Values below `SIGMA_FLOOR · σ₁` are treated as zero.
pub fn select_rank(sigma: &[f64], threshold: f64) -> Result<usize> {
    validate_threshold(threshold)?;
    check_sigma(sigma)?;
    let top = sigma[0];
    if top == 0.0 {
        return Err(SeaError::DegenerateCovariance);
    }
    let floor = SIGMA_FLOOR * top;
    let squares: Vec<f64> = sigma.iter().take_while(|&&s| s >= floor).map(|s| s * s).collect();
    let total: f64 = squares.iter().sum();
    let mut cumulative = 0.0;
    for (i, sq) in squares.iter().enumerate() {
        cumulative += sq;
        if cumulative / total >= threshold {
            return Ok(i + 1);
        }
    }
    Ok(squares.len())
}

/// `σᵢ² / Σⱼ σⱼ²` for every singular value.
pub fn explained_variance_ratios(sigma: &[f64]) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(SeaError::DegenerateCovariance);
    }
    Ok(sigma.iter().map(|s| s * s / total).collect())
}

/// Editing projections of one layer in 64-bit precision.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    /// `d × k⁺`: leading left singular vectors of the positive covariance.
    pub keep_positive: DMatrix<f64>,
    /// `d × (d − k⁻)`: left singular vectors of the negative covariance
    /// outside its leading `k⁻`.
    pub keep_negative: DMatrix<f64>,
    pub k_plus: usize,
    pub k_minus: usize,
    pub sigma_plus: Vec<f64>,
    pub sigma_minus: Vec<f64>,
}

/// Builds both projections from the positive and negative cross-covariances,
/// selecting `k⁺` and `k⁻` with the same threshold.
pub fn build_projections(
    omega_plus: &DMatrix<f64>,
    omega_minus: &DMatrix<f64>,
    threshold: f64,
) -> Result<ProjectionFit> {
    if omega_plus.shape() != omega_minus.shape() {
        return Err(SeaError::Shape(format!(
            "covariances differ in shape: {:?} vs {:?}",
            omega_plus.shape(),
            omega_minus.shape()
        )));
    }
    let plus = svd(omega_plus)?;
    let minus = svd(omega_minus)?;
    let d = plus.sigma.len();
    let k_plus = select_rank(&plus.sigma, threshold)?;
    let k_minus = select_rank(&minus.sigma, threshold)?;
    Ok(ProjectionFit {
        keep_positive: plus.u.columns(0, k_plus).into_owned(),
        keep_negative: minus.u.columns(k_minus, d - k_minus).into_owned(),
        k_plus,
        k_minus,
        sigma_plus: plus.sigma,
        sigma_minus: minus.sigma,
    })
}

/// One-hot label matrix (`2 × 2n`) for `n` positive columns followed by `n`
/// negative columns.
pub fn label_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2 * n, |r, c| if (c < n) == (r == 0) { 1.0 } else { 0.0 })
}

/// Sum of singular values of the cross-covariance between mixed
/// positive/negative activations (`d × 2n`) and their one-hot labels
/// (`2 × 2n`), uncentered.
pub fn signature(mixed: &DMatrix<f64>, labels: &DMatrix<f64>) -> Result<f64> {
    if labels.nrows() != 2 {
        return Err(SeaError::Shape(format!(
            "label matrix must have 2 rows, got {}",
            labels.nrows()
        )));
    }
    for (j, col) in labels.column_iter().enumerate() {
        let ones = col.iter().filter(|&&v| v == 1.0).count();
        let zeros = col.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != 1 {
            return Err(SeaError::Invalid(format!("label column {j} is not one-hot")));
        }
    }
    let omega = cross_covariance(mixed, labels, false)?;
    Ok(omega.singular_values().iter().sum())
}

/// Raw and max-normalized signatures over a set of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureResult {
    pub layer_ids: Vec<usize>,
    pub raw: Vec<f64>,
    /// `None` when every raw signature is zero.
    pub normalized: Option<Vec<f64>>,
    /// Shape of the label matrix used: `(2, 2n)`.
    pub label_shape: (usize, usize),
}

impl SignatureResult {
    pub fn from_raw(layer_ids: Vec<usize>, raw: Vec<f64>, n: usize) -> Self {
        let max = raw.iter().copied().fold(0.0, f64::max);
        let normalized = (max > 0.0).then(|| raw.iter().map(|r| r / max).collect());
        Self {
            layer_ids,
            raw,
            normalized,
            label_shape: (2, 2 * n),
        }
    }

    /// Layer with the largest signature, if any is positive.
    pub fn peak_layer(&self) -> Option<usize> {
        self.normalized.as_ref()?;
        self.raw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.layer_ids[i])
    }
}
