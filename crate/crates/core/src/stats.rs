//! Numerical primitives shared by the rest of the crate: Gaussian log-densities,
//! Mahalanobis distances, a trimmed robust location/scatter estimator and
//! trailing moving averages.
//!
//! Everything that touches a covariance goes through a Cholesky factor; no
//! explicit inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative ridge added to a covariance whose first factorization failed.
pub const RIDGE_EPS: f64 = 1e-8;

/// Fraction of rows retained by [`robust_location_scatter`].
pub const TRIM_FRACTION: f64 = 0.75;
const ROBUST_MAX_ITER: usize = 50;
/// χ²_p quantile bounding the inliers of the reweighting step.
pub const REWEIGHT_QUANTILE: f64 = 0.975;

/// Lower Cholesky factor of an SPD matrix together with its log-determinant.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl CholeskyFactor {
    /// Factorizes `cov` without any regularization.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::DimensionMismatch {
                expected: cov.nrows(),
                actual: cov.ncols(),
            });
        }
        let chol = Cholesky::<f64, Dyn>::new(cov.clone())
            .ok_or_else(|| Error::EstimationFailure("covariance is not positive definite".into()))?;
        Ok(Self::from_lower(chol.unpack()))
    }

    /// Factorizes `cov`; if that fails, retries once after adding
    /// `RIDGE_EPS * trace(cov) / p` to the diagonal.
    pub fn with_ridge(cov: &DMatrix<f64>) -> Result<Self> {
        match Self::new(cov) {
            Ok(f) => Ok(f),
            Err(Error::EstimationFailure(_)) => {
                let p = cov.nrows();
                let ridge = RIDGE_EPS * cov.trace() / p as f64;
                if !(ridge > 0.0 && ridge.is_finite()) {
                    return Err(Error::EstimationFailure("covariance has non-positive trace".into()));
                }
                let mut reg = cov.clone();
                for i in 0..p {
                    reg[(i, i)] += ridge;
                }
                Self::new(&reg)
            }
            Err(e) => Err(e),
        }
    }

    fn from_lower(lower: DMatrix<f64>) -> Self {
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Self { lower, log_det }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// log |Σ|.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `L w = x` in place by forward substitution.
    pub fn whiten_in_place(&self, x: &mut [f64]) {
        let p = self.dim();
        debug_assert_eq!(x.len(), p);
        let l = &self.lower;
        for i in 0..p {
            let mut s = x[i];
            for j in 0..i {
                s -= l[(i, j)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
    }

    /// Whitens every column of a `p × n` matrix.
    pub fn whiten_columns(&self, cols: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(cols)
            .expect("Cholesky factor has a non-zero diagonal")
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` via one triangular solve.
    pub fn mahalanobis_sq(&self, x: &[f64], mean: &[f64]) -> f64 {
        let mut d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        self.whiten_in_place(&mut d);
        d.iter().map(|v| v * v).sum()
    }

    /// Returns `μ + L z`.
    pub fn color(&self, mean: &[f64], z: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let l = &self.lower;
        (0..p)
            .map(|i| mean[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
            .collect()
    }
}

/// Mean and covariance of a p-variate Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: covariance.nrows(),
            });
        }
        check_symmetric(&covariance)?;
        let factor = CholeskyFactor::new(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }
}

/// Fails unless `m` is symmetric within a relative tolerance of 1e-12.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::EstimationFailure(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn check_dim(x: &DVector<f64>, g: &GaussianParams) -> Result<()> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// log φ(x; μ, Σ).
pub fn gaussian_logpdf(x: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    check_dim(x, g)?;
    let q = g.factor.mahalanobis_sq(x.as_slice(), g.mean.as_slice());
    Ok(-0.5 * (g.dim() as f64 * LN_2PI + g.factor.log_det() + q))
}

/// (x − μ)ᵀ Σ⁻¹ (x − μ).
pub fn mahalanobis_sq(x: &DVector<f64>, g: &GaussianParams) -> Result<f64> {
    check_dim(x, g)?;
    Ok(g.factor.mahalanobis_sq(x.as_slice(), g.mean.as_slice()))
}

/// Output of [`robust_location_scatter`].
#[derive(Debug, Clone)]
pub struct RobustEstimate {
    pub location: DVector<f64>,
    pub scatter: DMatrix<f64>,
    /// 1 for rows in the final retained subset, 0 otherwise.
    pub weights: Vec<f64>,
    pub iterations: usize,
}

/// Trimmed location/scatter estimate resistant to a minority of outlying rows.
///
/// Starts from coordinatewise medians and a diagonal scatter of squared
/// (normal-consistent) MADs, then repeatedly keeps the ⌈0.75·n⌉ rows with the
/// smallest Mahalanobis distance and re-estimates mean and covariance from
/// them, until the retained set stops changing or 50 iterations pass. The
/// final scatter is multiplied by the normal consistency factor for 75%
/// trimming.
pub fn robust_location_scatter(x: &DMatrix<f64>) -> Result<RobustEstimate> {
    let (n, p) = x.shape();
    if p == 0 || n <= p + 1 {
        return Err(Error::invalid(format!(
            "robust estimation needs n > p + 1 rows (n={n}, p={p})"
        )));
    }
    let h = ((TRIM_FRACTION * n as f64).ceil() as usize).clamp(p + 1, n);

    let mut location = DVector::zeros(p);
    let mut scatter = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut col: Vec<f64> = x.column(j).iter().copied().collect();
        let med = median(&mut col);
        let mut dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
        let mut scale = 1.482_602_218_505_602 * median(&mut dev);
        if scale <= 0.0 {
            let mean = col.iter().sum::<f64>() / n as f64;
            scale = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        }
        if !(scale > 0.0) {
            return Err(Error::EstimationFailure(format!("coordinate {j} has zero scatter")));
        }
        location[j] = med;
        scatter[(j, j)] = scale * scale;
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    for _ in 0..ROBUST_MAX_ITER {
        iterations += 1;
        let factor = CholeskyFactor::new(&scatter)
            .map_err(|_| Error::EstimationFailure("retained subset has a singular scatter".into()))?;
        let mut dist: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (factor.mahalanobis_sq(r, location.as_slice()), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut next: Vec<usize> = dist[..h].iter().map(|&(_, i)| i).collect();
        next.sort_unstable();
        if next == kept {
            break;
        }
        kept = next;
        let (m, s) = subset_moments(&rows, &kept, p);
        location = m;
        scatter = s;
    }

    scatter *= consistency_factor(p, TRIM_FRACTION);

    // One reweighting pass: keep every row inside the REWEIGHT_QUANTILE
    // ellipsoid of the trimmed fit and re-estimate from those rows.
    let factor = CholeskyFactor::new(&scatter)
        .map_err(|_| Error::EstimationFailure("robust scatter is rank deficient".into()))?;
    let cutoff = ChiSquared::new(p as f64).expect("p > 0").inverse_cdf(REWEIGHT_QUANTILE);
    let inliers: Vec<usize> = (0..n)
        .filter(|&i| factor.mahalanobis_sq(&rows[i], location.as_slice()) <= cutoff)
        .collect();
    if inliers.len() > p + 1 {
        let (m, s) = subset_moments(&rows, &inliers, p);
        let s = s * consistency_factor(p, REWEIGHT_QUANTILE);
        if CholeskyFactor::new(&s).is_ok() {
            location = m;
            scatter = s;
            kept = inliers;
        }
    }
    CholeskyFactor::new(&scatter).map_err(|_| Error::EstimationFailure("robust scatter is rank deficient".into()))?;

    let mut weights = vec![0.0; n];
    for &i in &kept {
        weights[i] = 1.0;
    }
    Ok(RobustEstimate {
        location,
        scatter,
        weights,
        iterations,
    })
}

/// Rescales the scatter of the rows inside the `q`-quantile ellipsoid of a
/// Gaussian so that it is unbiased for the full covariance.
fn consistency_factor(p: usize, q: f64) -> f64 {
    let cut = ChiSquared::new(p as f64).expect("p > 0").inverse_cdf(q);
    q / ChiSquared::new(p as f64 + 2.0).expect("p > 0").cdf(cut)
}

fn subset_moments(rows: &[Vec<f64>], idx: &[usize], p: usize) -> (DVector<f64>, DMatrix<f64>) {
    let h = idx.len() as f64;
    let mut mean = DVector::zeros(p);
    for &i in idx {
        for j in 0..p {
            mean[j] += rows[i][j];
        }
    }
    mean /= h;
    let mut cov = DMatrix::zeros(p, p);
    for &i in idx {
        for a in 0..p {
            let da = rows[i][a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (rows[i][b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in 0..=a {
            let v = cov[(a, b)] / h;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trailing moving average: row t is the mean of rows `max(0, t−k+1)..=t`.
pub fn moving_average(x: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "moving-average window must satisfy 1 <= k <= T (k={k}, T={n})"
        )));
    }
    let mut out = DMatrix::zeros(n, p);
    for t in 0..n {
        let start = (t + 1).saturating_sub(k);
        let count = (t - start + 1) as f64;
        for j in 0..p {
            let mut s = 0.0;
            for r in start..=t {
                s += x[(r, j)];
            }
            out[(t, j)] = s / count;
        }
    }
    Ok(out)
}
