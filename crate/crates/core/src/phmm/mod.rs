//! Partially hidden Markov model with Gaussian emissions and one covariance
//! matrix shared by all states.
//!
//! States are indexed from 0 inside the library; state 0 is the in-control
//! state. File formats and the decision log use 1-based state numbers.

mod em;
mod forward_backward;
mod select;

pub use em::{em_step, fit, FitOptions, FitResult, Prepared};
pub use forward_backward::{
    forward_backward, forward_backward_from_log_emissions, log_emissions, predict_state, PosteriorSummary,
};
pub use select::{aic, argmin_aic, parameter_count, select_model, CandidateFit, Selection};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{check_symmetric, CholeskyFactor};

const STOCHASTIC_TOL: f64 = 1e-10;

/// θ = (π, A, μ₁..μ_N, Σ).
#[derive(Debug, Clone)]
pub struct ModelParams {
    initial: Vec<f64>,
    transition: DMatrix<f64>,
    means: Vec<DVector<f64>>,
    covariance: DMatrix<f64>,
    factor: CholeskyFactor,
}

impl ModelParams {
    /// Validates and builds a model. A covariance that fails to factorize is
    /// retried once with a small ridge (see [`CholeskyFactor::with_ridge`]).
    pub fn new(
        initial: Vec<f64>,
        transition: DMatrix<f64>,
        means: Vec<DVector<f64>>,
        covariance: DMatrix<f64>,
    ) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::invalid("a model needs at least one state"));
        }
        if transition.shape() != (n, n) || means.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: if means.len() != n {
                    means.len()
                } else {
                    transition.nrows()
                },
            });
        }
        let p = covariance.nrows();
        if covariance.ncols() != p || means.iter().any(|m| m.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: means
                    .iter()
                    .map(|m| m.len())
                    .find(|&l| l != p)
                    .unwrap_or(covariance.ncols()),
            });
        }
        if initial.iter().any(|&v| !(v >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid("initial distribution is not on the simplex"));
        }
        for i in 0..n {
            let row = transition.row(i);
            if row.iter().any(|&v| !(v >= 0.0)) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!("transition row {i} is not stochastic")));
            }
        }
        if means.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("state means must be finite"));
        }
        check_symmetric(&covariance)?;
        let factor = CholeskyFactor::with_ridge(&covariance)?;
        Ok(Self {
            initial,
            transition,
            means,
            covariance,
            factor,
        })
    }

    /// π = e₁ and a transition matrix with `diag` on the diagonal and the
    /// remaining mass spread evenly off the diagonal.
    pub fn with_sticky_transitions(means: Vec<DVector<f64>>, covariance: DMatrix<f64>, diag: f64) -> Result<Self> {
        let n = means.len();
        if n == 0 {
            return Err(Error::invalid("a model needs at least one state"));
        }
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let transition = if n == 1 {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            let off = (1.0 - diag) / (n - 1) as f64;
            DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { off })
        };
        Self::new(initial, transition, means, covariance)
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Largest absolute difference over every parameter, or `None` when the
    /// two models have different shapes.
    pub fn max_abs_diff(&self, other: &ModelParams) -> Option<f64> {
        if self.n_states() != other.n_states() || self.dim() != other.dim() {
            return None;
        }
        let mut d: f64 = 0.0;
        for (a, b) in self.initial.iter().zip(&other.initial) {
            d = d.max((a - b).abs());
        }
        d = d.max((&self.transition - &other.transition).amax());
        for (a, b) in self.means.iter().zip(&other.means) {
            d = d.max((a - b).amax());
        }
        d = d.max((&self.covariance - &other.covariance).amax());
        Some(d)
    }

    /// Reorders states: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: perm.len(),
            });
        }
        Self::new(
            perm.iter().map(|&k| self.initial[k]).collect(),
            DMatrix::from_fn(n, n, |i, j| self.transition[(perm[i], perm[j])]),
            perm.iter().map(|&k| self.means[k].clone()).collect(),
            self.covariance.clone(),
        )
    }

    /// Mixes π and every row of A with the uniform distribution by weight
    /// `eps`, so no transition is exactly zero. EM never revives a zero
    /// transition, so a start with one cannot fit labels that need it.
    pub fn smoothed(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid("smoothing weight must lie in [0, 1]"));
        }
        let n = self.n_states();
        let u = 1.0 / n as f64;
        Self::new(
            self.initial.iter().map(|&v| (1.0 - eps) * v + eps * u).collect(),
            self.transition.map(|v| (1.0 - eps) * v + eps * u),
            self.means.clone(),
            self.covariance.clone(),
        )
    }

    pub fn to_document(&self) -> ModelDocument {
        let n = self.n_states();
        let p = self.dim();
        ModelDocument {
            n_states: n,
            p,
            initial: self.initial.clone(),
            transition: (0..n)
                .map(|i| self.transition.row(i).iter().copied().collect())
                .collect(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariance: (0..p)
                .map(|i| self.covariance.row(i).iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let n = doc.n_states;
        let p = doc.p;
        let square = |rows: &[Vec<f64>], k: usize| -> Result<DMatrix<f64>> {
            if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: rows.len(),
                });
            }
            Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
        };
        if doc.initial.len() != n || doc.means.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: doc.initial.len(),
            });
        }
        Self::new(
            doc.initial.clone(),
            square(&doc.transition, n)?,
            doc.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            square(&doc.covariance, p)?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// On-disk model layout. Floats are written with the shortest representation
/// that parses back to the identical double.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub n_states: usize,
    pub p: usize,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
}

/// Observations `Y_T` (row t is yₜ) with a partial label track.
#[derive(Debug, Clone)]
pub struct ObservationStream {
    observations: DMatrix<f64>,
    labels: Vec<Option<usize>>,
    t_init: usize,
}

impl ObservationStream {
    pub fn new(observations: DMatrix<f64>, labels: Vec<Option<usize>>, t_init: usize) -> Result<Self> {
        if labels.len() != observations.nrows() {
            return Err(Error::DimensionMismatch {
                expected: observations.nrows(),
                actual: labels.len(),
            });
        }
        if t_init > observations.nrows() {
            return Err(Error::invalid("t_init exceeds stream length"));
        }
        if observations.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(Self {
            observations,
            labels,
            t_init,
        })
    }

    /// Stream with no labels at all.
    pub fn unlabeled(observations: DMatrix<f64>) -> Self {
        let n = observations.nrows();
        Self::new(observations, vec![None; n], 0).expect("consistent shapes")
    }

    /// Stream whose first `t_init` rows are labeled in-control (state 0).
    pub fn with_initial_ic(observations: DMatrix<f64>, t_init: usize) -> Result<Self> {
        let n = observations.nrows();
        let labels = (0..n).map(|t| (t < t_init).then_some(0)).collect();
        Self::new(observations, labels, t_init)
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn t_init(&self) -> usize {
        self.t_init
    }

    pub fn observations(&self) -> &DMatrix<f64> {
        &self.observations
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn set_label(&mut self, t: usize, state: Option<usize>) {
        self.labels[t] = state;
    }

    /// Number of distinct labeled states.
    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Smallest state count compatible with the label track.
    pub fn min_states(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .map(|&s| s + 1)
            .max()
            .unwrap_or(1)
            .max(self.distinct_labels())
            .max(1)
    }
}
