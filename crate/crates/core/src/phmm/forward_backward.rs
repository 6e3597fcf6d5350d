use nalgebra::DMatrix;

use super::{ModelParams, ObservationStream};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

/// Smoothed posteriors of one forward-backward pass.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    /// T×N, row t holds γₜ.
    pub gamma: DMatrix<f64>,
    /// N×N, Σₜ ξₜ(i, j).
    pub xi_sums: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Log of the per-step normalizers; they sum to the log-likelihood.
    pub log_scale_factors: Vec<f64>,
}

impl PosteriorSummary {
    pub fn len(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_states(&self) -> usize {
        self.gamma.ncols()
    }
}

/// Row-major T×N table of log φ(yₜ; μᵢ, Σ).
pub fn log_emissions(obs: &DMatrix<f64>, model: &ModelParams) -> Result<Vec<f64>> {
    let p = model.dim();
    if obs.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: obs.ncols(),
        });
    }
    let factor = model.factor();
    let n = model.n_states();
    let t_len = obs.nrows();
    let white_means: Vec<Vec<f64>> = model
        .means()
        .iter()
        .map(|m| {
            let mut w = m.as_slice().to_vec();
            factor.whiten_in_place(&mut w);
            w
        })
        .collect();
    let norm = -0.5 * (p as f64 * LN_2PI + factor.log_det());
    let mut out = vec![0.0; t_len * n];
    let mut row = vec![0.0; p];
    for t in 0..t_len {
        for (j, v) in row.iter_mut().enumerate() {
            *v = obs[(t, j)];
        }
        factor.whiten_in_place(&mut row);
        for (i, wm) in white_means.iter().enumerate() {
            let d2: f64 = row.iter().zip(wm).map(|(a, b)| (a - b) * (a - b)).sum();
            out[t * n + i] = norm - 0.5 * d2;
        }
    }
    Ok(out)
}

pub fn forward_backward(stream: &ObservationStream, model: &ModelParams) -> Result<PosteriorSummary> {
    let logb = log_emissions(stream.observations(), model)?;
    forward_backward_from_log_emissions(&logb, model.initial(), model.transition(), stream.labels())
}

/// Constrained, scaled forward-backward on a precomputed log-emission table.
///
/// Positions with a label only admit the labeled state. Each step is scaled
/// by its emission maximum before exponentiation, so the log scale factor of
/// step t is `ln(Σᵢ α̂ₜ(i)) + maxᵢ log bᵢ(yₜ)`.
pub fn forward_backward_from_log_emissions(
    logb: &[f64],
    initial: &[f64],
    transition: &DMatrix<f64>,
    labels: &[Option<usize>],
) -> Result<PosteriorSummary> {
    let n = initial.len();
    let t_len = labels.len();
    if logb.len() != t_len * n {
        return Err(Error::DimensionMismatch {
            expected: t_len * n,
            actual: logb.len(),
        });
    }
    if t_len == 0 {
        return Err(Error::invalid("empty stream"));
    }
    if let Some(&bad) = labels.iter().flatten().find(|&&s| s >= n) {
        return Err(Error::invalid(format!("label {bad} exceeds model with {n} states")));
    }
    let allowed = |t: usize, i: usize| labels[t].is_none_or(|s| s == i);

    // Row-major copy of A for the inner loops.
    let a: Vec<f64> = (0..n * n).map(|k| transition[(k / n, k % n)]).collect();

    let mut b = vec![0.0; t_len * n];
    let mut alpha = vec![0.0; t_len * n];
    let mut scale = vec![0.0; t_len];
    let mut log_scale = vec![0.0; t_len];
    for t in 0..t_len {
        let row = &logb[t * n..(t + 1) * n];
        let m = (0..n)
            .filter(|&i| allowed(t, i))
            .map(|i| row[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::ImpossibleLabeling { t });
        }
        for i in 0..n {
            if allowed(t, i) {
                b[t * n + i] = (row[i] - m).exp();
            }
        }
        let mut c = 0.0;
        for i in 0..n {
            if b[t * n + i] == 0.0 {
                continue;
            }
            let pred = if t == 0 {
                initial[i]
            } else {
                (0..n).map(|k| alpha[(t - 1) * n + k] * a[k * n + i]).sum()
            };
            let v = b[t * n + i] * pred;
            alpha[t * n + i] = v;
            c += v;
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::ImpossibleLabeling { t });
        }
        for v in &mut alpha[t * n..(t + 1) * n] {
            *v /= c;
        }
        scale[t] = c;
        log_scale[t] = c.ln() + m;
    }

    let mut beta = vec![0.0; t_len * n];
    for i in 0..n {
        beta[(t_len - 1) * n + i] = if allowed(t_len - 1, i) { 1.0 } else { 0.0 };
    }
    let mut tmp = vec![0.0; n];
    for t in (0..t_len - 1).rev() {
        for j in 0..n {
            tmp[j] = b[(t + 1) * n + j] * beta[(t + 1) * n + j] / scale[t + 1];
        }
        for i in 0..n {
            beta[t * n + i] = if allowed(t, i) {
                (0..n).map(|j| a[i * n + j] * tmp[j]).sum()
            } else {
                0.0
            };
        }
    }

    let mut gamma = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        if let Some(s) = labels[t] {
            gamma[(t, s)] = 1.0;
            continue;
        }
        let mut sum = 0.0;
        for i in 0..n {
            let g = alpha[t * n + i] * beta[t * n + i];
            gamma[(t, i)] = g;
            sum += g;
        }
        for i in 0..n {
            gamma[(t, i)] /= sum;
        }
    }

    let mut xi = vec![0.0; n * n];
    for t in 0..t_len - 1 {
        for j in 0..n {
            tmp[j] = b[(t + 1) * n + j] * beta[(t + 1) * n + j] / scale[t + 1];
        }
        for i in 0..n {
            let ai = alpha[t * n + i];
            if ai == 0.0 {
                continue;
            }
            for j in 0..n {
                xi[i * n + j] += ai * a[i * n + j] * tmp[j];
            }
        }
    }

    Ok(PosteriorSummary {
        gamma,
        xi_sums: DMatrix::from_row_slice(n, n, &xi),
        log_likelihood: log_scale.iter().sum(),
        log_scale_factors: log_scale,
    })
}

/// Row t of γ and its argmax; ties go to the smallest state index.
pub fn predict_state(summary: &PosteriorSummary, t: usize) -> (Vec<f64>, usize) {
    let row: Vec<f64> = summary.gamma.row(t).iter().copied().collect();
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (row, best)
}
