use super::{FitResult, ModelParams, ObservationStream};
use crate::error::{Error, Result};
use crate::init::{InitLadder, InitSearchConfig};

/// Free parameters of a model with a shared covariance matrix.
pub fn parameter_count(n_states: usize, p: usize) -> usize {
    let n = n_states;
    (n - 1) + n * (n - 1) + n * p + p * (p + 1) / 2
}

pub fn aic(model: &ModelParams, log_likelihood: f64) -> f64 {
    -2.0 * log_likelihood + 2.0 * parameter_count(model.n_states(), model.dim()) as f64
}

/// Index of the smallest finite value; the first one wins ties.
pub fn argmin_aic(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct CandidateFit {
    pub n_states: usize,
    /// `(log-likelihood, AIC)` or the reason the candidate was skipped.
    pub outcome: std::result::Result<(f64, f64), String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub fit: FitResult,
    pub aic: f64,
    pub candidates: Vec<CandidateFit>,
}

impl Selection {
    pub fn n_states(&self) -> usize {
        self.fit.model.n_states()
    }
}

/// Fits every state count in `[n_min, n_max]` and keeps the smallest AIC.
///
/// `n_min` is raised to the number of states the labels require. Levels below
/// `n_min` are still fitted because each level seeds the next one.
pub fn select_model(
    stream: &ObservationStream,
    n_min: usize,
    n_max: usize,
    cfg: &InitSearchConfig,
) -> Result<Selection> {
    let lo = n_min.max(stream.min_states()).max(1);
    let hi = n_max.max(lo);
    let mut candidates = Vec::new();
    let mut fits: Vec<FitResult> = Vec::new();
    let mut aics = Vec::new();

    let mut ladder = match InitLadder::new(stream, cfg) {
        Ok(l) => Some(l),
        Err(e) => {
            candidates.push(CandidateFit {
                n_states: 1,
                outcome: Err(e.to_string()),
            });
            None
        }
    };
    if let Some(ladder) = ladder.as_mut() {
        for n in 1..=hi {
            if n > ladder.top() {
                if let Err(e) = ladder.climb(stream, cfg) {
                    // Higher levels are seeded from this one, so stop here.
                    candidates.push(CandidateFit {
                        n_states: n,
                        outcome: Err(e.to_string()),
                    });
                    break;
                }
            }
            if n < lo {
                continue;
            }
            let res = ladder.level(n).expect("level exists").clone();
            let ll = res.log_likelihood();
            let a = aic(&res.model, ll);
            candidates.push(CandidateFit {
                n_states: n,
                outcome: Ok((ll, a)),
            });
            aics.push(a);
            fits.push(res);
        }
    }

    let best = argmin_aic(&aics).ok_or_else(|| {
        let reasons: Vec<String> = candidates
            .iter()
            .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("N={}: {e}", c.n_states)))
            .collect();
        Error::ModelSelection(reasons.join("; "))
    })?;
    let aic = aics[best];
    Ok(Selection {
        fit: fits.swap_remove(best),
        aic,
        candidates,
    })
}
