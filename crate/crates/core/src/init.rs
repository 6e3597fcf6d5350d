//! Initialization search for multi-state models.
//!
//! The in-control state is seeded from a robust location/scatter estimate of
//! the whole stream. Each further state is seeded from the moving-average rows
//! that sit farthest from the means already in the model; every seed is fitted
//! and the best likelihood wins.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phmm::{FitOptions, FitResult, ModelParams, ObservationStream, Prepared};
use crate::stats::{moving_average, robust_location_scatter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSearchConfig {
    pub window_k: usize,
    pub n_try: usize,
    pub diag_init: f64,
    /// Minimum Mahalanobis distance between two accepted seeds.
    pub min_separation: f64,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Default for InitSearchConfig {
    fn default() -> Self {
        Self {
            window_k: 5,
            n_try: 10,
            diag_init: 0.99,
            min_separation: 0.5,
            fit: FitOptions::default(),
        }
    }
}

impl InitSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_k == 0 || self.n_try == 0 {
            return Err(Error::Config("window_k and n_try must be positive".into()));
        }
        if !(self.diag_init > 0.0 && self.diag_init < 1.0) {
            return Err(Error::Config("diag_init must lie in (0, 1)".into()));
        }
        if !(self.min_separation >= 0.0) {
            return Err(Error::Config("min_separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Single-state model from the robust estimate of the whole stream.
pub fn init_one_state(stream: &ObservationStream) -> Result<ModelParams> {
    let est = robust_location_scatter(stream.observations())?;
    ModelParams::new(
        vec![1.0],
        DMatrix::from_element(1, 1, 1.0),
        vec![est.location],
        est.scatter,
    )
}

/// Starting models for `n_states` states.
///
/// `prev_models[0]` must be the robust single-state model; its mean and
/// covariance define the metric. For `n_states > 2` the last entry must be a
/// fitted model with `n_states - 1` states whose means are carried over.
pub fn init_candidates(
    stream: &ObservationStream,
    prev_models: &[ModelParams],
    n_states: usize,
    cfg: &InitSearchConfig,
) -> Result<Vec<ModelParams>> {
    cfg.validate()?;
    if n_states < 2 {
        return Err(Error::invalid("candidates are only built for two or more states"));
    }
    let base = prev_models
        .first()
        .filter(|m| m.n_states() == 1)
        .ok_or_else(|| Error::invalid("missing robust single-state model"))?;
    let carried: &[DVector<f64>] = if n_states == 2 {
        base.means()
    } else {
        let prev = prev_models
            .last()
            .filter(|m| m.n_states() == n_states - 1)
            .ok_or_else(|| Error::invalid(format!("missing fitted model with {} states", n_states - 1)))?;
        prev.means()
    };

    let factor = base.factor();
    let whiten = |v: &[f64]| {
        let mut w = v.to_vec();
        factor.whiten_in_place(&mut w);
        w
    };
    let ma = moving_average(stream.observations(), cfg.window_k)?;
    let rows: Vec<Vec<f64>> = (0..ma.nrows())
        .map(|t| whiten(&ma.row(t).iter().copied().collect::<Vec<_>>()))
        .collect();
    let centres: Vec<Vec<f64>> = carried.iter().map(|m| whiten(m.as_slice())).collect();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let scores: Vec<f64> = rows
        .iter()
        .map(|r| centres.iter().map(|c| dist2(r, c)).fold(f64::INFINITY, f64::min))
        .collect();
    // Rows before the first full window average fewer observations and would
    // outrank genuine shifts on noise alone.
    let mut order: Vec<usize> = (cfg.window_k - 1..rows.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let sep2 = cfg.min_separation * cfg.min_separation;
    let mut picked: Vec<usize> = Vec::with_capacity(cfg.n_try);
    for t in order {
        if picked.len() == cfg.n_try {
            break;
        }
        if picked.iter().all(|&s| dist2(&rows[t], &rows[s]) >= sep2) {
            picked.push(t);
        }
    }

    picked
        .into_iter()
        .map(|t| {
            let mut means = carried.to_vec();
            means.push(ma.row(t).transpose());
            ModelParams::with_sticky_transitions(means, base.covariance().clone(), cfg.diag_init)
        })
        .collect()
}

/// Fits every candidate and keeps the largest likelihood; earlier candidates
/// win ties. Failed fits are skipped.
pub fn best_of(stream: &ObservationStream, candidates: &[ModelParams], opts: FitOptions) -> Result<FitResult> {
    let prep = Prepared::new(stream)?;
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for cand in candidates {
        match prep.fit(cand, opts) {
            Ok(res) => {
                if best.as_ref().is_none_or(|b| res.log_likelihood() > b.log_likelihood()) {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        Error::ModelSelection(match last_err {
            Some(e) => format!("all {} starts failed, last: {e}", candidates.len()),
            None => "no starting candidates".into(),
        })
    })
}

/// Copy of `stream` without labels naming states beyond `n_states`.
///
/// Lower levels of the search ladder cannot represent every labeled class;
/// they are fitted on this relaxed track so the ladder can still be climbed.
pub fn relaxed_labels(stream: &ObservationStream, n_states: usize) -> ObservationStream {
    if stream.min_states() <= n_states {
        return stream.clone();
    }
    let mut out = stream.clone();
    for t in 0..out.len() {
        if out.labels()[t].is_some_and(|s| s >= n_states) {
            out.set_label(t, None);
        }
    }
    out
}

/// Fitted models for N = 1, 2, … built one level at a time.
#[derive(Debug, Clone)]
pub struct InitLadder {
    robust: ModelParams,
    levels: Vec<FitResult>,
}

impl InitLadder {
    pub fn new(stream: &ObservationStream, cfg: &InitSearchConfig) -> Result<Self> {
        cfg.validate()?;
        let robust = init_one_state(stream)?;
        let first = best_of(&relaxed_labels(stream, 1), std::slice::from_ref(&robust), cfg.fit)?;
        Ok(Self {
            robust,
            levels: vec![first],
        })
    }

    pub fn robust(&self) -> &ModelParams {
        &self.robust
    }

    pub fn top(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, n_states: usize) -> Option<&FitResult> {
        n_states.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    /// Adds the next level. On failure the ladder is left unchanged.
    pub fn climb(&mut self, stream: &ObservationStream, cfg: &InitSearchConfig) -> Result<&FitResult> {
        let n = self.top() + 1;
        let prev = [self.robust.clone(), self.levels[n - 2].model.clone()];
        let cands = init_candidates(stream, &prev, n, cfg)?;
        let res = best_of(&relaxed_labels(stream, n), &cands, cfg.fit)?;
        self.levels.push(res);
        Ok(self.levels.last().expect("just pushed"))
    }

    pub fn into_levels(self) -> Vec<FitResult> {
        self.levels
    }
}

/// Best fit with `n_states` states reached through the full initialization ladder.
pub fn init_search(stream: &ObservationStream, n_states: usize, cfg: &InitSearchConfig) -> Result<FitResult> {
    if n_states == 0 {
        return Err(Error::invalid("n_states must be positive"));
    }
    let mut ladder = InitLadder::new(stream, cfg)?;
    while ladder.top() < n_states {
        ladder.climb(stream, cfg)?;
    }
    Ok(ladder.levels.swap_remove(n_states - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phmm::{fit, forward_backward};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// IC noise with one OC burst of `len` rows at distance `delta` along e₁.
    fn burst_stream(seed: u64, t_len: usize, p: usize, at: usize, len: usize, delta: f64) -> ObservationStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = DMatrix::from_fn(t_len, p, |t, j| {
            let z: f64 = rng.sample(StandardNormal);
            if j == 0 && (at..at + len).contains(&t) {
                z + delta
            } else {
                z
            }
        });
        ObservationStream::unlabeled(obs)
    }

    #[test]
    fn candidates_follow_the_documented_layout() {
        let stream = burst_stream(1, 300, 3, 150, 20, 5.0);
        let cfg = InitSearchConfig::default();
        let robust = init_one_state(&stream).unwrap();
        let two = init_search(&stream, 2, &cfg).unwrap().model;
        let cands = init_candidates(&stream, &[robust.clone(), two], 3, &cfg).unwrap();
        assert_eq!(cands.len(), 10);
        for c in &cands {
            assert_eq!(c.initial(), &[1.0, 0.0, 0.0]);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 0.99 } else { 0.005 };
                    assert!((c.transition()[(i, j)] - want).abs() < 1e-15);
                }
            }
            assert_eq!(c.covariance(), robust.covariance());
        }
    }

    #[test]
    fn first_candidate_is_the_farthest_ma_row() {
        let stream = burst_stream(2, 200, 2, 80, 10, 6.0);
        let cfg = InitSearchConfig::default();
        let robust = init_one_state(&stream).unwrap();
        let cands = init_candidates(&stream, std::slice::from_ref(&robust), 2, &cfg).unwrap();
        assert_eq!(cands[0].means()[0], robust.means()[0]);

        let ma = moving_average(stream.observations(), cfg.window_k).unwrap();
        let g = crate::stats::GaussianParams::new(robust.means()[0].clone(), robust.covariance().clone()).unwrap();
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for t in cfg.window_k - 1..ma.nrows() {
            let d = crate::stats::mahalanobis_sq(&ma.row(t).transpose(), &g).unwrap();
            if d > best_d {
                best_d = d;
                best = t;
            }
        }
        assert_eq!(cands[0].means()[1], ma.row(best).transpose());
    }

    #[test]
    fn partial_windows_are_not_candidates() {
        // A wild first row would dominate the truncated averages at the start.
        let mut stream = burst_stream(2, 200, 2, 80, 10, 6.0);
        let mut obs = stream.observations().clone();
        obs[(0, 0)] = 60.0;
        stream = ObservationStream::new(obs, stream.labels().to_vec(), stream.t_init()).unwrap();
        let cfg = InitSearchConfig::default();
        let robust = init_one_state(&stream).unwrap();
        let cands = init_candidates(&stream, std::slice::from_ref(&robust), 2, &cfg).unwrap();
        let ma = moving_average(stream.observations(), cfg.window_k).unwrap();
        for c in &cands {
            let row = (0..ma.nrows())
                .find(|&t| ma.row(t).transpose() == c.means()[1])
                .unwrap();
            assert!(row >= cfg.window_k - 1, "row {row}");
        }
    }

    #[test]
    fn seeds_are_separated() {
        let stream = burst_stream(3, 200, 2, 50, 30, 4.0);
        let cfg = InitSearchConfig::default();
        let robust = init_one_state(&stream).unwrap();
        let cands = init_candidates(&stream, std::slice::from_ref(&robust), 2, &cfg).unwrap();
        for a in 0..cands.len() {
            for b in 0..a {
                let d = robust
                    .factor()
                    .mahalanobis_sq(cands[a].means()[1].as_slice(), cands[b].means()[1].as_slice());
                assert!(d.sqrt() >= 0.5);
            }
        }
    }

    #[test]
    fn single_try_equals_single_fit() {
        let stream = burst_stream(4, 200, 2, 100, 15, 5.0);
        let cfg = InitSearchConfig {
            n_try: 1,
            ..Default::default()
        };
        let robust = init_one_state(&stream).unwrap();
        let cands = init_candidates(&stream, std::slice::from_ref(&robust), 2, &cfg).unwrap();
        assert_eq!(cands.len(), 1);
        let direct = fit(&stream, &cands[0], cfg.fit).unwrap();
        let searched = init_search(&stream, 2, &cfg).unwrap();
        assert_eq!(direct.log_likelihood(), searched.log_likelihood());
    }

    #[test]
    fn too_short_stream_fails() {
        let stream = ObservationStream::unlabeled(DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64));
        assert!(init_one_state(&stream).is_err());
    }

    #[test]
    fn contamination_keeps_scatter_close() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let obs = DMatrix::from_fn(400, 3, |t, j| {
                let z: f64 = rng.sample(StandardNormal);
                if j == 0 && t % 10 == 0 {
                    z + 5.0
                } else {
                    z
                }
            });
            let m = init_one_state(&ObservationStream::unlabeled(obs)).unwrap();
            let eig = m.covariance().clone().symmetric_eigenvalues();
            for &e in eig.iter() {
                assert!(e > 0.5 && e < 2.0, "seed {seed}: eigenvalue {e}");
            }
        }
    }

    #[test]
    fn labeled_oc_positions_are_respected() {
        let mut stream = burst_stream(5, 200, 2, 120, 10, 5.0);
        for t in 120..125 {
            stream.set_label(t, Some(1));
        }
        let res = init_search(&stream, 2, &InitSearchConfig::default()).unwrap();
        for t in 120..125 {
            assert_eq!(res.posterior.gamma[(t, 1)], 1.0);
        }
    }

    #[test]
    fn search_beats_random_starts() {
        let cfg = InitSearchConfig::default();
        for seed in 0..20 {
            let stream = burst_stream(200 + seed, 300, 2, 140, 30, 5.0);
            let searched = init_search(&stream, 2, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = ModelParams::with_sticky_transitions(
                (0..2)
                    .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)))
                    .collect(),
                DMatrix::identity(2, 2),
                0.99,
            )
            .unwrap();
            if let Ok(random) = fit(&stream, &start, cfg.fit) {
                assert!(
                    searched.log_likelihood() >= random.log_likelihood() - 1e-6,
                    "seed {seed}"
                );
            }
            let check = forward_backward(&stream, &searched.model).unwrap();
            assert!((check.log_likelihood - searched.log_likelihood()).abs() < 1e-9);
        }
    }
}
