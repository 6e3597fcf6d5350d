use nalgebra::{DMatrix, DVector};

use super::{forward_backward_from_log_emissions, log_emissions, ModelParams, ObservationStream, PosteriorSummary};
use crate::error::{Error, Result};

/// Total posterior mass below which a state counts as starved.
pub const STARVATION_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Absolute log-likelihood change that ends the iteration.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelParams,
    pub posterior: PosteriorSummary,
    /// Log-likelihood of the starting model followed by one entry per M-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn log_likelihood(&self) -> f64 {
        self.posterior.log_likelihood
    }
}

/// Per-stream quantities reused across EM iterations: the sample mean and the
/// centred scatter matrix Σₜ (yₜ − ȳ)(yₜ − ȳ)ᵀ.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    stream: &'a ObservationStream,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(stream: &'a ObservationStream) -> Result<Self> {
        let y = stream.observations();
        let t_len = y.nrows();
        if t_len == 0 {
            return Err(Error::invalid("empty stream"));
        }
        let mean = y.row_mean().transpose();
        let mut centred = y.clone();
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let scatter = centred.transpose() * &centred;
        Ok(Self { stream, mean, scatter })
    }

    pub fn stream(&self) -> &ObservationStream {
        self.stream
    }

    pub fn posterior(&self, model: &ModelParams) -> Result<PosteriorSummary> {
        let logb = log_emissions(self.stream.observations(), model)?;
        forward_backward_from_log_emissions(&logb, model.initial(), model.transition(), self.stream.labels())
    }

    /// M-step from the posteriors of `model`.
    pub fn m_step(&self, post: &PosteriorSummary, model: &ModelParams) -> Result<ModelParams> {
        let n = model.n_states();
        let p = model.dim();
        let y = self.stream.observations();
        let t_len = y.nrows() as f64;

        let mass: Vec<f64> = (0..n).map(|i| post.gamma.column(i).sum()).collect();
        if let Some((state, &m)) = mass.iter().enumerate().find(|(_, &m)| !(m >= STARVATION_MASS)) {
            return Err(Error::StarvedState { state, mass: m });
        }

        // γᵀY gives the weighted sums Σₜ γₜ(i) yₜ as rows.
        let weighted = post.gamma.transpose() * y;
        let means: Vec<DVector<f64>> = (0..n).map(|i| weighted.row(i).transpose() / mass[i]).collect();

        let mut cov = self.scatter.clone();
        for i in 0..n {
            let d = &means[i] - &self.mean;
            cov.ger(-mass[i], &d, &d, 1.0);
        }
        cov /= t_len;
        let cov = (&cov + cov.transpose()) * 0.5;
        debug_assert_eq!(cov.nrows(), p);

        let g0: f64 = post.gamma.row(0).sum();
        let initial: Vec<f64> = post.gamma.row(0).iter().map(|v| v / g0).collect();

        let mut transition = DMatrix::zeros(n, n);
        for i in 0..n {
            let row = post.xi_sums.row(i);
            let s = row.sum();
            if s > f64::MIN_POSITIVE {
                for j in 0..n {
                    transition[(i, j)] = row[j] / s;
                }
            } else {
                // No observed transitions out of i: keep the previous row.
                transition.set_row(i, &model.transition().row(i));
            }
        }

        ModelParams::new(initial, transition, means, cov)
    }
}

/// One EM update. Returns the new model and the log-likelihood of `model`.
pub fn em_step(stream: &ObservationStream, model: &ModelParams) -> Result<(ModelParams, f64)> {
    let prep = Prepared::new(stream)?;
    let post = prep.posterior(model)?;
    Ok((prep.m_step(&post, model)?, post.log_likelihood))
}

pub fn fit(stream: &ObservationStream, init: &ModelParams, opts: FitOptions) -> Result<FitResult> {
    Prepared::new(stream)?.fit(init, opts)
}

impl Prepared<'_> {
    pub fn fit(&self, init: &ModelParams, opts: FitOptions) -> Result<FitResult> {
        let mut model = init.clone();
        let mut post = self.posterior(&model)?;
        let mut trace = vec![post.log_likelihood];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            let next = self.m_step(&post, &model)?;
            let next_post = self.posterior(&next)?;
            iterations += 1;
            let delta = next_post.log_likelihood - post.log_likelihood;
            trace.push(next_post.log_likelihood);
            model = next;
            post = next_post;
            if delta.abs() < opts.tol {
                converged = true;
                break;
            }
        }
        Ok(FitResult {
            model,
            posterior: post,
            trace,
            iterations,
            converged,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::phmm::forward_backward;
    use crate::phmm::forward_backward::tests::random_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn draw(rng: &mut ChaCha8Rng, model: &ModelParams, t_len: usize) -> (DMatrix<f64>, Vec<usize>) {
        let p = model.dim();
        let pick = |rng: &mut ChaCha8Rng, probs: &[f64]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &q) in probs.iter().enumerate() {
                acc += q;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        };
        let mut states = Vec::with_capacity(t_len);
        let mut obs = DMatrix::zeros(t_len, p);
        for t in 0..t_len {
            let s = if t == 0 {
                pick(rng, model.initial())
            } else {
                let row: Vec<f64> = model.transition().row(states[t - 1]).iter().copied().collect();
                pick(rng, &row)
            };
            states.push(s);
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let y = model.factor().color(model.means()[s].as_slice(), &z);
            for j in 0..p {
                obs[(t, j)] = y[j];
            }
        }
        (obs, states)
    }

    fn separated(delta: f64) -> ModelParams {
        ModelParams::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.1, 0.9]),
            vec![
                DVector::zeros(2),
                DVector::from_vec(vec![delta / 2f64.sqrt(), delta / 2f64.sqrt()]),
            ],
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn single_state_fixed_point() {
        let obs = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let stream = ObservationStream::unlabeled(obs);
        let model = ModelParams::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 1.0),
            vec![DVector::zeros(2)],
            DMatrix::identity(2, 2) * 0.5,
        )
        .unwrap();
        let (next, _) = em_step(&stream, &model).unwrap();
        assert_eq!(next.initial(), &[1.0]);
        assert_eq!(next.transition()[(0, 0)], 1.0);
        assert!((next.covariance() - model.covariance()).amax() < 1e-12);
        assert!(next.means()[0].amax() < 1e-12);
    }

    #[test]
    fn fully_labeled_means_are_class_averages() {
        let obs = DMatrix::from_row_slice(5, 1, &[1.0, 2.0, 10.0, 3.0, 12.0]);
        let labels = vec![Some(0), Some(0), Some(1), Some(0), Some(1)];
        let stream = ObservationStream::new(obs, labels, 0).unwrap();
        let start = ModelParams::with_sticky_transitions(
            vec![DVector::zeros(1), DVector::from_element(1, 1.0)],
            DMatrix::identity(1, 1),
            0.9,
        )
        .unwrap();
        let (next, _) = em_step(&stream, &start).unwrap();
        assert_eq!(next.means()[0][0], 2.0);
        assert_eq!(next.means()[1][0], 11.0);
        // Pooled within-class variance: (1 + 0 + 1 + 1 + 1) / 5.
        assert!((next.covariance()[(0, 0)] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pooled_covariance_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng, 3, 3);
        let (obs, _) = draw(&mut rng, &model, 60);
        let stream = ObservationStream::unlabeled(obs.clone());
        let post = forward_backward(&stream, &model).unwrap();
        let (next, ll) = em_step(&stream, &model).unwrap();
        assert_eq!(ll, post.log_likelihood);
        let mut direct = DMatrix::zeros(3, 3);
        for t in 0..60 {
            for i in 0..3 {
                let d = obs.row(t).transpose() - &next.means()[i];
                direct += &d * d.transpose() * post.gamma[(t, i)];
            }
        }
        direct /= 60.0;
        assert!((direct - next.covariance()).amax() < 1e-10);
    }

    #[test]
    fn starved_state_is_named() {
        let obs = DMatrix::from_row_slice(3, 1, &[0.0, 0.1, -0.1]);
        let stream = ObservationStream::unlabeled(obs);
        let model = ModelParams::new(
            vec![1.0, 0.0],
            DMatrix::identity(2, 2),
            vec![DVector::zeros(1), DVector::from_element(1, 50.0)],
            DMatrix::identity(1, 1),
        )
        .unwrap();
        match em_step(&stream, &model) {
            Err(Error::StarvedState { state, .. }) => assert_eq!(state, 1),
            other => panic!("expected starvation, got {other:?}"),
        }
    }

    #[test]
    fn converged_input_stops_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = separated(5.0);
        let (obs, _) = draw(&mut rng, &truth, 200);
        let stream = ObservationStream::unlabeled(obs);
        let first = fit(&stream, &truth, FitOptions::default()).unwrap();
        assert!(first.converged);
        let again = fit(&stream, &first.model, FitOptions::default()).unwrap();
        assert!(again.iterations <= 2);
        assert!((again.log_likelihood() - first.log_likelihood()).abs() < 1e-6);
    }

    #[test]
    fn recovers_separated_means() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = separated(5.0);
            let (obs, states) = draw(&mut rng, &truth, 400);
            let labels = states
                .iter()
                .enumerate()
                .map(|(t, &s)| (t % 10 == 0).then_some(s))
                .collect();
            let stream = ObservationStream::new(obs, labels, 0).unwrap();
            let start = ModelParams::new(
                vec![0.5, 0.5],
                DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
                vec![DVector::from_element(2, -1.0), DVector::from_element(2, 1.0)],
                DMatrix::identity(2, 2) * 2.0,
            )
            .unwrap();
            let res = fit(&stream, &start, FitOptions::default()).unwrap();
            for i in 0..2 {
                let err = (&res.model.means()[i] - &truth.means()[i]).amax();
                assert!(err < 0.3, "seed {seed} state {i}: {err}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn likelihood_trace_is_monotone(seed in any::<u64>(), n in 1usize..=3, p in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_model(&mut rng, n, p);
            let (obs, states) = draw(&mut rng, &truth, 80);
            let labels = states.iter().map(|&s| rng.random_bool(0.1).then_some(s)).collect();
            let stream = ObservationStream::new(obs, labels, 0).unwrap();
            let start = random_model(&mut rng, n, p);
            if let Ok(res) = fit(&stream, &start, FitOptions::default()) {
                for w in res.trace.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-9, "trace {:?}", res.trace);
                }
                let m = &res.model;
                prop_assert!((m.initial().iter().sum::<f64>() - 1.0).abs() < 1e-10);
                for i in 0..n {
                    prop_assert!((m.transition().row(i).sum() - 1.0).abs() < 1e-10);
                }
            }
        }
    }
}
