//! Simulation from a fitted model with optional fixed first and last states.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::phmm::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointConstraint {
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub length: usize,
}

impl EndpointConstraint {
    pub fn free(length: usize) -> Self {
        Self {
            start: None,
            end: None,
            length,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.length == 0 {
            return Err(Error::invalid("sequence length must be positive"));
        }
        for s in [self.start, self.end].into_iter().flatten() {
            if s >= n {
                return Err(Error::invalid(format!(
                    "endpoint state {s} out of range for {n} states"
                )));
            }
        }
        Ok(())
    }
}

/// Seed of the `index`-th sequence drawn from one root seed.
pub fn sequence_seed(root: u64, index: u64) -> u64 {
    root.wrapping_add(index)
}

/// Backward table for one (model, constraint) pair, reused across all steps.
///
/// Row t of `back` is proportional to p(x_T = end | x_t = h); without a fixed
/// end the table is not needed.
#[derive(Debug, Clone)]
pub struct ConditionalSampler<'a> {
    model: &'a ModelParams,
    constraint: EndpointConstraint,
    back: Option<Vec<Vec<f64>>>,
}

impl<'a> ConditionalSampler<'a> {
    pub fn new(model: &'a ModelParams, constraint: EndpointConstraint) -> Result<Self> {
        let n = model.n_states();
        constraint.validate(n)?;
        let back = constraint.end.map(|j| {
            let a = model.transition();
            let mut rows = vec![vec![0.0; n]; constraint.length];
            rows[constraint.length - 1][j] = 1.0;
            for t in (0..constraint.length - 1).rev() {
                let next = rows[t + 1].clone();
                let row = &mut rows[t];
                for h in 0..n {
                    row[h] = (0..n).map(|k| a[(h, k)] * next[k]).sum();
                }
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            rows
        });
        Ok(Self {
            model,
            constraint,
            back,
        })
    }

    /// Distribution of the state at position `t` (0-based) given the state at
    /// `t - 1`. `current` must be given for every `t > 0`.
    pub fn step_probs(&self, t: usize, current: Option<usize>) -> Result<Vec<f64>> {
        let n = self.model.n_states();
        if t >= self.constraint.length {
            return Err(Error::invalid(format!(
                "t={t} beyond sequence length {}",
                self.constraint.length
            )));
        }
        let prior: Vec<f64> = match (t, current) {
            (0, _) => match self.constraint.start {
                Some(i) => (0..n).map(|h| if h == i { 1.0 } else { 0.0 }).collect(),
                None => self.model.initial().to_vec(),
            },
            (_, Some(i)) => {
                if i >= n {
                    return Err(Error::invalid(format!("state {i} out of range")));
                }
                self.model.transition().row(i).iter().copied().collect()
            }
            (_, None) => return Err(Error::invalid("the previous state is required after the first step")),
        };
        let Some(back) = &self.back else {
            return Ok(prior);
        };
        let mut probs: Vec<f64> = prior.iter().zip(&back[t]).map(|(a, b)| a * b).collect();
        let s: f64 = probs.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InfeasibleConstraint(format!(
                "end state {} cannot be reached from step {t}",
                self.constraint.end.expect("table implies an end")
            )));
        }
        probs.iter_mut().for_each(|v| *v /= s);
        Ok(probs)
    }

    pub fn sample_states<R: Rng>(&self, rng: &mut R) -> Result<Vec<usize>> {
        let mut states = Vec::with_capacity(self.constraint.length);
        for t in 0..self.constraint.length {
            let probs = self.step_probs(t, states.last().copied())?;
            states.push(categorical(rng, &probs));
        }
        Ok(states)
    }

    pub fn sample_observations<R: Rng>(&self, rng: &mut R, states: &[usize]) -> DMatrix<f64> {
        let p = self.model.dim();
        let mut obs = DMatrix::zeros(states.len(), p);
        let mut z = vec![0.0; p];
        for (t, &s) in states.iter().enumerate() {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let y = self.model.factor().color(self.model.means()[s].as_slice(), &z);
            for (j, v) in y.into_iter().enumerate() {
                obs[(t, j)] = v;
            }
        }
        obs
    }
}

/// Inverse-CDF draw; the last positive-probability index absorbs rounding.
fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &q) in probs.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn conditional_step_probs(
    model: &ModelParams,
    t: usize,
    current: Option<usize>,
    constraint: EndpointConstraint,
) -> Result<Vec<f64>> {
    ConditionalSampler::new(model, constraint)?.step_probs(t, current)
}

/// T×N table of p(x_t = h | endpoints).
pub fn conditional_marginals(model: &ModelParams, constraint: EndpointConstraint) -> Result<DMatrix<f64>> {
    let n = model.n_states();
    constraint.validate(n)?;
    let sampler = ConditionalSampler::new(model, constraint)?;
    let a = model.transition();
    let t_len = constraint.length;
    let mut out = DMatrix::zeros(t_len, n);
    let mut fwd: Vec<f64> = match constraint.start {
        Some(i) => (0..n).map(|h| if h == i { 1.0 } else { 0.0 }).collect(),
        None => model.initial().to_vec(),
    };
    for t in 0..t_len {
        if t > 0 {
            let prev = fwd.clone();
            for h in 0..n {
                fwd[h] = (0..n).map(|k| prev[k] * a[(k, h)]).sum();
            }
            let s: f64 = fwd.iter().sum();
            fwd.iter_mut().for_each(|v| *v /= s);
        }
        let row: Vec<f64> = match &sampler.back {
            Some(back) => fwd.iter().zip(&back[t]).map(|(f, b)| f * b).collect(),
            None => fwd.clone(),
        };
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InfeasibleConstraint(format!(
                "no path satisfies the endpoints at step {t}"
            )));
        }
        for h in 0..n {
            out[(t, h)] = row[h] / s;
        }
    }
    Ok(out)
}

/// States and observations of one simulated sequence.
pub fn simulate_sequence(
    model: &ModelParams,
    constraint: EndpointConstraint,
    rng_seed: u64,
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let sampler = ConditionalSampler::new(model, constraint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let states = sampler.sample_states(&mut rng)?;
    let obs = sampler.sample_observations(&mut rng, &states);
    Ok((states, obs))
}
