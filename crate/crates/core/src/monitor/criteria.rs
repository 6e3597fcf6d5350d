use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma_ur;

use crate::error::Result;
use crate::phmm::{forward_backward, ModelParams, ObservationStream};
use crate::sampler::{sequence_seed, ConditionalSampler, EndpointConstraint};

/// Natural-log entropy of a probability vector; zero entries contribute 0.
pub fn entropy(posterior: &[f64]) -> f64 {
    -posterior.iter().filter(|&&g| g > 0.0).map(|&g| g * g.ln()).sum::<f64>()
}

/// Final-position posterior entropies of `m` sequences simulated from `model`,
/// sorted ascending.
pub fn bootstrap_entropies(model: &ModelParams, m: usize, len: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = ConditionalSampler::new(model, EndpointConstraint::free(len))?;
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(seed, k as u64));
        let states = sampler.sample_states(&mut rng)?;
        let obs = sampler.sample_observations(&mut rng, &states);
        let post = forward_backward(&ObservationStream::unlabeled(obs), model)?;
        let last = post.gamma.row(len - 1).iter().copied().collect::<Vec<_>>();
        out.push(entropy(&last));
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Add-one bootstrap p-value of `observed` against sorted simulated entropies.
pub fn pvalue_from_sorted(sorted: &[f64], observed: f64) -> f64 {
    let below = sorted.partition_point(|&h| h < observed);
    let at_or_above = sorted.len() - below;
    (1 + at_or_above) as f64 / (1 + sorted.len()) as f64
}

pub fn exploitation_pvalue(model: &ModelParams, observed_entropy: f64, m: usize, len: usize, seed: u64) -> Result<f64> {
    let sims = bootstrap_entropies(model, m, len, seed)?;
    Ok(pvalue_from_sorted(&sims, observed_entropy))
}

/// Upper tail of χ²_p at `v2`.
pub fn exploration_pvalue(v2: f64, p: usize) -> f64 {
    if v2 <= 0.0 {
        return 1.0;
    }
    gamma_ur(p as f64 / 2.0, v2 / 2.0)
}

/// One MEWMA accumulator per model state.
#[derive(Debug, Clone, Default)]
pub struct MewmaState {
    z: Vec<DVector<f64>>,
}

impl MewmaState {
    pub fn accumulators(&self) -> &[DVector<f64>] {
        &self.z
    }

    /// Advances every accumulator with `y` and returns min over states of
    /// ((2 − λ)/λ) zᵢᵀ Σ⁻¹ zᵢ. States the accumulator has not seen start at 0;
    /// accumulators of states the model no longer has are dropped.
    pub fn update(&mut self, y: &[f64], model: &ModelParams, lambda: f64) -> f64 {
        let p = model.dim();
        self.z.truncate(model.n_states());
        while self.z.len() < model.n_states() {
            self.z.push(DVector::zeros(p));
        }
        let scale = (2.0 - lambda) / lambda;
        let zero = vec![0.0; p];
        let mut best = f64::INFINITY;
        for (z, mu) in self.z.iter_mut().zip(model.means()) {
            for j in 0..p {
                z[j] = lambda * (y[j] - mu[j]) + (1.0 - lambda) * z[j];
            }
            let v = scale * model.factor().mahalanobis_sq(z.as_slice(), &zero);
            best = best.min(v);
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&[0.9, 0.1]), 0.325_082_973_391_448_2, epsilon = 1e-15);
    }

    #[test]
    fn chi_square_tail() {
        assert_eq!(exploration_pvalue(0.0, 3), 1.0);
        assert_abs_diff_eq!(exploration_pvalue(3.841_458_820_694_124, 1), 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(exploration_pvalue(18.307_038_053_275_146, 10), 0.05, epsilon = 1e-9);
    }

    /// Upper regularized incomplete gamma by series for the lower part:
    /// P(a, x) = x^a e^{-x} Σ x^k / Γ(a + k + 1).
    fn tail_by_series(a: f64, x: f64) -> f64 {
        let mut term = 1.0 / a;
        let mut sum = term;
        for k in 1..500 {
            term *= x / (a + k as f64);
            sum += term;
        }
        let ln_gamma_a = statrs::function::gamma::ln_gamma(a);
        1.0 - (a * x.ln() - x - ln_gamma_a).exp() * sum
    }

    #[test]
    fn chi_square_tail_matches_series() {
        for p in [1usize, 2, 5, 10, 20, 30] {
            for v2 in [0.5, 2.0, 7.5, 18.307, 40.0] {
                let want = tail_by_series(p as f64 / 2.0, v2 / 2.0);
                assert_abs_diff_eq!(exploration_pvalue(v2, p), want, epsilon = 1e-10);
            }
        }
    }

    fn two_state(delta: f64) -> ModelParams {
        ModelParams::new(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]),
            vec![DVector::zeros(2), DVector::from_vec(vec![delta, 0.0])],
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn mewma_with_unit_lambda_is_mahalanobis() {
        let model = two_state(3.0);
        let mut st = MewmaState::default();
        st.update(&[5.0, 5.0], &model, 1.0);
        let v = st.update(&[1.0, 2.0], &model, 1.0);
        let d0 = model.factor().mahalanobis_sq(&[1.0, 2.0], model.means()[0].as_slice());
        let d1 = model.factor().mahalanobis_sq(&[1.0, 2.0], model.means()[1].as_slice());
        assert_abs_diff_eq!(v, d0.min(d1), epsilon = 1e-12);
    }

    #[test]
    fn mewma_at_mean_is_zero() {
        let model = two_state(3.0);
        let mut st = MewmaState::default();
        assert_eq!(st.update(&[3.0, 0.0], &model, 0.3), 0.0);
    }

    #[test]
    fn mewma_matches_straight_loop() {
        let model = ModelParams::new(
            vec![1.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]),
            vec![DVector::from_vec(vec![0.5, -0.5]), DVector::from_vec(vec![2.0, 1.0])],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]),
        )
        .unwrap();
        let ys = [
            [0.1, 0.2],
            [1.5, -0.3],
            [2.2, 0.9],
            [0.0, 0.0],
            [-1.0, 0.4],
            [3.0, 1.2],
            [2.5, 1.1],
            [0.3, -0.8],
            [0.9, 0.9],
            [1.7, 0.2],
        ];
        let lambda = 0.3;
        // Σ⁻¹ of [[2, .6], [.6, 1]] written out by hand.
        let det = 2.0 * 1.0 - 0.6 * 0.6;
        let inv = [[1.0 / det, -0.6 / det], [-0.6 / det, 2.0 / det]];
        let mut z = [[0.0f64; 2]; 2];
        let mut st = MewmaState::default();
        for y in ys {
            let got = st.update(&y, &model, lambda);
            let mut want = f64::INFINITY;
            for i in 0..2 {
                let mu = &model.means()[i];
                for j in 0..2 {
                    z[i][j] = lambda * (y[j] - mu[j]) + (1.0 - lambda) * z[i][j];
                }
                let q = z[i][0] * (inv[0][0] * z[i][0] + inv[0][1] * z[i][1])
                    + z[i][1] * (inv[1][0] * z[i][0] + inv[1][1] * z[i][1]);
                want = want.min((2.0 - lambda) / lambda * q);
            }
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn new_states_start_at_zero() {
        let one = ModelParams::new(
            vec![1.0],
            DMatrix::from_element(1, 1, 1.0),
            vec![DVector::zeros(2)],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let mut st = MewmaState::default();
        st.update(&[1.0, 1.0], &one, 0.3);
        st.update(&[0.0, 0.0], &two_state(1.0), 0.3);
        assert_abs_diff_eq!(st.accumulators()[1][0], -0.3, epsilon = 1e-15);
    }

    #[test]
    fn pvalue_bounds() {
        let model = two_state(5.0);
        let sims = bootstrap_entropies(&model, 199, 50, 1).unwrap();
        assert_eq!(pvalue_from_sorted(&sims, 0.0), 1.0);
        let top = pvalue_from_sorted(&sims, std::f64::consts::LN_2);
        let exact_max = sims.iter().filter(|&&h| h >= std::f64::consts::LN_2).count();
        assert_eq!(top, (1 + exact_max) as f64 / 200.0);
    }

    #[test]
    fn midpoint_observation_is_surprising() {
        let model = two_state(5.0);
        let mut hits = 0;
        for seed in 0..50 {
            // A stream ending at the midpoint between the two means.
            let mut obs = DMatrix::zeros(20, 2);
            obs[(19, 0)] = 2.5;
            let post = forward_backward(&ObservationStream::unlabeled(obs), &model).unwrap();
            let h = entropy(&post.gamma.row(19).iter().copied().collect::<Vec<_>>());
            if exploitation_pvalue(&model, h, 199, 50, seed).unwrap() < 0.1 {
                hits += 1;
            }
        }
        assert!(hits >= 45, "{hits}/50");
    }
}
