//! Simulate state sequences that must start and end in given states.

use nalgebra::{DMatrix, DVector};
use phmm_monitor::phmm::ModelParams;
use phmm_monitor::sampler::{conditional_marginals, simulate_sequence, ConditionalSampler, EndpointConstraint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> phmm_monitor::Result<()> {
    let model = ModelParams::new(
        vec![1.0, 0.0],
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]),
        vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, -1.0])],
        DMatrix::identity(2, 2),
    )?;
    let c = EndpointConstraint {
        start: Some(0),
        end: Some(1),
        length: 6,
    };

    let exact = conditional_marginals(&model, c)?;
    let sampler = ConditionalSampler::new(&model, c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 20_000;
    let mut freq = DMatrix::<f64>::zeros(c.length, 2);
    for _ in 0..draws {
        for (t, s) in sampler.sample_states(&mut rng)?.into_iter().enumerate() {
            freq[(t, s)] += 1.0 / draws as f64;
        }
    }
    println!(" t  P(fault) exact  empirical");
    for t in 0..c.length {
        println!("{:2} {:14.4} {:10.4}", t + 1, exact[(t, 1)], freq[(t, 1)]);
    }

    let (states, obs) = simulate_sequence(&model, c, 9)?;
    println!(
        "one draw: states {:?}",
        states.iter().map(|s| s + 1).collect::<Vec<_>>()
    );
    println!("first observation {:.3?}", obs.row(0).iter().collect::<Vec<_>>());
    Ok(())
}
