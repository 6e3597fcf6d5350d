//! Posterior state probabilities for a partially labeled sequence.
//!
//! Labeled rows pin the posterior to their state; the unlabeled rows around
//! them borrow strength through the transition matrix.

use nalgebra::{DMatrix, DVector};
use phmm_monitor::phmm::{forward_backward, ModelParams, ObservationStream};

fn main() -> phmm_monitor::Result<()> {
    let model = ModelParams::new(
        vec![0.9, 0.1],
        DMatrix::from_row_slice(2, 2, &[0.95, 0.05, 0.2, 0.8]),
        vec![DVector::from_element(1, 0.0), DVector::from_element(1, 2.0)],
        DMatrix::from_element(1, 1, 1.0),
    )?;
    let y = [0.1, -0.4, 1.2, 1.9, 2.4, 0.9, 1.1, -0.2];
    let mut labels = vec![None; y.len()];
    labels[3] = Some(1);
    let stream = ObservationStream::new(DMatrix::from_column_slice(y.len(), 1, &y), labels, 0)?;

    let post = forward_backward(&stream, &model)?;
    println!("log-likelihood {:.4}", post.log_likelihood);
    println!(" t      y   P(in control)  P(fault)  label");
    for (t, &v) in y.iter().enumerate() {
        let label = stream.labels()[t].map(|s| (s + 1).to_string()).unwrap_or_default();
        println!(
            "{:2} {:6.2} {:14.4} {:9.4}  {label}",
            t + 1,
            v,
            post.gamma[(t, 0)],
            post.gamma[(t, 1)]
        );
    }
    println!("expected transitions:\n{:.3}", post.xi_sums);
    Ok(())
}
