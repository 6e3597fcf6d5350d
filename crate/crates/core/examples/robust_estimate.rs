//! Robust location and scatter on contaminated data.
//!
//! Twenty percent of the rows are replaced by a far-away cluster. The sample
//! mean follows the contamination; the trimmed estimate does not.

use nalgebra::DMatrix;
use phmm_monitor::stats::robust_location_scatter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> phmm_monitor::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, p) = (200, 3);
    let x = DMatrix::from_fn(n, p, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        if i % 5 == 0 {
            z + 25.0
        } else {
            z
        }
    });

    let sample_mean: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let est = robust_location_scatter(&x)?;
    let kept = est.weights.iter().filter(|&&w| w > 0.0).count();

    println!("sample mean : {sample_mean:.3?}");
    println!("robust mean : {:.3?}", est.location.as_slice());
    println!("robust scatter diagonal: {:.3?}", est.scatter.diagonal().as_slice());
    println!("rows kept: {kept} of {n} after {} iterations", est.iterations);
    Ok(())
}
