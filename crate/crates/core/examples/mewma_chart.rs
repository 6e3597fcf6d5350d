//! Single-state MEWMA control chart: statistic and signals around a shift.

use nalgebra::DMatrix;
use phmm_monitor::bench::{scenario_covariance, MewmaChart, MewmaConfig};
use phmm_monitor::stats::CholeskyFactor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> phmm_monitor::Result<()> {
    let p = 4;
    let factor = CholeskyFactor::new(&scenario_covariance(p))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = |shift: f64| {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let mut mean = vec![0.0; p];
        mean[0] = shift;
        factor.color(&mean, &z)
    };

    let reference: Vec<Vec<f64>> = (0..300).map(|_| draw(0.0)).collect();
    let reference = DMatrix::from_fn(300, p, |i, j| reference[i][j]);
    let mut chart = MewmaChart::fit(&reference, &MewmaConfig::default())?;
    println!("control limit {:.3}", chart.ucl());
    for t in 1..=30 {
        let shift = if (16..=20).contains(&t) { 2.5 } else { 0.0 };
        let v2 = chart.update(&draw(shift));
        let mark = if v2 > chart.ucl() { "signal" } else { "" };
        println!("{t:2} shift {shift:3.1}  V2 {v2:7.2} {mark}");
    }
    Ok(())
}
