//! The two label-request statistics on their own: posterior entropy with its
//! bootstrap p-value, and the MEWMA distance with its chi-square p-value.

use nalgebra::{DMatrix, DVector};
use phmm_monitor::monitor::{bootstrap_entropies, entropy, exploitation_pvalue, exploration_pvalue};
use phmm_monitor::phmm::ModelParams;

fn main() -> phmm_monitor::Result<()> {
    let model = ModelParams::with_sticky_transitions(
        vec![DVector::zeros(2), DVector::from_vec(vec![2.0, 0.0])],
        DMatrix::identity(2, 2),
        0.95,
    )?;

    let mut sims = bootstrap_entropies(&model, 199, 50, 1)?;
    sims.sort_by(f64::total_cmp);
    println!(
        "bootstrap entropy quantiles: 50% {:.3}  90% {:.3}  99% {:.3}",
        sims[99], sims[179], sims[197]
    );
    for posterior in [[0.99, 0.01], [0.8, 0.2], [0.55, 0.45]] {
        let h = entropy(&posterior);
        let pv = exploitation_pvalue(&model, h, 199, 50, 1)?;
        println!("posterior {posterior:?}: entropy {h:.3}, p-value {pv:.3}");
    }
    for v2 in [2.0, 9.2, 15.0] {
        println!("V2 {v2:5.1} with p=2: p-value {:.4}", exploration_pvalue(v2, 2));
    }
    Ok(())
}
