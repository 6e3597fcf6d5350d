//! Initialization search: moving-average candidates ranked by distance from
//! the in-control estimate, each fitted, best likelihood kept.

use phmm_monitor::bench::{generate_scenario, ScenarioConfig};
use phmm_monitor::init::{init_candidates, init_one_state, init_search, InitSearchConfig};
use phmm_monitor::phmm::ObservationStream;

fn main() -> phmm_monitor::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            p: 5,
            delta: 2.4,
            ..ScenarioConfig::default()
        },
        3,
    )?;
    let stream = ObservationStream::unlabeled(sc.stream.clone());
    let cfg = InitSearchConfig::default();

    let ic = init_one_state(&stream)?;
    let starts = init_candidates(&stream, &[ic], 2, &cfg)?;
    println!(
        "{} two-state starting points; extra-state means on the first two coordinates:",
        starts.len()
    );
    for m in &starts {
        let mu = &m.means()[1];
        println!("  ({:6.2}, {:6.2})", mu[0], mu[1]);
    }

    for n in 1..=3 {
        let res = init_search(&stream, n, &cfg)?;
        println!(
            "N={n}: log-likelihood {:.2} ({} iterations)",
            res.log_likelihood(),
            res.iterations
        );
    }
    Ok(())
}
