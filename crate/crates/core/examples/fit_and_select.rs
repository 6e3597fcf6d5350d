//! Fit models with one to four states and choose the count by AIC.

use phmm_monitor::bench::{generate_scenario, ScenarioConfig};
use phmm_monitor::init::InitSearchConfig;
use phmm_monitor::phmm::{select_model, ObservationStream};

fn main() -> phmm_monitor::Result<()> {
    let cfg = ScenarioConfig {
        p: 4,
        delta: 3.0,
        t_stream: 300,
        class_switch: 150,
        ..ScenarioConfig::default()
    };
    let sc = generate_scenario(&cfg, 7)?;
    let stream = ObservationStream::unlabeled(sc.stream.clone());

    let sel = select_model(&stream, 1, 4, &InitSearchConfig::default())?;
    for c in &sel.candidates {
        match &c.outcome {
            Ok((ll, aic)) => println!("N={}  log-likelihood {ll:10.2}  AIC {aic:10.2}", c.n_states),
            Err(e) => println!("N={}  skipped: {e}", c.n_states),
        }
    }
    println!(
        "selected N={} after {} EM iterations",
        sel.n_states(),
        sel.fit.iterations
    );
    for (i, m) in sel.fit.model.means().iter().enumerate() {
        println!("  state {} mean {:.2?}", i + 1, m.as_slice());
    }
    Ok(())
}
