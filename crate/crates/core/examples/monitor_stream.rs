//! Active-learning monitoring of one generated stream.
//!
//! Prints every bought label with the criterion that asked for it, then the
//! classification quality over the whole stream.

use phmm_monitor::bench::{compute_metrics, generate_scenario, ScenarioConfig, SCENARIO_CLASSES};
use phmm_monitor::monitor::{run_stream, MonitorConfig, SliceOracle};

fn main() -> phmm_monitor::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            p: 10,
            delta: 2.4,
            ..ScenarioConfig::default()
        },
        21,
    )?;
    let cfg = MonitorConfig {
        budget: 0.105,
        ..MonitorConfig::default()
    };
    let mut oracle = SliceOracle::new(&sc.truth);
    let out = run_stream(&sc.init_stream()?, &sc.stream, &mut oracle, &cfg, SCENARIO_CLASSES, 4)?;

    let t_init = sc.init.nrows();
    for rec in out.log.iter().filter(|r| r.labeled()) {
        println!(
            "t={:3}  {:12}  true state {}  model states {}",
            t_init + rec.t + 1,
            rec.label_source.as_str(),
            rec.true_class.map_or(0, |c| c + 1),
            rec.n_states
        );
    }
    let m = compute_metrics(&sc.truth, &out.predictions)?;
    println!(
        "labels {}/{}  F1 {:.3}  precision {:.3}  recall {:.3}",
        out.labeled.len(),
        out.budget_total,
        m.binary.f1,
        m.binary.precision,
        m.binary.recall
    );
    Ok(())
}
