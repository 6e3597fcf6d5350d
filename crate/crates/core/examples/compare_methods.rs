//! Every monitoring method on the same stream.

use phmm_monitor::bench::{compute_metrics, generate_scenario, run_method, Method, MewmaConfig, ScenarioConfig};
use phmm_monitor::monitor::MonitorConfig;

fn main() -> phmm_monitor::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            p: 10,
            delta: 3.0,
            ..ScenarioConfig::default()
        },
        8,
    )?;
    let cfg = MonitorConfig {
        budget: 0.1525,
        ..MonitorConfig::default()
    };
    println!(
        "{:20} {:>6} {:>6} {:>6} {:>7}",
        "method", "F1", "prec", "recall", "labels"
    );
    for m in Method::ALL {
        let run = run_method(m, &sc, &cfg, &MewmaConfig::default(), 2)?;
        let b = compute_metrics(&sc.truth, &run.predictions)?.binary;
        println!(
            "{:20} {:6.3} {:6.3} {:6.3} {:>7}",
            m.as_str(),
            b.f1,
            b.precision,
            b.recall,
            run.labels_used
        );
    }
    Ok(())
}
