//! Save a fitted model as JSON and load it back bit for bit.

use phmm_monitor::bench::{generate_scenario, ScenarioConfig};
use phmm_monitor::init::{init_search, InitSearchConfig};
use phmm_monitor::phmm::{ModelParams, ObservationStream};

fn main() -> phmm_monitor::Result<()> {
    let sc = generate_scenario(
        &ScenarioConfig {
            p: 2,
            delta: 3.0,
            t_stream: 200,
            class_switch: 100,
            ..ScenarioConfig::default()
        },
        4,
    )?;
    let all = ObservationStream::unlabeled(sc.stream.clone());
    let fitted = init_search(&all, 2, &InitSearchConfig::default())?.model;

    let json = fitted.to_json()?;
    println!("{json}");
    let back = ModelParams::from_json(&json)?;
    println!(
        "largest parameter difference after reload: {:?}",
        fitted.max_abs_diff(&back)
    );
    Ok(())
}
