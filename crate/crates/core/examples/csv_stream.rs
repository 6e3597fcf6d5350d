//! Monitor a feature stream read from CSV, answering label queries from a
//! closure (here a lookup table standing in for an inspector).

use phmm_monitor::bench::{generate_scenario, read_feature_stream, write_feature_stream, ScenarioConfig};
use phmm_monitor::monitor::{Monitor, MonitorConfig};
use phmm_monitor::phmm::ObservationStream;
use phmm_monitor::Error;

fn main() -> phmm_monitor::Result<()> {
    // Produce a CSV the way an external system would: features plus a label
    // column that is filled only for the in-control reference rows.
    let sc = generate_scenario(
        &ScenarioConfig {
            p: 3,
            delta: 3.0,
            t_stream: 200,
            class_switch: 100,
            ..ScenarioConfig::default()
        },
        12,
    )?;
    let labels: Vec<Option<usize>> = vec![Some(0); sc.init.nrows()];
    let mut csv = Vec::new();
    write_feature_stream(&mut csv, &sc.init, &labels)?;
    let mut tail = Vec::new();
    write_feature_stream(&mut tail, &sc.stream, &vec![None; sc.stream.nrows()])?;
    csv.extend(
        tail.split(|&b| b == b'\n')
            .skip(1)
            .flat_map(|l| l.iter().copied().chain([b'\n'])),
    );

    let fs = read_feature_stream(csv.as_slice())?;
    let t_init = fs.leading_in_control();
    let obs = fs.observations;
    let init = ObservationStream::with_initial_ic(obs.rows(0, t_init).into_owned(), t_init)?;
    let stream = obs.rows(t_init, obs.nrows() - t_init).into_owned();
    println!(
        "read {} rows with {} columns; {t_init} in-control reference rows",
        obs.nrows(),
        fs.columns.len()
    );

    let truth = sc.truth.clone();
    let mut asked = Vec::new();
    let mut oracle = |t: usize| -> phmm_monitor::Result<usize> {
        asked.push(t);
        truth.get(t).copied().ok_or(Error::Oracle {
            t,
            reason: "no record".into(),
        })
    };
    let cfg = MonitorConfig {
        budget: 0.1,
        ..MonitorConfig::default()
    };
    let out = Monitor::new(cfg, 3).run(&init, &stream, &mut oracle, 1)?;
    let alarms = out.predictions.iter().filter(|&&c| c != 0).count();
    println!("{} labels requested at steps {:?}", asked.len(), asked);
    println!("{alarms} of {} rows flagged out of control", stream.nrows());
    Ok(())
}
