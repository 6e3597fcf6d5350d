use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::DecisionRecord;
use crate::error::Result;

/// One decision-log line. Times are absolute and 1-based (the first monitored
/// row is `t_init + 1`); states are 1-based with 1 = in control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: usize,
    pub predicted: usize,
    pub labeled: bool,
    pub label_source: String,
    pub true_state_if_labeled: Option<usize>,
    pub entropy: f64,
    pub p_exp: Option<f64>,
    pub v2: f64,
    pub p_exr: f64,
    #[serde(rename = "B_t")]
    pub b_t: f64,
    pub n_states: usize,
}

impl LogRow {
    pub fn from_record(rec: &DecisionRecord, t_init: usize) -> Self {
        Self {
            t: t_init + rec.t + 1,
            predicted: rec.predicted + 1,
            labeled: rec.labeled(),
            label_source: rec.label_source.as_str().to_string(),
            true_state_if_labeled: rec.true_class.map(|c| c + 1),
            entropy: rec.entropy,
            p_exp: rec.p_exp,
            v2: rec.v2,
            p_exr: rec.p_exr,
            b_t: rec.b_t,
            n_states: rec.n_states,
        }
    }
}

pub fn write_decision_log<W: Write>(out: W, log: &[DecisionRecord], t_init: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for rec in log {
        w.serialize(LogRow::from_record(rec, t_init))?;
    }
    if log.is_empty() {
        w.write_record([
            "t",
            "predicted",
            "labeled",
            "label_source",
            "true_state_if_labeled",
            "entropy",
            "p_exp",
            "v2",
            "p_exr",
            "B_t",
            "n_states",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decision_log<R: Read>(input: R) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
