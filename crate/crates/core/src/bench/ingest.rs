use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::phmm::ObservationStream;

/// Column holding the optional 1-based state label.
pub const LABEL_COLUMN: &str = "label";

/// A feature stream read from CSV: one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub columns: Vec<String>,
    pub observations: DMatrix<f64>,
    /// 0-based states; `None` where the label cell is blank or absent.
    pub labels: Vec<Option<usize>>,
}

impl FeatureStream {
    /// Length of the leading run of in-control labels.
    pub fn leading_in_control(&self) -> usize {
        self.labels.iter().take_while(|l| **l == Some(0)).count()
    }

    pub fn to_observation_stream(&self, t_init: usize) -> Result<ObservationStream> {
        ObservationStream::new(self.observations.clone(), self.labels.clone(), t_init)
    }
}

/// Reads a headered CSV of numeric feature columns plus an optional `label`
/// column (1 = in control, blank = unlabeled).
pub fn read_feature_stream<R: Read>(input: R) -> Result<FeatureStream> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let label_idx = header.iter().position(|h| h == LABEL_COLUMN);
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if columns.is_empty() {
        return Err(Error::invalid("feature stream has no feature columns"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        for (i, cell) in rec.iter().enumerate() {
            if Some(i) == label_idx {
                let cell = cell.trim();
                labels.push(if cell.is_empty() {
                    None
                } else {
                    let v: usize = cell
                        .parse()
                        .map_err(|_| Error::invalid(format!("row {row}: label {cell:?} is not a positive integer")))?;
                    if v == 0 {
                        return Err(Error::invalid(format!("row {row}: labels are 1-based")));
                    }
                    Some(v - 1)
                });
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::invalid(format!("row {row}, column {}: {cell:?} is not a number", &header[i]))
                })?;
                values.push(v);
            }
        }
        if label_idx.is_none() {
            labels.push(None);
        }
    }
    let n = labels.len();
    Ok(FeatureStream {
        observations: DMatrix::from_row_slice(n, columns.len(), &values),
        columns,
        labels,
    })
}

/// Writes `observations` as `x1..xp` columns with a `label` column.
pub fn write_feature_stream<W: Write>(out: W, observations: &DMatrix<f64>, labels: &[Option<usize>]) -> Result<()> {
    if labels.len() != observations.nrows() {
        return Err(Error::DimensionMismatch {
            expected: observations.nrows(),
            actual: labels.len(),
        });
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let p = observations.ncols();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push(LABEL_COLUMN.to_string());
    w.write_record(&header)?;
    for (t, label) in labels.iter().enumerate() {
        let mut rec: Vec<String> = observations.row(t).iter().map(|v| v.to_string()).collect();
        rec.push(label.map(|l| (l + 1).to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
