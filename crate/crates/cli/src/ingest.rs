//! CSV input and output of discretized functional time series.

use std::io::{Read, Write};
use std::path::Path;

use specnorm::estimator::MIN_SERIES_LEN;
use specnorm::TimeSeriesSample;

use crate::error::{AtStage, Failure, Stage};

fn data_err(msg: impl Into<String>) -> Failure {
    Failure::data(Stage::Ingest, msg)
}

/// Reads a `T x p` numeric table; a first row with no numeric cell is taken
/// as a header. Rows and columns in messages are 1-based file coordinates.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesSample<f64>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| data_err(format!("row {}: {e}", i + 1)))?;
        let row = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if i == 0 && record.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        match dim {
            None => dim = Some(record.len()),
            Some(p) if p != record.len() => {
                return Err(data_err(format!("row {row}: {} columns, expected {p}", record.len())));
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let x: f64 =
                cell.parse().map_err(|_| data_err(format!("row {row}, column {}: '{cell}' is not a number", j + 1)))?;
            if !x.is_finite() {
                return Err(data_err(format!("row {row}, column {}: non-finite value '{cell}'", j + 1)));
            }
            data.push(x);
        }
        rows += 1;
    }
    let dim = dim.ok_or_else(|| data_err("no data rows"))?;
    if rows < MIN_SERIES_LEN {
        return Err(data_err(format!("{rows} observations, need at least {MIN_SERIES_LEN}")));
    }
    TimeSeriesSample::from_row_major(rows, dim, data).at(Stage::Ingest)
}

pub fn ingest_csv(path: &Path) -> Result<TimeSeriesSample<f64>, Failure> {
    let file = std::fs::File::open(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

/// Writes the sample with a `x1,...,xp` header and 17 significant digits,
/// so that reading it back reproduces every value exactly.
pub fn write_csv<W: Write>(sample: &TimeSeriesSample<f64>, writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((1..=sample.dim()).map(|j| format!("x{j}")))?;
    for t in 0..sample.len() {
        w.write_record(sample.row(t).iter().map(|x| format!("{x:.16e}")))?;
    }
    w.flush()
}
