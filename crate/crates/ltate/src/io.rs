//! CSV and JSON input/output.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ltate_core::efficiency::AuditResult;
use ltate_core::harness::CellResult;
use ltate_core::{Dataset, ModelKind};
use serde::Serialize;

use ltate_core::dataset::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Dataset(#[from] DatasetError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

/// Reads a header plus string rows; row lengths are checked by the dataset.
pub fn parse_table<R: Read>(reader: R, path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), IoError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

pub fn read_dataset(path: &Path, model: ModelKind) -> Result<Dataset, IoError> {
    let f = File::open(path).map_err(file_err(path))?;
    let (header, rows) = parse_table(f, path)?;
    Ok(Dataset::from_table(model, &header, &rows)?)
}

pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_file(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), IoError> {
    let f = File::create(path).map_err(file_err(path))?;
    write_table(BufWriter::new(f), header, rows).map_err(|source| IoError::Csv { path: path.to_path_buf(), source })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<(), IoError> {
    let (header, rows) = ds.to_table();
    write_table_file(path, &header, &rows)
}

/// Pretty JSON with a trailing newline, to `path` or standard output.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(file_err(p)),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes()).map_err(file_err(Path::new("<stdout>")))
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// One row per cell.
pub fn cells_table(cells: &[CellResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = [
        "estimator", "phi", "n", "true_tau", "bias", "abs_bias", "variance", "rmse", "coverage", "mean_se", "bias_se", "reps",
        "successes", "failures",
    ]
    .map(String::from)
    .to_vec();
    let rows = cells
        .iter()
        .map(|c| {
            vec![
                c.estimator.name().to_string(),
                num(c.phi),
                c.n.to_string(),
                num(c.true_tau),
                num(c.bias),
                num(c.abs_bias),
                num(c.variance),
                num(c.rmse),
                num(c.coverage),
                num(c.mean_se),
                num(c.bias_se),
                c.reps.to_string(),
                c.successes.to_string(),
                c.failures.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

/// Long format (`estimator, phi, n, metric, value`), convenient for plotting tools.
pub fn cells_long_table(cells: &[CellResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["estimator", "phi", "n", "metric", "value"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for c in cells {
        for (metric, v) in [
            ("abs_bias", c.abs_bias),
            ("rmse", c.rmse),
            ("variance", c.variance),
            ("coverage", c.coverage),
            ("noncoverage", 1.0 - c.coverage),
            ("mean_se", c.mean_se),
        ] {
            rows.push(vec![c.estimator.name().to_string(), num(c.phi), c.n.to_string(), metric.to_string(), num(v)]);
        }
    }
    (header, rows)
}

pub fn audit_table(results: &[AuditResult]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["moment", "direction", "derivative", "se"].map(String::from).to_vec();
    let rows = results
        .iter()
        .map(|r| vec![r.moment.clone(), r.direction.clone(), num(r.derivative), num(r.se)])
        .collect();
    (header, rows)
}
