//! CSV readers and writers for series, trajectories and selection tables.
//!
//! Series files have a header `y` (optionally `y,x`), one row per
//! observation, and may carry the conditioning value in a leading comment
//! line `# y0=<value>`; y0 defaults to 0. States in the `x` column are
//! 1-based.

use std::io::{BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::estimator::TrajectoryPoint;
use crate::model::{HiddenPath, ModelSpec, ObservationSeries};
use crate::selection::SelectionResult;

fn format_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("line {line}: non-finite value {field:?}")));
    }
    Ok(v)
}

/// Reads a series and, when present, the hidden path (returned 0-based).
pub fn read_series<R: Read>(reader: R) -> Result<(ObservationSeries, Option<HiddenPath>)> {
    let mut text = String::new();
    BufReader::new(reader)
        .read_to_string(&mut text)
        .map_err(format_err)?;
    let mut y0 = 0.0;
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("y0=") {
                y0 = parse_f64(v, k + 1)?;
            }
        } else if !line.is_empty() {
            break;
        }
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(format_err)?.clone();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Format("missing `y` column".into()))?;
    let x_col = headers.iter().position(|h| h == "x");

    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(format_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let y = rec
            .get(y_col)
            .ok_or_else(|| Error::Format(format!("line {line}: missing y")))?;
        ys.push(parse_f64(y, line)?);
        if let Some(c) = x_col {
            let x = rec.get(c).unwrap_or("");
            let state: usize = x
                .parse()
                .map_err(|_| Error::Format(format!("line {line}: bad state {x:?}")))?;
            if state == 0 {
                return Err(Error::Format(format!("line {line}: states are numbered from 1")));
            }
            xs.push(state - 1);
        }
    }
    if ys.is_empty() {
        return Err(Error::Format("series has no observations".into()));
    }
    let series = ObservationSeries::new(y0, ys)?;
    let path = x_col.map(|_| HiddenPath(xs));
    Ok((series, path))
}

pub fn write_series<W: Write>(
    mut writer: W,
    series: &ObservationSeries,
    path: Option<&HiddenPath>,
) -> Result<()> {
    if let Some(p) = path {
        if p.len() != series.len() {
            return Err(Error::invalid("path and series lengths differ"));
        }
    }
    writeln!(writer, "# y0={}", series.y0()).map_err(format_err)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    match path {
        Some(p) => {
            w.write_record(["y", "x"]).map_err(format_err)?;
            for (y, x) in series.values().iter().zip(p.states()) {
                w.write_record([y.to_string(), (x + 1).to_string()])
                    .map_err(format_err)?;
            }
        }
        None => {
            w.write_record(["y"]).map_err(format_err)?;
            for y in series.values() {
                w.write_record([y.to_string()]).map_err(format_err)?;
            }
        }
    }
    w.flush().map_err(format_err)
}

/// Trajectory table: iteration, step size, flattened parameters and the
/// periodic log-likelihood (blank when not computed).
pub fn write_trajectory<W: Write>(writer: W, m: usize, points: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["iteration".to_string(), "gamma".to_string()];
    header.extend(ModelSpec::flat_param_names(m));
    header.push("loglik".to_string());
    w.write_record(&header).map_err(format_err)?;
    for p in points {
        let mut rec = vec![p.iteration.to_string(), p.gamma.to_string()];
        rec.extend(p.params.iter().map(|v| v.to_string()));
        rec.push(p.loglik.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(format_err)?;
    }
    w.flush().map_err(format_err)
}

fn fixed2(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.2}")
    }
}

/// Selection table with columns m, negloglik, pen, criterion (two decimals;
/// blank for failed candidates).
pub fn write_selection<W: Write>(writer: W, result: &SelectionResult) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["m", "negloglik", "pen", "criterion"])
        .map_err(format_err)?;
    for r in &result.rows {
        w.write_record([r.m.to_string(), fixed2(r.negloglik), fixed2(r.pen), fixed2(r.criterion)])
            .map_err(format_err)?;
    }
    w.flush().map_err(format_err)
}
