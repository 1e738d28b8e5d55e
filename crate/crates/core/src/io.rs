//! CSV readers for datasets (`x1,...,xd[,y]`) and measures (`x1,...,xd,w`).
//!
//! Errors carry the 1-based line number of the offending record.

use crate::embeddings::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::points::{Dataset, Points};

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        message: message.into(),
    })
}

/// Validates a header of the form `x1,...,xd` followed by an optional (or
/// required) trailing column named `last`. Returns `d` and whether the
/// trailing column is present.
fn check_header(header: &csv::StringRecord, last: &str, required: bool) -> Result<(usize, bool)> {
    let names: Vec<&str> = header.iter().collect();
    let has_last = names.last().is_some_and(|n| n.eq_ignore_ascii_case(last));
    let d = if has_last { names.len() - 1 } else { names.len() };
    if required && !has_last {
        return parse_err(1, format!("header must end with a '{last}' column"));
    }
    if d == 0 {
        return parse_err(1, "header needs at least one input column x1");
    }
    for (i, name) in names.iter().take(d).enumerate() {
        let expected = format!("x{}", i + 1);
        if !name.eq_ignore_ascii_case(&expected) {
            return parse_err(1, format!("expected column '{expected}', found '{name}'"));
        }
    }
    Ok((d, has_last))
}

struct Table {
    dim: usize,
    coords: Vec<f64>,
    last: Option<Vec<f64>>,
}

fn read_table(text: &str, last: &str, required: bool) -> Result<Option<Table>> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return parse_err(1, e.to_string()),
    };
    let (dim, has_last) = check_header(&header, last, required)?;
    let mut coords = Vec::new();
    let mut tail = has_last.then(Vec::new);
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                return parse_err(line, e.to_string());
            }
        };
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = match field.parse() {
                Ok(v) => v,
                Err(_) => {
                    return parse_err(line, format!("column {}: '{field}' is not a number", j + 1))
                }
            };
            if !v.is_finite() {
                return parse_err(line, format!("column {}: non-finite value", j + 1));
            }
            if j < dim {
                coords.push(v);
            } else if let Some(t) = tail.as_mut() {
                t.push(v);
            }
        }
    }
    Ok(Some(Table {
        dim,
        coords,
        last: tail,
    }))
}

/// Reads a dataset. An empty text yields an empty one-dimensional dataset
/// with outputs.
pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    match read_table(text, "y", false)? {
        None => Dataset::labelled(Points::empty(1)?, Vec::new()),
        Some(t) => Dataset::new(Points::new(t.coords, t.dim)?, t.last),
    }
}

/// Reads input locations only; a trailing `y` column is ignored.
pub fn parse_points_csv(text: &str) -> Result<Points> {
    Ok(parse_dataset_csv(text)?.x)
}

/// Reads a weighted point set.
pub fn parse_measure_csv(text: &str) -> Result<DiscreteMeasure> {
    match read_table(text, "w", true)? {
        None => parse_err(1, "empty measure file"),
        Some(t) => DiscreteMeasure::new(Points::new(t.coords, t.dim)?, t.last.unwrap_or_default()),
    }
}
