//! Daily close CSV ingestion (Yahoo Finance export layout and anything with
//! a date column and a close column).

use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::estimator::{EstimatorError, PriceSeries};

#[derive(Debug, Error)]
pub enum PriceCsvError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: csv::Error },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: close {value} is not positive")]
    NonPositivePrice { line: u64, value: f64 },
    #[error("line {line}: close `{value}` is not a number")]
    UnparsableClose { line: u64, value: String },
    #[error("line {line}: date `{value}` is not ISO-8601")]
    UnparsableDate { line: u64, value: String },
    #[error("date {0} appears more than once")]
    DuplicateDate(NaiveDate),
    #[error("{found} usable rows, need at least {required}")]
    TooFewRows { found: usize, required: usize },
    #[error(transparent)]
    Series(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvColumns {
    pub date: String,
    pub close: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            date: "Date".into(),
            close: "Close".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPrices {
    pub series: PriceSeries,
    /// Rows skipped because the close was empty or `null`.
    pub skipped_rows: usize,
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    if let Ok(d) = raw.parse::<NaiveDate>() {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.date_naive());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|dt| dt.date())
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw.eq_ignore_ascii_case("null") || raw.eq_ignore_ascii_case("nan")
}

/// Reads `path`, keeping the given columns. Rows whose close is empty or
/// `null` are skipped and counted; everything else must parse. The result is
/// sorted by date and must have at least `min_rows` rows.
pub fn load_price_csv(
    path: &Path,
    columns: &CsvColumns,
    min_rows: usize,
) -> Result<LoadedPrices, PriceCsvError> {
    let read_err = |source| PriceCsvError::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(read_err)?;
    let headers = reader.headers().map_err(read_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| PriceCsvError::MissingColumn(name.to_string()))
    };
    let date_col = find(&columns.date)?;
    let close_col = find(&columns.close)?;

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    let mut skipped_rows = 0;
    for record in reader.records() {
        let record = record.map_err(read_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_close = record.get(close_col).unwrap_or("");
        if is_missing(raw_close) {
            skipped_rows += 1;
            continue;
        }
        let raw_date = record.get(date_col).unwrap_or("");
        let date = parse_date(raw_date).ok_or_else(|| PriceCsvError::UnparsableDate {
            line,
            value: raw_date.to_string(),
        })?;
        let close: f64 = raw_close
            .parse()
            .map_err(|_| PriceCsvError::UnparsableClose {
                line,
                value: raw_close.to_string(),
            })?;
        if !(close > 0.0 && close.is_finite()) {
            return Err(PriceCsvError::NonPositivePrice { line, value: close });
        }
        rows.push((date, close));
    }

    rows.sort_by_key(|&(d, _)| d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(PriceCsvError::DuplicateDate(w[0].0));
    }
    if rows.len() < min_rows {
        return Err(PriceCsvError::TooFewRows {
            found: rows.len(),
            required: min_rows,
        });
    }
    let (dates, closes) = rows.into_iter().unzip();
    Ok(LoadedPrices {
        series: PriceSeries::new(dates, closes)?,
        skipped_rows,
    })
}
