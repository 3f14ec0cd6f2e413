//! Return-panel ingestion and rolling windows.
//!
//! Panels hold simple returns as decimal fractions (0.012 = 1.2%). Percent
//! sources (the Fama-French library files) are converted exactly once at
//! parse time, so everything downstream works in one unit system.

use chrono::{Datelike, Months, NaiveDate};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling frequency of a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Monthly,
}

/// Unit convention of the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Values are percentages and are divided by 100 at parse time.
    Percent,
    /// Values are already decimal fractions.
    Decimal,
}

/// What to do with sentinel missing values (-99.99, -999) in the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Fail with the offending row index.
    #[default]
    Error,
    /// Drop the whole row and continue.
    DropRow,
}

/// Window length for [`ReturnPanel::window`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Span {
    Days(u32),
    Months(u32),
    Years(u32),
}

impl Span {
    fn subtract_from(&self, end: NaiveDate) -> NaiveDate {
        match *self {
            Span::Days(d) => end - chrono::Days::new(u64::from(d)),
            Span::Months(m) => end - Months::new(m),
            Span::Years(y) => end - Months::new(12 * y),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty panel: no data rows")]
    EmptyPanel,
    #[error("row {row}: malformed date token `{token}`")]
    MalformedDate { row: usize, token: String },
    #[error("row {row}, column `{column}`: non-numeric cell `{cell}`")]
    NonNumericCell {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("row {row}: duplicate date {date}")]
    DuplicateDate { row: usize, date: NaiveDate },
    #[error("row {row}, column `{column}`: missing-value sentinel {value}")]
    MissingValue {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row}: expected {expected} value fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("header declares no asset columns")]
    NoAssets,
    #[error("duplicate asset identifier `{0}` in header")]
    DuplicateAsset(String),
    #[error("row {row}: date frequency inconsistent with panel (token `{token}`)")]
    MixedFrequency { row: usize, token: String },
    #[error("dates not strictly increasing at row {row}")]
    NonIncreasingDates { row: usize },
    #[error("return matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("row {row}, column `{column}`: return {value} is not finite or <= -1")]
    InvalidReturn {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("monthly panel has two rows in {year}-{month:02}")]
    DuplicateMonth { year: i32, month: u32 },
    #[error("window end {0} not found in panel")]
    EndNotFound(NaiveDate),
    #[error("window is empty")]
    EmptyWindow,
    #[error("window needs history back to {start}, panel begins {first}")]
    InsufficientHistory { start: NaiveDate, first: NaiveDate },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dated matrix of per-asset simple returns. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: Array2<f64>,
    frequency: Frequency,
}

impl ReturnPanel {
    /// Validates every panel invariant and takes ownership of the parts.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        returns: Array2<f64>,
        frequency: Frequency,
    ) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::EmptyPanel);
        }
        if assets.is_empty() {
            return Err(DataError::NoAssets);
        }
        for (i, a) in assets.iter().enumerate() {
            if assets[..i].contains(a) {
                return Err(DataError::DuplicateAsset(a.clone()));
            }
        }
        if returns.nrows() != dates.len() || returns.ncols() != assets.len() {
            return Err(DataError::ShapeMismatch {
                rows: returns.nrows(),
                cols: returns.ncols(),
                expected_rows: dates.len(),
                expected_cols: assets.len(),
            });
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                let row = dates.iter().position(|d| *d == w[1]).unwrap();
                return Err(DataError::NonIncreasingDates { row });
            }
        }
        if frequency == Frequency::Monthly {
            for w in dates.windows(2) {
                if (w[0].year(), w[0].month()) == (w[1].year(), w[1].month()) {
                    return Err(DataError::DuplicateMonth {
                        year: w[1].year(),
                        month: w[1].month(),
                    });
                }
            }
        }
        for (q, date_row) in returns.outer_iter().enumerate() {
            for (n, &v) in date_row.iter().enumerate() {
                if !v.is_finite() || v <= -1.0 {
                    return Err(DataError::InvalidReturn {
                        row: q,
                        column: assets[n].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            returns,
            frequency,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    /// Number of observations Q.
    pub fn num_obs(&self) -> usize {
        self.dates.len()
    }

    /// Number of assets N.
    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    /// Sub-panel of all rows with date in `(end - span, end]`.
    ///
    /// `end` must be an observation date. The panel must reach back far
    /// enough that the window is fully covered: the first panel date has to
    /// be at or before `end - span` plus one period of grace (7 days for
    /// daily data to ride over market holidays, one month for monthly).
    pub fn window(&self, end: NaiveDate, span: Span) -> Result<ReturnPanel, DataError> {
        if !self.dates.contains(&end) {
            return Err(DataError::EndNotFound(end));
        }
        let start = span.subtract_from(end);
        let grace = match self.frequency {
            Frequency::Daily => start + chrono::Days::new(7),
            Frequency::Monthly => start + Months::new(1),
        };
        if self.dates[0] > grace {
            return Err(DataError::InsufficientHistory {
                start,
                first: self.dates[0],
            });
        }
        let keep: Vec<usize> = (0..self.dates.len())
            .filter(|&i| self.dates[i] > start && self.dates[i] <= end)
            .collect();
        if keep.len() < 2 {
            return Err(DataError::EmptyWindow);
        }
        let dates: Vec<NaiveDate> = keep.iter().map(|&i| self.dates[i]).collect();
        let mut returns = Array2::<f64>::zeros((keep.len(), self.num_assets()));
        for (out, &src) in keep.iter().enumerate() {
            returns.row_mut(out).assign(&self.returns.row(src));
        }
        ReturnPanel::new(dates, self.assets.clone(), returns, self.frequency)
    }

    /// Serialize to the JSON fixture form `{dates, assets, returns, frequency}`.
    pub fn to_json(&self) -> Result<String, DataError> {
        let doc = PanelDoc {
            dates: self.dates.iter().map(|d| d.to_string()).collect(),
            assets: self.assets.clone(),
            returns: self
                .returns
                .outer_iter()
                .map(|r| r.to_vec())
                .collect(),
            frequency: self.frequency,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<ReturnPanel, DataError> {
        let doc: PanelDoc = serde_json::from_str(text)?;
        let mut dates = Vec::with_capacity(doc.dates.len());
        for (row, d) in doc.dates.iter().enumerate() {
            let date = d
                .parse::<NaiveDate>()
                .map_err(|_| DataError::MalformedDate {
                    row,
                    token: d.clone(),
                })?;
            dates.push(date);
        }
        let q = doc.returns.len();
        let n = doc.assets.len();
        let mut returns = Array2::<f64>::zeros((q, n));
        for (i, row) in doc.returns.iter().enumerate() {
            if row.len() != n {
                return Err(DataError::RaggedRow {
                    row: i,
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                returns[[i, j]] = v;
            }
        }
        ReturnPanel::new(dates, doc.assets, returns, doc.frequency)
    }

    /// Write the panel back out as CSV with date tokens matching the
    /// frequency (YYYYMM or YYYYMMDD) and decimal-fraction values.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("Date");
        for a in &self.assets {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (i, d) in self.dates.iter().enumerate() {
            match self.frequency {
                Frequency::Monthly => out.push_str(&format!("{:04}{:02}", d.year(), d.month())),
                Frequency::Daily => {
                    out.push_str(&format!("{:04}{:02}{:02}", d.year(), d.month(), d.day()))
                }
            }
            for v in self.returns.row(i) {
                out.push(',');
                // Shortest round-trip representation keeps reparses exact.
                out.push_str(&format!("{}", v));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct PanelDoc {
    dates: Vec<String>,
    assets: Vec<String>,
    returns: Vec<Vec<f64>>,
    frequency: Frequency,
}

/// Fama-French sentinel values marking missing data.
const SENTINELS: [f64; 3] = [-99.99, -999.0, -999.99];

fn parse_date_token(token: &str, row: usize) -> Result<(NaiveDate, Frequency), DataError> {
    let t = token.trim();
    let malformed = || DataError::MalformedDate {
        row,
        token: t.to_string(),
    };
    if !t.chars().all(|c| c.is_ascii_digit()) {
        return Err(malformed());
    }
    match t.len() {
        6 => {
            let year: i32 = t[0..4].parse().map_err(|_| malformed())?;
            let month: u32 = t[4..6].parse().map_err(|_| malformed())?;
            let date = NaiveDate::from_ymd_opt(year, month, 1).ok_or_else(malformed)?;
            Ok((date, Frequency::Monthly))
        }
        8 => {
            let year: i32 = t[0..4].parse().map_err(|_| malformed())?;
            let month: u32 = t[4..6].parse().map_err(|_| malformed())?;
            let day: u32 = t[6..8].parse().map_err(|_| malformed())?;
            let date = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(malformed)?;
            Ok((date, Frequency::Daily))
        }
        _ => Err(malformed()),
    }
}

/// Parse a returns CSV: header row names the assets, first column is a date
/// token (`YYYYMM` monthly, `YYYYMMDD` daily), remaining cells numeric.
///
/// With `layout = Percent` every value is divided by 100. Sentinel missing
/// values are rejected or dropped per `missing`.
pub fn parse_returns_csv(
    text: &str,
    layout: Layout,
    missing: MissingPolicy,
) -> Result<ReturnPanel, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|_| DataError::EmptyPanel)?
        .clone();
    if headers.len() < 2 {
        return Err(DataError::NoAssets);
    }
    let assets: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = assets.len();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut frequency: Option<Frequency> = None;

    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|_| DataError::RaggedRow {
            row: row_idx,
            expected: n + 1,
            found: 0,
        })?;
        if record.len() == 0 || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        if record.len() != n + 1 {
            return Err(DataError::RaggedRow {
                row: row_idx,
                expected: n + 1,
                found: record.len(),
            });
        }
        let (date, freq) = parse_date_token(&record[0], row_idx)?;
        match frequency {
            None => frequency = Some(freq),
            Some(f) if f != freq => {
                return Err(DataError::MixedFrequency {
                    row: row_idx,
                    token: record[0].to_string(),
                })
            }
            _ => {}
        }
        if dates.contains(&date) {
            return Err(DataError::DuplicateDate {
                row: row_idx,
                date,
            });
        }
        let mut values = Vec::with_capacity(n);
        let mut drop_row = false;
        for (col, cell) in record.iter().skip(1).enumerate() {
            let raw: f64 = cell.parse().map_err(|_| DataError::NonNumericCell {
                row: row_idx,
                column: assets[col].clone(),
                cell: cell.to_string(),
            })?;
            if SENTINELS.contains(&raw) {
                match missing {
                    MissingPolicy::Error => {
                        return Err(DataError::MissingValue {
                            row: row_idx,
                            column: assets[col].clone(),
                            value: raw,
                        })
                    }
                    MissingPolicy::DropRow => {
                        drop_row = true;
                        break;
                    }
                }
            }
            values.push(match layout {
                Layout::Percent => raw / 100.0,
                Layout::Decimal => raw,
            });
        }
        if drop_row {
            continue;
        }
        dates.push(date);
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(DataError::EmptyPanel);
    }
    let q = rows.len();
    let mut returns = Array2::<f64>::zeros((q, n));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            returns[[i, j]] = v;
        }
    }
    ReturnPanel::new(dates, assets, returns, frequency.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monthly_fixture(months: usize) -> ReturnPanel {
        let mut dates = Vec::new();
        let mut d = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
        for _ in 0..months {
            dates.push(d);
            d = d + Months::new(1);
        }
        let returns =
            Array2::from_shape_fn((months, 2), |(q, n)| 0.001 * (q as f64) + 0.01 * (n as f64));
        ReturnPanel::new(dates, vec!["A".into(), "B".into()], returns, Frequency::Monthly).unwrap()
    }

    #[test]
    fn percent_layout_divides_by_100() {
        let csv = "Date,Agric,Food\n198101,2.51,-0.30\n";
        let p = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap();
        assert_eq!(p.num_obs(), 1);
        assert_eq!(p.assets(), &["Agric".to_string(), "Food".to_string()]);
        assert!((p.returns()[[0, 0]] - 0.0251).abs() < 1e-15);
        assert!((p.returns()[[0, 1]] + 0.0030).abs() < 1e-15);
        assert_eq!(p.frequency(), Frequency::Monthly);
    }

    #[test]
    fn sentinel_rejected_with_row_index() {
        let csv = "Date,A\n198101,1.0\n198102,-99.99\n";
        let err = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap_err();
        match err {
            DataError::MissingValue { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sentinel_dropped_under_drop_policy() {
        let csv = "Date,A\n198101,1.0\n198102,-99.99\n198103,2.0\n";
        let p = parse_returns_csv(csv, Layout::Percent, MissingPolicy::DropRow).unwrap();
        assert_eq!(p.num_obs(), 2);
    }

    #[test]
    fn duplicate_date_rejected() {
        let csv = "Date,A\n198101,1.0\n198101,2.0\n";
        let err = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, DataError::DuplicateDate { row: 1, .. }));
    }

    #[test]
    fn empty_panel_rejected() {
        let err = parse_returns_csv("Date,A\n", Layout::Percent, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, DataError::EmptyPanel));
    }

    #[test]
    fn malformed_date_rejected() {
        let csv = "Date,A\n1981,1.0\n";
        let err = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, DataError::MalformedDate { row: 0, .. }));
    }

    #[test]
    fn non_numeric_cell_rejected() {
        let csv = "Date,A\n198101,abc\n";
        let err = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, DataError::NonNumericCell { row: 0, .. }));
    }

    #[test]
    fn ff48_dimension_fixture() {
        // 480 monthly rows for 48 assets.
        let mut csv = String::from("Date");
        for i in 0..48 {
            csv.push_str(&format!(",S{i}"));
        }
        csv.push('\n');
        let mut d = NaiveDate::from_ymd_opt(1981, 1, 1).unwrap();
        for _ in 0..480 {
            csv.push_str(&format!("{:04}{:02}", d.year(), d.month()));
            for i in 0..48 {
                csv.push_str(&format!(",{}", 0.1 * (i as f64 % 5.0)));
            }
            csv.push('\n');
            d = d + Months::new(1);
        }
        let p = parse_returns_csv(&csv, Layout::Percent, MissingPolicy::Error).unwrap();
        assert_eq!(p.num_obs(), 480);
        assert_eq!(p.num_assets(), 48);
    }

    #[test]
    fn window_monthly_exact_count() {
        let p = monthly_fixture(120);
        let end = NaiveDate::from_ymd_opt(2019, 12, 1).unwrap();
        let w = p.window(end, Span::Months(60)).unwrap();
        assert_eq!(w.num_obs(), 60);
        assert_eq!(*w.dates().last().unwrap(), end);
        assert_eq!(w.dates()[0], NaiveDate::from_ymd_opt(2015, 1, 1).unwrap());
    }

    #[test]
    fn window_idempotent() {
        let p = monthly_fixture(120);
        let end = NaiveDate::from_ymd_opt(2019, 12, 1).unwrap();
        let w1 = p.window(end, Span::Months(60)).unwrap();
        let w2 = w1.window(end, Span::Months(60)).unwrap();
        assert_eq!(w1, w2);
    }

    #[test]
    fn window_span_exceeding_history_errors() {
        let p = monthly_fixture(24);
        let end = NaiveDate::from_ymd_opt(2011, 12, 1).unwrap();
        let err = p.window(end, Span::Years(5)).unwrap_err();
        assert!(matches!(err, DataError::InsufficientHistory { .. }));
    }

    #[test]
    fn window_end_not_found() {
        let p = monthly_fixture(24);
        let end = NaiveDate::from_ymd_opt(2011, 12, 15).unwrap();
        assert!(matches!(
            p.window(end, Span::Months(6)),
            Err(DataError::EndNotFound(_))
        ));
    }

    #[test]
    fn window_daily_interval_filter() {
        let mut dates = Vec::new();
        let mut d = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
        for _ in 0..3653 {
            dates.push(d);
            d = d + chrono::Days::new(1);
        }
        let q = dates.len();
        let returns = Array2::from_shape_fn((q, 1), |(i, _)| (i as f64) * 1e-5);
        let p = ReturnPanel::new(dates, vec!["A".into()], returns, Frequency::Daily).unwrap();
        let end = NaiveDate::from_ymd_opt(2020, 12, 31).unwrap();
        let w = p.window(end, Span::Years(5)).unwrap();
        assert!(*w.dates().first().unwrap() > NaiveDate::from_ymd_opt(2015, 12, 31).unwrap());
        assert_eq!(*w.dates().last().unwrap(), end);
        // 2016 is a leap year: 5 calendar years = 1827 days.
        assert_eq!(w.num_obs(), 1827);
    }

    #[test]
    fn json_roundtrip_identical() {
        let p = monthly_fixture(7);
        let text = p.to_json().unwrap();
        let back = ReturnPanel::from_json(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn csv_roundtrip_identical() {
        let p = monthly_fixture(7);
        let text = p.to_csv_string();
        let back = parse_returns_csv(&text, Layout::Decimal, MissingPolicy::Error).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn return_at_or_below_minus_one_rejected() {
        let csv = "Date,A\n19810105,-120.0\n";
        let err = parse_returns_csv(csv, Layout::Percent, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, DataError::InvalidReturn { .. }));
    }
}
