//! Wide CSV input and output, one row per pair.
//!
//! The header is `pair_id,sequence,y_1A,y_1B,y_2A,y_2B`. Sequence is `1` (AB)
//! or `2` (BA). An empty cell or `NA` marks a missing response.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crossmix_core::{PairRecord, Sequence};

/// Required header, in order.
pub const HEADER: [&str; 6] = ["pair_id", "sequence", "y_1A", "y_1B", "y_2A", "y_2B"];

/// Problems that stop ingestion of a whole file.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    /// The input path does not exist.
    #[error("input file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    /// The first row is not the required header.
    #[error("malformed header: expected `{}`, found `{found}`", HEADER.join(","))]
    MalformedHeader {
        /// Header as read.
        found: String,
    },
    /// Underlying read failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// CSV syntax error.
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Why a row was dropped.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    /// A previous row used the same id.
    DuplicateId,
    /// The id cell is empty.
    EmptyId,
    /// Not six fields.
    FieldCount(usize),
    /// Sequence other than 1 or 2.
    BadSequence(String),
    /// A response cell is neither numeric, empty nor `NA`.
    NonNumeric {
        /// Column name.
        column: &'static str,
        /// Offending text.
        value: String,
    },
    /// Every response is missing.
    AllMissing,
}

impl RejectReason {
    /// Whether the row is malformed, as opposed to well formed but empty.
    pub fn is_malformed(&self) -> bool {
        !matches!(self, RejectReason::AllMissing)
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::DuplicateId => f.write_str("duplicate pair_id"),
            RejectReason::EmptyId => f.write_str("empty pair_id"),
            RejectReason::FieldCount(n) => write!(f, "expected 6 fields, found {n}"),
            RejectReason::BadSequence(s) => write!(f, "sequence `{s}` is not 1 or 2"),
            RejectReason::NonNumeric { column, value } => write!(f, "{column}: `{value}` is not numeric"),
            RejectReason::AllMissing => f.write_str("all responses missing"),
        }
    }
}

/// A dropped row.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number in the file, header included.
    pub line: u64,
    /// Id as read; may be empty.
    pub pair_id: String,
    /// Reason.
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} (pair `{}`): {}", self.line, self.pair_id, self.reason)
    }
}

/// Parsed input with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Accepted records in file order.
    pub records: Vec<PairRecord>,
    /// Where the data came from.
    pub source: String,
    /// Data rows read, excluding the header.
    pub rows: usize,
    /// Dropped rows.
    pub rejected: Vec<Rejection>,
}

impl Dataset {
    /// Rejections other than all-missing rows.
    pub fn malformed(&self) -> impl Iterator<Item = &Rejection> {
        self.rejected.iter().filter(|r| r.reason.is_malformed())
    }
}

/// Read a CSV file.
pub fn parse_csv(path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io(e),
    })?;
    parse_reader(file, &path.display().to_string())
}

fn parse_value(cell: &str, column: &'static str) -> Result<Option<f64>, RejectReason> {
    if cell.is_empty() || cell == "NA" {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(RejectReason::NonNumeric { column, value: cell.to_string() }),
    }
}

fn parse_row(row: &csv::StringRecord) -> Result<PairRecord, RejectReason> {
    if row.len() != HEADER.len() {
        return Err(RejectReason::FieldCount(row.len()));
    }
    if row[0].is_empty() {
        return Err(RejectReason::EmptyId);
    }
    let sequence = match &row[1] {
        "1" => Sequence::AB,
        "2" => Sequence::BA,
        other => return Err(RejectReason::BadSequence(other.to_string())),
    };
    let mut y = [None; 4];
    for (k, slot) in y.iter_mut().enumerate() {
        *slot = parse_value(&row[k + 2], HEADER[k + 2])?;
    }
    if y.iter().all(Option::is_none) {
        return Err(RejectReason::AllMissing);
    }
    PairRecord::new(&row[0], sequence, y).map_err(|_| RejectReason::AllMissing)
}

/// Read CSV from any reader. `source` is recorded as provenance.
pub fn parse_reader<R: Read>(reader: R, source: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(DataError::MalformedHeader { found: String::new() }),
    };
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(DataError::MalformedHeader { found: header.iter().collect::<Vec<_>>().join(",") });
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut count = 0;
    for row in rows {
        let row = row?;
        count += 1;
        let line = row.position().map_or(count as u64 + 1, |p| p.line());
        let pair_id = row.get(0).unwrap_or_default().to_string();
        let parsed = if !pair_id.is_empty() && !seen.insert(pair_id.clone()) {
            Err(RejectReason::DuplicateId)
        } else {
            parse_row(&row)
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(Rejection { line, pair_id, reason }),
        }
    }
    Ok(Dataset { records, source: source.to_string(), rows: count, rejected })
}

/// Write records in the input format. Values use the shortest decimal
/// representation that reads back to the same `f64`.
pub fn write_csv<W: Write>(records: &[PairRecord], writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        let mut row = vec![r.pair_id().to_string(), r.sequence().number().to_string()];
        row.extend(r.values().iter().map(|v| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
