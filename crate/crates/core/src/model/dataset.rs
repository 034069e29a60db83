//! Dataset CSV files.
//!
//! ```text
//! # free-form comment lines (config, PRNG name)
//! timestamp_ns,rack_id,pressure_bar,flow_lpm,humidity_rh,temp_c,is_leaking[,time_to_leak_h]
//! 1735689600000000000,R01,2.0132,1.4987,49.2210,25.1100,0[,8.0000]
//! ```
//!
//! UTF-8, LF line endings. The `time_to_leak_h` column appears only in
//! labeled exports.

use super::line::{column_name, parse_decimal, parse_reading_fields, write_reading, ParseError};
use super::SensorReading;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use thiserror::Error;

pub const HEADER_UNLABELED: &str =
    "timestamp_ns,rack_id,pressure_bar,flow_lpm,humidity_rh,temp_c,is_leaking";
pub const HEADER_LABELED: &str =
    "timestamp_ns,rack_id,pressure_bar,flow_lpm,humidity_rh,temp_c,is_leaking,time_to_leak_h";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("dataset is empty")]
    Empty,
    #[error("schema mismatch: expected columns [{expected}], found [{found}]")]
    Schema { expected: String, found: String },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub reading: SensorReading,
    pub is_leaking: bool,
    pub time_to_leak: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Comment lines without the leading `# `.
    pub comments: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn is_labeled(&self) -> bool {
        self.rows.first().is_some_and(|r| r.time_to_leak.is_some())
    }

    pub fn readings(&self) -> impl Iterator<Item = &SensorReading> {
        self.rows.iter().map(|r| &r.reading)
    }
}

pub fn write_dataset<W: Write>(mut out: W, dataset: &Dataset) -> io::Result<()> {
    let labeled = dataset.is_labeled();
    let mut buf = String::with_capacity(128);
    for c in &dataset.comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(
        out,
        "{}",
        if labeled {
            HEADER_LABELED
        } else {
            HEADER_UNLABELED
        }
    )?;
    for row in &dataset.rows {
        buf.clear();
        write_reading(&mut buf, &row.reading);
        let _ = write!(buf, ",{}", u8::from(row.is_leaking));
        if labeled {
            let _ = write!(buf, ",{:.4}", row.time_to_leak.unwrap_or(f64::NAN));
        }
        buf.push('\n');
        out.write_all(buf.as_bytes())?;
    }
    out.flush()
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset, DatasetError> {
    let mut dataset = Dataset::default();
    let mut labeled = None;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if let Some(comment) = line.strip_prefix('#') {
            dataset.comments.push(comment.trim_start().to_string());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let Some(labeled) = labeled else {
            labeled = Some(match line.as_str() {
                HEADER_LABELED => true,
                HEADER_UNLABELED => false,
                other => {
                    return Err(DatasetError::Schema {
                        expected: HEADER_LABELED.to_string(),
                        found: other.to_string(),
                    })
                }
            });
            continue;
        };
        let row = parse_row(&line, labeled).map_err(|source| DatasetError::Parse {
            line: line_no,
            source,
        })?;
        dataset.rows.push(row);
    }
    if dataset.rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(dataset)
}

fn parse_row(line: &str, labeled: bool) -> Result<DatasetRow, ParseError> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = if labeled { 8 } else { 7 };
    if fields.len() > expected {
        return Err(ParseError::ExtraColumn { column: expected });
    }
    let reading = parse_reading_fields(&fields)?;
    let is_leaking = match fields.get(6) {
        Some(&"0") => false,
        Some(&"1") => true,
        Some(other) => {
            return Err(ParseError::InvalidValue {
                column: 6,
                name: column_name(6),
                reason: format!("expected 0 or 1, found {other:?}"),
            })
        }
        None => {
            return Err(ParseError::MissingColumn {
                column: 6,
                name: column_name(6),
                found: fields.len(),
            })
        }
    };
    let time_to_leak = if labeled {
        let field = fields.get(7).ok_or(ParseError::MissingColumn {
            column: 7,
            name: column_name(7),
            found: fields.len(),
        })?;
        Some(parse_decimal(field).map_err(|reason| ParseError::InvalidValue {
            column: 7,
            name: column_name(7),
            reason,
        })?)
    } else {
        None
    };
    Ok(DatasetRow {
        reading,
        is_leaking,
        time_to_leak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RackId;

    fn sample(labeled: bool) -> Dataset {
        let rows = (0..3)
            .map(|i| DatasetRow {
                reading: SensorReading::with_channels(
                    i * 60_000_000_000,
                    RackId::default(),
                    [2.0, 1.5, 50.0 + i as f64, 25.0],
                ),
                is_leaking: i == 2,
                time_to_leak: labeled.then_some(if i == 2 { 0.0 } else { 0.0333 }),
            })
            .collect();
        Dataset {
            comments: vec!["coolguard dataset v1".into()],
            rows,
        }
    }

    #[test]
    fn labeled_round_trip() {
        let ds = sample(true);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == HEADER_LABELED);
        assert!(!text.contains('\r'));
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn unlabeled_has_no_ttl_column() {
        let ds = sample(false);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("time_to_leak_h"));
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn wrong_header_names_columns() {
        let err = read_dataset("a,b,c\n1,2,3\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("schema mismatch") && msg.contains("a,b,c"), "{msg}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            read_dataset("".as_bytes()),
            Err(DatasetError::Empty)
        ));
        let header_only = format!("{HEADER_UNLABELED}\n");
        assert!(matches!(
            read_dataset(header_only.as_bytes()),
            Err(DatasetError::Empty)
        ));
    }

    #[test]
    fn bad_row_reports_line() {
        let text = format!("{HEADER_UNLABELED}\n1,R01,2,1.5,50,25,0\n2,R01,2,x,50,25,0\n");
        match read_dataset(text.as_bytes()).unwrap_err() {
            DatasetError::Parse { line, source } => {
                assert_eq!(line, 3);
                assert_eq!(source.column(), 3);
            }
            other => panic!("{other}"),
        }
    }
}
