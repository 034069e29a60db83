use super::{RackId, SensorReading};
use std::fmt::Write as _;
use thiserror::Error;

pub(crate) const READING_COLUMNS: [&str; 6] = [
    "timestamp_ns",
    "rack_id",
    "pressure_bar",
    "flow_lpm",
    "humidity_rh",
    "temp_c",
];

/// Malformed reading line. `column` is zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing column {column} ({name}): line has {found} fields")]
    MissingColumn {
        column: usize,
        name: &'static str,
        found: usize,
    },
    #[error("column {column} ({name}): {reason}")]
    InvalidValue {
        column: usize,
        name: &'static str,
        reason: String,
    },
    #[error("unexpected trailing column {column}")]
    ExtraColumn { column: usize },
}

impl ParseError {
    pub fn column(&self) -> usize {
        match self {
            ParseError::MissingColumn { column, .. }
            | ParseError::InvalidValue { column, .. }
            | ParseError::ExtraColumn { column } => *column,
        }
    }
}

/// Channel values are written with exactly four fractional digits.
pub fn serialize_reading(reading: &SensorReading) -> String {
    let mut line = String::with_capacity(64);
    write_reading(&mut line, reading);
    line
}

pub(crate) fn write_reading(out: &mut String, r: &SensorReading) {
    let _ = write!(
        out,
        "{},{},{:.4},{:.4},{:.4},{:.4}",
        r.timestamp, r.rack_id, r.pressure, r.flow, r.humidity, r.temperature
    );
}

/// Parses a six-column reading line (no label columns).
pub fn parse_reading(line: &str) -> Result<SensorReading, ParseError> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    if fields.len() > READING_COLUMNS.len() {
        return Err(ParseError::ExtraColumn {
            column: READING_COLUMNS.len(),
        });
    }
    parse_reading_fields(&fields)
}

pub(crate) fn parse_reading_fields(fields: &[&str]) -> Result<SensorReading, ParseError> {
    if fields.len() < READING_COLUMNS.len() {
        return Err(ParseError::MissingColumn {
            column: fields.len(),
            name: READING_COLUMNS[fields.len()],
            found: fields.len(),
        });
    }
    let timestamp = fields[0]
        .parse::<i64>()
        .map_err(|e| invalid(0, e.to_string()))?;
    let rack_id = RackId::new(fields[1]);
    if !rack_id.is_valid() {
        return Err(invalid(1, format!("invalid rack id {:?}", fields[1])));
    }
    let mut values = [0.0; 4];
    for (i, value) in values.iter_mut().enumerate() {
        let column = i + 2;
        *value = parse_decimal(fields[column]).map_err(|reason| invalid(column, reason))?;
    }
    Ok(SensorReading::with_channels(timestamp, rack_id, values))
}

pub(crate) fn parse_decimal(field: &str) -> Result<f64, String> {
    let v = field
        .parse::<f64>()
        .map_err(|e| format!("{e} ({field:?})"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite value {field:?}"))
    }
}

fn invalid(column: usize, reason: String) -> ParseError {
    ParseError::InvalidValue {
        column,
        name: column_name(column),
        reason,
    }
}

pub(crate) fn column_name(column: usize) -> &'static str {
    match column {
        0..=5 => READING_COLUMNS[column],
        6 => "is_leaking",
        7 => "time_to_leak_h",
        _ => "?",
    }
}

/// Rounds to the four-decimal grid used on the wire so that values survive a
/// text round trip bit-exactly.
pub fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_fields_is_missing_column() {
        let err = parse_reading("1,R01,2.0").unwrap_err();
        assert!(matches!(err, ParseError::MissingColumn { column: 3, .. }));
        assert!(err.to_string().contains("missing column"));
    }

    #[test]
    fn non_numeric_pressure_names_column() {
        let err = parse_reading("1,R01,abc,1.5,50,25").unwrap_err();
        assert_eq!(err.column(), 2);
        assert!(err.to_string().contains("pressure_bar"));
    }

    #[test]
    fn nan_is_rejected() {
        assert!(parse_reading("1,R01,NaN,1.5,50,25").is_err());
    }

    #[test]
    fn fixed_four_digits() {
        let r = SensorReading::with_channels(5, RackId::new("R07"), [2.0, 1.5, 50.0, 25.25]);
        assert_eq!(serialize_reading(&r), "5,R07,2.0000,1.5000,50.0000,25.2500");
    }

    fn valid_reading() -> impl Strategy<Value = SensorReading> {
        (
            0i64..4_000_000_000_000_000_000,
            "[A-Z][0-9]{2}",
            0u32..=50_000,
            0u32..=100_000,
            0u32..=1_000_000,
            0u32..=700_000,
        )
            .prop_map(|(ts, rack, p, f, h, t)| {
                SensorReading::with_channels(
                    ts,
                    RackId::new(rack),
                    [
                        f64::from(p) / 1e4,
                        f64::from(f) / 1e4,
                        f64::from(h) / 1e4,
                        f64::from(t) / 1e4 - 10.0,
                    ],
                )
            })
            .prop_map(|mut r| {
                r.temperature = quantize(r.temperature);
                r
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip_is_exact(r in valid_reading()) {
            let line = serialize_reading(&r);
            let back = parse_reading(&line).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert!(crate::model::validate_reading(&back).is_empty());
        }
    }

    proptest! {
        #[test]
        fn parse_never_clamps(p in -10.0f64..10.0) {
            let line = format!("1,R01,{p:.4},1.5,50,25");
            let r = parse_reading(&line).unwrap();
            prop_assert_eq!(r.pressure, format!("{p:.4}").parse::<f64>().unwrap());
            let flagged = !crate::model::validate_reading(&r).is_empty();
            prop_assert_eq!(flagged, !(0.0..=5.0).contains(&r.pressure));
        }
    }
}
