//! Time-series CSV input: one row per time step, an optional header row.

use std::io::Read;
use std::path::Path;

use specdual::TimeSeries;

use crate::CliError;

pub fn read_series(path: &Path) -> Result<TimeSeries, CliError> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_series(file).map_err(|e| match e {
        CliError::Data { line, message } => CliError::Data {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Parses CSV rows into a series. The first row is skipped as a header when
/// any of its fields is not a number.
pub fn parse_series(input: impl Read) -> Result<TimeSeries, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(values) => values,
            Err(_) if index == 0 => continue,
            Err(_) => {
                let bad = record
                    .iter()
                    .find(|f| f.parse::<f64>().is_err())
                    .unwrap_or_default();
                return Err(CliError::Data {
                    line,
                    message: format!("'{bad}' is not a number"),
                });
            }
        };
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(CliError::Data {
                line,
                message: format!("non-finite value {v}"),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(CliError::Data {
                    line,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::Data {
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok(TimeSeries::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let y = parse_series("y1,y2\n1,2\n3,4\n5,6\n".as_bytes()).unwrap();
        assert_eq!((y.len(), y.channels()), (3, 2));
        let y = parse_series("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!((y.len(), y.channels()), (2, 2));
        assert_eq!(y.data()[(0, 1)], 2.0);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse_series("y\n1.0\n2.0\nabc\n4.0\n".as_bytes()).unwrap_err();
        match err {
            CliError::Data { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_line("1,2\n3\n") == 2);
        assert!(err_line("1\nNaN\n") == 2);
    }

    fn err_line(text: &str) -> u64 {
        match parse_series(text.as_bytes()).unwrap_err() {
            CliError::Data { line, .. } => line,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(parse_series("".as_bytes()).is_err());
        assert!(parse_series("header\n".as_bytes()).is_err());
    }
}
