//! CSV datasets and `key = value` config files.
//!
//! A dataset file has a header row with one column named `label` (integer
//! class ids); every other column is a numeric feature. Rows and columns in
//! error messages are 1-based file positions, so the header is row 1.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::dataset::LabeledDataset;
use crate::error::{LmlError, Result};
use crate::scalar::Real;

pub const LABEL_COLUMN: &str = "label";

fn parse_error(row: usize, col: usize, msg: impl Into<String>) -> LmlError {
    LmlError::Parse { row, col, msg: msg.into() }
}

/// Reads a dataset from CSV text. `task_id` is attached to the result.
pub fn read_csv<T: Real>(input: impl Read, task_id: &str) -> Result<LabeledDataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| parse_error(1, 1, e.to_string()))?.clone();
    let width = header.len();
    let label_col =
        header.iter().position(|h| h == LABEL_COLUMN).ok_or_else(|| parse_error(1, 1, "missing `label` column"))?;

    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // header is row 1
        let fallback_row = idx + 2;
        let record = record.map_err(|e| parse_error(fallback_row, 1, e.to_string()))?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(fallback_row);
        if record.len() != width {
            return Err(parse_error(
                row,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_col {
                let label = cell
                    .parse::<i64>()
                    .map_err(|_| parse_error(row, c + 1, format!("label `{cell}` is not an integer")))?;
                labels.push(label);
            } else {
                let v = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(row, c + 1, format!("`{cell}` is not a finite number")))?;
                values.push(T::lit(v));
            }
        }
    }
    if labels.is_empty() {
        return Err(LmlError::config("no samples"));
    }
    let x = Array2::from_shape_vec((labels.len(), width - 1), values).map_err(|e| LmlError::shape(e.to_string()))?;
    LabeledDataset::new(x, labels, task_id)
}

/// Loads a CSV dataset; the task id is the file stem.
pub fn load_csv<T: Real>(path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    let file =
        fs::File::open(path).map_err(|e| LmlError::config(format!("cannot open dataset `{}`: {e}", path.display())))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_csv(std::io::BufReader::new(file), &stem)
}

/// Writes `label,f1,...,fd` rows with 17 significant digits.
pub fn write_csv<T: Real>(data: &LabeledDataset<T>, out: impl Write) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![LABEL_COLUMN.to_string()];
    header.extend((1..=data.dim()).map(|j| format!("f{j}")));
    writer.write_record(&header).map_err(csv_io)?;
    for (i, &label) in data.labels().iter().enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(data.row(i).iter().map(|v| format!("{:.16e}", v.as_f64())));
        writer.write_record(&rec).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_csv<T: Real>(data: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    write_csv(data, std::io::BufWriter::new(file))
}

fn csv_io(e: csv::Error) -> LmlError {
    LmlError::Io(std::io::Error::other(e))
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped. Keys keep their order of appearance.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_error(n + 1, 1, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_error(n + 1, 1, "empty key"));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| LmlError::config(format!("cannot read config `{}`: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reads_fixture() {
        let text = "f1,f2,label\n1.5,2,0\n-3,4e-1,1\n0,0,7\n";
        let ds: LabeledDataset<f64> = read_csv(text.as_bytes(), "t").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 7]);
        assert_eq!(ds.features(), &array![[1.5, 2.0], [-3.0, 0.4], [0.0, 0.0]]);
    }

    #[test]
    fn label_column_can_be_anywhere() {
        let ds: LabeledDataset<f64> = read_csv("label,a\n3,1\n".as_bytes(), "t").unwrap();
        assert_eq!(ds.labels(), &[3]);
        assert_eq!(ds.row(0)[0], 1.0);
    }

    #[test]
    fn bad_cell_names_location() {
        let text = "label,f1,f2\n0,1,abc\n";
        let err = read_csv::<f64>(text.as_bytes(), "t").unwrap_err();
        match &err {
            LmlError::Parse { row, col, .. } => assert_eq!((*row, *col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 2, column 3"));
    }

    #[test]
    fn header_only_and_missing_label() {
        let err = read_csv::<f64>("label,f1\n".as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("no samples"));
        let err = read_csv::<f64>("a,b\n1,2\n".as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn ragged_row() {
        let err = read_csv::<f64>("label,f1,f2\n0,1,2\n1,3\n".as_bytes(), "t").unwrap_err();
        match err {
            LmlError::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = array![[0.1, 1.0 / 3.0], [-2.5e-300, std::f64::consts::PI]];
        let ds = LabeledDataset::new(x, vec![4, -1], "t").unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back: LabeledDataset<f64> = read_csv(buf.as_slice(), "t").unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }

    #[test]
    fn config_text() {
        let cfg = parse_config("# comment\nlambda = 0.1  # inline\n\nd=5\n").unwrap();
        assert_eq!(cfg, vec![("lambda".into(), "0.1".into()), ("d".into(), "5".into())]);
        assert!(parse_config("nonsense\n").is_err());
    }
}
