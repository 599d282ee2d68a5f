//! Input sets and report serialization.
//!
//! Two input formats are accepted:
//!
//! * delimited text: one feature dimension per line, one sample per
//!   comma-separated column, sets separated by blank lines;
//! * a JSON batch: `[{"id": "...", "data": [[...], ...]}, ...]`.
//!
//! Hierarchical batches group member sets:
//! `[{"id": "...", "sets": [{"id": "...", "data": ...}, ...]}, ...]`.
//!
//! Reports are JSON with every `f64` written to 17 significant digits, so two
//! runs that compute the same bits write the same bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rotpool_core::{Matrix, SampleSet};
use serde::ser::Serialize;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    /// Positions are 1-based and refer to the file.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    /// Positions are 1-based and refer to the rows and columns of the set.
    #[error("set {set}: negative entry {value} at row {row}, col {col} (pass --allow-signed to accept signed data)")]
    Negative { set: String, row: usize, col: usize, value: f64 },

    #[error("set {set}: {message}")]
    Invalid { set: String, message: String },
}

/// A sample set with the identifier it was read under.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSet {
    pub id: String,
    pub set: SampleSet,
}

/// Member sets of one hierarchical document.
#[derive(Debug, Clone, PartialEq)]
pub struct SetGroup {
    pub id: String,
    pub sets: Vec<NamedSet>,
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn looks_like_json(text: &str) -> bool {
    text.trim_start().starts_with('[')
}

/// Reads every set in `path`. The format is picked from the first
/// non-blank character: `[` means JSON, anything else delimited text.
pub fn ingest(path: &Path, allow_signed: bool) -> Result<Vec<NamedSet>, IngestError> {
    let text = read(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("set");
    if looks_like_json(&text) {
        parse_json(&text, allow_signed)
    } else {
        parse_delimited(&text, stem, allow_signed)
    }
}

/// Parses blank-line-separated blocks of comma-separated numbers. Sets are
/// named `{prefix}-{k}` with `k` counted from 1.
pub fn parse_delimited(text: &str, prefix: &str, allow_signed: bool) -> Result<Vec<NamedSet>, IngestError> {
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut width = 0;
    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(ci, field)| {
                field.trim().parse::<f64>().map_err(|_| IngestError::Parse {
                    line: line_no,
                    column: ci + 1,
                    message: format!("expected a number, found {:?}", field.trim()),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if current.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(IngestError::Parse {
                line: line_no,
                column: row.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", row.len()),
            });
        }
        current.push(row);
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    if blocks.is_empty() {
        return Err(IngestError::Parse {
            line: 1,
            column: 1,
            message: "no sets found".into(),
        });
    }
    blocks
        .into_iter()
        .enumerate()
        .map(|(k, rows)| build_set(format!("{prefix}-{}", k + 1), &rows, allow_signed))
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetDoc {
    id: String,
    data: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupDoc {
    id: String,
    sets: Vec<SetDoc>,
}

fn json_error(e: serde_json::Error) -> IngestError {
    IngestError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses a `[{"id", "data"}]` batch.
pub fn parse_json(text: &str, allow_signed: bool) -> Result<Vec<NamedSet>, IngestError> {
    let docs: Vec<SetDoc> = serde_json::from_str(text).map_err(json_error)?;
    docs.into_iter()
        .map(|d| build_set(d.id, &d.data, allow_signed))
        .collect()
}

/// Reads a hierarchical batch. A plain set batch (JSON or delimited) is
/// accepted too and becomes a single group holding every set in the file.
pub fn ingest_groups(path: &Path, allow_signed: bool) -> Result<Vec<SetGroup>, IngestError> {
    let text = read(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("group");
    if !looks_like_json(&text) {
        let sets = parse_delimited(&text, stem, allow_signed)?;
        return Ok(vec![SetGroup { id: stem.to_string(), sets }]);
    }
    match serde_json::from_str::<Vec<GroupDoc>>(&text) {
        Ok(groups) => groups
            .into_iter()
            .map(|g| {
                let sets = g
                    .sets
                    .into_iter()
                    .map(|d| build_set(format!("{}/{}", g.id, d.id), &d.data, allow_signed))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(SetGroup { id: g.id, sets })
            })
            .collect(),
        Err(group_err) => match parse_json(&text, allow_signed) {
            Ok(sets) => Ok(vec![SetGroup { id: stem.to_string(), sets }]),
            Err(IngestError::Parse { .. }) => Err(json_error(group_err)),
            Err(e) => Err(e),
        },
    }
}

fn build_set(id: String, rows: &[Vec<f64>], allow_signed: bool) -> Result<NamedSet, IngestError> {
    let invalid = |message: String| IngestError::Invalid {
        set: id.clone(),
        message,
    };
    let d = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if d == 0 || n == 0 {
        return Err(invalid("a set needs at least one row and one column".into()));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != n) {
        return Err(invalid(format!(
            "row {} has {} columns, expected {n}",
            r + 1,
            rows[r].len()
        )));
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(invalid(format!("non-finite entry at row {}, col {}", r + 1, c + 1)));
            }
            if v < 0.0 && !allow_signed {
                return Err(IngestError::Negative {
                    set: id.clone(),
                    row: r + 1,
                    col: c + 1,
                    value: v,
                });
            }
        }
    }
    let data = Matrix::from_vec(d, n, rows.concat()).map_err(|e| invalid(e.to_string()))?;
    let set = if allow_signed {
        SampleSet::new_signed(data)
    } else {
        SampleSet::new(data)
    }
    .map_err(|e| invalid(e.to_string()))?;
    Ok(NamedSet { id, set })
}

/// Reads a weight vector: a JSON array, or numbers separated by commas and
/// whitespace.
pub fn read_weights(path: &Path) -> Result<Vec<f64>, IngestError> {
    let text = read(path)?;
    if looks_like_json(&text) {
        return serde_json::from_str(&text).map_err(json_error);
    }
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        for (column, field) in (1..).zip(line.split(|c: char| c == ',' || c.is_whitespace())) {
            if field.is_empty() {
                continue;
            }
            out.push(field.parse::<f64>().map_err(|_| IngestError::Parse {
                line: li + 1,
                column,
                message: format!("expected a number, found {field:?}"),
            })?);
        }
    }
    Ok(out)
}

/// JSON formatter that writes floats in scientific notation with 17
/// significant digits, enough to round-trip every `f64`. Non-finite floats
/// are already mapped to `null` by the serializer.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreciseFloats;

impl serde_json::ser::Formatter for PreciseFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(writer: W, value: &T) -> serde_json::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, PreciseFloats);
    value.serialize(&mut ser)
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    write_json(&mut buf, value).expect("serializing into memory");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_is_one_set() {
        let sets = parse_delimited("1,2\n4,3\n", "x", false).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].id, "x-1");
        assert_eq!(sets[0].set.data().shape(), (2, 2));
        assert_eq!(sets[0].set.data()[(1, 0)], 4.0);
    }

    #[test]
    fn blank_lines_separate_sets() {
        let sets = parse_delimited("1,2\n4,3\n\n\n5,6,7\n", "x", false).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[1].set.data().shape(), (1, 3));
    }

    #[test]
    fn negative_entry_cites_its_cell() {
        let err = parse_delimited("-1,2\n4,3\n", "x", false).unwrap_err();
        match err {
            IngestError::Negative { row, col, .. } => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_delimited("-1,2\n4,3\n", "x", true).is_ok());
    }

    #[test]
    fn bad_field_reports_line_and_column() {
        let err = parse_delimited("1,2\n4,oops\n", "x", false).unwrap_err();
        match err {
            IngestError::Parse { line, column, .. } => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(
            parse_delimited("1,2\n4\n", "x", false),
            Err(IngestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn json_batch() {
        let sets = parse_json(r#"[{"id": "a", "data": [[1, 2], [4, 3]]}, {"id": "b", "data": [[0.5]]}]"#, false)
            .unwrap();
        assert_eq!(sets.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let err = parse_json(r#"[{"id": "a", "data": [[1, -2]]}]"#, false).unwrap_err();
        assert!(matches!(err, IngestError::Negative { row: 1, col: 2, .. }));
        assert!(matches!(parse_json("[{\"id\": 1}]", false), Err(IngestError::Parse { .. })));
    }

    #[test]
    fn floats_keep_every_bit() {
        let v = [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 5e-324];
        let s = to_json_string(&v);
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json_string(&1.5), "1.5000000000000000e0");
        assert_eq!(to_json_string(&f64::NAN), "null");
    }
}
