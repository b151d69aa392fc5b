use std::io::BufRead;

use crate::data::{bucketize_numeric, Dataset, FieldKind, FieldSchema, Instance, Vocabulary, MISSING_TOKEN};
use crate::error::{Error, Result};

/// Parsed delimited text: one token per field per row, plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: Vec<FieldSchema>,
    pub rows: Vec<Vec<String>>,
    pub labels: Vec<u8>,
}

/// Tab if the header contains one, otherwise comma.
pub fn detect_delimiter(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else {
        ','
    }
}

fn parse_label(raw: &str, line: usize) -> Result<u8> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("label `{raw}` is not a number"),
    })?;
    match v {
        v if v == 1.0 => Ok(1),
        v if v == 0.0 || v == -1.0 => Ok(0),
        _ => Err(Error::Parse {
            line,
            message: format!("label `{raw}` is not binary"),
        }),
    }
}

/// Reads a header-bearing delimited file with a `label` column. Columns named
/// in `numeric` are bucketised; all others are categorical. Line numbers in
/// errors are 1-based and count the header.
pub fn read_delimited<R: BufRead>(reader: R, numeric: &[String]) -> Result<RawTable> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty input".into(),
            })
        }
    };
    let delim = detect_delimiter(&header);
    let columns: Vec<String> = header.split(delim).map(|c| c.trim().to_string()).collect();
    let label_col = columns
        .iter()
        .position(|c| c == "label")
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "header has no `label` column".into(),
        })?;
    for name in numeric {
        if !columns.iter().any(|c| c == name) {
            return Err(Error::Parse {
                line: 1,
                message: format!("numeric column `{name}` not in header"),
            });
        }
    }
    let schema: Vec<FieldSchema> = columns
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_col)
        .map(|(_, c)| {
            if numeric.contains(c) {
                FieldSchema::numeric(c.clone())
            } else {
                FieldSchema::categorical(c.clone())
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(delim).collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", columns.len(), cells.len()),
            });
        }
        labels.push(parse_label(cells[label_col], line_no)?);
        let mut tokens = Vec::with_capacity(schema.len());
        let mut field = 0;
        for (c, cell) in cells.iter().enumerate() {
            if c == label_col {
                continue;
            }
            let cell = cell.trim();
            let token = match schema[field].kind {
                FieldKind::Categorical if cell.is_empty() => MISSING_TOKEN.to_string(),
                FieldKind::Categorical => cell.to_string(),
                FieldKind::NumericBucket => {
                    let value = if cell.is_empty() {
                        None
                    } else {
                        Some(cell.parse::<f64>().map_err(|_| Error::Parse {
                            line: line_no,
                            message: format!("`{cell}` in numeric column `{}`", schema[field].name),
                        })?)
                    };
                    bucketize_numeric(value)
                }
            };
            tokens.push(token);
            field += 1;
        }
        rows.push(tokens);
    }
    Ok(RawTable {
        schema,
        rows,
        labels,
    })
}

/// Encodes a raw table with `vocab` into a validated dataset.
pub fn encode_rows(table: &RawTable, vocab: &Vocabulary) -> Result<Dataset> {
    let instances = table
        .rows
        .iter()
        .zip(&table.labels)
        .map(|(row, &label)| Instance::new(vocab.encode(row), label))
        .collect();
    Dataset::new(vocab.schema(), vocab.sizes(), instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "label,user,item,count\n1,u1,i1,5\n0,u2,i1,\n1,u1,i2,1\n";

    #[test]
    fn reads_comma_file_with_numeric_bucket() {
        let t = read_delimited(TOY.as_bytes(), &["count".to_string()]).unwrap();
        assert_eq!(t.schema.len(), 3);
        assert_eq!(t.schema[2].kind, FieldKind::NumericBucket);
        assert_eq!(t.labels, vec![1, 0, 1]);
        assert_eq!(t.rows[0], vec!["u1", "i1", "2"]);
        assert_eq!(t.rows[1][2], MISSING_TOKEN);
    }

    #[test]
    fn detects_tabs() {
        let text = "user\tlabel\nu1\t1\nu2\t-1\n";
        let t = read_delimited(text.as_bytes(), &[]).unwrap();
        assert_eq!(t.labels, vec![1, 0]);
        assert_eq!(t.rows[1], vec!["u2"]);
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let text = "label,a,b\n1,x,y\n0,x\n";
        match read_delimited(text.as_bytes(), &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn encoding_same_row_twice_is_stable() {
        let t = read_delimited(TOY.as_bytes(), &[]).unwrap();
        let v = Vocabulary::build(&t.schema, t.rows.clone(), 1).unwrap();
        let a = encode_rows(&t, &v).unwrap();
        let b = encode_rows(&t, &v).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.instances[0].indices, v.encode(&t.rows[0]));
    }
}
