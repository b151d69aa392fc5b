use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::FieldSchema;
use crate::error::{Error, Result};

/// Token for missing or negative numeric values.
pub const MISSING_TOKEN: &str = "MISSING";

/// Maps a numeric value to a token: the integer part for `0 ≤ v ≤ 2`,
/// `floor(ln(v)²)` above 2 and [`MISSING_TOKEN`] for missing, negative or
/// non-finite input.
pub fn bucketize_numeric(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() && v > 2.0 => {
            let l = v.ln();
            format!("{}", (l * l).floor() as i64)
        }
        Some(v) if v.is_finite() && v >= 0.0 => format!("{}", v.floor() as i64),
        _ => MISSING_TOKEN.to_string(),
    }
}

/// Tokens of one field. Index 0 is reserved for out-of-vocabulary tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldVocab {
    pub field: FieldSchema,
    /// `tokens[i]` has index `i + 1`.
    pub tokens: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
}

impl FieldVocab {
    fn new(field: FieldSchema, tokens: Vec<String>) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self {
            field,
            tokens,
            lookup,
        }
    }

    /// Vocabulary size including the OOV slot.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn index_of(&self, token: &str) -> u32 {
        self.lookup.get(token).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub min_freq: usize,
    pub fields: Vec<FieldVocab>,
}

impl Vocabulary {
    /// Counts tokens per field and indexes those seen at least `min_freq`
    /// times, most frequent first with lexicographic tie-breaking.
    ///
    /// `rows` hold one token per field; the reported row number is 1-based.
    pub fn build<R, S>(schema: &[FieldSchema], rows: R, min_freq: usize) -> Result<Self>
    where
        R: IntoIterator<Item = Vec<S>>,
        S: AsRef<str>,
    {
        if min_freq < 1 {
            return Err(Error::Parameter("min_freq must be at least 1".into()));
        }
        let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); schema.len()];
        for (row_no, row) in rows.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Parse {
                    line: row_no + 1,
                    message: format!("expected {} fields, found {}", schema.len(), row.len()),
                });
            }
            for (count, tok) in counts.iter_mut().zip(&row) {
                *count.entry(tok.as_ref().to_string()).or_insert(0) += 1;
            }
        }
        let fields = schema
            .iter()
            .zip(counts)
            .map(|(field, count)| {
                let mut kept: Vec<(String, usize)> =
                    count.into_iter().filter(|(_, c)| *c >= min_freq).collect();
                kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                FieldVocab::new(field.clone(), kept.into_iter().map(|(t, _)| t).collect())
            })
            .collect();
        Ok(Self { min_freq, fields })
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::size).collect()
    }

    pub fn schema(&self) -> Vec<FieldSchema> {
        self.fields.iter().map(|f| f.field.clone()).collect()
    }

    pub fn encode<S: AsRef<str>>(&self, row: &[S]) -> Vec<u32> {
        self.fields
            .iter()
            .zip(row)
            .map(|(f, t)| f.index_of(t.as_ref()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vocabulary = serde_json::from_str(text)?;
        Ok(Self {
            min_freq: raw.min_freq,
            fields: raw
                .fields
                .into_iter()
                .map(|f| FieldVocab::new(f.field, f.tokens))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_field_rows(tokens: &[(&str, usize)]) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (t, n) in tokens {
            for _ in 0..*n {
                rows.push(vec![t.to_string()]);
            }
        }
        rows
    }

    #[test]
    fn threshold_folds_rare_tokens_to_oov() {
        let schema = [FieldSchema::categorical("f")];
        let rows = single_field_rows(&[("c", 1), ("b", 3), ("a", 5)]);
        let v = Vocabulary::build(&schema, rows.clone(), 2).unwrap();
        assert_eq!(v.fields[0].index_of("a"), 1);
        assert_eq!(v.fields[0].index_of("b"), 2);
        assert_eq!(v.fields[0].index_of("c"), 0);
        assert_eq!(v.sizes(), vec![3]);

        let all = Vocabulary::build(&schema, rows, 1).unwrap();
        assert_eq!(all.sizes(), vec![4]);
        assert_eq!(all.fields[0].index_of("c"), 3);
    }

    #[test]
    fn equal_counts_sort_lexicographically_and_build_is_deterministic() {
        let schema = [FieldSchema::categorical("f")];
        let rows = single_field_rows(&[("zeta", 2), ("alpha", 2), ("mid", 2)]);
        let a = Vocabulary::build(&schema, rows.clone(), 1).unwrap();
        let b = Vocabulary::build(&schema, rows, 1).unwrap();
        assert_eq!(a.fields[0].tokens, vec!["alpha", "mid", "zeta"]);
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let schema = [FieldSchema::categorical("a"), FieldSchema::categorical("b")];
        let rows = vec![vec!["x", "y"], vec!["x"]];
        match Vocabulary::build(&schema, rows, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bucketize_examples() {
        assert_eq!(bucketize_numeric(None), MISSING_TOKEN);
        assert_eq!(bucketize_numeric(Some(-3.0)), MISSING_TOKEN);
        assert_eq!(bucketize_numeric(Some(1.0)), "1");
        assert_eq!(bucketize_numeric(Some(2.0)), "2");
        // ln(100)^2 = 21.2076...
        let oracle = (100f64.ln() * 100f64.ln()).floor() as i64;
        assert_eq!(oracle, 21);
        assert_eq!(bucketize_numeric(Some(100.0)), "21");
    }

    #[test]
    fn json_sidecar_roundtrip_restores_lookup() {
        let schema = [FieldSchema::categorical("f"), FieldSchema::numeric("n")];
        let rows = vec![vec!["a", "1"], vec!["b", "1"], vec!["a", "3"]];
        let v = Vocabulary::build(&schema, rows, 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(back.encode(&["a", "3"]), v.encode(&["a", "3"]));
        assert_eq!(back.encode(&["zzz", "1"])[0], 0);
    }
}
