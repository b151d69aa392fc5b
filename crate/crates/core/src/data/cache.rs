//! Binary dataset cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DLTA"            4 bytes
//! version           u16
//! n_fields          u16
//! vocab sizes       n_fields × u32
//! n_train, n_val, n_test   3 × u64
//! rows              (n_train + n_val + n_test) × (n_fields × u32 index, u8 label)
//! ```
//!
//! Rows are stored train first, then validation, then test. Field names live
//! in the vocabulary sidecar, not here.

use std::io::{Read, Write};

use crate::data::{Dataset, FieldSchema, Instance};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"DLTA";
pub const CACHE_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CachedSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn write_cache<W: Write>(mut w: W, splits: &CachedSplits) -> Result<()> {
    let n_fields = splits.train.n_fields();
    if splits.val.vocab_sizes != splits.train.vocab_sizes
        || splits.test.vocab_sizes != splits.train.vocab_sizes
    {
        return Err(Error::Format("splits disagree on vocabulary sizes".into()));
    }
    let n_fields16 = u16::try_from(n_fields)
        .map_err(|_| Error::Format(format!("{n_fields} fields exceed u16")))?;
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&n_fields16.to_le_bytes())?;
    for &s in &splits.train.vocab_sizes {
        let s = u32::try_from(s).map_err(|_| Error::Format(format!("vocab size {s} exceeds u32")))?;
        w.write_all(&s.to_le_bytes())?;
    }
    for part in [&splits.train, &splits.val, &splits.test] {
        w.write_all(&(part.len() as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(n_fields * 4 + 1);
    for part in [&splits.train, &splits.val, &splits.test] {
        for inst in &part.instances {
            buf.clear();
            for &ix in &inst.indices {
                buf.extend_from_slice(&ix.to_le_bytes());
            }
            buf.push(inst.label);
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated cache: {e}")))?;
    Ok(b)
}

/// Reads a cache; `schema` supplies field names (from the sidecar) and must
/// match the stored field count. Pass `None` for generated names.
pub fn read_cache<R: Read>(mut r: R, schema: Option<Vec<FieldSchema>>) -> Result<CachedSplits> {
    if &read_array::<4, _>(&mut r)? != CACHE_MAGIC {
        return Err(Error::Format("bad magic, not a dataset cache".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let n_fields = u16::from_le_bytes(read_array(&mut r)?) as usize;
    let vocab_sizes: Vec<usize> = (0..n_fields)
        .map(|_| Ok(u32::from_le_bytes(read_array(&mut r)?) as usize))
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = (0..3)
        .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
        .collect::<Result<_>>()?;
    let schema = match schema {
        Some(s) if s.len() != n_fields => {
            return Err(Error::Format(format!(
                "cache has {n_fields} fields, vocabulary has {}",
                s.len()
            )))
        }
        Some(s) => s,
        None => (0..n_fields).map(|i| FieldSchema::categorical(format!("f{i}"))).collect(),
    };
    let mut parts = Vec::with_capacity(3);
    let mut row = vec![0u8; n_fields * 4 + 1];
    for &count in &counts {
        let mut instances = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut row)
                .map_err(|e| Error::Format(format!("truncated cache rows: {e}")))?;
            let indices = row[..n_fields * 4]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            instances.push(Instance::new(indices, row[n_fields * 4]));
        }
        parts.push(Dataset::new(schema.clone(), vocab_sizes.clone(), instances)?);
    }
    let test = parts.pop().expect("three parts");
    let val = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(CachedSplits { train, val, test })
}
