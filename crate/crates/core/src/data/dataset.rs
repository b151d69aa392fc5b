use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One encoded example: a vocabulary index per field and a binary label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Instance {
    pub indices: Vec<u32>,
    pub label: u8,
}

impl Instance {
    pub fn new(indices: Vec<u32>, label: u8) -> Self {
        Self { indices, label }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Vec<FieldSchema>,
    /// Per-field vocabulary size, including the OOV slot 0.
    pub vocab_sizes: Vec<usize>,
    pub instances: Vec<Instance>,
}

impl Dataset {
    /// Validates every instance against the schema and vocabulary sizes.
    pub fn new(
        schema: Vec<FieldSchema>,
        vocab_sizes: Vec<usize>,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        if schema.len() != vocab_sizes.len() {
            return Err(Error::Parameter(format!(
                "{} fields but {} vocabulary sizes",
                schema.len(),
                vocab_sizes.len()
            )));
        }
        for inst in &instances {
            if inst.indices.len() != schema.len() {
                return Err(Error::Parameter(format!(
                    "instance has {} indices, schema has {} fields",
                    inst.indices.len(),
                    schema.len()
                )));
            }
            for (field, (&ix, &size)) in inst.indices.iter().zip(&vocab_sizes).enumerate() {
                if ix as usize >= size {
                    return Err(Error::Lookup {
                        field,
                        index: ix as usize,
                        size,
                    });
                }
            }
            if inst.label > 1 {
                return Err(Error::Parameter(format!("label {} is not binary", inst.label)));
            }
        }
        Ok(Self {
            schema,
            vocab_sizes,
            instances,
        })
    }

    pub fn n_fields(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.instances.iter().map(|i| f64::from(i.label)).collect()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.instances.iter().filter(|i| i.label == 1).count();
        pos > 0 && pos < self.instances.len()
    }

    /// Same schema, different instances.
    /// Instances at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        self.with_instances(rows.iter().map(|&i| self.instances[i].clone()).collect())
    }

    pub fn with_instances(&self, instances: Vec<Instance>) -> Self {
        Self {
            schema: self.schema.clone(),
            vocab_sizes: self.vocab_sizes.clone(),
            instances,
        }
    }
}

/// Random 8:1:1 partition of `0..n` into train, validation and test
/// positions.
///
/// Validation and test each get `round(n / 10)` positions, train the rest.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(Error::TooSmall(format!("{n} instances, need at least 10")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_val = (n as f64 / 10.0).round() as usize;
    let n_train = n - 2 * n_val;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok((order, val, test))
}

/// Random 8:1:1 train/validation/test partition (see [`split_indices`]).
pub fn split_dataset(d: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (train, val, test) = split_indices(d.len(), seed)?;
    Ok((d.subset(&train), d.subset(&val), d.subset(&test)))
}

/// Batches covering every instance exactly once; the last may be short.
pub fn batch_iter(
    d: &Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Vec<&Instance>> + '_> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    if shuffle {
        Rng::new(seed).shuffle(&mut order);
    }
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(batches
        .into_iter()
        .map(move |b| b.into_iter().map(|i| &d.instances[i]).collect()))
}
