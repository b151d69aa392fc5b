//! Raw CTR data ingestion, vocabularies, splitting, batching and the binary
//! dataset cache.

mod cache;
mod dataset;
mod reader;
mod schema;
mod synthetic;
mod vocab;

pub use cache::{read_cache, write_cache, CachedSplits, CACHE_MAGIC, CACHE_VERSION};
pub use dataset::{batch_iter, split_dataset, split_indices, Dataset, Instance};
pub use reader::{detect_delimiter, encode_rows, read_delimited, RawTable};
pub use schema::{FieldKind, FieldSchema};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
pub use vocab::{bucketize_numeric, FieldVocab, Vocabulary, MISSING_TOKEN};
