//! Corpus and summary records, and the on-disk atlas.

mod atlas;
mod format;
mod records;

pub use atlas::{AspectStore, Atlas, StoredLayout};
pub use format::{atlas_fingerprint, decode_atlas, encode_atlas, load_atlas, save_atlas, FORMAT_VERSION, MAGIC};
pub use records::{
    ingest_corpus, parse_corpus, parse_jsonl, read_jsonl, to_jsonl, write_atomic, AbstractRecord, IngestMode,
    Ingested, Split, SummaryRecord, MAX_SUMMARIES, MIN_SUMMARIES_FOR_PAIRS, MIN_SUMMARIES_FOR_TARGET,
};
