// Corpus handling: the pinyin lexicon, duration alignments, the JSON-lines
// manifest, the synthetic toy-corpus generator, and deterministic batching.

mod alignment;
mod batcher;
mod lexicon;
mod manifest;
mod synthetic;

pub use alignment::{load_alignment, save_alignment, DurationAlignment};
pub use batcher::{Batch, BatchIterator, FeatureStore, GeBatchSampler};
pub use lexicon::{tokenize_pinyin, Lexicon, PhonemeSequence};
pub use manifest::{CorpusManifest, ManifestRecord, Split};
pub use synthetic::{make_synthetic_corpus, ToyCorpusConfig};
