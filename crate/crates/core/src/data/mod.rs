//! Clip curation and training data: metadata filtering, the combined caption
//! grammar, fixed-area frame packing, and the synthetic paired-latent corpus.

pub mod corpus;
pub mod dataset;
pub mod filter;
pub mod packing;
pub mod prompt;
pub mod synthetic;

pub use corpus::{run_filter_corpus, CorpusOptions, FilterStats};
pub use dataset::{Dataset, LatentPair};
pub use filter::{filter_clip, filter_record, AreaMode, ClipMetadata, ClipRecord, Decision, FilterPolicy, RejectReason};
pub use packing::{pack_dims, DEFAULT_ROUNDING, DEFAULT_TARGET_AREA};
pub use prompt::{CombinedPrompt, Segment};
pub use synthetic::{gen_synthetic_pairs, LengthPolicy, SyntheticPairSpec};
