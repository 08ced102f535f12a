pub mod asr;
pub mod level;
pub mod manifest;
pub mod raters;
pub mod spec;
pub mod synth;

pub use asr::{corrupt_transcript, word_error_rate, Corrupted, EditMix};
pub use level::{holistic_aggregate, majority_vote, Aspect, AspectLabels, CefrLevel, NUM_LEVELS};
pub use manifest::{Corpus, Latent, Utterance};
pub use raters::simulate_raters;
pub use spec::{CorpusSpec, Split, SplitCounts};
pub use synth::{corpus_hash, generate_corpus, generate_in_memory, split_corpus, CorpusSummary, Generated};
