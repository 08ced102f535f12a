pub mod config;
pub mod decode;
pub mod grader;
pub mod layout;
pub mod vocab;

pub use config::{ModelConfig, SUBSAMPLING};
pub use decode::constrained_decode;
pub use grader::{adapted_matrices, GraderModel};
pub use layout::{assemble_sequence, ModalityMode, SequenceLayout, SlotTag};
pub use vocab::{Vocabulary, BOS, LABEL_BASE, NULLTEXT, SCORE, UNK};
