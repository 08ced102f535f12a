//! 16 kHz PCM input, log-mel extraction and the feature cache format.

pub mod featfile;
pub mod mel;
pub mod wav;

pub use featfile::{load_features, save_features};
pub use mel::{log_floor, log_mel, FeatureMatrix, N_MELS};
pub use wav::{read_wav, write_wav, PcmSignal};
