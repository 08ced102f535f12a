use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::level::Aspect;
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, SUBSAMPLING};
use crate::model::vocab::{Vocabulary, BOS, NULLTEXT, SCORE};

/// Which input segments a sequence carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityMode {
    AudioOnly,
    TextOnly,
    Multimodal,
}

impl ModalityMode {
    pub const ALL: [ModalityMode; 3] = [
        ModalityMode::AudioOnly,
        ModalityMode::TextOnly,
        ModalityMode::Multimodal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModalityMode::AudioOnly => "audio_only",
            ModalityMode::TextOnly => "text_only",
            ModalityMode::Multimodal => "multimodal",
        }
    }

    pub fn uses_audio(self) -> bool {
        self != ModalityMode::TextOnly
    }

    pub fn uses_text(self) -> bool {
        self != ModalityMode::AudioOnly
    }
}

impl fmt::Display for ModalityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotTag {
    Control,
    Instruction,
    Audio,
    Text,
    Score,
}

/// `[BOS][instruction][audio × n][text …][SCORE]`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceLayout {
    pub mode: ModalityMode,
    pub aspect: Aspect,
    pub instruction: usize,
    pub audio_slots: usize,
    pub text: Vec<usize>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        2 + self.audio_slots + self.text.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tags(&self) -> Vec<SlotTag> {
        let mut t = vec![SlotTag::Control, SlotTag::Instruction];
        t.extend(std::iter::repeat_n(SlotTag::Audio, self.audio_slots));
        t.extend(std::iter::repeat_n(SlotTag::Text, self.text.len()));
        t.push(SlotTag::Score);
        t
    }

    /// Token ids of the non-audio slots before the audio segment.
    pub fn prefix(&self) -> [usize; 2] {
        [BOS, self.instruction]
    }

    /// Text segment followed by the score slot.
    pub fn suffix(&self) -> Vec<usize> {
        let mut v = self.text.clone();
        v.push(SCORE);
        v
    }
}

/// Lays out one scoring query. `frames` is the feature-matrix length (needed
/// for audio-carrying modes); `transcript` is needed for text-carrying modes.
pub fn assemble_sequence(
    config: &ModelConfig,
    vocab: &Vocabulary,
    aspect: Aspect,
    mode: ModalityMode,
    frames: Option<usize>,
    transcript: Option<&[String]>,
) -> Result<SequenceLayout> {
    let audio_slots = if mode.uses_audio() {
        let t = frames.ok_or_else(|| Error::Config(format!("{mode} input needs audio features")))?;
        if t == 0 {
            return Err(Error::Length("feature matrix has no frames".into()));
        }
        if t > config.max_audio_frames {
            return Err(Error::Length(format!(
                "{t} audio frames exceed the maximum of {}",
                config.max_audio_frames
            )));
        }
        t.div_ceil(SUBSAMPLING)
    } else {
        0
    };
    let text = if mode.uses_text() {
        let words = transcript.ok_or_else(|| Error::Config(format!("{mode} input needs a transcript")))?;
        if words.len() > config.max_text_tokens {
            return Err(Error::Length(format!(
                "{} transcript tokens exceed the maximum of {}",
                words.len(),
                config.max_text_tokens
            )));
        }
        vocab.encode(words)
    } else {
        vec![NULLTEXT]
    };
    Ok(SequenceLayout {
        mode,
        aspect,
        instruction: Vocabulary::instruction(aspect),
        audio_slots,
        text,
    })
}
