//! Conversation data model, manifest/mel I/O and the synthetic corpus
//! generator.
//!
//! A conversation is an alternating two-speaker sequence of utterances
//! `{A_1, B_2, A_3, ...}`; training consumes adjacent cross-speaker pairs.

mod manifest;
mod melf;
mod synth;

pub use manifest::{load_manifest, write_manifest};
pub(crate) use manifest::require_mel;
pub use melf::{read_matrix, read_mel, write_matrix, write_mel};
pub use synth::{
    gen_synthetic_corpus, gen_synthetic_corpus_traced, oracle_token_frame_count,
    oracle_utterance_frame_count, SynthConfig, ENTRAINMENT_COEFF, FILLER_FRAMES, FILLER_VALUE,
    FRAMES_PER_PHONEME, SPEAKER_OFFSET,
};

use crate::{Error, Mat, Real, Result};
use serde::{Deserialize, Serialize};

/// Default frame shift metadata attached to mels that do not specify one.
pub const DEFAULT_FRAME_SHIFT_MS: Real = 12.5;

/// The four-class spontaneous-behavior label attached to a text token.
///
/// `Both` denotes a simultaneous prolongation and filled-pause ("pl+fp").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BehaviorTag {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "fp")]
    FilledPause,
    #[serde(rename = "pl")]
    Prolongation,
    #[serde(rename = "pl+fp")]
    Both,
}

impl BehaviorTag {
    /// Class index in the fixed order (NONE, FILLED_PAUSE, PROLONGATION, BOTH).
    pub fn index(self) -> usize {
        match self {
            BehaviorTag::None => 0,
            BehaviorTag::FilledPause => 1,
            BehaviorTag::Prolongation => 2,
            BehaviorTag::Both => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BehaviorTag::None),
            1 => Some(BehaviorTag::FilledPause),
            2 => Some(BehaviorTag::Prolongation),
            3 => Some(BehaviorTag::Both),
            _ => None,
        }
    }

    /// Prolongation flag replicated onto the token's phonemes.
    pub fn pl_flag(self) -> u8 {
        matches!(self, BehaviorTag::Prolongation | BehaviorTag::Both) as u8
    }

    /// Filled-pause flag replicated onto the token's phonemes.
    pub fn fp_flag(self) -> u8 {
        matches!(self, BehaviorTag::FilledPause | BehaviorTag::Both) as u8
    }

    pub const ALL: [BehaviorTag; 4] = [
        BehaviorTag::None,
        BehaviorTag::FilledPause,
        BehaviorTag::Prolongation,
        BehaviorTag::Both,
    ];
}

/// One text token: a toy-lexicon character with its prosodic annotation and
/// spontaneous-behavior tag. `prosody_level` is the break index after the
/// token (0..3, 3 at utterance end).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextToken {
    pub char_id: u32,
    pub word_boundary: bool,
    pub prosody_level: u8,
    pub tag: BehaviorTag,
}

/// A frame-by-feature mel-spectrogram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mel {
    data: Mat,
    pub frame_shift_ms: Real,
}

impl Mel {
    /// Validates that the matrix is non-empty and all entries are finite.
    pub fn new(data: Mat, frame_shift_ms: Real) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "mel must have at least one frame and one feature, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("mel contains non-finite entries".into()));
        }
        Ok(Mel { data, frame_shift_ms })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Mat {
        &self.data
    }
}

/// One utterance (turn) of a conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: u8,
    pub tokens: Vec<TextToken>,
    pub mel: Option<Mel>,
    pub conv_id: String,
    pub turn_index: u32,
}

/// An ordered two-speaker conversation, turns numbered from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub conv_id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Checks the structural invariants: turn indices are 1,2,3,... and
    /// consecutive utterances come from different speakers with a consistent
    /// turn-parity/speaker relation.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidConversation {
            conv_id: self.conv_id.clone(),
            msg,
        };
        for (i, u) in self.utterances.iter().enumerate() {
            if u.conv_id != self.conv_id {
                return Err(bad(format!(
                    "utterance {} carries conv_id {}",
                    u.utt_id, u.conv_id
                )));
            }
            if u.turn_index as usize != i + 1 {
                return Err(bad(format!(
                    "turn_index {} at position {} (expected {})",
                    u.turn_index,
                    i,
                    i + 1
                )));
            }
            if u.speaker_id > 1 {
                return Err(bad(format!("speaker_id {} out of range", u.speaker_id)));
            }
        }
        for w in self.utterances.windows(2) {
            if w[0].speaker_id == w[1].speaker_id {
                return Err(bad(format!(
                    "turns {} and {} share speaker {}",
                    w[0].turn_index, w[1].turn_index, w[0].speaker_id
                )));
            }
        }
        Ok(())
    }
}

/// Adjacent (previous, current) utterance pair; the current turn is modeled
/// as influenced by the previous one.
#[derive(Debug, Clone, Copy)]
pub struct ConversationPair<'a> {
    pub previous: &'a Utterance,
    pub current: &'a Utterance,
}

/// All adjacent pairs of a conversation, in turn order. A conversation of
/// `n` utterances yields `n - 1` pairs; empty and single-turn conversations
/// yield none.
pub fn make_pairs(conv: &Conversation) -> Vec<ConversationPair<'_>> {
    conv.utterances
        .windows(2)
        .map(|w| ConversationPair {
            previous: &w[0],
            current: &w[1],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    pub(crate) fn utt(conv: &str, turn: u32, speaker: u8) -> Utterance {
        Utterance {
            utt_id: format!("{conv}_t{turn}"),
            speaker_id: speaker,
            tokens: vec![TextToken {
                char_id: 0,
                word_boundary: true,
                prosody_level: 3,
                tag: BehaviorTag::None,
            }],
            mel: None,
            conv_id: conv.to_string(),
            turn_index: turn,
        }
    }

    #[test]
    fn tag_flags_cover_all_variants() {
        assert_eq!(BehaviorTag::None.pl_flag(), 0);
        assert_eq!(BehaviorTag::None.fp_flag(), 0);
        assert_eq!(BehaviorTag::FilledPause.fp_flag(), 1);
        assert_eq!(BehaviorTag::FilledPause.pl_flag(), 0);
        assert_eq!(BehaviorTag::Prolongation.pl_flag(), 1);
        assert_eq!(BehaviorTag::Prolongation.fp_flag(), 0);
        assert_eq!(BehaviorTag::Both.pl_flag(), 1);
        assert_eq!(BehaviorTag::Both.fp_flag(), 1);
    }

    #[test]
    fn make_pairs_enumerates_adjacent_turns() {
        let conv = Conversation {
            conv_id: "c".into(),
            utterances: vec![utt("c", 1, 0), utt("c", 2, 1), utt("c", 3, 0)],
        };
        conv.validate().unwrap();
        let pairs = make_pairs(&conv);
        // Oracle: adjacency enumeration over indices.
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].previous.turn_index, 1);
        assert_eq!(pairs[0].current.turn_index, 2);
        assert_eq!(pairs[1].previous.turn_index, 2);
        assert_eq!(pairs[1].current.turn_index, 3);
        for p in &pairs {
            assert_eq!(p.previous.turn_index + 1, p.current.turn_index);
            assert_ne!(p.previous.speaker_id, p.current.speaker_id);
        }
    }

    #[test]
    fn make_pairs_of_short_conversations_is_empty() {
        let single = Conversation {
            conv_id: "c".into(),
            utterances: vec![utt("c", 1, 0)],
        };
        assert!(make_pairs(&single).is_empty());
        let empty = Conversation {
            conv_id: "c".into(),
            utterances: vec![],
        };
        assert!(make_pairs(&empty).is_empty());
    }

    #[test]
    fn validate_rejects_same_speaker_adjacency() {
        let conv = Conversation {
            conv_id: "c7".into(),
            utterances: vec![utt("c7", 1, 0), utt("c7", 2, 0)],
        };
        let err = conv.validate().unwrap_err();
        assert!(err.to_string().contains("c7"), "error must name the conv_id");
    }

    #[test]
    fn mel_rejects_empty_and_non_finite() {
        assert!(Mel::new(Array2::zeros((0, 4)), 12.5).is_err());
        let mut bad = Array2::zeros((2, 2));
        bad[[1, 1]] = f64::NAN;
        assert!(Mel::new(bad, 12.5).is_err());
        assert!(Mel::new(Array2::zeros((1, 1)), 12.5).is_ok());
    }
}
