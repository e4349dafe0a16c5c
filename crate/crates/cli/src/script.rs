//! Conversation scripts: the text-side input to synthesis.
//!
//! A script lists alternating-speaker turns of plain tokens; behavior tags
//! are optional per turn — absent tags are filled in by the predictor at
//! the requested frequency.

use serde::{Deserialize, Serialize};
use spontts_core::corpus::{BehaviorTag, TextToken};
use spontts_core::{Error, Result};
use std::path::Path;

/// One scripted token (no behavior tag).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScriptToken {
    pub char_id: u32,
    pub word_boundary: bool,
    pub prosody_level: u8,
}

/// One scripted turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptTurn {
    pub speaker_id: u8,
    pub tokens: Vec<ScriptToken>,
    /// Gold tags; when absent the tagger decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<BehaviorTag>>,
}

/// An ordered two-party conversation script.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    pub turns: Vec<ScriptTurn>,
}

impl Script {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::Config("script has no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.speaker_id > 1 {
                return Err(Error::Config(format!(
                    "turn {i}: speaker_id {} out of range",
                    turn.speaker_id
                )));
            }
            if turn.tokens.is_empty() {
                return Err(Error::Config(format!("turn {i} has no tokens")));
            }
            if let Some(tags) = &turn.tags {
                if tags.len() != turn.tokens.len() {
                    return Err(Error::Config(format!(
                        "turn {i}: {} tags for {} tokens",
                        tags.len(),
                        turn.tokens.len()
                    )));
                }
            }
        }
        for w in self.turns.windows(2) {
            if w[0].speaker_id == w[1].speaker_id {
                return Err(Error::Config(
                    "script speakers must alternate between turns".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Script> {
        let text = std::fs::read_to_string(path)?;
        let script: Script =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }
}

/// Materializes a turn's tokens with the given tags.
pub fn tokens_with_tags(turn: &ScriptTurn, tags: &[BehaviorTag]) -> Vec<TextToken> {
    turn.tokens
        .iter()
        .zip(tags)
        .map(|(t, tag)| TextToken {
            char_id: t.char_id,
            word_boundary: t.word_boundary,
            prosody_level: t.prosody_level,
            tag: *tag,
        })
        .collect()
}

/// Untagged view of a turn (all `None`), the tagger's input.
pub fn untagged_tokens(turn: &ScriptTurn) -> Vec<TextToken> {
    tokens_with_tags(turn, &vec![BehaviorTag::None; turn.tokens.len()])
}

/// Derives single-turn scripts from generated conversations (used to build
/// evaluation script sets).
pub fn scripts_from_conversations(
    convs: &[spontts_core::corpus::Conversation],
) -> Vec<Script> {
    convs
        .iter()
        .flat_map(|c| c.utterances.iter())
        .map(|u| Script {
            turns: vec![ScriptTurn {
                speaker_id: u.speaker_id,
                tokens: u
                    .tokens
                    .iter()
                    .map(|t| ScriptToken {
                        char_id: t.char_id,
                        word_boundary: t.word_boundary,
                        prosody_level: t.prosody_level,
                    })
                    .collect(),
                tags: None,
            }],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(c: u32) -> ScriptToken {
        ScriptToken {
            char_id: c,
            word_boundary: true,
            prosody_level: 1,
        }
    }

    #[test]
    fn alternation_is_enforced() {
        let bad = Script {
            turns: vec![
                ScriptTurn {
                    speaker_id: 0,
                    tokens: vec![tok(1)],
                    tags: None,
                },
                ScriptTurn {
                    speaker_id: 0,
                    tokens: vec![tok(2)],
                    tags: None,
                },
            ],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tag_length_must_match() {
        let bad = Script {
            turns: vec![ScriptTurn {
                speaker_id: 0,
                tokens: vec![tok(1), tok(2)],
                tags: Some(vec![BehaviorTag::None]),
            }],
        };
        assert!(bad.validate().is_err());
    }
}
