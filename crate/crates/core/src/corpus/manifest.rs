//! JSON-lines manifest I/O.
//!
//! One JSON object per line with fields `conv_id`, `turn_index`,
//! `speaker_id`, `tokens` and `mel_path`; mel paths are relative to the
//! manifest file.

use super::{melf, Conversation, Mel, TextToken, Utterance, DEFAULT_FRAME_SHIFT_MS};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct Record {
    conv_id: String,
    turn_index: u32,
    speaker_id: u8,
    tokens: Vec<TextToken>,
    mel_path: Option<String>,
}

/// Loads conversations from a manifest, grouping records by `conv_id` and
/// sorting each group by `turn_index`. Groups appear in first-occurrence
/// order. Mels referenced by `mel_path` are loaded eagerly.
pub fn load_manifest(path: &Path) -> Result<Vec<Conversation>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let reader = BufReader::new(File::open(path)?);

    let mut order: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<Utterance>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let mel = match &rec.mel_path {
            Some(rel) => Some(melf::read_mel(&base.join(rel), DEFAULT_FRAME_SHIFT_MS)?),
            None => None,
        };
        let utt = Utterance {
            utt_id: format!("{}_t{}", rec.conv_id, rec.turn_index),
            speaker_id: rec.speaker_id,
            tokens: rec.tokens,
            mel,
            conv_id: rec.conv_id.clone(),
            turn_index: rec.turn_index,
        };
        match order.iter().position(|c| *c == rec.conv_id) {
            Some(g) => groups[g].push(utt),
            None => {
                order.push(rec.conv_id);
                groups.push(vec![utt]);
            }
        }
    }

    let mut convs = Vec::with_capacity(order.len());
    for (conv_id, mut utts) in order.into_iter().zip(groups) {
        utts.sort_by_key(|u| u.turn_index);
        let conv = Conversation {
            conv_id,
            utterances: utts,
        };
        conv.validate()?;
        convs.push(conv);
    }
    Ok(convs)
}

/// Writes `manifest.jsonl` plus one MELF file per utterance mel under
/// `dir/mels/`. Returns the manifest path.
pub fn write_manifest(dir: &Path, convs: &[Conversation]) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mel_dir = dir.join("mels");
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = BufWriter::new(File::create(&manifest_path)?);
    let mut have_mel_dir = false;
    for conv in convs {
        conv.validate()?;
        for u in &conv.utterances {
            let mel_path = match &u.mel {
                Some(mel) => {
                    if !have_mel_dir {
                        std::fs::create_dir_all(&mel_dir)?;
                        have_mel_dir = true;
                    }
                    let rel = format!("mels/{}.mel", u.utt_id);
                    melf::write_mel(&dir.join(&rel), mel)?;
                    Some(rel)
                }
                None => None,
            };
            let rec = Record {
                conv_id: u.conv_id.clone(),
                turn_index: u.turn_index,
                speaker_id: u.speaker_id,
                tokens: u.tokens.clone(),
                mel_path,
            };
            serde_json::to_writer(&mut out, &rec)
                .map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(manifest_path)
}

/// Convenience wrapper: mel for `utt`, or an error naming the utterance.
pub(crate) fn require_mel<'a>(u: &'a Utterance) -> Result<&'a Mel> {
    u.mel.as_ref().ok_or_else(|| Error::InvalidConversation {
        conv_id: u.conv_id.clone(),
        msg: format!("utterance {} has no mel", u.utt_id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BehaviorTag;

    fn tok(char_id: u32, prosody: u8, tag: BehaviorTag) -> TextToken {
        TextToken {
            char_id,
            word_boundary: true,
            prosody_level: prosody,
            tag,
        }
    }

    fn line(conv: &str, turn: u32, speaker: u8) -> String {
        let rec = Record {
            conv_id: conv.into(),
            turn_index: turn,
            speaker_id: speaker,
            tokens: vec![tok(0, 3, BehaviorTag::None)],
            mel_path: None,
        };
        serde_json::to_string(&rec).unwrap()
    }

    #[test]
    fn three_line_manifest_groups_into_one_conversation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let text = [line("a", 1, 0), line("a", 2, 1), line("a", 3, 0)].join("\n");
        std::fs::write(&path, text).unwrap();
        let convs = load_manifest(&path).unwrap();
        assert_eq!(convs.len(), 1);
        assert_eq!(convs[0].utterances.len(), 3);
    }

    #[test]
    fn interleaved_conv_ids_are_sorted_then_grouped() {
        // Oracle: sort records by (first-seen group, turn_index), then group.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let text = [
            line("a", 1, 0),
            line("b", 1, 1),
            line("a", 2, 1),
            line("b", 2, 0),
            line("b", 3, 1),
            line("a", 3, 0),
        ]
        .join("\n");
        std::fs::write(&path, text).unwrap();
        let convs = load_manifest(&path).unwrap();
        assert_eq!(convs.len(), 2);
        assert_eq!(convs[0].conv_id, "a");
        assert_eq!(convs[1].conv_id, "b");
        for conv in &convs {
            let turns: Vec<u32> = conv.utterances.iter().map(|u| u.turn_index).collect();
            assert_eq!(turns, vec![1, 2, 3]);
        }
    }

    #[test]
    fn same_speaker_turns_error_names_conversation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let text = [line("talk", 1, 0), line("talk", 2, 1), line("talk", 3, 1)].join("\n");
        std::fs::write(&path, text).unwrap();
        let err = load_manifest(&path).unwrap_err();
        match err {
            Error::InvalidConversation { conv_id, .. } => assert_eq!(conv_id, "talk"),
            other => panic!("expected InvalidConversation, got {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let text = format!("{}\nnot json\n", line("a", 1, 0));
        std::fs::write(&path, text).unwrap();
        match load_manifest(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other}"),
        }
    }
}
