//! Toy pronunciation lexicon.
//!
//! 40 characters over 8 phonemes and 5 tones; every character maps to a
//! fixed sequence of 1..=3 (phoneme, tone) pairs. The builtin table is
//! generated from a frozen hash so it is identical everywhere; it can also
//! be saved to / loaded from a JSON file mapping `char_id` to its
//! pronunciation list.

use crate::util::splitmix64;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

pub const NUM_CHARS: usize = 40;
pub const NUM_PHONEMES: usize = 8;
pub const NUM_TONES: usize = 5;

const LEXICON_SALT: u64 = 0x4c45_5849_434f_4e00;

/// Pronunciation table: `char_id` to a list of (phoneme_id, tone_id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<Vec<(u8, u8)>>,
}

impl Lexicon {
    /// The canonical 40-character table. Character `c` has
    /// `1 + (c + 1) % 3` phonemes (so char 0 has two), with phoneme and
    /// tone identities drawn from a frozen hash stream.
    pub fn builtin() -> Self {
        let entries = (0..NUM_CHARS as u32)
            .map(|c| {
                let count = 1 + ((c as usize + 1) % 3);
                (0..count)
                    .map(|i| {
                        let h = splitmix64(LEXICON_SALT ^ (c as u64 * 8 + i as u64));
                        let phoneme = (h % NUM_PHONEMES as u64) as u8;
                        let tone = ((h >> 32) % NUM_TONES as u64) as u8;
                        (phoneme, tone)
                    })
                    .collect()
            })
            .collect();
        Lexicon { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pronunciation of `char_id`, or `UnknownChar`.
    pub fn get(&self, char_id: u32) -> Result<&[(u8, u8)]> {
        self.entries
            .get(char_id as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownChar(char_id))
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let map: BTreeMap<u32, &Vec<(u8, u8)>> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u32, e))
            .collect();
        let text = serde_json::to_string_pretty(&map).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<u32, Vec<(u8, u8)>> =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let mut entries = Vec::with_capacity(map.len());
        for (expect, (id, pron)) in map.into_iter().enumerate() {
            if id as usize != expect {
                return Err(Error::Format(format!(
                    "lexicon char ids must be dense from 0, missing {expect}"
                )));
            }
            if pron.is_empty() || pron.len() > 3 {
                return Err(Error::Format(format!(
                    "char {id} must have 1..=3 phonemes, has {}",
                    pron.len()
                )));
            }
            for &(p, t) in &pron {
                if p as usize >= NUM_PHONEMES || t as usize >= NUM_TONES {
                    return Err(Error::Format(format!(
                        "char {id}: phoneme/tone ({p},{t}) out of range"
                    )));
                }
            }
            entries.push(pron);
        }
        Ok(Lexicon { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_shape_is_fixed() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.len(), NUM_CHARS);
        assert_eq!(lex.get(0).unwrap().len(), 2);
        for c in 0..NUM_CHARS as u32 {
            let pron = lex.get(c).unwrap();
            assert!((1..=3).contains(&pron.len()));
            for &(p, t) in pron {
                assert!((p as usize) < NUM_PHONEMES);
                assert!((t as usize) < NUM_TONES);
            }
        }
    }

    #[test]
    fn unknown_char_is_an_error() {
        let lex = Lexicon::builtin();
        assert!(matches!(
            lex.get(NUM_CHARS as u32),
            Err(Error::UnknownChar(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let lex = Lexicon::builtin();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lexicon.json");
        lex.to_json_file(&path).unwrap();
        assert_eq!(Lexicon::from_json_file(&path).unwrap(), lex);
    }
}
