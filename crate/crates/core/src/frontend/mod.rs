//! Text frontend: phonemization, phoneme-level linguistic frames with
//! explicit spontaneous-behavior flags, and character-level semantic
//! embeddings upsampled to phoneme level.

mod lexicon;

pub use lexicon::{Lexicon, NUM_CHARS, NUM_PHONEMES, NUM_TONES};

use crate::corpus::TextToken;
use crate::util::splitmix64;
use crate::{Error, Mat, Real, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

/// One phoneme-level input row for the acoustic model. The token's
/// behavior flags and prosody level are replicated onto each of its
/// phonemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinguisticFrame {
    pub phoneme_id: u8,
    pub tone_id: u8,
    pub prosody_level: u8,
    pub pl_flag: u8,
    pub fp_flag: u8,
}

/// Phoneme-aligned semantic embedding matrix (one row per phoneme).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSequence {
    pub vectors: Mat,
}

impl SemanticSequence {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Source of per-token (character-level) embedding vectors. The default
/// implementation is deterministic and hash-based; a pretrained language
/// model can be plugged in behind this seam.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;

    /// Embedding for one token; must be deterministic in the token content.
    fn embed_token(&self, token: &TextToken) -> std::result::Result<Vec<Real>, String>;

    /// Embedding matrix for a token sequence, one row per token.
    fn embed(&self, tokens: &[TextToken]) -> Result<Mat> {
        let mut out = Mat::zeros((tokens.len(), self.dim()));
        for (i, tok) in tokens.iter().enumerate() {
            let v = self
                .embed_token(tok)
                .map_err(|msg| Error::Provider { index: i, msg })?;
            if v.len() != self.dim() {
                return Err(Error::Provider {
                    index: i,
                    msg: format!("embedding width {} != {}", v.len(), self.dim()),
                });
            }
            for (d, x) in v.iter().enumerate() {
                out[[i, d]] = *x;
            }
        }
        Ok(out)
    }
}

/// Default deterministic provider: each character id maps to a frozen
/// pseudorandom vector.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    dim: usize,
}

pub const DEFAULT_SEMANTIC_DIM: usize = 32;
const EMBED_SALT: u64 = 0x4348_4152_5f45_4d42;

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        HashEmbedding { dim }
    }
}

impl Default for HashEmbedding {
    fn default() -> Self {
        HashEmbedding::new(DEFAULT_SEMANTIC_DIM)
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_token(&self, token: &TextToken) -> std::result::Result<Vec<Real>, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(EMBED_SALT ^ token.char_id as u64));
        Ok((0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }
}

/// Per-utterance semantic matrices cached on disk in the MELF format,
/// keyed by utterance id (`<dir>/<utt_id>.melf`).
#[derive(Debug, Clone)]
pub struct MelfEmbeddingCache {
    dir: PathBuf,
}

impl MelfEmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MelfEmbeddingCache { dir: dir.into() }
    }

    pub fn get(&self, utt_id: &str) -> Result<Option<Mat>> {
        let path = self.dir.join(format!("{utt_id}.melf"));
        if !path.exists() {
            return Ok(None);
        }
        crate::corpus::read_matrix(&path).map(Some)
    }

    pub fn put(&self, utt_id: &str, m: &Mat) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        crate::corpus::write_matrix(&self.dir.join(format!("{utt_id}.melf")), m)
    }
}

/// Pronunciation of one token: its (phoneme_id, tone_id) sequence.
pub fn phonemize(token: &TextToken, lexicon: &Lexicon) -> Result<Vec<(u8, u8)>> {
    Ok(lexicon.get(token.char_id)?.to_vec())
}

/// Expands tokens to phoneme-level frames, replicating each token's
/// prosody level and behavior flags onto all of its phonemes.
pub fn expand_tags(tokens: &[TextToken], lexicon: &Lexicon) -> Result<Vec<LinguisticFrame>> {
    let mut frames = Vec::new();
    for token in tokens {
        for &(phoneme_id, tone_id) in lexicon.get(token.char_id)? {
            frames.push(LinguisticFrame {
                phoneme_id,
                tone_id,
                prosody_level: token.prosody_level,
                pl_flag: token.tag.pl_flag(),
                fp_flag: token.tag.fp_flag(),
            });
        }
    }
    Ok(frames)
}

/// Upsamples token embeddings to phoneme level by replication: output row
/// `i` is the embedding of the token owning phoneme `i`.
pub fn upsample_semantic(
    tokens: &[TextToken],
    provider: &dyn EmbeddingProvider,
    lexicon: &Lexicon,
) -> Result<SemanticSequence> {
    let token_emb = provider.embed(tokens)?;
    let mut counts = Vec::with_capacity(tokens.len());
    let mut total = 0;
    for token in tokens {
        let n = lexicon.get(token.char_id)?.len();
        counts.push(n);
        total += n;
    }
    let mut vectors = Mat::zeros((total, provider.dim()));
    let mut row = 0;
    for (i, n) in counts.iter().enumerate() {
        for _ in 0..*n {
            vectors.row_mut(row).assign(&token_emb.row(i));
            row += 1;
        }
    }
    Ok(SemanticSequence { vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BehaviorTag;
    use proptest::prelude::*;

    fn tok(char_id: u32, tag: BehaviorTag) -> TextToken {
        TextToken {
            char_id,
            word_boundary: true,
            prosody_level: 1,
            tag,
        }
    }

    #[test]
    fn phonemize_char0_matches_table_and_is_deterministic() {
        let lex = Lexicon::builtin();
        let t = tok(0, BehaviorTag::None);
        let seq = phonemize(&t, &lex).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq, lex.get(0).unwrap().to_vec());
        assert_eq!(seq, phonemize(&t, &lex).unwrap());
    }

    #[test]
    fn phonemize_unknown_char_errors() {
        let lex = Lexicon::builtin();
        let t = tok(999, BehaviorTag::None);
        assert!(matches!(phonemize(&t, &lex), Err(Error::UnknownChar(999))));
    }

    #[test]
    fn expand_tags_replicates_flags_per_phoneme() {
        let lex = Lexicon::builtin();
        // char 0: two phonemes
        let frames = expand_tags(&[tok(0, BehaviorTag::FilledPause)], &lex).unwrap();
        assert_eq!(frames.len(), 2);
        for f in &frames {
            assert_eq!((f.pl_flag, f.fp_flag), (0, 1));
        }

        let frames = expand_tags(&[tok(0, BehaviorTag::None)], &lex).unwrap();
        assert!(frames.iter().all(|f| f.pl_flag == 0 && f.fp_flag == 0));

        // char 1 has three phonemes in the builtin table.
        let lex3 = lex.get(1).unwrap().len();
        assert_eq!(lex3, 3);
        let frames = expand_tags(&[tok(1, BehaviorTag::Both)], &lex).unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.pl_flag == 1 && f.fp_flag == 1));
    }

    #[test]
    fn upsample_replicates_rows_by_phoneme_count() {
        let lex = Lexicon::builtin();
        let provider = HashEmbedding::default();
        // char 0 -> 2 phonemes, char 2 -> 1 phoneme
        assert_eq!(lex.get(2).unwrap().len(), 1);
        let tokens = [tok(0, BehaviorTag::None), tok(2, BehaviorTag::None)];
        let sem = upsample_semantic(&tokens, &provider, &lex).unwrap();
        assert_eq!(sem.len(), 3);
        let u = provider.embed(&tokens).unwrap();
        // Oracle: replication [u, u, v].
        assert_eq!(sem.vectors.row(0), u.row(0));
        assert_eq!(sem.vectors.row(1), u.row(0));
        assert_eq!(sem.vectors.row(2), u.row(1));
    }

    #[test]
    fn upsample_of_empty_token_list_is_empty_with_width() {
        let lex = Lexicon::builtin();
        let provider = HashEmbedding::default();
        let sem = upsample_semantic(&[], &provider, &lex).unwrap();
        assert_eq!(sem.len(), 0);
        assert_eq!(sem.dim(), DEFAULT_SEMANTIC_DIM);
    }

    #[test]
    fn provider_failure_carries_token_index() {
        struct Failing;
        impl EmbeddingProvider for Failing {
            fn dim(&self) -> usize {
                4
            }
            fn embed_token(&self, token: &TextToken) -> std::result::Result<Vec<Real>, String> {
                if token.char_id == 2 {
                    Err("no embedding".into())
                } else {
                    Ok(vec![0.0; 4])
                }
            }
        }
        let lex = Lexicon::builtin();
        let tokens = [tok(0, BehaviorTag::None), tok(2, BehaviorTag::None)];
        match upsample_semantic(&tokens, &Failing, &lex) {
            Err(Error::Provider { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected provider error, got {other:?}"),
        }
    }

    #[test]
    fn embedding_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = MelfEmbeddingCache::new(dir.path());
        assert!(cache.get("u1").unwrap().is_none());
        let m = Mat::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        cache.put("u1", &m).unwrap();
        assert_eq!(cache.get("u1").unwrap().unwrap(), m);
    }

    proptest! {
        // The two phoneme-level streams always stay aligned.
        #[test]
        fn frame_and_semantic_lengths_agree(chars in proptest::collection::vec(0u32..40, 0..12),
                                            tags in proptest::collection::vec(0usize..4, 0..12)) {
            let lex = Lexicon::builtin();
            let provider = HashEmbedding::default();
            let tokens: Vec<TextToken> = chars
                .iter()
                .zip(tags.iter().chain(std::iter::repeat(&0)))
                .map(|(&c, &t)| tok(c, BehaviorTag::from_index(t).unwrap()))
                .collect();
            let frames = expand_tags(&tokens, &lex).unwrap();
            let sem = upsample_semantic(&tokens, &provider, &lex).unwrap();
            prop_assert_eq!(frames.len(), sem.len());
        }

        // Changing one token's tag changes exactly that token's frames.
        #[test]
        fn tag_edits_are_local(chars in proptest::collection::vec(0u32..40, 1..8),
                               flip in 0usize..8,
                               new_tag in 1usize..4) {
            let lex = Lexicon::builtin();
            let flip = flip % chars.len();
            let tokens: Vec<TextToken> = chars.iter().map(|&c| tok(c, BehaviorTag::None)).collect();
            let mut edited = tokens.clone();
            edited[flip].tag = BehaviorTag::from_index(new_tag).unwrap();

            let before = expand_tags(&tokens, &lex).unwrap();
            let after = expand_tags(&edited, &lex).unwrap();
            prop_assert_eq!(before.len(), after.len());

            let mut start = 0;
            for (i, t) in tokens.iter().enumerate() {
                let n = lex.get(t.char_id).unwrap().len();
                for k in start..start + n {
                    if i == flip {
                        prop_assert_ne!(before[k], after[k]);
                    } else {
                        prop_assert_eq!(before[k], after[k]);
                    }
                }
                start += n;
            }
        }
    }
}
