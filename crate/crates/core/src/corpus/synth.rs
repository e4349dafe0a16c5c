//! Deterministic synthetic conversation corpus.
//!
//! The generator is the ground-truth oracle for the rest of the crate: mel
//! content follows fixed, documented rules so that duration, entrainment
//! and speaker effects are exactly checkable.
//!
//! Rendering rules for an utterance:
//! 1. every token expands to phonemes through the toy lexicon;
//! 2. each phoneme emits [`FRAMES_PER_PHONEME`] frames of a fixed
//!    pseudorandom feature vector of (phoneme, tone);
//! 3. a `Prolongation` tag doubles the token's frame count;
//! 4. a `FilledPause` tag appends [`FILLER_FRAMES`] frames of the constant
//!    [`FILLER_VALUE`] pattern after the token; `Both` applies 3 then 4;
//! 5. speaker `s` adds the constant offset `±`[`SPEAKER_OFFSET`] to every
//!    frame (positive for speaker 0, negative for speaker 1);
//! 6. an entrainment scalar multiplies all frames of the turn, following
//!    `gamma_n = ENTRAINMENT_COEFF * gamma_{n-1} + eps_n` with small
//!    uniform noise, so the previous turn's audio predicts the current
//!    turn's overall style;
//! 7. tokens whose prosody level is >= 2 (a major break follows) receive a
//!    behavior chosen by a fixed hash of the character, giving the tagger
//!    a learnable signal.
//!
//! All randomness comes from one ChaCha stream per conversation, seeded by
//! `splitmix64(seed ^ conversation_index)`; generation order is therefore
//! independent of how conversations are iterated.

use super::{BehaviorTag, Conversation, Mel, TextToken, Utterance};
use crate::frontend::Lexicon;
use crate::util::splitmix64;
use crate::{Error, Mat, Real, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Base frames emitted per phoneme.
pub const FRAMES_PER_PHONEME: usize = 4;
/// Frames appended for a filled pause.
pub const FILLER_FRAMES: usize = 6;
/// Feature value of every filler frame (before speaker offset and scaling).
pub const FILLER_VALUE: Real = 0.5;
/// Magnitude of the per-speaker constant offset.
pub const SPEAKER_OFFSET: Real = 0.4;
/// First-order entrainment coefficient between consecutive turns.
pub const ENTRAINMENT_COEFF: Real = 0.8;

const BASE_SALT: u64 = 0x5350_4f4e_5f42_4153; // base feature streams
const TAG_SALT: u64 = 0x5350_4f4e_5f54_4147; // behavior choice hash

/// Synthetic corpus dimensions.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub conversations: usize,
    pub turns_per_conversation: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub d_mel: usize,
    pub frame_shift_ms: Real,
    /// When false every token is tagged `None`; used for the flat
    /// pretraining set.
    pub tag_behaviors: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            conversations: 20,
            turns_per_conversation: 4,
            min_tokens: 4,
            max_tokens: 8,
            d_mel: 16,
            frame_shift_ms: super::DEFAULT_FRAME_SHIFT_MS,
            tag_behaviors: true,
        }
    }
}

impl SynthConfig {
    /// A single-turn multi-speaker set with all-`None` tags.
    pub fn flat_pretrain(conversations: usize) -> Self {
        SynthConfig {
            conversations,
            turns_per_conversation: 1,
            tag_behaviors: false,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conversations == 0
            || self.turns_per_conversation == 0
            || self.min_tokens == 0
            || self.min_tokens > self.max_tokens
            || self.d_mel == 0
        {
            return Err(Error::Config(format!(
                "invalid synthetic corpus dimensions: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fixed pseudorandom base feature vector for a (phoneme, tone) pair,
/// independent of the corpus seed.
fn base_vector(phoneme: u8, tone: u8, d_mel: usize) -> Vec<Real> {
    let key = BASE_SALT ^ (phoneme as u64 * 64 + tone as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(key));
    (0..d_mel).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// The hash-based behavior assigned to a character at a major break.
fn behavior_for_char(char_id: u32) -> BehaviorTag {
    let h = splitmix64(TAG_SALT ^ char_id as u64);
    BehaviorTag::from_index(1 + (h % 3) as usize).expect("index in 1..=3")
}

/// Frame count contributed by one token under the rendering rules.
pub fn oracle_token_frame_count(token: &TextToken, lexicon: &Lexicon) -> Result<usize> {
    let phonemes = lexicon.get(token.char_id)?;
    let per_phoneme = FRAMES_PER_PHONEME * (1 + token.tag.pl_flag() as usize);
    let filler = FILLER_FRAMES * token.tag.fp_flag() as usize;
    Ok(phonemes.len() * per_phoneme + filler)
}

/// Total frame count of an utterance under the rendering rules.
pub fn oracle_utterance_frame_count(tokens: &[TextToken], lexicon: &Lexicon) -> Result<usize> {
    tokens
        .iter()
        .map(|t| oracle_token_frame_count(t, lexicon))
        .sum()
}

fn render_mel(
    tokens: &[TextToken],
    speaker_id: u8,
    gamma: Real,
    lexicon: &Lexicon,
    cfg: &SynthConfig,
) -> Result<Mel> {
    let offset = if speaker_id == 0 {
        SPEAKER_OFFSET
    } else {
        -SPEAKER_OFFSET
    };
    let total = oracle_utterance_frame_count(tokens, lexicon)?;
    let mut data = Mat::zeros((total, cfg.d_mel));
    let mut row = 0;
    for token in tokens {
        let repeats = FRAMES_PER_PHONEME * (1 + token.tag.pl_flag() as usize);
        for &(phoneme, tone) in lexicon.get(token.char_id)? {
            let base = base_vector(phoneme, tone, cfg.d_mel);
            for _ in 0..repeats {
                for (d, b) in base.iter().enumerate() {
                    data[[row, d]] = *b;
                }
                row += 1;
            }
        }
        if token.tag.fp_flag() == 1 {
            for _ in 0..FILLER_FRAMES {
                for d in 0..cfg.d_mel {
                    data[[row, d]] = FILLER_VALUE;
                }
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, total);
    // Speaker offset, entrainment scaling, then f32 quantization so that
    // the MELF round trip is bit-exact.
    data.mapv_inplace(|v| ((gamma * (v + offset)) as f32) as Real);
    Mel::new(data, cfg.frame_shift_ms)
}

fn draw_tokens(rng: &mut ChaCha8Rng, cfg: &SynthConfig, lexicon: &Lexicon) -> Vec<TextToken> {
    let count = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let mut tokens = Vec::with_capacity(count);
    for i in 0..count {
        let char_id = rng.random_range(0..lexicon.len() as u32);
        let word_boundary = rng.random_bool(0.7);
        let prosody_level = if i + 1 == count {
            3
        } else {
            let u: Real = rng.random_range(0.0..1.0);
            if u < 0.45 {
                0
            } else if u < 0.75 {
                1
            } else {
                2
            }
        };
        let tag = if cfg.tag_behaviors && prosody_level >= 2 {
            behavior_for_char(char_id)
        } else {
            BehaviorTag::None
        };
        tokens.push(TextToken {
            char_id,
            word_boundary,
            prosody_level,
            tag,
        });
    }
    tokens
}

/// Generates the corpus together with the per-turn entrainment scalars
/// (one inner vector per conversation), which tests use to verify the
/// cross-turn correlation the corpus is built to carry.
pub fn gen_synthetic_corpus_traced(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Vec<Real>>)> {
    cfg.validate()?;
    let lexicon = Lexicon::builtin();
    let mut convs = Vec::with_capacity(cfg.conversations);
    let mut traces = Vec::with_capacity(cfg.conversations);
    for ci in 0..cfg.conversations {
        let conv_id = format!("conv{ci:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ ci as u64));
        let mut gamma: Real = rng.random_range(0.7..1.3);
        let start_speaker = (ci % 2) as u8;
        let mut utterances = Vec::with_capacity(cfg.turns_per_conversation);
        let mut trace = Vec::with_capacity(cfg.turns_per_conversation);
        for turn in 1..=cfg.turns_per_conversation as u32 {
            let speaker_id = ((start_speaker as u32 + (turn - 1)) % 2) as u8;
            let tokens = draw_tokens(&mut rng, cfg, &lexicon);
            let mel = render_mel(&tokens, speaker_id, gamma, &lexicon, cfg)?;
            trace.push(gamma);
            utterances.push(Utterance {
                utt_id: format!("{conv_id}_t{turn}"),
                speaker_id,
                tokens,
                mel: Some(mel),
                conv_id: conv_id.clone(),
                turn_index: turn,
            });
            gamma = ENTRAINMENT_COEFF * gamma + rng.random_range(-0.05..0.05);
        }
        let conv = Conversation {
            conv_id,
            utterances,
        };
        conv.validate()?;
        convs.push(conv);
        traces.push(trace);
    }
    Ok((convs, traces))
}

/// Deterministic synthetic corpus; same `(cfg, seed)` yields identical
/// conversations.
pub fn gen_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<Vec<Conversation>> {
    gen_synthetic_corpus_traced(cfg, seed).map(|(convs, _)| convs)
}
