//! Conversation synthesis rollout.
//!
//! Turn 1 decodes with a zero context embedding; every later turn is
//! conditioned on the previous-turn embedding extracted from the
//! *synthesized* previous audio, mirroring the two-party generation use
//! case where no ground-truth audio exists.

use crate::script::{tokens_with_tags, untagged_tokens, Script};
use serde::Serialize;
use spontts_core::corpus::{write_mel, BehaviorTag, Mel};
use spontts_core::frontend::{EmbeddingProvider, Lexicon};
use spontts_core::tagger::{predict_distribution, select_behaviors, TaggerModel};
use spontts_core::training::TtsModel;
use spontts_core::{Error, Real, Result};
use std::path::{Path, PathBuf};

/// One synthesis job: a script, a behavior frequency, and the models.
pub struct SynthesisRequest<'a> {
    pub script: &'a Script,
    pub p: Real,
    pub model: &'a TtsModel,
    /// Needed when any turn lacks gold tags.
    pub tagger: Option<&'a TaggerModel>,
}

/// One synthesized turn.
pub struct TurnResult {
    pub speaker_id: u8,
    pub tags: Vec<BehaviorTag>,
    pub mel: Mel,
    pub frames: usize,
    /// The decoder hit its step limit before deciding to stop.
    pub ran_to_max: bool,
}

/// Transcript line written next to the mel files.
#[derive(Serialize)]
struct TranscriptTurn<'a> {
    turn_index: usize,
    speaker_id: u8,
    tags: &'a [BehaviorTag],
    frames: usize,
    ran_to_max: bool,
    mel_path: String,
}

#[derive(Serialize)]
struct Transcript<'a> {
    p: Real,
    turns: Vec<TranscriptTurn<'a>>,
}

/// Synthesizes every turn of the script in order. Tags for turns without
/// gold annotations come from the predictor via the frequency-controlled
/// selector at `p`.
pub fn synth_conversation(
    req: &SynthesisRequest<'_>,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<TurnResult>> {
    req.script.validate()?;
    if !(0.0..=1.0).contains(&req.p) {
        return Err(Error::Config(format!("frequency p={} outside [0, 1]", req.p)));
    }
    let mut results: Vec<TurnResult> = Vec::with_capacity(req.script.turns.len());
    let mut prev_mel: Option<Mel> = None;
    for turn in &req.script.turns {
        let tags = match &turn.tags {
            Some(tags) => tags.clone(),
            None => {
                let tagger = req.tagger.ok_or_else(|| {
                    Error::Config("script has untagged turns but no tagger was given".into())
                })?;
                let dist = predict_distribution(tagger, &untagged_tokens(turn), provider)?;
                select_behaviors(&dist, req.p)?
            }
        };
        let tokens = tokens_with_tags(turn, &tags);
        let e_prev = match &prev_mel {
            Some(mel) => Some(req.model.embed_previous(mel)?),
            None => None,
        };
        let out = req.model.synthesize_utterance(
            &tokens,
            turn.speaker_id as usize,
            e_prev.as_deref(),
            lexicon,
            provider,
        )?;
        prev_mel = Some(out.mel.clone());
        results.push(TurnResult {
            speaker_id: turn.speaker_id,
            tags,
            frames: out.frames,
            ran_to_max: out.ran_to_max,
            mel: out.mel,
        });
    }
    Ok(results)
}

/// Writes one MELF file per turn plus `transcript.json`; returns the mel
/// paths.
pub fn write_synthesis(
    out_dir: &Path,
    p: Real,
    turns: &[TurnResult],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut mel_paths = Vec::with_capacity(turns.len());
    let mut transcript = Vec::with_capacity(turns.len());
    for (i, turn) in turns.iter().enumerate() {
        let rel = format!("turn_{:02}.mel", i + 1);
        let path = out_dir.join(&rel);
        write_mel(&path, &turn.mel)?;
        transcript.push(TranscriptTurn {
            turn_index: i + 1,
            speaker_id: turn.speaker_id,
            tags: &turn.tags,
            frames: turn.frames,
            ran_to_max: turn.ran_to_max,
            mel_path: rel,
        });
        mel_paths.push(path);
    }
    let doc = Transcript {
        p,
        turns: transcript,
    };
    let text =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(out_dir.join("transcript.json"), text)?;
    Ok(mel_paths)
}
