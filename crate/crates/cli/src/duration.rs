//! Duration-versus-frequency evaluation: how the mean free-running
//! utterance length responds to the behavior frequency control.

use crate::script::Script;
use crate::synthesis::{synth_conversation, SynthesisRequest};
use serde::Serialize;
use spontts_core::frontend::{EmbeddingProvider, Lexicon};
use spontts_core::tagger::TaggerModel;
use spontts_core::training::TtsModel;
use spontts_core::{Error, Real, Result};

#[derive(Debug, Clone, Serialize)]
pub struct DurationRow {
    pub p: Real,
    pub mean_frames: Real,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DurationReport {
    pub rows: Vec<DurationRow>,
}

/// Synthesizes every script at every requested frequency and reports the
/// mean frame count per utterance. The grid must be ascending.
pub fn duration_curve(
    model: &TtsModel,
    tagger: &TaggerModel,
    scripts: &[Script],
    p_grid: &[Real],
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<DurationReport> {
    if p_grid.is_empty() {
        return Err(Error::Config("empty frequency grid".into()));
    }
    if p_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("frequency grid must be ascending".into()));
    }
    if scripts.is_empty() {
        return Err(Error::Config("no scripts to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let mut total_frames = 0usize;
        let mut samples = 0usize;
        for script in scripts {
            let turns = synth_conversation(
                &SynthesisRequest {
                    script,
                    p,
                    model,
                    tagger: Some(tagger),
                },
                lexicon,
                provider,
            )?;
            for t in &turns {
                total_frames += t.frames;
                samples += 1;
            }
        }
        rows.push(DurationRow {
            p,
            mean_frames: total_frames as Real / samples as Real,
            samples,
        });
    }
    Ok(DurationReport { rows })
}
