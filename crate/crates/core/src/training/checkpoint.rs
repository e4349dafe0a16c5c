//! Versioned binary checkpoint container.
//!
//! Layout: magic `SPCK`, u32 version, u32 meta length + meta JSON, u32
//! parameter count, then per parameter a u16-length name, u32 rows, u32
//! cols and row-major f64 LE data; finally a u8 optimizer flag followed,
//! when set, by the step count and the two moment matrices per parameter
//! in store order.

use super::{Stage, TtsModel};
use crate::acoustic::AcousticConfig;
use crate::context::ContextConfig;
use crate::nn::{Adam, AdamConfig, ParamStore};
use crate::tagger::{TaggerConfig, TaggerModel};
use crate::{Error, Mat, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SPCK";
const VERSION: u32 = 1;

/// Checkpoint metadata; `kind` distinguishes model families.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub stage: Option<Stage>,
    pub epoch: u64,
    pub acoustic: Option<AcousticConfig>,
    pub context: Option<ContextConfig>,
    pub tagger: Option<TaggerConfig>,
}

/// Restored optimizer state.
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

fn write_mat(w: &mut impl Write, m: &Mat) -> Result<()> {
    w.write_all(&(m.nrows() as u32).to_le_bytes())?;
    w.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_mat(r: &mut impl Read) -> Result<Mat> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let rows = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let cols = u32::from_le_bytes(b4) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut b8 = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Mat::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Writes a checkpoint for any parameter store.
pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    store: &ParamStore,
    adam: Option<&Adam>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, value) in store.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        write_mat(&mut w, value)?;
    }
    match adam {
        Some(opt) => {
            w.write_all(&[1u8])?;
            let (t, m, v) = opt.state();
            w.write_all(&t.to_le_bytes())?;
            for mat in m.iter().chain(v.iter()) {
                write_mat(&mut w, mat)?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back: metadata, named parameters, optimizer state.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(CheckpointMeta, Vec<(String, Mat)>, Option<AdamState>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let meta_len = u32::from_le_bytes(b4) as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mat = read_mat(&mut r)?;
        params.push((name, mat));
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = if flag[0] == 1 {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let t = u64::from_le_bytes(b8);
        let mut m = Vec::with_capacity(count);
        for _ in 0..count {
            m.push(read_mat(&mut r)?);
        }
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            v.push(read_mat(&mut r)?);
        }
        Some(AdamState { t, m, v })
    } else {
        None
    };
    Ok((meta, params, adam))
}

/// Saves the full TTS system (acoustic + both context encoders + next
/// predictor) with its configs.
pub fn save_tts(
    path: &Path,
    model: &TtsModel,
    adam: Option<&Adam>,
    stage: Stage,
    epoch: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "tts".into(),
        stage: Some(stage),
        epoch,
        acoustic: Some(model.acoustic.cfg.clone()),
        context: Some(model.ctx_prev.cfg.clone()),
        tagger: None,
    };
    save_checkpoint(path, &meta, &model.store, adam)
}

/// Rebuilds a TTS system from a checkpoint. The optimizer, when present in
/// the file, is restored with the given Adam settings.
pub fn load_tts(
    path: &Path,
    adam_cfg: Option<AdamConfig>,
) -> Result<(TtsModel, Option<Adam>, CheckpointMeta)> {
    let (meta, params, adam_state) = load_checkpoint(path)?;
    if meta.kind != "tts" {
        return Err(Error::Checkpoint(format!(
            "expected a tts checkpoint, found kind {}",
            meta.kind
        )));
    }
    let acfg = meta
        .acoustic
        .clone()
        .ok_or_else(|| Error::Checkpoint("missing acoustic config".into()))?;
    let ccfg = meta
        .context
        .clone()
        .ok_or_else(|| Error::Checkpoint("missing context config".into()))?;
    let mut model = TtsModel::init(&acfg, &ccfg, 0)?;
    model.store.load_values(&params)?;
    let adam = match (adam_cfg, adam_state) {
        (Some(cfg), Some(state)) => {
            let mut opt = Adam::new(cfg, &model.store);
            opt.restore(state.t, state.m, state.v);
            Some(opt)
        }
        (Some(cfg), None) => Some(Adam::new(cfg, &model.store)),
        _ => None,
    };
    Ok((model, adam, meta))
}

/// Saves a trained behavior predictor.
pub fn save_tagger(path: &Path, model: &TaggerModel) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "tagger".into(),
        stage: None,
        epoch: model.epoch_losses.len() as u64,
        acoustic: None,
        context: None,
        tagger: Some(model.cfg.clone()),
    };
    save_checkpoint(path, &meta, model.store(), None)
}

/// Restores a behavior predictor.
pub fn load_tagger(path: &Path) -> Result<TaggerModel> {
    let (meta, params, _) = load_checkpoint(path)?;
    if meta.kind != "tagger" {
        return Err(Error::Checkpoint(format!(
            "expected a tagger checkpoint, found kind {}",
            meta.kind
        )));
    }
    let cfg = meta
        .tagger
        .ok_or_else(|| Error::Checkpoint("missing tagger config".into()))?;
    let mut model = TaggerModel::init(&cfg);
    model.store_mut().load_values(&params)?;
    Ok(model)
}
