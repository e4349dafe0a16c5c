//! Loss composition, conversation-pair training, the pretrain/finetune
//! schedule and evaluation.
//!
//! One training step on a pair (previous, current): the previous-utterance
//! encoder produces the context embedding that conditions the decoder; the
//! current-utterance encoder produces the gradient-stopped target of the
//! next predictor; both encoders train their speaker classifiers through
//! gradient reversal; the decoder runs teacher-forced on the current mel.
//! The objective is `l_rcon + lambda * l_speaker_ce + beta * l_embedding`
//! plus the stop-head term kept as separate bookkeeping.

pub mod checkpoint;

use crate::acoustic::{AcousticConfig, AcousticModel, DecodeMode, DecodeOut};
use crate::context::{ContextConfig, ContextEncoder, NextPredictor};
use crate::corpus::{require_mel, Conversation, ConversationPair, Mel, TextToken, Utterance};
use crate::frontend::{expand_tags, upsample_semantic, EmbeddingProvider, Lexicon};
use crate::nn::{Adam, AdamConfig, Binding, Graph, NodeId, ParamStore};
use crate::util::splitmix64;
use crate::{Error, Mat, Real, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Extra weight on the positive (final) stop target; the stop head sees a
/// single positive example per utterance.
const STOP_POS_WEIGHT: Real = 4.0;

/// Training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// Stage hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: Real,
    pub beta: Real,
    pub lr: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of total steps over which the GRL scale ramps linearly.
    pub grl_warmup_frac: Real,
    pub stage: Stage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            beta: 1.0,
            lr: 1e-3,
            batch_size: 1,
            epochs: 10,
            seed: 0,
            grl_warmup_frac: 0.1,
            stage: Stage::Finetune,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("lambda and beta must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Component losses of one step plus their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rcon: Real,
    pub l_speaker_ce: Real,
    pub l_embedding: Real,
    pub l_stop: Real,
    pub total: Real,
    pub lambda: Real,
    pub beta: Real,
}

/// Combines component losses exactly as
/// `((l_rcon + lambda*l_speaker_ce) + beta*l_embedding) + l_stop`.
pub fn total_loss(
    l_rcon: Real,
    l_speaker_ce: Real,
    l_embedding: Real,
    l_stop: Real,
    lambda: Real,
    beta: Real,
) -> Result<LossBreakdown> {
    for (name, v) in [
        ("l_rcon", l_rcon),
        ("l_speaker_ce", l_speaker_ce),
        ("l_embedding", l_embedding),
        ("l_stop", l_stop),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{name} is not finite: {v}")));
        }
        if v < 0.0 {
            return Err(Error::Numerical(format!("{name} is negative: {v}")));
        }
    }
    if lambda < 0.0 || beta < 0.0 {
        return Err(Error::Config("lambda and beta must be nonnegative".into()));
    }
    let total = ((l_rcon + lambda * l_speaker_ce) + beta * l_embedding) + l_stop;
    Ok(LossBreakdown {
        l_rcon,
        l_speaker_ce,
        l_embedding,
        l_stop,
        total,
        lambda,
        beta,
    })
}

/// The complete trainable system: acoustic model, previous/current context
/// encoders and the next predictor, all in one parameter store.
pub struct TtsModel {
    pub store: ParamStore,
    pub acoustic: AcousticModel,
    /// f_p: encodes the previous utterance; conditions the decoder.
    pub ctx_prev: ContextEncoder,
    /// f_c: encodes the current utterance; training-only target.
    pub ctx_curr: ContextEncoder,
    pub next: NextPredictor,
}

impl TtsModel {
    pub fn init(acfg: &AcousticConfig, ccfg: &ContextConfig, seed: u64) -> Result<Self> {
        acfg.validate()?;
        ccfg.validate()?;
        if acfg.d_e != ccfg.d_e {
            return Err(Error::Config(format!(
                "decoder context width {} != context encoder output {}",
                acfg.d_e, ccfg.d_e
            )));
        }
        if acfg.d_mel != ccfg.d_mel {
            return Err(Error::Config("mel widths differ".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7474_735f_6d6f_6465));
        let mut store = ParamStore::new();
        let acoustic = AcousticModel::init(&mut store, acfg, &mut rng);
        let ctx_prev = ContextEncoder::init(&mut store, "ctx_prev", ccfg, &mut rng);
        let ctx_curr = ContextEncoder::init(&mut store, "ctx_curr", ccfg, &mut rng);
        let next = NextPredictor::init(&mut store, "next", ccfg, &mut rng);
        Ok(TtsModel {
            store,
            acoustic,
            ctx_prev,
            ctx_curr,
            next,
        })
    }

    /// Previous-turn embedding from audio (inference path).
    pub fn embed_previous(&self, mel: &Mel) -> Result<Vec<Real>> {
        self.ctx_prev.embed_mel(&self.store, mel)
    }

    /// Free-running synthesis of one utterance.
    pub fn synthesize_utterance(
        &self,
        tokens: &[TextToken],
        speaker_id: usize,
        e_prev: Option<&[Real]>,
        lexicon: &Lexicon,
        provider: &dyn EmbeddingProvider,
    ) -> Result<SynthOutput> {
        let frames = expand_tags(tokens, lexicon)?;
        let sem = upsample_semantic(tokens, provider, lexicon)?;
        let mut g = Graph::new();
        let bind = self.store.bind(&mut g);
        let mem = self.acoustic.memory(&mut g, &bind, &frames, &sem)?;
        let spk = self.acoustic.speaker_embedding(&mut g, &bind, speaker_id)?;
        let d_e = self.acoustic.cfg.d_e;
        let e_node = match e_prev {
            Some(e) => {
                if e.len() != d_e {
                    return Err(Error::Shape(format!(
                        "context embedding length {} != {d_e}",
                        e.len()
                    )));
                }
                g.constant(Mat::from_shape_vec((1, d_e), e.to_vec()).expect("row"))
            }
            None => g.constant(Mat::zeros((1, d_e))),
        };
        let out = self
            .acoustic
            .decode(&mut g, &bind, mem, spk, e_node, DecodeMode::FreeRun)?;
        let mel = Mel::new(
            g.value(out.mel).clone(),
            crate::corpus::DEFAULT_FRAME_SHIFT_MS,
        )?;
        Ok(SynthOutput {
            frames: mel.frames(),
            mel,
            stop_probs: out.stop_probs,
            ran_to_max: out.ran_to_max,
        })
    }
}

/// Free-run synthesis result for one utterance.
pub struct SynthOutput {
    pub mel: Mel,
    pub frames: usize,
    pub stop_probs: Vec<Real>,
    /// The decoder hit its step limit without a stop decision.
    pub ran_to_max: bool,
}

/// Stop-head targets for `steps` decoder steps: zeros with a single
/// weighted positive at the end.
fn stop_targets(steps: usize) -> (Mat, Mat) {
    let mut targets = Mat::zeros((steps, 1));
    let mut weights = Mat::from_elem((steps, 1), 1.0);
    targets[[steps - 1, 0]] = 1.0;
    weights[[steps - 1, 0]] = STOP_POS_WEIGHT;
    (targets, weights)
}

/// Node handles of one assembled training objective.
pub struct LossNodes {
    pub l_rcon: NodeId,
    pub l_speaker_ce: NodeId,
    pub l_embedding: NodeId,
    pub l_stop: NodeId,
    pub total: NodeId,
}

fn teacher_decode_loss(
    model: &TtsModel,
    g: &mut Graph,
    bind: &Binding,
    utt: &Utterance,
    e_prev: NodeId,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<(NodeId, NodeId)> {
    let mel = require_mel(utt)?;
    let frames = expand_tags(&utt.tokens, lexicon)?;
    let sem = upsample_semantic(&utt.tokens, provider, lexicon)?;
    let mem = model.acoustic.memory(g, bind, &frames, &sem)?;
    let spk = model
        .acoustic
        .speaker_embedding(g, bind, utt.speaker_id as usize)?;
    let out: DecodeOut = model
        .acoustic
        .decode(g, bind, mem, spk, e_prev, DecodeMode::Teacher(mel))?;
    let trimmed = g.slice_rows(out.mel, 0, mel.frames());
    let target = g.constant(mel.data().clone());
    let l_rcon = g.mse(trimmed, target);
    let (targets, weights) = stop_targets(out.steps);
    let l_stop = g.binary_cross_entropy(out.stop_logits, &targets, &weights);
    Ok((l_rcon, l_stop))
}

/// Assembles the full finetune objective for one pair. The current-side
/// embedding target is gradient-stopped; the speaker term is the mean of
/// the two encoders' classifier losses.
pub fn finetune_loss_graph(
    model: &TtsModel,
    g: &mut Graph,
    bind: &Binding,
    pair: &ConversationPair<'_>,
    lambda: Real,
    beta: Real,
    grl_scale: Real,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossNodes> {
    let prev_mel = require_mel(pair.previous)?;
    let curr_mel = require_mel(pair.current)?;

    let r_prev = model.ctx_prev.reference_encode(g, bind, prev_mel)?;
    let (e_prev, _) = model.ctx_prev.style_embed(g, bind, r_prev);
    let r_curr = model.ctx_curr.reference_encode(g, bind, curr_mel)?;
    let (e_curr, _) = model.ctx_curr.style_embed(g, bind, r_curr);

    let e_target = g.detach(e_curr);
    let e_hat = model.next.apply(g, bind, e_prev)?;
    let l_embedding = g.mse(e_hat, e_target);

    let ce_prev = model.ctx_prev.speaker_loss(
        g,
        bind,
        r_prev,
        pair.previous.speaker_id as usize,
        grl_scale,
    )?;
    let ce_curr = model.ctx_curr.speaker_loss(
        g,
        bind,
        r_curr,
        pair.current.speaker_id as usize,
        grl_scale,
    )?;
    let ce_sum = g.add(ce_prev, ce_curr);
    let l_speaker_ce = g.scale(ce_sum, 0.5);

    let (l_rcon, l_stop) =
        teacher_decode_loss(model, g, bind, pair.current, e_prev, lexicon, provider)?;

    let weighted_ce = g.scale(l_speaker_ce, lambda);
    let weighted_emb = g.scale(l_embedding, beta);
    let a = g.add(l_rcon, weighted_ce);
    let b = g.add(a, weighted_emb);
    let total = g.add(b, l_stop);
    Ok(LossNodes {
        l_rcon,
        l_speaker_ce,
        l_embedding,
        l_stop,
        total,
    })
}

/// Assembles the pretraining objective for one flat utterance: zero
/// context, reconstruction and stop terms only.
pub fn pretrain_loss_graph(
    model: &TtsModel,
    g: &mut Graph,
    bind: &Binding,
    utt: &Utterance,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossNodes> {
    let zero_e = g.constant(Mat::zeros((1, model.acoustic.cfg.d_e)));
    let (l_rcon, l_stop) = teacher_decode_loss(model, g, bind, utt, zero_e, lexicon, provider)?;
    let zero = g.constant(Mat::zeros((1, 1)));
    let total = g.add(l_rcon, l_stop);
    Ok(LossNodes {
        l_rcon,
        l_speaker_ce: zero,
        l_embedding: zero,
        l_stop,
        total,
    })
}

fn breakdown_from_nodes(
    g: &Graph,
    nodes: &LossNodes,
    lambda: Real,
    beta: Real,
) -> Result<LossBreakdown> {
    total_loss(
        g.value(nodes.l_rcon)[[0, 0]],
        g.value(nodes.l_speaker_ce)[[0, 0]],
        g.value(nodes.l_embedding)[[0, 0]],
        g.value(nodes.l_stop)[[0, 0]],
        lambda,
        beta,
    )
}

/// One optimizer update from a single conversation pair.
pub fn train_step(
    model: &mut TtsModel,
    opt: &mut Adam,
    pair: &ConversationPair<'_>,
    cfg: &TrainConfig,
    grl_scale: Real,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossBreakdown> {
    train_batch(
        model,
        opt,
        std::slice::from_ref(pair),
        cfg,
        grl_scale,
        lexicon,
        provider,
    )
}

/// One optimizer update from a batch of pairs: all objectives are
/// assembled in a single graph and averaged before the update. Returns
/// the mean breakdown.
pub fn train_batch(
    model: &mut TtsModel,
    opt: &mut Adam,
    pairs: &[ConversationPair<'_>],
    cfg: &TrainConfig,
    grl_scale: Real,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let mut g = Graph::new();
    let bind = model.store.bind(&mut g);
    let mut part_nodes = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let nodes = finetune_loss_graph(
            model, &mut g, &bind, pair, cfg.lambda, cfg.beta, grl_scale, lexicon, provider,
        )?;
        part_nodes.push(nodes);
    }
    let inv = 1.0 / pairs.len() as Real;
    let mean_of = |g: &mut Graph, pick: &dyn Fn(&LossNodes) -> NodeId| {
        let parts: Vec<NodeId> = part_nodes.iter().map(pick).collect();
        let stacked = g.concat_rows(&parts);
        let total = g.sum_all(stacked);
        g.scale(total, inv)
    };
    let nodes = LossNodes {
        l_rcon: mean_of(&mut g, &|n| n.l_rcon),
        l_speaker_ce: mean_of(&mut g, &|n| n.l_speaker_ce),
        l_embedding: mean_of(&mut g, &|n| n.l_embedding),
        l_stop: mean_of(&mut g, &|n| n.l_stop),
        total: mean_of(&mut g, &|n| n.total),
    };
    let breakdown = breakdown_from_nodes(&g, &nodes, cfg.lambda, cfg.beta).map_err(|e| {
        Error::Numerical(format!(
            "aborting step on pair ({} -> {}): {e}",
            pairs[0].previous.utt_id, pairs[0].current.utt_id
        ))
    })?;
    let grads = g.backward(nodes.total);
    opt.step(&mut model.store, &bind, &grads);
    Ok(breakdown)
}

/// One optimizer update from a single flat (pretraining) utterance.
pub fn train_step_pretrain(
    model: &mut TtsModel,
    opt: &mut Adam,
    utt: &Utterance,
    cfg: &TrainConfig,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossBreakdown> {
    train_batch_pretrain(model, opt, &[utt], cfg, lexicon, provider)
}

/// Batched pretraining update (mirrors [`train_batch`]).
pub fn train_batch_pretrain(
    model: &mut TtsModel,
    opt: &mut Adam,
    utts: &[&Utterance],
    cfg: &TrainConfig,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if utts.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let mut g = Graph::new();
    let bind = model.store.bind(&mut g);
    let mut part_nodes = Vec::with_capacity(utts.len());
    for utt in utts {
        part_nodes.push(pretrain_loss_graph(model, &mut g, &bind, utt, lexicon, provider)?);
    }
    let inv = 1.0 / utts.len() as Real;
    let mean_of = |g: &mut Graph, pick: &dyn Fn(&LossNodes) -> NodeId| {
        let parts: Vec<NodeId> = part_nodes.iter().map(pick).collect();
        let stacked = g.concat_rows(&parts);
        let total = g.sum_all(stacked);
        g.scale(total, inv)
    };
    let nodes = LossNodes {
        l_rcon: mean_of(&mut g, &|n| n.l_rcon),
        l_speaker_ce: mean_of(&mut g, &|n| n.l_speaker_ce),
        l_embedding: mean_of(&mut g, &|n| n.l_embedding),
        l_stop: mean_of(&mut g, &|n| n.l_stop),
        total: mean_of(&mut g, &|n| n.total),
    };
    let breakdown = breakdown_from_nodes(&g, &nodes, cfg.lambda, cfg.beta).map_err(|e| {
        Error::Numerical(format!("aborting step on {}: {e}", utts[0].utt_id))
    })?;
    let grads = g.backward(nodes.total);
    opt.step(&mut model.store, &bind, &grads);
    Ok(breakdown)
}

/// Mean teacher-forced reconstruction loss over pairs. With
/// `zero_context` the previous-turn embedding is replaced by zeros at
/// evaluation (the context ablation).
pub fn eval_rcon(
    model: &TtsModel,
    pairs: &[ConversationPair<'_>],
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
    zero_context: bool,
) -> Result<Real> {
    if pairs.is_empty() {
        return Err(Error::Config("no evaluation pairs".into()));
    }
    let mut sum = 0.0;
    for pair in pairs {
        let mut g = Graph::new();
        let bind = model.store.bind(&mut g);
        let e_prev = if zero_context {
            g.constant(Mat::zeros((1, model.acoustic.cfg.d_e)))
        } else {
            let prev_mel = require_mel(pair.previous)?;
            let r = model.ctx_prev.reference_encode(&mut g, &bind, prev_mel)?;
            model.ctx_prev.style_embed(&mut g, &bind, r).0
        };
        let (l_rcon, _) =
            teacher_decode_loss(model, &mut g, &bind, pair.current, e_prev, lexicon, provider)?;
        sum += g.value(l_rcon)[[0, 0]];
    }
    Ok(sum / pairs.len() as Real)
}

/// JSONL training log (one line per step, plus per-epoch evaluation lines
/// during finetuning). No wall-clock content: log bytes are reproducible.
pub struct TrainLog {
    out: Box<dyn Write>,
}

#[derive(Serialize)]
struct StepRecord<'a> {
    stage: &'a str,
    epoch: usize,
    step: usize,
    loss: &'a LossBreakdown,
}

#[derive(Serialize)]
struct EvalRecord {
    stage: &'static str,
    epoch: usize,
    eval_l_rcon: Real,
}

impl TrainLog {
    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(TrainLog {
            out: Box::new(std::io::BufWriter::new(std::fs::File::create(path)?)),
        })
    }

    pub fn sink() -> Self {
        TrainLog {
            out: Box::new(std::io::sink()),
        }
    }

    fn step(&mut self, stage: &str, epoch: usize, step: usize, loss: &LossBreakdown) -> Result<()> {
        let rec = StepRecord {
            stage,
            epoch,
            step,
            loss,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn eval(&mut self, epoch: usize, eval_l_rcon: Real) -> Result<()> {
        let rec = EvalRecord {
            stage: "finetune_eval",
            epoch,
            eval_l_rcon,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(|e| Error::Format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Runs the pretraining stage over a flat multi-speaker corpus with zeroed
/// context.
pub fn pretrain_stage(
    model: &mut TtsModel,
    opt: &mut Adam,
    corpus: &[Conversation],
    cfg: &TrainConfig,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
    log: &mut TrainLog,
) -> Result<()> {
    let utts: Vec<&Utterance> = corpus.iter().flat_map(|c| c.utterances.iter()).collect();
    if utts.is_empty() && cfg.epochs > 0 {
        return Err(Error::Config("empty pretraining corpus".into()));
    }
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..utts.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
            cfg.seed ^ 0x7072_6574 ^ ((epoch as u64) << 8),
        ));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| utts[i]).collect();
            let breakdown = train_batch_pretrain(model, opt, &batch, cfg, lexicon, provider)?;
            log.step("pretrain", epoch, step, &breakdown)?;
            step += 1;
        }
    }
    log.flush()
}

/// Runs the finetuning stage over conversation pairs, evaluating held-out
/// teacher-forced reconstruction each epoch. Returns the eval curve.
#[allow(clippy::too_many_arguments)]
pub fn finetune_stage(
    model: &mut TtsModel,
    opt: &mut Adam,
    train_pairs: &[ConversationPair<'_>],
    eval_pairs: &[ConversationPair<'_>],
    cfg: &TrainConfig,
    grl_base: Real,
    lexicon: &Lexicon,
    provider: &dyn EmbeddingProvider,
    log: &mut TrainLog,
) -> Result<Vec<Real>> {
    if train_pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::Config("empty finetuning pair set".into()));
    }
    let steps_per_epoch = train_pairs.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);
    let warmup_steps = ((cfg.grl_warmup_frac * total_steps as Real).ceil() as usize).max(1);
    let mut eval_curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(
            cfg.seed ^ 0x6669_6e65 ^ ((epoch as u64) << 8),
        ));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ConversationPair<'_>> =
                chunk.iter().map(|&i| train_pairs[i]).collect();
            let ramp = ((step + 1) as Real / warmup_steps as Real).min(1.0);
            let breakdown = train_batch(
                model,
                opt,
                &batch,
                cfg,
                grl_base * ramp,
                lexicon,
                provider,
            )?;
            log.step("finetune", epoch, step, &breakdown)?;
            step += 1;
        }
        if !eval_pairs.is_empty() {
            let l = eval_rcon(model, eval_pairs, lexicon, provider, false)?;
            log.eval(epoch, l)?;
            eval_curve.push(l);
        }
    }
    log.flush()?;
    Ok(eval_curve)
}

/// Full schedule configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub model_seed: u64,
    pub acoustic: AcousticConfig,
    pub context: ContextConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Fraction of conversations held out for per-epoch evaluation.
    pub eval_fraction: Real,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            model_seed: 0,
            acoustic: AcousticConfig::default(),
            context: ContextConfig::default(),
            pretrain: TrainConfig {
                stage: Stage::Pretrain,
                epochs: 4,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                stage: Stage::Finetune,
                ..TrainConfig::default()
            },
            eval_fraction: 0.2,
        }
    }
}

/// Artifacts of a completed schedule.
pub struct ScheduleOutput {
    pub pretrain_ckpt: PathBuf,
    pub final_ckpt: PathBuf,
    pub log_path: PathBuf,
    pub eval_rcon_per_epoch: Vec<Real>,
}

/// Splits conversations into (train, eval) by index: the last
/// `ceil(eval_fraction * n)` conversations are held out, always leaving at
/// least one for training.
pub fn split_corpus(
    corpus: &[Conversation],
    eval_fraction: Real,
) -> (&[Conversation], &[Conversation]) {
    if corpus.is_empty() || eval_fraction <= 0.0 {
        return (corpus, &[]);
    }
    let eval_n = ((eval_fraction * corpus.len() as Real).ceil() as usize)
        .min(corpus.len().saturating_sub(1));
    corpus.split_at(corpus.len() - eval_n)
}

/// [`split_corpus`] followed by pair extraction on both halves.
pub fn make_eval_split_pairs(
    corpus: &[Conversation],
    eval_fraction: Real,
) -> (Vec<ConversationPair<'_>>, Vec<ConversationPair<'_>>) {
    let (train, eval) = split_corpus(corpus, eval_fraction);
    (
        train.iter().flat_map(crate::corpus::make_pairs).collect(),
        eval.iter().flat_map(crate::corpus::make_pairs).collect(),
    )
}

/// Pretrains on the flat corpus with zeroed context, checkpoints, then
/// finetunes on conversation pairs from that checkpointed model. The
/// optimizer restarts between stages; checkpoints carry the optimizer
/// state so training can resume.
pub fn run_schedule(
    pretrain_corpus: &[Conversation],
    corpus: &[Conversation],
    cfg: &ScheduleConfig,
    out_dir: &Path,
) -> Result<ScheduleOutput> {
    cfg.pretrain.validate()?;
    cfg.finetune.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let lexicon = Lexicon::builtin();
    let provider = crate::frontend::HashEmbedding::new(cfg.acoustic.d_sem);
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = TrainLog::to_file(&log_path)?;

    let mut model = TtsModel::init(&cfg.acoustic, &cfg.context, cfg.model_seed)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.pretrain.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    pretrain_stage(
        &mut model,
        &mut opt,
        pretrain_corpus,
        &cfg.pretrain,
        &lexicon,
        &provider,
        &mut log,
    )?;
    let pretrain_ckpt = out_dir.join("pretrain.ckpt");
    checkpoint::save_tts(
        &pretrain_ckpt,
        &model,
        Some(&opt),
        Stage::Pretrain,
        cfg.pretrain.epochs as u64,
    )?;

    let (train_convs, eval_convs) = split_corpus(corpus, cfg.eval_fraction);
    let train_pairs: Vec<ConversationPair<'_>> = train_convs
        .iter()
        .flat_map(crate::corpus::make_pairs)
        .collect();
    let eval_pairs: Vec<ConversationPair<'_>> = eval_convs
        .iter()
        .flat_map(crate::corpus::make_pairs)
        .collect();

    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.finetune.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let eval_curve = finetune_stage(
        &mut model,
        &mut opt,
        &train_pairs,
        &eval_pairs,
        &cfg.finetune,
        cfg.context.grl_scale,
        &lexicon,
        &provider,
        &mut log,
    )?;
    let final_ckpt = out_dir.join("final.ckpt");
    checkpoint::save_tts(
        &final_ckpt,
        &model,
        Some(&opt),
        Stage::Finetune,
        cfg.finetune.epochs as u64,
    )?;

    Ok(ScheduleOutput {
        pretrain_ckpt,
        final_ckpt,
        log_path,
        eval_rcon_per_epoch: eval_curve,
    })
}
