//! `spontts`: corpus generation, tagger/TTS training, tagging, scripted
//! conversation synthesis, duration evaluation and the speaker probe.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use spontts_cli::duration::duration_curve;
use spontts_cli::probe::{load_embedding_files, probe_speaker};
use spontts_cli::script::{Script, ScriptToken};
use spontts_cli::synthesis::{synth_conversation, write_synthesis, SynthesisRequest};
use spontts_core::corpus::{
    gen_synthetic_corpus, load_manifest, write_manifest, write_matrix, SynthConfig,
};
use spontts_core::frontend::{HashEmbedding, Lexicon};
use spontts_core::nn::{Adam, AdamConfig};
use spontts_core::tagger::{
    argmax_tags, corpus_sentences, predict_distribution, select_behaviors, train_tagger,
    TaggerConfig,
};
use spontts_core::training::{
    checkpoint, finetune_stage, make_eval_split_pairs, run_schedule, ScheduleConfig, Stage,
    TrainLog,
};
use spontts_core::{Error, Mat, Real};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "spontts", version, about = "Controllable spontaneous conversational speech synthesis (desk scale)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Full,
    Pretrain,
    Finetune,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic conversation corpus.
    GenCorpus {
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with corpus dimensions (SynthConfig).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the spontaneous-behavior predictor on a corpus.
    TrainTagger {
        /// Corpus directory (containing manifest.jsonl) or manifest path.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with TaggerConfig fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag sentences with predicted behaviors.
    Tag {
        #[arg(long)]
        model: PathBuf,
        /// JSON-lines input, one {"tokens": [...]} object per line.
        #[arg(long)]
        input: PathBuf,
        /// Behavior frequency for the controllable selector; without it
        /// the per-token argmax is used.
        #[arg(long)]
        p: Option<Real>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the acoustic model (pretrain, finetune, or the full schedule).
    TrainTts {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        stage: StageArg,
        /// Checkpoint to start finetuning from (required for --stage finetune).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file with schedule fields (see README).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a scripted conversation to MELF files + transcript.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tagger: Option<PathBuf>,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        p: Real,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean synthesized duration as a function of behavior frequency.
    EvalDuration {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tagger: PathBuf,
        /// JSON file holding an array of scripts.
        #[arg(long)]
        scripts: PathBuf,
        /// Comma-separated ascending frequencies.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
        p_grid: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a fresh speaker probe on frozen context embeddings.
    ProbeSpeaker {
        /// Compute embeddings from a corpus with this TTS checkpoint...
        #[arg(long, requires = "corpus")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// ...or read exported 1xD MELF embeddings with a label map.
        #[arg(long, requires = "labels")]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Also export computed embeddings as MELF files to this directory.
        #[arg(long)]
        dump_embeddings: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_numerical() { 3 } else { 2 });
        }
    }
}

fn read_json_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, Error> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

/// Accepts either a manifest file or a directory containing manifest.jsonl.
fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.jsonl")
    } else {
        path.to_path_buf()
    }
}

#[derive(Serialize, Deserialize)]
struct TagInputLine {
    tokens: Vec<ScriptToken>,
}

#[derive(Serialize)]
struct TagOutputLine<'a> {
    tokens: &'a [ScriptToken],
    tags: Vec<spontts_core::corpus::BehaviorTag>,
    probs: Vec<Vec<Real>>,
}

/// Configuration file for `train-tts`.
#[derive(Serialize, Deserialize)]
#[serde(default)]
struct TrainTtsConfig {
    schedule: ScheduleConfig,
    /// Flat multi-speaker set generated for pretraining.
    pretrain_corpus: SynthConfig,
    pretrain_corpus_seed: u64,
}

impl Default for TrainTtsConfig {
    fn default() -> Self {
        TrainTtsConfig {
            schedule: ScheduleConfig::default(),
            pretrain_corpus: SynthConfig::flat_pretrain(12),
            pretrain_corpus_seed: 1000,
        }
    }
}

#[derive(Serialize)]
struct ProbeReport {
    accuracy: Real,
    samples: usize,
    per_speaker: [usize; 2],
}

fn parse_grid(grid: &str) -> Result<Vec<Real>, Error> {
    let mut out = Vec::new();
    for part in grid.split(',') {
        let v: Real = part
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad frequency {part:?} in grid")))?;
        out.push(v);
    }
    Ok(out)
}

fn run(command: Command) -> Result<(), Error> {
    let lexicon = Lexicon::builtin();
    match command {
        Command::GenCorpus { seed, config, out } => {
            let cfg: SynthConfig = read_json_config(&config)?;
            let convs = gen_synthetic_corpus(&cfg, seed.unwrap_or(0))?;
            let manifest = write_manifest(&out, &convs)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::TrainTagger {
            corpus,
            seed,
            config,
            out,
        } => {
            let mut cfg: TaggerConfig = read_json_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let convs = load_manifest(&resolve_manifest(&corpus))?;
            let provider = HashEmbedding::new(cfg.d_sem);
            let sentences = corpus_sentences(&convs);
            let model = train_tagger(&sentences, &cfg, &provider)?;
            checkpoint::save_tagger(&out, &model)?;
            let summary = serde_json::json!({
                "epochs": model.epoch_losses.len(),
                "final_loss": model.epoch_losses.last(),
                "checkpoint": out.display().to_string(),
            });
            println!("{summary}");
            Ok(())
        }
        Command::Tag {
            model,
            input,
            p,
            seed: _,
            out,
        } => {
            let model = checkpoint::load_tagger(&model)?;
            let provider = HashEmbedding::new(model.cfg.d_sem);
            let text = std::fs::read_to_string(&input)?;
            let mut lines = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: TagInputLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                lines.push(parsed);
            }
            let mut out_text = String::new();
            for line in &lines {
                let tokens: Vec<spontts_core::corpus::TextToken> = line
                    .tokens
                    .iter()
                    .map(|t| spontts_core::corpus::TextToken {
                        char_id: t.char_id,
                        word_boundary: t.word_boundary,
                        prosody_level: t.prosody_level,
                        tag: spontts_core::corpus::BehaviorTag::None,
                    })
                    .collect();
                let dist = predict_distribution(&model, &tokens, &provider)?;
                let tags = match p {
                    Some(p) => select_behaviors(&dist, p)?,
                    None => argmax_tags(&dist),
                };
                let probs = dist
                    .probs()
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec())
                    .collect();
                let record = TagOutputLine {
                    tokens: &line.tokens,
                    tags,
                    probs,
                };
                out_text.push_str(
                    &serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?,
                );
                out_text.push('\n');
            }
            std::fs::write(&out, out_text)?;
            Ok(())
        }
        Command::TrainTts {
            corpus,
            stage,
            init,
            seed,
            config,
            out,
        } => {
            let mut cfg: TrainTtsConfig = read_json_config(&config)?;
            if let Some(s) = seed {
                cfg.schedule.model_seed = s;
                cfg.schedule.pretrain.seed = s ^ 0x10;
                cfg.schedule.finetune.seed = s ^ 0x20;
                cfg.pretrain_corpus_seed = s ^ 0x30;
            }
            let convs = load_manifest(&resolve_manifest(&corpus))?;
            std::fs::create_dir_all(&out)?;
            match stage {
                StageArg::Full => {
                    let flat =
                        gen_synthetic_corpus(&cfg.pretrain_corpus, cfg.pretrain_corpus_seed)?;
                    let result = run_schedule(&flat, &convs, &cfg.schedule, &out)?;
                    println!("{}", result.final_ckpt.display());
                }
                StageArg::Pretrain => {
                    let flat =
                        gen_synthetic_corpus(&cfg.pretrain_corpus, cfg.pretrain_corpus_seed)?;
                    let schedule = ScheduleConfig {
                        finetune: spontts_core::training::TrainConfig {
                            epochs: 0,
                            ..cfg.schedule.finetune.clone()
                        },
                        ..cfg.schedule.clone()
                    };
                    let result = run_schedule(&flat, &convs, &schedule, &out)?;
                    println!("{}", result.pretrain_ckpt.display());
                }
                StageArg::Finetune => {
                    let init = init.ok_or_else(|| {
                        Error::Config(
                            "missing pretrain checkpoint: --stage finetune needs --init".into(),
                        )
                    })?;
                    let (mut model, _, _) = checkpoint::load_tts(&init, None)?;
                    let mut opt = Adam::new(
                        AdamConfig {
                            lr: cfg.schedule.finetune.lr,
                            ..AdamConfig::default()
                        },
                        &model.store,
                    );
                    let provider = HashEmbedding::new(model.acoustic.cfg.d_sem);
                    let mut log = TrainLog::to_file(&out.join("train_log.jsonl"))?;
                    let (train_pairs, eval_pairs) =
                        make_eval_split_pairs(&convs, cfg.schedule.eval_fraction);
                    let grl_base = model.ctx_prev.cfg.grl_scale;
                    finetune_stage(
                        &mut model,
                        &mut opt,
                        &train_pairs,
                        &eval_pairs,
                        &cfg.schedule.finetune,
                        grl_base,
                        &lexicon,
                        &provider,
                        &mut log,
                    )?;
                    let final_ckpt = out.join("final.ckpt");
                    checkpoint::save_tts(
                        &final_ckpt,
                        &model,
                        Some(&opt),
                        Stage::Finetune,
                        cfg.schedule.finetune.epochs as u64,
                    )?;
                    println!("{}", final_ckpt.display());
                }
            }
            Ok(())
        }
        Command::Synth {
            checkpoint: ckpt,
            tagger,
            script,
            p,
            seed: _,
            out,
        } => {
            let (model, _, _) = checkpoint::load_tts(&ckpt, None)?;
            let tagger_model = match tagger {
                Some(path) => Some(checkpoint::load_tagger(&path)?),
                None => None,
            };
            let provider = HashEmbedding::new(model.acoustic.cfg.d_sem);
            let script = Script::from_json_file(&script)?;
            let turns = synth_conversation(
                &SynthesisRequest {
                    script: &script,
                    p,
                    model: &model,
                    tagger: tagger_model.as_ref(),
                },
                &lexicon,
                &provider,
            )?;
            let paths = write_synthesis(&out, p, &turns)?;
            for path in paths {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::EvalDuration {
            checkpoint: ckpt,
            tagger,
            scripts,
            p_grid,
            seed: _,
            out,
        } => {
            let (model, _, _) = checkpoint::load_tts(&ckpt, None)?;
            let tagger_model = checkpoint::load_tagger(&tagger)?;
            let provider = HashEmbedding::new(model.acoustic.cfg.d_sem);
            let text = std::fs::read_to_string(&scripts)?;
            let scripts: Vec<Script> =
                serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
            for s in &scripts {
                s.validate()?;
            }
            let grid = parse_grid(&p_grid)?;
            let report = duration_curve(
                &model,
                &tagger_model,
                &scripts,
                &grid,
                &lexicon,
                &provider,
            )?;
            let text = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::Format(e.to_string()))?;
            std::fs::write(&out, &text)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::ProbeSpeaker {
            checkpoint: ckpt,
            corpus,
            embeddings,
            labels,
            dump_embeddings,
            seed,
            out,
        } => {
            let data: Vec<(Vec<Real>, u8)> = match (&ckpt, &corpus, &embeddings, &labels) {
                (Some(ckpt), Some(corpus), None, None) => {
                    let (model, _, _) = checkpoint::load_tts(ckpt, None)?;
                    let convs = load_manifest(&resolve_manifest(corpus))?;
                    let mut data = Vec::new();
                    let mut dumped_labels = std::collections::BTreeMap::new();
                    for conv in &convs {
                        for utt in &conv.utterances {
                            let Some(mel) = &utt.mel else { continue };
                            let e = model.embed_previous(mel)?;
                            if let Some(dir) = &dump_embeddings {
                                std::fs::create_dir_all(dir)?;
                                let m = Mat::from_shape_vec((1, e.len()), e.clone())
                                    .expect("row shape");
                                write_matrix(&dir.join(format!("{}.melf", utt.utt_id)), &m)?;
                                dumped_labels.insert(utt.utt_id.clone(), utt.speaker_id);
                            }
                            data.push((e, utt.speaker_id));
                        }
                    }
                    if let Some(dir) = &dump_embeddings {
                        let text = serde_json::to_string_pretty(&dumped_labels)
                            .map_err(|e| Error::Format(e.to_string()))?;
                        std::fs::write(dir.join("labels.json"), text)?;
                    }
                    data
                }
                (None, None, Some(emb), Some(lab)) => load_embedding_files(emb, lab)?,
                _ => {
                    return Err(Error::Config(
                        "give either --checkpoint with --corpus, or --embeddings with --labels"
                            .into(),
                    ))
                }
            };
            let mut per_speaker = [0usize; 2];
            for (_, s) in &data {
                per_speaker[(*s).min(1) as usize] += 1;
            }
            let accuracy = probe_speaker(&data, seed.unwrap_or(0))?;
            let report = ProbeReport {
                accuracy,
                samples: data.len(),
                per_speaker,
            };
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &text)?;
                    println!("{}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
    }
}
