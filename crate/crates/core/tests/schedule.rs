//! Pretrain/finetune schedule behavior and checkpoint fidelity.

use spontts_core::acoustic::AcousticConfig;
use spontts_core::context::ContextConfig;
use spontts_core::corpus::{gen_synthetic_corpus, make_pairs, SynthConfig};
use spontts_core::frontend::{HashEmbedding, Lexicon};
use spontts_core::nn::{Adam, AdamConfig};
use spontts_core::training::{
    checkpoint, run_schedule, train_step, ScheduleConfig, Stage, TrainConfig, TtsModel,
};

fn tiny_configs() -> (AcousticConfig, ContextConfig) {
    let acfg = AcousticConfig {
        d_enc: 32,
        d_b: 16,
        d_spk: 8,
        d_e: 16,
        decoder_dim: 48,
        prenet_dims: (24, 12),
        text_bank_k: 2,
        text_bank_channels: 8,
        text_proj: 24,
        text_highways: 1,
        sem_bank_k: 1,
        sem_bank_channels: 8,
        sem_proj: 16,
        sem_highways: 1,
        ..AcousticConfig::default()
    };
    let ccfg = ContextConfig {
        conv_channels: vec![4, 8],
        ref_gru_hidden: 24,
        token_dim: 16,
        n_heads: 2,
        d_e: 16,
        cls_dims: vec![12],
        next_hidden: 16,
        ..ContextConfig::default()
    };
    (acfg, ccfg)
}

fn tiny_schedule(pre_epochs: usize, fine_epochs: usize) -> ScheduleConfig {
    let (acoustic, context) = tiny_configs();
    ScheduleConfig {
        model_seed: 3,
        acoustic,
        context,
        pretrain: TrainConfig {
            stage: Stage::Pretrain,
            epochs: pre_epochs,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        },
        finetune: TrainConfig {
            stage: Stage::Finetune,
            epochs: fine_epochs,
            batch_size: 4,
            seed: 12,
            ..TrainConfig::default()
        },
        eval_fraction: 0.25,
    }
}

fn corpora() -> (Vec<spontts_core::corpus::Conversation>, Vec<spontts_core::corpus::Conversation>) {
    let flat = gen_synthetic_corpus(
        &SynthConfig {
            min_tokens: 2,
            max_tokens: 4,
            ..SynthConfig::flat_pretrain(8)
        },
        50,
    )
    .unwrap();
    let conv = gen_synthetic_corpus(
        &SynthConfig {
            conversations: 4,
            turns_per_conversation: 3,
            min_tokens: 2,
            max_tokens: 4,
            ..SynthConfig::default()
        },
        51,
    )
    .unwrap();
    (flat, conv)
}

#[test]
fn zero_finetune_epochs_returns_the_pretrain_checkpoint_verbatim() {
    let (flat, conv) = corpora();
    let dir = tempfile::tempdir().unwrap();
    let out = run_schedule(&flat, &conv, &tiny_schedule(2, 0), dir.path()).unwrap();
    let (_, pre_params, _) = checkpoint::load_checkpoint(&out.pretrain_ckpt).unwrap();
    let (_, fin_params, _) = checkpoint::load_checkpoint(&out.final_ckpt).unwrap();
    assert_eq!(pre_params.len(), fin_params.len());
    for ((an, av), (bn, bv)) in pre_params.iter().zip(&fin_params) {
        assert_eq!(an, bn);
        assert_eq!(av, bv, "parameter {an} changed without finetune steps");
    }
    assert!(out.eval_rcon_per_epoch.is_empty());
}

#[test]
fn checkpoint_roundtrip_restores_model_and_optimizer() {
    let (acfg, ccfg) = tiny_configs();
    let model = TtsModel::init(&acfg, &ccfg, 9).unwrap();
    let opt = Adam::new(AdamConfig::default(), &model.store);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save_tts(&path, &model, Some(&opt), Stage::Pretrain, 0).unwrap();
    let (restored, ropt, meta) = checkpoint::load_tts(&path, Some(AdamConfig::default())).unwrap();
    assert_eq!(meta.kind, "tts");
    assert!(ropt.is_some());
    for ((an, av), (bn, bv)) in model.store.iter().zip(restored.store.iter()) {
        assert_eq!(an, bn);
        assert_eq!(av, bv);
    }
}

#[test]
fn resume_from_checkpoint_reproduces_the_next_step_loss() {
    let (acfg, ccfg) = tiny_configs();
    let (_, conv) = corpora();
    let pairs: Vec<_> = conv.iter().flat_map(make_pairs).collect();
    let lexicon = Lexicon::builtin();
    let provider = HashEmbedding::new(acfg.d_sem);
    let cfg = TrainConfig::default();

    let mut model = TtsModel::init(&acfg, &ccfg, 1).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &model.store);
    for pair in pairs.iter().take(3) {
        train_step(&mut model, &mut opt, pair, &cfg, 1.0, &lexicon, &provider).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    checkpoint::save_tts(&path, &model, Some(&opt), Stage::Finetune, 0).unwrap();

    let original =
        train_step(&mut model, &mut opt, &pairs[3], &cfg, 1.0, &lexicon, &provider).unwrap();

    let (mut resumed, ropt, _) = checkpoint::load_tts(&path, Some(AdamConfig::default())).unwrap();
    let mut ropt = ropt.unwrap();
    let replay =
        train_step(&mut resumed, &mut ropt, &pairs[3], &cfg, 1.0, &lexicon, &provider).unwrap();
    assert_eq!(original, replay);
}

#[test]
fn finetune_from_pretrain_beats_finetune_from_scratch() {
    // Paired runs with equal finetune budgets; the warm start must do at
    // least as well on held-out reconstruction.
    let (flat, conv) = corpora();
    let dir_warm = tempfile::tempdir().unwrap();
    let warm = run_schedule(&flat, &conv, &tiny_schedule(6, 6), dir_warm.path()).unwrap();
    let dir_cold = tempfile::tempdir().unwrap();
    let cold = run_schedule(&flat, &conv, &tiny_schedule(0, 6), dir_cold.path()).unwrap();
    let warm_final = *warm.eval_rcon_per_epoch.last().unwrap();
    let cold_final = *cold.eval_rcon_per_epoch.last().unwrap();
    assert!(
        warm_final <= cold_final,
        "warm {warm_final} should not exceed cold {cold_final}"
    );
}

#[test]
fn schedule_log_is_wall_clock_free_and_reproducible() {
    let (flat, conv) = corpora();
    let da = tempfile::tempdir().unwrap();
    let a = run_schedule(&flat, &conv, &tiny_schedule(1, 1), da.path()).unwrap();
    let db = tempfile::tempdir().unwrap();
    let b = run_schedule(&flat, &conv, &tiny_schedule(1, 1), db.path()).unwrap();
    let la = std::fs::read(&a.log_path).unwrap();
    let lb = std::fs::read(&b.log_path).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, lb);
    assert_eq!(
        std::fs::read(&a.final_ckpt).unwrap(),
        std::fs::read(&b.final_ckpt).unwrap()
    );
}
