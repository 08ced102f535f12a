use std::collections::BTreeSet;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmt_core::corpus::{generate_in_memory, Aspect, CorpusSpec, Split};
use sfmt_core::model::{assemble_sequence, GraderModel, ModalityMode, ModelConfig, Vocabulary, NULLTEXT};
use sfmt_core::tensor::{AdamW, AdamWConfig, ParamGroup};
use sfmt_core::trainer::checkpoint::{encode_checkpoint, HEADER_FILE, PARAMS_FILE};
use sfmt_core::trainer::{
    default_plans, load_checkpoint, plan_for, read_header, run_regime, save_checkpoint, stage_init, train_stage,
    AspectTarget, Checkpoint, Dataset, LogRow, Provenance, RegimeKind, RngState, Schedule, StageData, StageInit,
    StageOptions, StagePlan,
};
use sfmt_core::Error;

fn dataset(total: usize, seed: u64) -> Dataset {
    Dataset::from_generated(&generate_in_memory(&CorpusSpec::with_total(total, seed), true).unwrap()).unwrap()
}

fn small_model(data: &Dataset, seed: u64) -> GraderModel<f32> {
    let vocab = Vocabulary::build(data.samples().iter().flat_map(|s| s.transcript.iter()));
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        backbone_layers: 1,
        heads: 2,
        encoder_blocks: 1,
        conv_kernel: 3,
        lora_rank: 2,
        lora_alpha: 4.0,
        ..ModelConfig::default()
    };
    GraderModel::new(cfg, vocab, seed).unwrap()
}

fn plan(name: &str, modality: ModalityMode, trainable: &[ParamGroup]) -> StagePlan {
    StagePlan {
        name: name.into(),
        modality,
        trainable: trainable.iter().copied().collect(),
        epochs: 2,
        lr: 3e-3,
        batch_size: 4,
        grad_accum: 2,
        warmup_frac: 0.1,
        final_lr_frac: 0.0,
        seed: 5,
        init: StageInit::Fresh,
    }
}

fn views(data: &Dataset) -> StageData<'_> {
    StageData {
        train: data.split(Split::Train),
        valid: data.split(Split::Valid),
    }
}

fn schedule() -> Schedule {
    Schedule {
        epochs: 2,
        lr: 3e-3,
        batch_size: 4,
        grad_accum: 2,
        ..Schedule::reference()
    }
}

#[test]
fn frozen_groups_stay_bitwise_unchanged() {
    let data = dataset(60, 1);
    let model = small_model(&data, 2);
    let before = model.params.clone();
    let p = plan("lora", ModalityMode::AudioOnly, &[ParamGroup::AudioLora]);
    let out = train_stage(
        &p,
        model,
        &views(&data),
        &StageOptions::new("test", AspectTarget::One(Aspect::Delivery)),
    )
    .unwrap();
    let mut lora_changed = false;
    for (_, q) in out.model.params.iter() {
        let old = before.by_name(&q.name).unwrap();
        if q.group == ParamGroup::AudioLora {
            lora_changed |= old.tensor != q.tensor;
        } else {
            assert_eq!(old.tensor, q.tensor, "{} changed", q.name);
        }
    }
    assert!(lora_changed);
    assert!(out.updated.iter().all(|n| n.contains("lora")));
    assert_eq!(out.log.len(), 2);
    assert!(out
        .log
        .iter()
        .all(|r| r.valid_loss.is_some() && r.valid_macro_acc.is_some()));
}

#[test]
fn identical_plans_are_deterministic() {
    let data = dataset(60, 1);
    let p = plan(
        "det",
        ModalityMode::Multimodal,
        &[ParamGroup::AudioLora, ParamGroup::LabelHead],
    );
    let opts = StageOptions::new("test", AspectTarget::One(Aspect::Content));
    let a = train_stage(&p, small_model(&data, 3), &views(&data), &opts).unwrap();
    let b = train_stage(&p, small_model(&data, 3), &views(&data), &opts).unwrap();
    assert_eq!(a.final_hash, b.final_hash);
    assert_eq!(a.log, b.log);
    assert_eq!(a.step_losses, b.step_losses);
    let c = train_stage(&StagePlan { seed: 6, ..p }, small_model(&data, 3), &views(&data), &opts).unwrap();
    assert_ne!(a.final_hash, c.final_hash);
}

#[test]
fn gradient_accumulation_matches_large_batches() {
    let data = dataset(60, 1);
    let opts = StageOptions::new("test", AspectTarget::One(Aspect::LanguageUse));
    let base = plan(
        "accum",
        ModalityMode::TextOnly,
        &[ParamGroup::TextEmbed, ParamGroup::LabelHead],
    );
    let big = StagePlan {
        batch_size: 32,
        grad_accum: 1,
        ..base.clone()
    };
    let small = StagePlan {
        batch_size: 8,
        grad_accum: 4,
        ..base
    };
    let a = train_stage(&big, small_model(&data, 4), &views(&data), &opts).unwrap();
    let b = train_stage(&small, small_model(&data, 4), &views(&data), &opts).unwrap();
    assert_eq!(a.steps(), b.steps());
    for (_, p) in a.model.params.iter() {
        let q = b.model.params.by_name(&p.name).unwrap();
        for (x, y) in p.tensor.data().iter().zip(q.tensor.data()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{}: {x} vs {y}", p.name);
        }
    }
}

#[test]
fn max_steps_caps_training() {
    let data = dataset(60, 1);
    let p = plan("cap", ModalityMode::TextOnly, &[ParamGroup::LabelHead]);
    let opts = StageOptions {
        max_steps: Some(3),
        validate: false,
        ..StageOptions::new("test", AspectTarget::All)
    };
    let out = train_stage(&p, small_model(&data, 4), &views(&data), &opts).unwrap();
    assert_eq!(out.steps(), 3);
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].valid_loss, None);
}

#[test]
fn sfmt_stage_two_starts_from_stage_one() {
    let data = dataset(60, 1);
    let base = small_model(&data, 7);
    let dir = tempfile::tempdir().unwrap();
    let regime = plan_for(RegimeKind::Sfmt, Aspect::Delivery, &schedule(), 1, false);
    let out = run_regime(&regime, &base, &data, Some(dir.path())).unwrap();
    assert_eq!(out.stages.len(), 2);
    assert_eq!(out.stages[1].initial_hash, out.stages[0].final_hash);
    for name in ["stage1", "stage2", "final"] {
        assert!(dir.path().join(name).join(HEADER_FILE).exists(), "{name}");
    }
    let log = fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let rows: Vec<LogRow> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].stage, "stage1");

    let stage1 = load_checkpoint::<f32>(dir.path().join("stage1"), Some(&base.config))
        .unwrap()
        .model;
    let stage2_init = stage_init(&regime.stages[1], &base, Some(&out.stage_models[0])).unwrap();
    assert_eq!(stage2_init.params.content_hash(), out.stages[1].initial_hash);
    for s in data.split(Split::Test).into_iter().take(8) {
        let layout = assemble_sequence(
            &base.config,
            &base.vocab,
            Aspect::Delivery,
            ModalityMode::AudioOnly,
            Some(s.features.frames()),
            None,
        )
        .unwrap();
        assert_eq!(
            stage1.logits(&layout, Some(&s.features)).unwrap(),
            stage2_init.logits(&layout, Some(&s.features)).unwrap()
        );
    }
}

#[test]
fn text_only_regime_never_touches_audio() {
    let data = dataset(60, 1);
    let base = small_model(&data, 8);
    let regime = plan_for(RegimeKind::TextOnly, Aspect::Delivery, &schedule(), 1, false);
    let out = run_regime(&regime, &base, &data, None).unwrap();
    for name in &out.stages[0].updated {
        let group = out.model.params.by_name(name).unwrap().group;
        assert!(!group.is_audio(), "{name}");
    }
    for (_, p) in out.model.params.iter().filter(|(_, p)| p.group.is_audio()) {
        assert_eq!(p.tensor, base.params.by_name(&p.name).unwrap().tensor);
    }
}

#[test]
fn default_plans_follow_the_reference_template() {
    for aspect in Aspect::ALL {
        let plans = default_plans(aspect);
        let kinds: Vec<RegimeKind> = plans.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, RegimeKind::ALL.to_vec());
        for r in &plans {
            r.validate().unwrap();
            assert_eq!(r.stages.len(), if r.kind == RegimeKind::Sfmt { 2 } else { 1 });
            assert!(r
                .stages
                .iter()
                .all(|s| s.lr == 4e-5 && s.batch_size * s.grad_accum == 32));
        }
        let audio = plans.iter().find(|r| r.kind == RegimeKind::AudioOnly).unwrap();
        assert_eq!(audio.stages[0].modality, ModalityMode::AudioOnly);
        let total: usize = plans[3].stages.iter().map(|s| s.epochs).sum();
        assert_eq!(total, plans[0].stages[0].epochs);
    }
    let data = dataset(40, 2);
    let m = small_model(&data, 0);
    let s = &data.samples()[0];
    let layout = assemble_sequence(
        &m.config,
        &m.vocab,
        Aspect::Delivery,
        ModalityMode::AudioOnly,
        Some(s.features.frames()),
        Some(&s.transcript),
    )
    .unwrap();
    assert_eq!(layout.text, vec![NULLTEXT]);
}

#[test]
fn strict_mode_trains_adapters_only() {
    let r = plan_for(RegimeKind::Joint, Aspect::Delivery, &Schedule::reference(), 0, true);
    assert_eq!(r.stages[0].trainable, BTreeSet::from([ParamGroup::AudioLora]));
}

#[test]
fn stage_errors() {
    let data = dataset(40, 2);
    let opts = StageOptions::new("test", AspectTarget::One(Aspect::Delivery));
    let empty = StageData {
        train: vec![],
        valid: vec![],
    };
    let p = plan("e", ModalityMode::AudioOnly, &[ParamGroup::AudioLora]);
    assert!(matches!(
        train_stage(&p, small_model(&data, 0), &empty, &opts),
        Err(Error::Empty(_))
    ));

    let zero = StagePlan { epochs: 0, ..p.clone() };
    assert!(matches!(
        train_stage(&zero, small_model(&data, 0), &views(&data), &opts),
        Err(Error::Config(_))
    ));

    let text_audio = plan(
        "t",
        ModalityMode::TextOnly,
        &[ParamGroup::TextEmbed, ParamGroup::AudioLora],
    );
    assert!(matches!(text_audio.validate(), Err(Error::Config(_))));

    let mut merged = small_model(&data, 0);
    merged.merge_lora().unwrap();
    assert!(matches!(
        train_stage(&p, merged, &views(&data), &opts),
        Err(Error::Config(_))
    ));
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let data = dataset(40, 2);
    let dir = tempfile::tempdir().unwrap();
    let p = StagePlan {
        lr: 1e30,
        warmup_frac: 0.0,
        ..plan(
            "blowup",
            ModalityMode::Multimodal,
            &[ParamGroup::AudioProjector, ParamGroup::LabelHead],
        )
    };
    let opts = StageOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..StageOptions::new("test", AspectTarget::One(Aspect::Delivery))
    };
    let model = small_model(&data, 0);
    match train_stage(&p, model.clone(), &views(&data), &opts) {
        Err(Error::Diverged { stage, last_good, .. }) => {
            assert_eq!(stage, "blowup");
            let path = last_good.expect("last good checkpoint written");
            let restored = load_checkpoint::<f32>(&path, Some(&model.config)).unwrap();
            assert!(restored.model.params.iter().all(|(_, p)| p.tensor.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn random_checkpoint(seed: u64) -> Checkpoint<f32> {
    let data = dataset(40, 2);
    let mut model = small_model(&data, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in model.params.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
    }
    Checkpoint {
        model,
        optimizer: None,
        provenance: Provenance {
            regime: "sfmt".into(),
            stage: "stage1".into(),
            aspect: "D".into(),
            modality: "audio_only".into(),
            epoch: 2,
        },
        rng: RngState { seed, epoch: 2 },
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ckpt = random_checkpoint(9);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let back = load_checkpoint::<f32>(dir.path(), Some(&ckpt.model.config)).unwrap();
    for (_, p) in ckpt.model.params.iter() {
        let q = back.model.params.by_name(&p.name).unwrap();
        let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(p.tensor.data()), bits(q.tensor.data()));
        assert_eq!(p.group, q.group);
    }
    assert_eq!(back.provenance, ckpt.provenance);
    assert_eq!(back.rng, ckpt.rng);

    let again = tempfile::tempdir().unwrap();
    save_checkpoint(&back, again.path()).unwrap();
    for f in [HEADER_FILE, PARAMS_FILE] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap()
        );
    }
    assert_eq!(read_header(dir.path()).unwrap().config_hash, ckpt.model.config.hash());
}

#[test]
fn optimizer_state_round_trips() {
    let data = dataset(40, 2);
    let p = plan(
        "opt",
        ModalityMode::AudioOnly,
        &[ParamGroup::AudioLora, ParamGroup::LabelHead],
    );
    let opts = StageOptions {
        max_steps: Some(3),
        validate: false,
        ..StageOptions::new("test", AspectTarget::One(Aspect::Delivery))
    };
    let out = train_stage(&p, small_model(&data, 1), &views(&data), &opts).unwrap();
    let ckpt = Checkpoint {
        model: out.model,
        optimizer: Some(out.optimizer.clone()),
        provenance: random_checkpoint(0).provenance,
        rng: RngState { seed: 5, epoch: 1 },
    };
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let back: AdamW<f32> = load_checkpoint::<f32>(dir.path(), None).unwrap().optimizer.unwrap();
    assert_eq!(back.step_count(), 3);
    assert_eq!(back.config, out.optimizer.config);
    assert_eq!(back.moments().len(), out.optimizer.moments().len());
    for (name, m) in out.optimizer.moments() {
        assert_eq!(&back.moments()[name], m, "{name}");
    }
    assert_ne!(back.config, AdamW::<f32>::new(AdamWConfig::default()).config);
}

#[test]
fn wrong_config_is_rejected_by_hash() {
    let ckpt = random_checkpoint(10);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let wrong = ModelConfig {
        d_model: 32,
        ..ckpt.model.config.clone()
    };
    let err = load_checkpoint::<f32>(dir.path(), Some(&wrong)).unwrap_err();
    assert!(err.to_string().contains("config_hash"), "{err}");

    let (json, _) = encode_checkpoint(&ckpt).unwrap();
    let mut header: serde_json::Value = serde_json::from_slice(&json).unwrap();
    header["format_version"] = 99.into();
    fs::write(dir.path().join(HEADER_FILE), serde_json::to_vec(&header).unwrap()).unwrap();
    assert!(matches!(
        load_checkpoint::<f32>(dir.path(), None),
        Err(Error::Format {
            field: "format_version",
            ..
        })
    ));
}
