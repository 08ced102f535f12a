//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use common::edit_oracle::edit_distance;
use common::metric_oracles::{balanced_recall, pearson, root_mean_square, within_bins};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmt_core::audio::FeatureMatrix;
use sfmt_core::corpus::synth::{render_features, write_corpus};
use sfmt_core::corpus::{corpus_hash, generate_in_memory, Aspect, CefrLevel, CorpusSpec, Generated, Split};
use sfmt_core::experiment::{
    build_vocabulary, desk_schedule, evaluate, model_config, AblationReport, AspectModel, CellRun, ExperimentConfig,
};
use sfmt_core::metrics::{
    abs_accuracy, acc_within, adj_accuracy, macro_accuracy, pcc, rmse, MetricsReport, PredictionSet,
};
use sfmt_core::model::{assemble_sequence, GraderModel, ModalityMode, ModelConfig, Vocabulary};
use sfmt_core::tensor::gradcheck::{finite_difference_check, sample_coordinates};
use sfmt_core::tensor::ParamGroup;
use sfmt_core::trainer::checkpoint::encode_checkpoint;
use sfmt_core::trainer::{
    bootstrap, bootstrap_plan, load_checkpoint, plan_for, prediction_set, run_regime, score_samples, stage_init,
    Checkpoint, Dataset, Provenance, RegimeKind, RegimeOutcome, RngState, Schedule,
};

const CORPUS_SIZE: usize = 2000;
const CORPUS_SEED: u64 = 7;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Outcome = Result<String, String>;

struct Fixture {
    generated: Vec<Generated>,
    data: Dataset,
    base: GraderModel<f32>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let t = Instant::now();
        let generated = generate_in_memory(&CorpusSpec::with_total(CORPUS_SIZE, CORPUS_SEED), true).unwrap();
        let data = Dataset::from_generated(&generated).unwrap();
        let cfg = ExperimentConfig::default();
        let vocab = build_vocabulary(&data);
        let model = GraderModel::new(model_config(&cfg, &vocab), vocab, cfg.bootstrap_seed).unwrap();
        let (base, _) = bootstrap(&bootstrap_plan(&cfg.bootstrap, cfg.bootstrap_seed), model, &data).unwrap();
        println!(
            "  (fixture: {CORPUS_SIZE}-utterance corpus and bootstrap base in {:.0}s)",
            t.elapsed().as_secs_f64()
        );
        Fixture { generated, data, base }
    })
}

/// Seed, sfmt outcome (checkpoints kept in the temp dir) and joint outcome.
type DeliveryRun = (u64, RegimeOutcome<f32>, RegimeOutcome<f32>, tempfile::TempDir);

fn delivery_runs() -> &'static Vec<DeliveryRun> {
    static R: OnceLock<Vec<DeliveryRun>> = OnceLock::new();
    R.get_or_init(|| {
        let f = fixture();
        SEEDS
            .iter()
            .map(|&seed| {
                let dir = tempfile::tempdir().unwrap();
                let regime = |kind| plan_for(kind, Aspect::Delivery, &desk_schedule(), seed, false);
                let sfmt = run_regime(&regime(RegimeKind::Sfmt), &f.base, &f.data, Some(dir.path())).unwrap();
                let joint = run_regime(&regime(RegimeKind::Joint), &f.base, &f.data, None).unwrap();
                (seed, sfmt, joint, dir)
            })
            .collect()
    })
}

fn metrics(model: &GraderModel<f32>, split: Split, aspect: Aspect, mode: ModalityMode) -> MetricsReport {
    let f = fixture();
    let scored = score_samples(model, &f.data.split(split), aspect, mode).unwrap();
    MetricsReport::compute(&prediction_set(aspect, &scored).unwrap()).unwrap()
}

fn words(vocab: &Vocabulary, n: usize, rng: &mut impl Rng) -> Vec<String> {
    (0..n)
        .map(|_| vocab.token(rng.gen_range(17..vocab.len())).unwrap().to_string())
        .collect()
}

fn synthetic_input(rng: &mut impl Rng) -> FeatureMatrix {
    render_features(rng.gen_range(0.0..1.0), rng.gen_range(3..12), 0.3, rng).unwrap()
}

fn full_model_f64(seed: u64) -> GraderModel<f64> {
    let vocab = Vocabulary::build((0..40).map(|i| format!("w{i:02}")));
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    GraderModel::new(cfg, vocab, seed).unwrap()
}

fn randomize_adapters(m: &mut GraderModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in m.params.ids_in_group(ParamGroup::AudioLora) {
        for v in m.params.get_mut(id).tensor.data_mut() {
            *v = rng.gen_range(-0.2..0.2);
        }
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut m = full_model_f64(11);
    randomize_adapters(&mut m, 12);
    m.params.set_trainable_groups(&ParamGroup::ALL.into_iter().collect());
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let fm = synthetic_input(&mut rng);
    let text = words(&m.vocab, 12, &mut rng);
    let layout = assemble_sequence(
        &m.config,
        &m.vocab,
        Aspect::Delivery,
        ModalityMode::Multimodal,
        Some(fm.frames()),
        Some(&text),
    )
    .unwrap();
    let coords = sample_coordinates(&m.params, 60, 14);
    let model = m.clone();
    let report = finite_difference_check(
        &mut m.params,
        |g| {
            let l = model.forward(g, &layout, Some(&fm))?;
            model.label_loss(g, l, CefrLevel::B1)
        },
        1e-5,
        &coords,
    )
    .map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "max rel error {:.2e} over {} coordinates in {} groups, {secs:.1}s",
        report.max_rel_error,
        report.checked,
        report.by_group.len()
    );
    if report.max_rel_error < 1e-4
        && report.by_group.len() == ParamGroup::ALL.len()
        && report.checked >= 50
        && secs < 120.0
    {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_pcc, mut worst_rmse, mut worst_affine, mut count_mismatch) = (0.0f64, 0.0f64, 0.0f64, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(2..80);
        let g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..8)).collect();
        let p: Vec<usize> = g
            .iter()
            .map(|&x| {
                if rng.gen_bool(0.6) {
                    (x as isize + rng.gen_range(-2..=2)).clamp(0, 7) as usize
                } else {
                    rng.gen_range(0..8)
                }
            })
            .collect();
        let lv = |v: &[usize]| v.iter().map(|&i| CefrLevel::ALL[i]).collect::<Vec<_>>();
        let set = PredictionSet::from_levels(Aspect::Delivery, &lv(&p), &lv(&g)).unwrap();
        let pv: Vec<f64> = p.iter().map(|&i| i as f64 * 0.5).collect();
        let gv: Vec<f64> = g.iter().map(|&i| i as f64 * 0.5).collect();
        match (pcc(&pv, &gv), pearson(&pv, &gv)) {
            (Ok(a), Some(b)) => {
                worst_pcc = worst_pcc.max((a - b).abs());
                let (s, o) = (rng.gen_range(0.1..20.0), rng.gen_range(-9.0..9.0));
                let mapped: Vec<f64> = pv.iter().map(|x| s * x + o).collect();
                worst_affine = worst_affine.max((pcc(&mapped, &gv).unwrap() - a).abs());
            }
            (Err(_), None) => {}
            _ => count_mismatch += 1,
        }
        worst_rmse = worst_rmse.max((rmse(&pv, &gv).unwrap() - root_mean_square(&pv, &gv)).abs());
        let exact = [
            (abs_accuracy(&set).unwrap(), within_bins(&p, &g, 0)),
            (adj_accuracy(&set).unwrap(), within_bins(&p, &g, 1)),
            (acc_within(&set, 0.5).unwrap(), within_bins(&p, &g, 1)),
            (acc_within(&set, 1.0).unwrap(), within_bins(&p, &g, 2)),
            (macro_accuracy(&set).unwrap(), balanced_recall(&p, &g)),
        ];
        count_mismatch += exact.iter().filter(|(a, b)| a != b).count();
    }
    let detail = format!(
        "1000 sets: pcc dev {worst_pcc:.1e}, rmse dev {worst_rmse:.1e}, affine dev {worst_affine:.1e}, counting mismatches {count_mismatch}"
    );
    if worst_pcc <= 1e-9 && worst_rmse <= 1e-9 && worst_affine <= 1e-9 && count_mismatch == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3() -> Outcome {
    let mut m = full_model_f64(21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let run = |m: &GraderModel<f64>, fm: &FeatureMatrix, text: &[String]| {
        let layout = assemble_sequence(
            &m.config,
            &m.vocab,
            Aspect::Content,
            ModalityMode::Multimodal,
            Some(fm.frames()),
            Some(text),
        )
        .unwrap();
        m.logits(&layout, Some(fm)).unwrap()
    };
    let mut identity_ok = true;
    for _ in 0..10 {
        let fm = synthetic_input(&mut rng);
        let text = words(&m.vocab, 8, &mut rng);
        m.apply_lora(true);
        let on = run(&m, &fm, &text);
        m.apply_lora(false);
        identity_ok &= on == run(&m, &fm, &text);
    }
    m.apply_lora(true);
    randomize_adapters(&mut m, 23);
    let mut merged = m.clone();
    merged.merge_lora().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let fm = synthetic_input(&mut rng);
        let text = words(&m.vocab, rng.gen_range(1..16), &mut rng);
        let (a, b) = (run(&m, &fm, &text), run(&merged, &fm, &text));
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    let detail =
        format!("B=0 bitwise identity: {identity_ok}; merged vs runtime max |Δlogit| {worst:.2e} on 100 inputs");
    if identity_ok && worst < 1e-5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let f = fixture();
    let (_, sfmt, _, dir) = &delivery_runs()[0];
    let hash_ok = sfmt.stages[1].initial_hash == sfmt.stages[0].final_hash;
    let stage1 = load_checkpoint::<f32>(dir.path().join("stage1"), Some(&f.base.config))
        .map_err(|e| e.to_string())?
        .model;
    let stage2_init =
        stage_init(&sfmt.regime.stages[1], &f.base, Some(&sfmt.stage_models[0])).map_err(|e| e.to_string())?;
    let init_hash_ok = stage2_init.params.content_hash() == sfmt.stages[1].initial_hash;
    let held_out: Vec<_> = f.data.split(Split::Test).into_iter().take(32).collect();
    let mut identical = 0;
    for s in &held_out {
        let layout = assemble_sequence(
            &f.base.config,
            &f.base.vocab,
            Aspect::Delivery,
            ModalityMode::AudioOnly,
            Some(s.features.frames()),
            None,
        )
        .unwrap();
        let a = stage1.logits(&layout, Some(&s.features)).unwrap();
        let b = stage2_init.logits(&layout, Some(&s.features)).unwrap();
        identical += usize::from(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let detail = format!(
        "stage-2 initial hash equals stage-1 final: {}; audio-only logits identical on {identical}/{} held-out utterances",
        hash_ok && init_hash_ok,
        held_out.len()
    );
    if hash_ok && init_hash_ok && identical == 32 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Outcome {
    let f = fixture();
    let mut detail = Vec::new();
    let mut ok = true;
    for (kind, mode) in [
        (RegimeKind::TextOnly, ModalityMode::TextOnly),
        (RegimeKind::AudioOnly, ModalityMode::AudioOnly),
    ] {
        let t = Instant::now();
        let out = run_regime(
            &plan_for(kind, Aspect::Delivery, &desk_schedule(), 0, false),
            &f.base,
            &f.data,
            None,
        )
        .map_err(|e| e.to_string())?;
        let secs = t.elapsed().as_secs_f64();
        let m = metrics(&out.model, Split::Test, Aspect::Delivery, mode);
        ok &= secs <= 900.0
            && match kind {
                RegimeKind::TextOnly => m.macro_acc <= 0.25,
                _ => m.macro_acc >= 0.60,
            };
        detail.push(format!("{kind} delivery macro {:.3} ({secs:.0}s)", m.macro_acc));
    }
    let detail = detail.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let mut runs = Vec::new();
    for (seed, sfmt, joint, _) in delivery_runs() {
        for (kind, out) in [(RegimeKind::Sfmt, sfmt), (RegimeKind::Joint, joint)] {
            runs.push(CellRun {
                regime: kind,
                aspect: Aspect::Delivery,
                seed: *seed,
                result: Ok(metrics(
                    &out.model,
                    Split::Test,
                    Aspect::Delivery,
                    ModalityMode::Multimodal,
                )),
            });
        }
    }
    let report = AblationReport::from_runs("test", &runs);
    let v = &report.verdict;
    let detail = format!(
        "{} seeds: mean delivery PCC sfmt {:.4} vs joint {:.4}; within tolerance {:?}; sfmt strictly exceeds joint: {:?}",
        report.seeds.len(),
        v.sfmt_delivery_pcc.unwrap_or(f64::NAN),
        v.joint_delivery_pcc.unwrap_or(f64::NAN),
        v.sfmt_within_tolerance,
        v.sfmt_exceeds_joint
    );
    if v.sfmt_within_tolerance == Some(true) && report.seeds.len() >= 5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let generated = generate_in_memory(&CorpusSpec::with_total(60, 3), true).unwrap();
    let data = Dataset::from_generated(&generated).unwrap().take(Split::Train, 16);
    let vocab = build_vocabulary(&data);
    let cfg = ExperimentConfig::default();
    let base = GraderModel::<f32>::new(model_config(&cfg, &vocab), vocab, 1).unwrap();
    let schedule = Schedule {
        epochs: 50,
        lr: 8e-3,
        batch_size: 4,
        grad_accum: 1,
        warmup_frac: 0.1,
        final_lr_frac: 0.0,
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for kind in RegimeKind::ALL {
        let out = run_regime(
            &plan_for(kind, Aspect::Delivery, &schedule, 0, false),
            &base,
            &data,
            None,
        )
        .map_err(|e| e.to_string())?;
        let steps: usize = out.stages.iter().map(|s| s.steps).sum();
        let samples = data.split(Split::Train);
        let scored = score_samples(&out.model, &samples, Aspect::Delivery, kind.eval_modality()).unwrap();
        let loss = scored.iter().map(|s| s.loss).sum::<f64>() / scored.len() as f64;
        ok &= loss < 0.1 && steps <= 200;
        detail.push(format!("{kind} {loss:.4} after {steps} steps"));
    }
    let detail = format!("train loss on 16 utterances: {}", detail.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let spec = CorpusSpec::with_total(150, 11);
    let serial = generate_in_memory(&spec, false).map_err(|e| e.to_string())?;
    let parallel = generate_in_memory(&spec, true).map_err(|e| e.to_string())?;
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = write_corpus(&serial, d1.path()).map_err(|e| e.to_string())?;
    let m2 = write_corpus(&parallel, d2.path()).map_err(|e| e.to_string())?;
    let manifests_equal = std::fs::read(&m1).unwrap() == std::fs::read(&m2).unwrap()
        && corpus_hash(&m1).unwrap() == corpus_hash(&m2).unwrap();

    let data = Dataset::from_generated(&parallel).unwrap();
    let vocab = build_vocabulary(&data);
    let cfg = ExperimentConfig::default();
    let schedule = Schedule {
        epochs: 1,
        lr: 2e-3,
        ..Schedule::reference()
    };
    let train = || {
        let base = GraderModel::<f32>::new(model_config(&cfg, &vocab), vocab.clone(), 5).unwrap();
        let out = run_regime(
            &plan_for(RegimeKind::Sfmt, Aspect::Delivery, &schedule, 3, false),
            &base,
            &data,
            None,
        )
        .unwrap();
        let ckpt = Checkpoint {
            model: out.model.clone(),
            optimizer: None,
            provenance: Provenance {
                regime: "sfmt".into(),
                stage: "stage2".into(),
                aspect: "D".into(),
                modality: "multimodal".into(),
                epoch: 1,
            },
            rng: RngState { seed: 3, epoch: 1 },
        };
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let models = [AspectModel {
            aspect: Aspect::Delivery,
            modality: ModalityMode::Multimodal,
            regime: "sfmt".into(),
            model: out.model,
            source: None,
        }];
        let report = evaluate(&models, &data, Split::Test).unwrap();
        (bytes, report.to_json().unwrap(), report.to_csv(), out.log)
    };
    let (a, b) = (train(), train());
    let checkpoints_equal = a.0 == b.0;
    let reports_equal = a.1 == b.1 && a.2 == b.2;
    let logs_equal = a.3 == b.3;
    let detail = format!(
        "manifests+features identical (serial vs parallel): {manifests_equal}; checkpoints identical: {checkpoints_equal}; reports identical: {reports_equal}; logs identical: {logs_equal}"
    );
    if manifests_equal && checkpoints_equal && reports_equal && logs_equal {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let f = fixture();
    let models: Vec<AspectModel> = Aspect::ALL
        .iter()
        .map(|&aspect| AspectModel {
            aspect,
            modality: ModalityMode::Multimodal,
            regime: "bootstrap".into(),
            model: f.base.clone(),
            source: None,
        })
        .collect();
    let report = evaluate(&models, &f.data, Split::Unseen).map_err(|e| e.to_string())?;
    let keys: Vec<&str> = report.entries.iter().map(|e| e.key.as_str()).collect();
    let text = report.to_text();
    let layout_ok = ["C", "D", "L", "H"].iter().all(|k| keys.contains(k))
        && ["PCC", "ABS", "ADJ"].iter().all(|k| text.contains(k))
        && report.split == "unseen";

    let unseen: Vec<_> = f
        .generated
        .iter()
        .filter(|g| g.utterance.split == Split::Unseen)
        .map(|g| &g.utterance)
        .collect();
    let seen: Vec<_> = f
        .generated
        .iter()
        .filter(|g| g.utterance.split != Split::Unseen)
        .map(|g| &g.utterance)
        .collect();
    let speakers: BTreeSet<&str> = seen.iter().map(|u| u.speaker_id.as_str()).collect();
    let tasks: BTreeSet<&str> = seen.iter().map(|u| u.task_id.as_str()).collect();
    let seen_words: BTreeSet<&str> = seen
        .iter()
        .flat_map(|u| u.transcript_ref.iter().map(String::as_str))
        .collect();
    let speaker_overlap = unseen
        .iter()
        .filter(|u| speakers.contains(u.speaker_id.as_str()))
        .count();
    let task_overlap = unseen.iter().filter(|u| tasks.contains(u.task_id.as_str())).count();
    let topic_prefix = unseen[0].task_id.to_lowercase();
    let topic_overlap = unseen
        .iter()
        .flat_map(|u| u.transcript_ref.iter())
        .filter(|w| w.starts_with(&topic_prefix) && seen_words.contains(w.as_str()))
        .count();
    let d = report.get("D").unwrap();
    let detail = format!(
        "{} unseen utterances, entries {keys:?}, D PCC {:?} ABS {:.3} ADJ {:.3}; overlapping speakers {speaker_overlap}, tasks {task_overlap}, topic words {topic_overlap}",
        unseen.len(),
        d.pcc.map(|p| (p * 1000.0).round() / 1000.0),
        d.abs_acc,
        d.adj_acc
    );
    if layout_ok && !unseen.is_empty() && speaker_overlap + task_overlap + topic_overlap == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10() -> Outcome {
    let f = fixture();
    let (mut edits, mut tokens, mut stored_mismatch) = (0usize, 0usize, 0usize);
    for g in &f.generated {
        let u = &g.utterance;
        let e = edit_distance(&u.transcript_ref, &u.transcript_asr);
        edits += e;
        tokens += u.transcript_ref.len();
        stored_mismatch += usize::from((e as f64 / u.transcript_ref.len() as f64 - u.measured_wer).abs() > 1e-9);
    }
    let wer = edits as f64 / tokens as f64;
    let detail = format!("corpus WER {wer:.4} over {tokens} reference tokens (target 0.1475); stored per-utterance WER mismatches {stored_mismatch}");
    if tokens >= 10_000 && (wer - 0.1475).abs() <= 0.02 && stored_mismatch == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("gradient correctness", criterion_1),
        ("metric oracle equivalence", criterion_2),
        ("LoRA identity and merge", criterion_3),
        ("curriculum continuity", criterion_4),
        ("designed modality separation", criterion_5),
        ("SFMT benefit direction", criterion_6),
        ("overfit smoke test", criterion_7),
        ("determinism", criterion_8),
        ("unseen-task harness", criterion_9),
        ("WER simulation", criterion_10),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {n:>2} [{name}]: PASS - {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} [{name}]: FAIL - {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
