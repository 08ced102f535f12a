//! Synthetic corpus generation.
//!
//! Delivery is carried only by the feature matrices; content and language use
//! only by the token stream.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::featfile::encode_features;
use crate::audio::{log_floor, FeatureMatrix, N_MELS};
use crate::corpus::asr::corrupt_transcript;
use crate::corpus::level::{holistic_aggregate, majority_vote, Aspect, AspectLabels, CefrLevel, NUM_LEVELS};
use crate::corpus::manifest::{encode_manifest, Latent, Utterance};
use crate::corpus::raters::simulate_raters;
use crate::corpus::spec::{CorpusSpec, Split};
use crate::error::{Error, Result};

pub const MARKERS: [&str; 4] = ["the", "a", "of", "to"];
pub const TOPIC_WORDS: usize = 32;
pub const DISTRACTORS: usize = 32;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURE_DIR: &str = "features";

/// Deterministic RNG for one (seed, key, purpose) triple.
pub fn substream(seed: u64, key: &str, purpose: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.update([0]);
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

pub fn topic_word(task: &str, i: usize) -> String {
    format!("{}w{i:02}", task.to_lowercase())
}

pub fn distractor_word(i: usize) -> String {
    format!("dx{i:02}")
}

/// All tokens a response to `task` can contain.
pub fn task_vocabulary(task: &str) -> Vec<String> {
    MARKERS
        .iter()
        .map(|m| m.to_string())
        .chain((0..TOPIC_WORDS).map(|i| topic_word(task, i)))
        .chain((0..DISTRACTORS).map(distractor_word))
        .collect()
}

/// One planned utterance: where it goes and which true level each aspect gets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub id: String,
    pub task_id: String,
    pub speaker_id: String,
    pub split: Split,
    pub content: CefrLevel,
    pub delivery: CefrLevel,
    pub language_use: CefrLevel,
}

/// Plans every utterance of the corpus: split, task, speaker, and per-aspect
/// target levels. Each aspect's levels follow the split's level counts and are
/// shuffled independently, so no aspect predicts another.
pub fn split_corpus(spec: &CorpusSpec) -> Result<Vec<Allocation>> {
    spec.validate()?;
    if spec.utterances_per_speaker == 0 {
        return Err(Error::Allocation("utterances_per_speaker must be at least 1".into()));
    }
    if spec.main_task == spec.unseen_task {
        return Err(Error::Allocation(format!(
            "unseen task must differ from the main task ({})",
            spec.main_task
        )));
    }
    let mut out = Vec::new();
    for split in Split::ALL {
        let counts = spec.counts.get(split);
        let levels: Vec<CefrLevel> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(CefrLevel::ALL[i], n))
            .collect();
        if levels.is_empty() {
            continue;
        }
        let shuffled = |aspect: Aspect| {
            let mut v = levels.clone();
            v.shuffle(&mut substream(spec.seed, split.as_str(), aspect.slug()));
            v
        };
        let (c, d, l) = (
            shuffled(Aspect::Content),
            shuffled(Aspect::Delivery),
            shuffled(Aspect::LanguageUse),
        );
        let task = if split == Split::Unseen {
            &spec.unseen_task
        } else {
            &spec.main_task
        };
        for i in 0..levels.len() {
            out.push(Allocation {
                id: format!("{task}-{split}-{:05}", i + 1),
                task_id: task.clone(),
                speaker_id: format!("{split}-spk{:04}", i / spec.utterances_per_speaker + 1),
                split,
                content: c[i],
                delivery: d[i],
                language_use: l[i],
            });
        }
    }
    Ok(out)
}

/// Latent factor uniformly inside the bin of `level`.
fn draw_latent(level: CefrLevel, rng: &mut impl Rng) -> f64 {
    (level.index() as f64 + rng.gen::<f64>()) / NUM_LEVELS as f64
}

/// Response tokens as (marker, word) pairs. On-topic words are drawn with
/// probability rising with `delta_c`; each pair's marker is wrong with
/// probability falling with `delta_l`.
pub fn render_tokens(task: &str, delta_c: f64, delta_l: f64, pairs: usize, rng: &mut impl Rng) -> Vec<String> {
    let p_topic = 0.05 + 0.9 * delta_c;
    let p_wrong = 0.05 + 0.85 * (1.0 - delta_l);
    let mut out = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let on_topic = rng.gen::<f64>() < p_topic;
        let j = rng.gen_range(0..TOPIC_WORDS.max(DISTRACTORS));
        let word = if on_topic {
            topic_word(task, j % TOPIC_WORDS)
        } else {
            distractor_word(j % DISTRACTORS)
        };
        let correct = j % MARKERS.len();
        let marker = if rng.gen::<f64>() < p_wrong {
            (correct + rng.gen_range(1..MARKERS.len())) % MARKERS.len()
        } else {
            correct
        };
        out.push(MARKERS[marker].to_string());
        out.push(word);
    }
    out
}

/// Log noise-floor energy for a delivery factor: noise amplitude is inversely
/// proportional to `delta_d + 0.5`.
pub fn noise_floor(delta_d: f64) -> f64 {
    -4.0 - 2.0 * (delta_d + 0.5).ln()
}

fn stochastic_round(x: f64, rng: &mut impl Rng) -> usize {
    let f = x.floor();
    f as usize + usize::from(rng.gen::<f64>() < x - f)
}

/// Log-mel-like feature matrix for `syllables` syllables at delivery `delta_d`.
/// Lower delivery means slower speech (more frames per syllable), more silent
/// pauses, and a higher noise floor.
pub fn render_features(delta_d: f64, syllables: usize, jitter: f64, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    const BASE: f64 = -8.0;
    let floor = noise_floor(delta_d);
    let p_pause = (0.6 - delta_d).max(0.0);
    let mut clean: Vec<[f64; N_MELS]> = vec![[BASE; N_MELS]; 2];
    for s in 0..syllables {
        let mut template = [BASE; N_MELS];
        for _ in 0..3 {
            let center = rng.gen_range(2.0..(N_MELS as f64 - 2.0));
            let amp = rng.gen_range(1.5..3.5);
            for (b, v) in template.iter_mut().enumerate() {
                let d = b as f64 - center;
                *v = v.max(amp - d * d / 4.0);
            }
        }
        let frames = 2 + stochastic_round(3.0 * (1.0 - delta_d), rng);
        clean.extend(std::iter::repeat_n(template, frames));
        if s + 1 < syllables && rng.gen::<f64>() < p_pause {
            let gap = rng.gen_range(2..=4);
            clean.extend(std::iter::repeat_n([BASE; N_MELS], gap));
        }
    }
    clean.extend([[BASE; N_MELS]; 2]);
    let lo = f64::from(log_floor());
    let mut data = Vec::with_capacity(clean.len() * N_MELS);
    for row in &clean {
        for &t in row {
            let z: f64 = StandardNormal.sample(rng);
            let noise = floor + jitter * z;
            let v = noise.max(t) + (-(t - noise).abs()).exp().ln_1p();
            data.push(v.max(lo) as f32);
        }
    }
    FeatureMatrix::new(clean.len(), N_MELS, data)
}

/// One generated utterance with its features held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub utterance: Utterance,
    pub features: FeatureMatrix,
}

pub fn generate_one(spec: &CorpusSpec, alloc: &Allocation) -> Result<Generated> {
    let id = alloc.id.as_str();
    let mut latent_rng = substream(spec.seed, id, "latent");
    let latent = Latent {
        delta_c: draw_latent(alloc.content, &mut latent_rng),
        delta_d: draw_latent(alloc.delivery, &mut latent_rng),
        delta_l: draw_latent(alloc.language_use, &mut latent_rng),
    };
    let pairs = substream(spec.seed, id, "length").gen_range(spec.min_pairs..=spec.max_pairs);
    let transcript_ref = render_tokens(
        &alloc.task_id,
        latent.delta_c,
        latent.delta_l,
        pairs,
        &mut substream(spec.seed, id, "text"),
    );
    let corrupted = corrupt_transcript(
        &transcript_ref,
        spec.target_wer,
        &task_vocabulary(&alloc.task_id),
        spec.edit_mix,
        &mut substream(spec.seed, id, "asr"),
    )?;
    let features = render_features(
        latent.delta_d,
        transcript_ref.len(),
        spec.acoustic_jitter,
        &mut substream(spec.seed, id, "audio"),
    )?;

    let truth = AspectLabels::from_aspects(alloc.content, alloc.delivery, alloc.language_use);
    debug_assert_eq!(
        truth.holistic,
        holistic_aggregate(alloc.content, alloc.delivery, alloc.language_use)
    );
    let mut rater_rng = substream(spec.seed, id, "raters");
    let mut raters = [truth; 3];
    let mut labels = truth;
    for aspect in Aspect::ALL {
        let opinions = simulate_raters(truth.get(aspect), spec.rater_noise, &mut rater_rng);
        for (r, level) in raters.iter_mut().zip(opinions) {
            r.set(aspect, level);
        }
        labels.set(aspect, majority_vote(opinions[0], opinions[1], opinions[2]));
    }

    Ok(Generated {
        utterance: Utterance {
            id: alloc.id.clone(),
            task_id: alloc.task_id.clone(),
            speaker_id: alloc.speaker_id.clone(),
            features_path: format!("{FEATURE_DIR}/{id}.feat"),
            wav_path: None,
            transcript_ref,
            transcript_asr: corrupted.tokens,
            measured_wer: corrupted.measured_wer,
            labels,
            raters,
            split: alloc.split,
            latent: Some(latent),
        },
        features,
    })
}

/// Generates the whole corpus in memory, in allocation order. The result is
/// identical whether `parallel` is set or not.
pub fn generate_in_memory(spec: &CorpusSpec, parallel: bool) -> Result<Vec<Generated>> {
    let plan = split_corpus(spec)?;
    if parallel {
        plan.par_iter().map(|a| generate_one(spec, a)).collect()
    } else {
        plan.iter().map(|a| generate_one(spec, a)).collect()
    }
}

/// Writes feature files and `manifest.jsonl` under `out_dir`; returns the manifest path.
pub fn write_corpus(corpus: &[Generated], out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    let feat_dir = out_dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for g in corpus {
        let path = out_dir.join(&g.utterance.features_path);
        fs::write(&path, encode_features(&g.features)?).map_err(|e| Error::io(&path, e))?;
    }
    let utterances: Vec<Utterance> = corpus.iter().map(|g| g.utterance.clone()).collect();
    let manifest = out_dir.join(MANIFEST_FILE);
    fs::write(&manifest, encode_manifest(&utterances)?).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub fn generate_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let corpus = generate_in_memory(spec, true)?;
    write_corpus(&corpus, out_dir)
}

/// Digest of a manifest and every feature file it references.
pub fn corpus_hash(manifest: impl AsRef<Path>) -> Result<String> {
    let manifest = manifest.as_ref();
    let root = manifest.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    for u in crate::corpus::manifest::read_manifest(manifest)? {
        let path = root.join(&u.features_path);
        h.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Per split, per aspect level counts plus token-weighted WER.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub utterances: usize,
    pub counts: BTreeMap<Split, BTreeMap<Aspect, [usize; NUM_LEVELS]>>,
    pub reference_tokens: usize,
    pub corpus_wer: f64,
}

impl CorpusSummary {
    pub fn from_utterances(utts: &[Utterance]) -> Self {
        let mut counts: BTreeMap<Split, BTreeMap<Aspect, [usize; NUM_LEVELS]>> = BTreeMap::new();
        let mut edits = 0.0;
        let mut tokens = 0;
        for u in utts {
            let per = counts.entry(u.split).or_default();
            for aspect in Aspect::ALL {
                per.entry(aspect).or_insert([0; NUM_LEVELS])[u.labels.get(aspect).index()] += 1;
            }
            edits += u.measured_wer * u.transcript_ref.len() as f64;
            tokens += u.transcript_ref.len();
        }
        CorpusSummary {
            utterances: utts.len(),
            counts,
            reference_tokens: tokens,
            corpus_wer: if tokens == 0 { 0.0 } else { edits / tokens as f64 },
        }
    }

    /// Plain-text table of one aspect's counts, one row per split.
    pub fn table(&self, aspect: Aspect) -> String {
        let mut s = format!("{:<8}", "split");
        for l in CefrLevel::ALL {
            s.push_str(&format!("{:>6}", l.label()));
        }
        s.push_str(&format!("{:>7}\n", "total"));
        for (split, per) in &self.counts {
            let row = per.get(&aspect).copied().unwrap_or_default();
            s.push_str(&format!("{:<8}", split.as_str()));
            for c in row {
                s.push_str(&format!("{c:>6}"));
            }
            s.push_str(&format!("{:>7}\n", row.iter().sum::<usize>()));
        }
        s
    }
}
