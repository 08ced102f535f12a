use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::FeatureMatrix;
use crate::corpus::level::{CefrLevel, NUM_LEVELS};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::decode::constrained_decode;
use crate::model::layout::SequenceLayout;
use crate::model::vocab::{Vocabulary, LABEL_BASE};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

/// Fixed affine normalization applied to log-mel inputs.
const FEATURE_OFFSET: f64 = -4.0;
const FEATURE_SCALE: f64 = 0.25;

const LORA_A: &str = ".lora_a";
const LORA_B: &str = ".lora_b";

/// Multimodal grader: audio encoder, projector, token embeddings, causal
/// backbone and label head over one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GraderModel<T: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<T>,
    lora_enabled: bool,
    lora_merged: bool,
}

struct Init<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn add(
        &mut self,
        name: String,
        group: ParamGroup,
        shape: &[usize],
        f: impl Fn(&mut ChaCha8Rng, usize) -> f64,
    ) -> Result<()> {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |i| T::of(f(rng, i)));
        self.store.add(name, group, t)?;
        Ok(())
    }

    fn uniform(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize) -> Result<()> {
        let a = 1.0 / (rows as f64).sqrt();
        self.add(name, group, &[rows, cols], |r, _| r.gen_range(-a..a))
    }

    fn constant(&mut self, name: String, group: ParamGroup, shape: &[usize], v: f64) -> Result<()> {
        self.add(name, group, shape, |_, _| v)
    }

    fn norm(&mut self, prefix: &str, group: ParamGroup, d: usize) -> Result<()> {
        self.constant(format!("{prefix}.g"), group, &[d], 1.0)?;
        self.constant(format!("{prefix}.b"), group, &[d], 0.0)
    }

    fn lora(&mut self, base: &str, rows: usize, cols: usize, rank: usize) -> Result<()> {
        self.uniform(format!("{base}{LORA_A}"), ParamGroup::AudioLora, rows, rank)?;
        self.constant(format!("{base}{LORA_B}"), ParamGroup::AudioLora, &[rank, cols], 0.0)
    }
}

impl<T: Scalar> GraderModel<T> {
    /// Randomly initialized model with LoRA adapters attached and enabled.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "config vocab_size {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let (d, h, f, k, r, v) = (
            config.d_model,
            config.ff_dim(),
            config.feature_dims,
            config.conv_kernel,
            config.lora_rank,
            config.vocab_size,
        );

        use ParamGroup::*;
        init.uniform("enc.sub1.w".into(), AudioEncoder, 3 * f, d)?;
        init.constant("enc.sub1.b".into(), AudioEncoder, &[d], 0.0)?;
        init.uniform("enc.sub2.w".into(), AudioEncoder, 3 * d, d)?;
        init.constant("enc.sub2.b".into(), AudioEncoder, &[d], 0.0)?;
        for i in 0..config.encoder_blocks {
            let p = format!("enc.{i}");
            init.norm(&format!("{p}.ff_ln"), AudioEncoder, d)?;
            init.uniform(format!("{p}.ff.w1"), AudioEncoder, d, h)?;
            init.constant(format!("{p}.ff.b1"), AudioEncoder, &[h], 0.0)?;
            init.uniform(format!("{p}.ff.w2"), AudioEncoder, h, d)?;
            init.constant(format!("{p}.ff.b2"), AudioEncoder, &[d], 0.0)?;
            init.norm(&format!("{p}.att_ln"), AudioEncoder, d)?;
            for m in ["wq", "wk", "wv", "wo"] {
                init.uniform(format!("{p}.att.{m}"), AudioEncoder, d, d)?;
            }
            init.norm(&format!("{p}.conv_ln"), AudioEncoder, d)?;
            let a = 1.0 / (k as f64).sqrt();
            init.add(format!("{p}.conv.dw"), AudioEncoder, &[k, d], |r, _| r.gen_range(-a..a))?;
            init.constant(format!("{p}.conv.db"), AudioEncoder, &[d], 0.0)?;
            init.uniform(format!("{p}.conv.pw"), AudioEncoder, d, d)?;
            init.constant(format!("{p}.conv.pb"), AudioEncoder, &[d], 0.0)?;
            init.norm(&format!("{p}.out_ln"), AudioEncoder, d)?;
        }
        init.add("proj.w".into(), AudioProjector, &[d, d], |_, i| {
            f64::from(u8::from(i / d == i % d))
        })?;
        init.constant("proj.b".into(), AudioProjector, &[d], 0.0)?;

        init.add("tok_emb".into(), TextEmbed, &[v, d], |r, _| r.gen_range(-1.0..1.0))?;

        init.add("pos".into(), Backbone, &[config.max_sequence(), d], |r, _| {
            r.gen_range(-0.1..0.1)
        })?;
        for l in 0..config.backbone_layers {
            let p = format!("dec.{l}");
            init.norm(&format!("{p}.ln1"), Backbone, d)?;
            for m in ["wq", "wk", "wv", "wo"] {
                init.uniform(format!("{p}.att.{m}"), Backbone, d, d)?;
            }
            init.norm(&format!("{p}.ln2"), Backbone, d)?;
            init.uniform(format!("{p}.ff.w1"), Backbone, d, h)?;
            init.constant(format!("{p}.ff.b1"), Backbone, &[h], 0.0)?;
            init.uniform(format!("{p}.ff.w2"), Backbone, h, d)?;
            init.constant(format!("{p}.ff.b2"), Backbone, &[d], 0.0)?;
        }
        init.norm("dec.ln_f", Backbone, d)?;

        init.uniform("head.w".into(), LabelHead, d, v)?;
        init.constant("head.b".into(), LabelHead, &[v], 0.0)?;

        for base in adapted_matrices(&config) {
            let (rows, cols) = init.store.by_name(&base).unwrap().tensor.dims2("lora")?;
            init.lora(&base, rows, cols, r)?;
        }

        Ok(GraderModel {
            config,
            vocab,
            params,
            lora_enabled: true,
            lora_merged: false,
        })
    }

    /// Reassembles a model from stored arrays, checking every expected name
    /// and shape against a freshly built skeleton.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: ParamStore<T>,
        lora_merged: bool,
    ) -> Result<Self> {
        let skeleton = GraderModel::<T>::new(config.clone(), vocab.clone(), 0)?;
        let expected: BTreeMap<&str, (&[usize], ParamGroup)> = skeleton
            .params
            .iter()
            .filter(|(_, p)| !(lora_merged && p.group == ParamGroup::AudioLora))
            .map(|(_, p)| (p.name.as_str(), (p.tensor.shape(), p.group)))
            .collect();
        if params.len() != expected.len() {
            return Err(Error::Config(format!(
                "expected {} parameter arrays, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (_, p) in params.iter() {
            match expected.get(p.name.as_str()) {
                Some((shape, group)) if *shape == p.tensor.shape() && *group == p.group => {}
                Some((shape, group)) => {
                    return Err(Error::Config(format!(
                        "parameter '{}' is {:?}/{} but the config expects {:?}/{}",
                        p.name,
                        p.tensor.shape(),
                        p.group,
                        shape,
                        group
                    )))
                }
                None => return Err(Error::Config(format!("unexpected parameter '{}'", p.name))),
            }
        }
        Ok(GraderModel {
            config,
            vocab,
            params,
            lora_enabled: !lora_merged,
            lora_merged,
        })
    }

    pub fn cast<U: Scalar>(&self) -> GraderModel<U> {
        GraderModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            lora_enabled: self.lora_enabled,
            lora_merged: self.lora_merged,
        }
    }

    pub fn lora_enabled(&self) -> bool {
        self.lora_enabled && !self.lora_merged
    }

    pub fn lora_merged(&self) -> bool {
        self.lora_merged
    }

    /// Turns runtime application of the adapters on or off.
    pub fn apply_lora(&mut self, enabled: bool) {
        self.lora_enabled = enabled;
    }

    /// Folds every adapter into its base matrix (`W + s·A·B`) and removes the
    /// adapter parameters.
    pub fn merge_lora(&mut self) -> Result<()> {
        if self.lora_merged {
            return Err(Error::State("LoRA adapters are already merged".into()));
        }
        let s = T::of(self.config.lora_scale());
        for base in adapted_matrices(&self.config) {
            let (w, a, b) = (
                self.id(&base)?,
                self.id(&format!("{base}{LORA_A}"))?,
                self.id(&format!("{base}{LORA_B}"))?,
            );
            if self.lora_enabled {
                let (rows, rank) = self.params.value(a).dims2("merge_lora")?;
                let cols = self.params.value(b).last_dim();
                let delta = crate::tensor::kernels::matmul(
                    self.params.value(a).data(),
                    self.params.value(b).data(),
                    rows,
                    rank,
                    cols,
                );
                for (x, d) in self.params.get_mut(w).tensor.data_mut().iter_mut().zip(delta) {
                    *x += s * d;
                }
            }
            self.params.remove(a);
            self.params.remove(b);
        }
        self.lora_merged = true;
        self.lora_enabled = false;
        Ok(())
    }

    fn id(&self, name: &str) -> Result<ParamId> {
        self.params
            .id_of(name)
            .ok_or_else(|| Error::Config(format!("model has no parameter '{name}'")))
    }

    fn p(&self, g: &mut Graph<'_, T>, name: &str) -> Result<Var> {
        Ok(g.param(self.id(name)?))
    }

    /// `x·W (+ s·x·A·B) (+ b)`; the adapter term is used when enabled and present.
    fn linear(&self, g: &mut Graph<'_, T>, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
        let wv = self.p(g, w)?;
        let mut y = g.matmul(x, wv)?;
        if self.lora_enabled() {
            if let (Some(a), Some(bb)) = (
                self.params.id_of(&format!("{w}{LORA_A}")),
                self.params.id_of(&format!("{w}{LORA_B}")),
            ) {
                let (av, bv) = (g.param(a), g.param(bb));
                let xa = g.matmul(x, av)?;
                let xab = g.matmul(xa, bv)?;
                let delta = g.scale(xab, T::of(self.config.lora_scale()));
                y = g.add(y, delta)?;
            }
        }
        match b {
            Some(b) => {
                let bv = self.p(g, b)?;
                g.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    fn norm(&self, g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(g, &format!("{prefix}.g"))?;
        let bias = self.p(g, &format!("{prefix}.b"))?;
        g.layer_norm(x, gain, bias, T::of(self.config.ln_eps))
    }

    fn feed_forward(&self, g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(g, x, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1")))?;
        let h = g.gelu(h);
        self.linear(g, h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))
    }

    /// Multi-head attention over rows of `x`. With `last_only`, only the final
    /// row issues a query, which under a causal mask sees every position.
    fn attention(&self, g: &mut Graph<'_, T>, x: Var, prefix: &str, causal: bool, last_only: bool) -> Result<Var> {
        let rows = g.shape(x)[0];
        let q_src = if last_only { g.slice_rows(x, rows - 1, 1)? } else { x };
        let q = self.linear(g, q_src, &format!("{prefix}.wq"), None)?;
        let k = self.linear(g, x, &format!("{prefix}.wk"), None)?;
        let v = self.linear(g, x, &format!("{prefix}.wv"), None)?;
        let dh = self.config.head_dim();
        let inv = T::of(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(self.config.heads);
        for hd in 0..self.config.heads {
            let qh = g.slice_cols(q, hd * dh, dh)?;
            let kh = g.slice_cols(k, hd * dh, dh)?;
            let vh = g.slice_cols(v, hd * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, inv);
            if causal && !last_only {
                s = g.causal_mask(s)?;
            }
            let a = g.softmax(s, 1)?;
            heads.push(g.matmul(a, vh)?);
        }
        let o = g.concat_cols(&heads)?;
        self.linear(g, o, &format!("{prefix}.wo"), None)
    }

    /// Strided-2, width-3, zero-padded convolution over time.
    fn subsample(&self, g: &mut Graph<'_, T>, x: Var, prefix: &str) -> Result<Var> {
        let (t, c) = (g.shape(x)[0], g.shape(x)[1]);
        let out = t.div_ceil(2);
        let index: Vec<Option<usize>> = (0..out)
            .flat_map(|i| {
                [2 * i as isize - 1, 2 * i as isize, 2 * i as isize + 1]
                    .map(|j| (j >= 0 && (j as usize) < t).then_some(j as usize))
            })
            .collect();
        let gathered = g.gather_rows(x, &index)?;
        let windows = g.reshape(gathered, &[out, 3 * c])?;
        let y = self.linear(g, windows, &format!("{prefix}.w"), Some(&format!("{prefix}.b")))?;
        Ok(g.gelu(y))
    }

    fn features_input(&self, g: &mut Graph<'_, T>, fm: &FeatureMatrix) -> Result<Var> {
        if fm.dims() != self.config.feature_dims {
            return Err(Error::dim(
                "encode_audio",
                format!("{} feature dims, model expects {}", fm.dims(), self.config.feature_dims),
            ));
        }
        if fm.frames() == 0 || fm.frames() > self.config.max_audio_frames {
            return Err(Error::Length(format!(
                "{} audio frames outside 1..={}",
                fm.frames(),
                self.config.max_audio_frames
            )));
        }
        let data = fm
            .data()
            .iter()
            .map(|&v| T::of((f64::from(v) - FEATURE_OFFSET) * FEATURE_SCALE))
            .collect();
        Ok(g.input(Tensor::new(vec![fm.frames(), fm.dims()], data)?))
    }

    /// Audio encoder on the tape: `[T × F]` features to `[ceil(T/4) × d]`.
    pub fn encode_audio_on(&self, g: &mut Graph<'_, T>, fm: &FeatureMatrix) -> Result<Var> {
        let x = self.features_input(g, fm)?;
        let x = self.subsample(g, x, "enc.sub1")?;
        let mut x = self.subsample(g, x, "enc.sub2")?;
        for i in 0..self.config.encoder_blocks {
            let p = format!("enc.{i}");
            let h = self.norm(g, x, &format!("{p}.ff_ln"))?;
            let h = self.feed_forward(g, h, &format!("{p}.ff"))?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, &format!("{p}.att_ln"))?;
            let h = self.attention(g, h, &format!("{p}.att"), false, false)?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, &format!("{p}.conv_ln"))?;
            let (dw, db) = (self.p(g, &format!("{p}.conv.dw"))?, self.p(g, &format!("{p}.conv.db"))?);
            let h = g.depthwise_conv1d(h, dw, db)?;
            let h = g.gelu(h);
            let h = self.linear(g, h, &format!("{p}.conv.pw"), Some(&format!("{p}.conv.pb")))?;
            x = g.add(x, h)?;
            x = self.norm(g, x, &format!("{p}.out_ln"))?;
            g.value(x).ensure_finite(&format!("audio encoder block {i}"))?;
        }
        Ok(x)
    }

    pub fn project_audio_on(&self, g: &mut Graph<'_, T>, audio: Var) -> Result<Var> {
        self.linear(g, audio, "proj.w", Some("proj.b"))
    }

    /// Tape-free audio encoding.
    pub fn encode_audio(&self, fm: &FeatureMatrix) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let v = self.encode_audio_on(&mut g, fm)?;
        Ok(g.value(v).clone())
    }

    /// Tape-free projection of encoder outputs into the backbone space.
    pub fn project_audio(&self, audio: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let x = g.input(audio.clone());
        let v = self.project_audio_on(&mut g, x)?;
        Ok(g.value(v).clone())
    }

    /// Records the full model on `g` and returns the `[1 × V]` score-slot logits.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        layout: &SequenceLayout,
        features: Option<&FeatureMatrix>,
    ) -> Result<Var> {
        let table = self.p(g, "tok_emb")?;
        let mut parts = vec![g.embedding(table, &layout.prefix())?];
        if layout.audio_slots > 0 {
            let fm =
                features.ok_or_else(|| Error::Config("layout has audio slots but no features were given".into()))?;
            let audio = self.encode_audio_on(g, fm)?;
            if g.shape(audio)[0] != layout.audio_slots {
                return Err(Error::dim(
                    "forward",
                    format!(
                        "{} audio rows for {} audio slots",
                        g.shape(audio)[0],
                        layout.audio_slots
                    ),
                ));
            }
            parts.push(self.project_audio_on(g, audio)?);
        }
        parts.push(g.embedding(table, &layout.suffix())?);
        let x = g.concat_rows(&parts)?;
        let len = layout.len();
        if len > self.config.max_sequence() {
            return Err(Error::Length(format!(
                "sequence of {len} slots exceeds {}",
                self.config.max_sequence()
            )));
        }
        let pos = self.p(g, "pos")?;
        let pos = g.slice_rows(pos, 0, len)?;
        let mut x = g.add(x, pos)?;

        let layers = self.config.backbone_layers;
        for l in 0..layers {
            let p = format!("dec.{l}");
            let last = l + 1 == layers;
            let h = self.norm(g, x, &format!("{p}.ln1"))?;
            let a = self.attention(g, h, &format!("{p}.att"), true, last)?;
            if last {
                x = g.slice_rows(x, len - 1, 1)?;
            }
            x = g.add(x, a)?;
            let h = self.norm(g, x, &format!("{p}.ln2"))?;
            let h = self.feed_forward(g, h, &format!("{p}.ff"))?;
            x = g.add(x, h)?;
            g.value(x).ensure_finite(&format!("backbone layer {l}"))?;
        }
        let x = self.norm(g, x, "dec.ln_f")?;
        let logits = self.linear(g, x, "head.w", Some("head.b"))?;
        g.value(logits).ensure_finite("label head logits")?;
        Ok(logits)
    }

    /// Cross-entropy of the gold level over the eight label-token logits.
    pub fn label_loss(&self, g: &mut Graph<'_, T>, logits: Var, gold: CefrLevel) -> Result<Var> {
        let labels = g.slice_cols(logits, LABEL_BASE, NUM_LEVELS)?;
        g.cross_entropy(labels, &[gold.index()])
    }

    /// Score-slot logits over the full vocabulary.
    pub fn logits(&self, layout: &SequenceLayout, features: Option<&FeatureMatrix>) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let v = self.forward(&mut g, layout, features)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn predict(&self, layout: &SequenceLayout, features: Option<&FeatureMatrix>) -> Result<CefrLevel> {
        Ok(constrained_decode(&self.logits(layout, features)?))
    }
}

/// Base matrices that carry a LoRA adapter: encoder attention and
/// feed-forward projections, plus the projector when configured.
pub fn adapted_matrices(config: &ModelConfig) -> Vec<String> {
    let mut v = Vec::new();
    for i in 0..config.encoder_blocks {
        for m in ["att.wq", "att.wk", "att.wv", "att.wo", "ff.w1", "ff.w2"] {
            v.push(format!("enc.{i}.{m}"));
        }
    }
    if config.lora_on_projector {
        v.push("proj.w".into());
    }
    v
}
