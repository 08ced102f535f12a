use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable partition a parameter belongs to. Fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    TextEmbed,
    AudioEncoder,
    AudioProjector,
    AudioLora,
    LabelHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Backbone,
        ParamGroup::TextEmbed,
        ParamGroup::AudioEncoder,
        ParamGroup::AudioProjector,
        ParamGroup::AudioLora,
        ParamGroup::LabelHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::TextEmbed => "text_embed",
            ParamGroup::AudioEncoder => "audio_encoder",
            ParamGroup::AudioProjector => "audio_projector",
            ParamGroup::AudioLora => "audio_lora",
            ParamGroup::LabelHead => "label_head",
        }
    }

    /// Groups on the acoustic pathway.
    pub fn is_audio(self) -> bool {
        matches!(
            self,
            ParamGroup::AudioEncoder | ParamGroup::AudioProjector | ParamGroup::AudioLora
        )
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub group: ParamGroup,
    pub trainable: bool,
    pub grad: Option<Tensor<T>>,
}

/// Named parameter arrays of one model. Slots are never reused: removing a
/// parameter leaves a hole so outstanding [`ParamId`]s of other parameters stay valid.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    slots: Vec<Option<Parameter<T>>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.slots.len());
        self.slots.push(Some(Parameter {
            name: name.clone(),
            tensor,
            group,
            trainable: true,
            grad: None,
        }));
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn remove(&mut self, id: ParamId) -> Option<Parameter<T>> {
        let p = self.slots.get_mut(id.0)?.take()?;
        self.by_name.remove(&p.name);
        Some(p)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        self.slots[id.0]
            .as_ref()
            .unwrap_or_else(|| panic!("parameter slot {} was removed", id.0))
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        self.slots[id.0]
            .as_mut()
            .unwrap_or_else(|| panic!("parameter slot {} was removed", id.0))
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.slots.get(id.0).is_some_and(Option::is_some)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.get(id).tensor
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    /// Live parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (ParamId(i), p)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.slots
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.as_mut().map(|p| (ParamId(i), p)))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.iter().map(|(_, p)| p.tensor.numel()).sum()
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    /// Marks exactly the parameters whose group is in `groups` as trainable.
    pub fn set_trainable_groups(&mut self, groups: &BTreeSet<ParamGroup>) {
        for (_, p) in self.iter_mut() {
            p.trainable = groups.contains(&p.group);
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn clear_grads(&mut self) {
        for (_, p) in self.iter_mut() {
            p.grad = None;
        }
    }

    /// Adds `grads` (scaled by `scale`) into the per-parameter grad buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, scale: T) {
        for (&id, g) in &grads.map {
            let p = self.get_mut(id);
            match &mut p.grad {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b * scale;
                    }
                }
                None => {
                    let mut t = g.clone();
                    if scale != T::one() {
                        t.scale_in_place(scale);
                    }
                    p.grad = Some(t);
                }
            }
        }
    }

    /// Converts every array to another scalar type, preserving names, groups and flags.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|slot| {
                    slot.as_ref().map(|p| Parameter {
                        name: p.name.clone(),
                        tensor: p.tensor.cast(),
                        group: p.group,
                        trainable: p.trainable,
                        grad: p.grad.as_ref().map(Tensor::cast),
                    })
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Order-stable digest of every live parameter's name, shape and value bits.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, id) in &self.by_name {
            let p = self.get(*id);
            h.update(name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub(crate) map: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients { map: BTreeMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn add(&mut self, other: &Gradients<T>) {
        for (id, g) in &other.map {
            match self.map.get_mut(id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.map.insert(*id, g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            g.scale_in_place(s);
        }
    }
}
