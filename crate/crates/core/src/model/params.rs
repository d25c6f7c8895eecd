use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tensor};

/// Which tower a parameter belongs to; `None` on a [`Param`] means shared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }
}

/// Freeze granularity. Every parameter belongs to exactly one group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    SelfAttn,
    TextXattn,
    AvXattn,
    Ffn,
    Embed,
    Head,
    Norm,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::SelfAttn,
        ParamGroup::TextXattn,
        ParamGroup::AvXattn,
        ParamGroup::Ffn,
        ParamGroup::Embed,
        ParamGroup::Head,
        ParamGroup::Norm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::SelfAttn => "self_attn",
            ParamGroup::TextXattn => "text_xattn",
            ParamGroup::AvXattn => "av_xattn",
            ParamGroup::Ffn => "ffn",
            ParamGroup::Embed => "embed",
            ParamGroup::Head => "head",
            ParamGroup::Norm => "norm",
        }
    }

    pub fn parse_set<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<ParamGroup>> {
        names.iter().map(|n| n.as_ref().parse()).collect()
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tower: Option<Modality>,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub trainable: usize,
    pub frozen: usize,
    pub total: usize,
}

/// Named parameters in a fixed order; the position doubles as the graph key.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn push(&mut self, param: Param) -> Result<usize> {
        if self.index.contains_key(&param.name) {
            return Err(Error::Config(format!("duplicate parameter {}", param.name)));
        }
        let id = self.params.len();
        self.index.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn get(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn report(&self) -> FreezeReport {
        let total = self.numel();
        let trainable = self
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum();
        FreezeReport { trainable, frozen: total - trainable, total }
    }

    /// Marks a parameter trainable iff its group is in `groups` and it belongs to
    /// one of `towers` (shared parameters belong to every tower).
    pub fn set_trainable(&mut self, groups: &BTreeSet<ParamGroup>, towers: &[Modality]) -> FreezeReport {
        for p in &mut self.params {
            let in_scope = p.tower.is_none_or(|t| towers.contains(&t));
            p.trainable = in_scope && groups.contains(&p.group);
        }
        self.report()
    }

    /// Adds graph gradients into the stored `grad` buffers (accumulating).
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (key, g) in grads.params() {
            let p = self
                .params
                .get_mut(key)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {key}")))?;
            p.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Per-group `(trainable, frozen)` element counts.
    pub fn group_counts(&self) -> BTreeMap<ParamGroup, (usize, usize)> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            let e = out.entry(p.group).or_insert((0, 0));
            if p.trainable {
                e.0 += p.tensor.numel();
            } else {
                e.1 += p.tensor.numel();
            }
        }
        out
    }

    /// Raw bytes of every parameter in `group`, for freeze checks.
    pub fn group_bytes(&self, group: ParamGroup) -> Vec<u8> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.tensor.payload_bytes())
            .collect()
    }
}
