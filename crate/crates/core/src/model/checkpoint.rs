//! Checkpoint directories: one tensor file per parameter under `params/` plus
//! a `manifest.json` with the config, seed, step counter, and trainability.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamStore, Param, TwinModel, TwinModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, Tensor};
use crate::util::{create_dir_all, write_atomic};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub file: String,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupState {
    pub trainable: usize,
    pub frozen: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: TwinModelConfig,
    pub seed: u64,
    pub step: u64,
    pub hash: String,
    pub groups: BTreeMap<ParamGroup, GroupState>,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &TwinModel, step: u64, dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    let pdir = dir.join("params");
    create_dir_all(&pdir)?;
    let mut entries = Vec::new();
    for p in model.params().iter() {
        let file = format!("params/{}.tnsr", p.name);
        write_atomic(dir.join(&file), &p.tensor.to_bytes())?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            group: p.group,
            shape: p.tensor.shape().to_vec(),
            file,
            trainable: p.trainable,
        });
    }
    let groups = model
        .params()
        .group_counts()
        .into_iter()
        .map(|(g, (trainable, frozen))| (g, GroupState { trainable, frozen }))
        .collect();
    let manifest = CheckpointManifest {
        format_version: 1,
        config: model.config().clone(),
        seed: model.seed(),
        step,
        hash: model.checkpoint_hash(),
        groups,
        params: entries,
    };
    write_atomic(dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(TwinModel, CheckpointManifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    manifest.config.validate()?;
    let layout = manifest.config.layout();
    if layout.len() != manifest.params.len() {
        return Err(Error::Format(format!(
            "manifest lists {} parameters, config implies {}",
            manifest.params.len(),
            layout.len()
        )));
    }
    let mut store = ParamStore::default();
    for (spec, entry) in layout.into_iter().zip(&manifest.params) {
        if spec.name != entry.name {
            return Err(Error::Format(format!("expected {}, found {}", spec.name, entry.name)));
        }
        let tensor: Tensor = read_tensor(dir.join(&entry.file))?;
        if tensor.shape() != spec.shape.as_slice() {
            return Err(Error::Format(format!("{} has shape {:?}", entry.name, tensor.shape())));
        }
        store.push(Param {
            name: spec.name,
            group: spec.group,
            tower: spec.tower,
            tensor,
            trainable: entry.trainable,
        })?;
    }
    let model = TwinModel::from_store(manifest.config.clone(), manifest.seed, store)?;
    if model.checkpoint_hash() != manifest.hash {
        return Err(Error::Format("checkpoint hash mismatch".into()));
    }
    Ok((model, manifest))
}
