//! Checkpoints: one GTF container per named parameter plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gtf;

use super::model::{GaspModel, ModelConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn_var: Option<Vec<f64>>,
}

pub fn save_checkpoint(dir: &Path, model: &GaspModel, seed: u64) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    let mut names = Vec::new();
    for (_, p) in model.params.iter() {
        gtf::save(&params_dir.join(format!("{}.gtf", p.name)), &p.value)?;
        names.push(p.name.clone());
    }
    let manifest = CheckpointManifest {
        config: model.cfg,
        seed,
        params: names,
        bn_mean: model.bn_stats.as_ref().map(|s| s.mean.clone()),
        bn_var: model.bn_stats.as_ref().map(|s| s.var.clone()),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<GaspModel> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut model = GaspModel::build(manifest.config, manifest.seed)?;
    for name in &manifest.params {
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has unknown parameter {name}")))?;
        let value = gtf::load(&dir.join("params").join(format!("{name}.gtf")))?;
        model.params.set_value(id, value)?;
    }
    if let (Some(mean), Some(var)) = (manifest.bn_mean, manifest.bn_var) {
        if let Some(stats) = model.bn_stats.as_mut() {
            stats.mean = mean;
            stats.var = var;
        }
    }
    Ok(model)
}
