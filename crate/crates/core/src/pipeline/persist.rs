use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::{AdamWConfig, InitialStage, InitialStageConfig, ModelConfig, OptimizerState, ParamStore};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::model::FlowModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OptimMeta {
    config: AdamWConfig,
    step: u64,
}

/// A model restored from disk, with optimiser state and training
/// configuration when the file carried them.
#[derive(Debug)]
pub struct SavedRun {
    pub model: FlowModel,
    pub opt: Option<OptimizerState>,
    pub config: Option<TrainConfig>,
}

fn fill(store: &mut ParamStore, ck: &Checkpoint, prefix: &str) -> Result<()> {
    for entry in store.iter_mut() {
        let t = ck.get(&format!("{prefix}{}", entry.name))?;
        if t.shape() != entry.tensor.shape() {
            return Err(CheckpointError::LengthMismatch(format!(
                "`{}` has shape {:?}, model expects {:?}",
                entry.name,
                t.shape(),
                entry.tensor.shape()
            ))
            .into());
        }
        entry.tensor = t.clone();
    }
    Ok(())
}

fn push_store(ck: &mut Checkpoint, store: &ParamStore, prefix: &str) {
    for e in store.entries() {
        ck.push(format!("{prefix}{}", e.name), e.tensor.clone());
    }
}

/// Packs weights of both networks, optional AdamW moments and config.
pub fn to_checkpoint(model: &FlowModel, opt: Option<&OptimizerState>, cfg: Option<&TrainConfig>) -> Result<Checkpoint> {
    let meta = json!({
        "kind": "flow",
        "model": model.net.config(),
        "tau": model.tau.config(),
        "optimizer": opt.map(|o| OptimMeta { config: o.config, step: o.step }),
        "train_config": cfg,
    });
    // Re-parse so the stored value is exactly what a reader would rebuild.
    let meta: serde_json::Value = serde_json::from_str(&serde_json::to_string(&meta)?)?;
    let mut ck = Checkpoint::new(meta);
    push_store(&mut ck, &model.params, "");
    push_store(&mut ck, &model.tau_params, "");
    if let Some(o) = opt {
        for ((e, m), v) in model.params.entries().iter().zip(&o.first_moment).zip(&o.second_moment) {
            ck.push(format!("optim.m.{}", e.name), m.clone());
            ck.push(format!("optim.v.{}", e.name), v.clone());
        }
    }
    Ok(ck)
}

fn meta_field<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<Option<T>> {
    match ck.metadata.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
    }
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<SavedRun> {
    let model_cfg: ModelConfig = meta_field(ck, "model")?
        .ok_or_else(|| Error::from(CheckpointError::Manifest("metadata lacks `model`".into())))?;
    let tau_cfg: InitialStageConfig = meta_field(ck, "tau")?
        .ok_or_else(|| Error::from(CheckpointError::Manifest("metadata lacks `tau`".into())))?;
    let mut model = FlowModel::init(&model_cfg, &tau_cfg, 0)?;
    fill(&mut model.params, ck, "")?;
    fill(&mut model.tau_params, ck, "")?;
    let opt = match meta_field::<OptimMeta>(ck, "optimizer")? {
        None => None,
        Some(m) => {
            let mut o = OptimizerState::new(m.config, &model.params);
            o.step = m.step;
            for (i, e) in model.params.entries().iter().enumerate() {
                o.first_moment[i] = ck.get(&format!("optim.m.{}", e.name))?.clone();
                o.second_moment[i] = ck.get(&format!("optim.v.{}", e.name))?.clone();
            }
            Some(o)
        }
    };
    Ok(SavedRun {
        model,
        opt,
        config: meta_field(ck, "train_config")?,
    })
}

pub fn save_checkpoint(path: &Path, model: &FlowModel, opt: Option<&OptimizerState>, cfg: Option<&TrainConfig>) -> Result<()> {
    Ok(to_checkpoint(model, opt, cfg)?.save(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<SavedRun> {
    from_checkpoint(&Checkpoint::load(path)?)
}

/// Writes only the initial-stage model.
pub fn save_tau_checkpoint(path: &Path, model: &FlowModel) -> Result<()> {
    let meta = json!({ "kind": "tau", "tau": model.tau.config() });
    let mut ck = Checkpoint::new(serde_json::from_str(&meta.to_string())?);
    push_store(&mut ck, &model.tau_params, "");
    Ok(ck.save(path)?)
}

/// Loads an initial-stage checkpoint into `model`, replacing its τ.
pub fn load_tau_checkpoint(path: &Path, model: &mut FlowModel) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    let cfg: InitialStageConfig = meta_field(&ck, "tau")?
        .ok_or_else(|| Error::from(CheckpointError::Manifest("metadata lacks `tau`".into())))?;
    let (tau, mut params) = InitialStage::init(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    fill(&mut params, &ck, "")?;
    model.tau = tau;
    model.tau_params = params;
    Ok(())
}

/// Names, shapes and sizes of stored tensors plus the metadata, for display.
pub fn describe(ck: &Checkpoint) -> serde_json::Value {
    let tensors: Vec<serde_json::Value> = ck
        .tensors
        .iter()
        .map(|(n, t): &(String, Tensor)| json!({ "name": n, "shape": t.shape(), "numel": t.numel() }))
        .collect();
    let total: usize = ck.tensors.iter().map(|(_, t)| t.numel()).sum();
    json!({ "tensors": tensors, "total_values": total, "metadata": ck.metadata })
}

