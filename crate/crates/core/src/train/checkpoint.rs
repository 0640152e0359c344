use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::AdamWState;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::io::{load_tensor_shaped, save_tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    version: u32,
    seed: u64,
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointState {
    step: usize,
    optimizer_step: u64,
    params: Vec<String>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: AdamWState,
    pub train: TrainConfig,
    pub seed: u64,
    /// Optimizer steps taken so far.
    pub step: usize,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("checkpoint metadata serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Layout: `config.json`, `state.json`, and one tensor pair per parameter
/// under `params/`, `adam_m/` and `adam_v/`.
pub fn checkpoint_save(dir: &Path, ck: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join("config.json"),
        &CheckpointConfig {
            version: CHECKPOINT_VERSION,
            seed: ck.seed,
            model: ck.model.config().clone(),
            train: ck.train.clone(),
        },
    )?;
    let params = ck.model.params();
    let mut names = Vec::with_capacity(params.len());
    for (i, (_, p)) in params.iter().enumerate() {
        save_tensor(&p.value, &dir.join("params").join(&p.name))?;
        save_tensor(&ck.optimizer.m[i], &dir.join("adam_m").join(&p.name))?;
        save_tensor(&ck.optimizer.v[i], &dir.join("adam_v").join(&p.name))?;
        names.push(p.name.clone());
    }
    write_json(
        &dir.join("state.json"),
        &CheckpointState {
            step: ck.step,
            optimizer_step: ck.optimizer.step,
            params: names,
        },
    )
}

/// Rebuild a checkpoint, checking every tensor against the shapes implied by
/// the stored configuration.
pub fn checkpoint_load(dir: &Path) -> Result<Checkpoint> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let cfg: CheckpointConfig = read_json(&dir.join("config.json"))?;
    if cfg.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            cfg.version
        )));
    }
    let state: CheckpointState = read_json(&dir.join("state.json"))?;
    let mut model = Model::new(cfg.model, cfg.seed)?;
    let expected: Vec<String> = model.params().iter().map(|(_, p)| p.name.clone()).collect();
    if state.params != expected {
        return Err(Error::Checkpoint(
            "parameter list does not match the configuration".into(),
        ));
    }
    let mut optimizer = AdamWState::new(model.params());
    for (i, name) in expected.iter().enumerate() {
        let shape = optimizer.m[i].shape().to_vec();
        let value = load_tensor_shaped(&dir.join("params").join(name), &shape)?;
        model.set_param(name, value)?;
        optimizer.m[i] = load_tensor_shaped(&dir.join("adam_m").join(name), &shape)?;
        optimizer.v[i] = load_tensor_shaped(&dir.join("adam_v").join(name), &shape)?;
    }
    optimizer.step = state.optimizer_step;
    Ok(Checkpoint {
        model,
        optimizer,
        train: cfg.train,
        seed: cfg.seed,
        step: state.step,
    })
}
