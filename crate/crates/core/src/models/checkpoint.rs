//! Self-describing model checkpoints.
//!
//! A checkpoint is a versioned JSON container holding the model kind, its
//! configuration, all vocabularies and every parameter tensor under its
//! registered name. Loading reconstructs the model and bit-faithful `f64`
//! parameter values (serde_json round-trips floats exactly).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::Error;

use super::{build_model, Model, ModelConfig, ModelKind, Vocabs};

pub const CHECKPOINT_FORMAT: &str = "negscope-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamDump {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub config: ModelConfig,
    /// Whether language-specific deprel subtypes were stripped from the
    /// training data; prediction replays the same normalization.
    pub strip_labels: bool,
    pub vocabs: Vocabs,
    pub params: Vec<ParamDump>,
}

impl Checkpoint {
    /// Snapshot a model's identity and parameters.
    pub fn capture(
        kind: ModelKind,
        config: &ModelConfig,
        strip_labels: bool,
        vocabs: &Vocabs,
        store: &ParamStore,
    ) -> Checkpoint {
        let params = store
            .iter()
            .map(|(name, t)| ParamDump {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
                trainable: t.requires_grad(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            kind,
            config: config.clone(),
            strip_labels,
            vocabs: vocabs.clone(),
            params,
        }
    }

    /// Rebuild the model and its parameter store from the checkpoint.
    pub fn restore(&self) -> Result<(Model, ParamStore), Error> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "not a model checkpoint (format '{}')",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut vocabs = self.vocabs.clone();
        vocabs.reindex();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let model = build_model(self.kind, &self.config, &vocabs, None, &mut store, &mut rng)?;
        if self.params.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, the rebuilt model expects {}",
                self.params.len(),
                store.len()
            )));
        }
        for dump in &self.params {
            let id = store.id_of(&dump.name).ok_or_else(|| {
                Error::Checkpoint(format!("unknown parameter '{}' in checkpoint", dump.name))
            })?;
            let tensor = Tensor::new(dump.shape.clone(), dump.values.clone())
                .map_err(|e| Error::Checkpoint(format!("parameter '{}': {e}", dump.name)))?;
            if store.get(id).shape() != dump.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}': shape {:?} does not match the model's {:?}",
                    dump.name,
                    dump.shape,
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = tensor.with_requires_grad(dump.trainable);
        }
        Ok((model, store))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<(), Error> {
    let json = serde_json::to_string(checkpoint).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, Error> {
    let json = std::fs::read_to_string(path)?;
    serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("invalid checkpoint: {e}")))
}
