use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Param;
use super::tpc::TpcModel;
use crate::autodiff::NormState;
use crate::ehr::FeatureSubset;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to restore a trained model. Parameters are stored in
/// construction order (layer by layer, then diagnosis embedding, head,
/// mortality head), each tagged with its name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub feature_order_hash: String,
    /// Time series subset the model was trained on.
    #[serde(default)]
    pub feature_subset: FeatureSubset,
    pub params: Vec<Param>,
    pub norms: Vec<NormState>,
    /// Training RNG at the time of saving.
    pub rng: Option<ChaCha8Rng>,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(model: &TpcModel, feature_order_hash: &str, rng: Option<ChaCha8Rng>, epoch: usize) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            feature_order_hash: feature_order_hash.to_string(),
            feature_subset: FeatureSubset::All,
            params: model.params.clone(),
            norms: model.norms.clone(),
            rng,
            epoch,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Dataset(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model, checking every stored tensor against the layout
    /// implied by the config.
    pub fn model(&self) -> Result<TpcModel> {
        let mut model = TpcModel::new(self.config.clone(), 0)?;
        if model.params.len() != self.params.len() || model.norms.len() != self.norms.len() {
            return Err(Error::Wiring("checkpoint does not match its config".into()));
        }
        for (slot, stored) in model.params.iter_mut().zip(&self.params) {
            if slot.name != stored.name || slot.value.shape() != stored.value.shape() {
                return Err(Error::Wiring(format!(
                    "checkpoint parameter `{}` {:?} does not match expected `{}` {:?}",
                    stored.name,
                    stored.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = stored.value.clone();
        }
        for (slot, stored) in model.norms.iter_mut().zip(&self.norms) {
            if slot.channels() != stored.channels() {
                return Err(Error::Wiring("checkpoint norm state width mismatch".into()));
            }
            *slot = stored.clone();
        }
        Ok(model)
    }

    /// Fails unless the dataset's feature order matches the one trained on.
    pub fn check_dataset(&self, dataset_hash: &str) -> Result<()> {
        if self.feature_order_hash != dataset_hash {
            return Err(Error::HashMismatch {
                checkpoint: self.feature_order_hash.clone(),
                dataset: dataset_hash.to_string(),
            });
        }
        Ok(())
    }
}
