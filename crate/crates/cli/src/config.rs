//! Flat JSON run configuration: one object whose keys are `ModelConfig` and
//! `TrainConfig` field names. Unset keys take the defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tpc_core::model::{Ledger, ModelConfig};
use tpc_core::trainer::TrainConfig;

/// Input widths are read from the dataset, never from the config file.
const DATASET_KEYS: [&str; 3] = ["features", "statics", "diagnoses"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// The flat file form, without the dataset-derived widths.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut flat = object(serde_json::to_value(&self.model).expect("serializable"));
        flat.extend(object(serde_json::to_value(&self.train).expect("serializable")));
        for k in DATASET_KEYS {
            flat.remove(k);
        }
        flat
    }
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Validates `doc` and fills defaults. Every problem found is returned.
pub fn validate_config(doc: &Value) -> Result<RunConfig, Vec<String>> {
    let Value::Object(user) = doc else {
        return Err(vec!["config must be a JSON object".into()]);
    };
    let model_defaults = object(serde_json::to_value(ModelConfig::default()).expect("serializable"));
    let train_defaults = object(serde_json::to_value(TrainConfig::default()).expect("serializable"));
    let mut model = model_defaults.clone();
    let mut train = train_defaults.clone();
    let mut errors = Vec::new();

    for (key, value) in user {
        if DATASET_KEYS.contains(&key.as_str()) {
            errors.push(format!("`{key}` is taken from the dataset and cannot be set"));
        } else if model_defaults.contains_key(key) {
            let mut probe = model_defaults.clone();
            probe.insert(key.clone(), value.clone());
            match serde_json::from_value::<ModelConfig>(Value::Object(probe)) {
                Ok(_) => {
                    model.insert(key.clone(), value.clone());
                }
                Err(e) => errors.push(format!("`{key}`: {e}")),
            }
        } else if train_defaults.contains_key(key) {
            let mut probe = train_defaults.clone();
            probe.insert(key.clone(), value.clone());
            match serde_json::from_value::<TrainConfig>(Value::Object(probe)) {
                Ok(_) => {
                    train.insert(key.clone(), value.clone());
                }
                Err(e) => errors.push(format!("`{key}`: {e}")),
            }
        } else {
            errors.push(format!("unknown key `{key}`"));
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let model: ModelConfig = serde_json::from_value(Value::Object(model)).map_err(|e| vec![e.to_string()])?;
    let train: TrainConfig = serde_json::from_value(Value::Object(train)).map_err(|e| vec![e.to_string()])?;
    // Width 1 stands in for the dataset widths when checking the ledger.
    let probe = ModelConfig {
        features: 1,
        statics: 1,
        diagnoses: 1,
        ..model.clone()
    };
    if let Err(e) = probe.validate().and_then(|_| Ledger::build(&probe).map(|_| ())) {
        errors.push(e.to_string());
    }
    if let Err(e) = train.validate() {
        errors.push(e.to_string());
    }
    if errors.is_empty() {
        Ok(RunConfig { model, train })
    } else {
        Err(errors)
    }
}

pub fn read_config(path: Option<&Path>) -> Result<Value, String> {
    match path {
        None => Ok(Value::Object(Map::new())),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            if text.trim().is_empty() {
                return Ok(Value::Object(Map::new()));
            }
            serde_json::from_str(&text).map_err(|e| format!("{} is not valid JSON: {e}", p.display()))
        }
    }
}
