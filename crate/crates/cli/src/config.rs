//! Run configuration: user JSON merged over dataset-derived dimensions.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use aag_core::data::DatasetMeta;
use aag_core::model::{InputKind, ModelConfig};
use aag_core::training::TrainConfig;
use aag_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

const TOP_KEYS: [&str; 3] = ["model", "train", "seed"];

/// Model defaults with the widths, class count, history length and input
/// mode read off the dataset header.
pub fn header_defaults(meta: &DatasetMeta) -> ModelConfig {
    let video = meta.frames > 1;
    ModelConfig {
        d_ft: meta.d_ft,
        d_txt: meta.d_txt,
        n_classes: meta.n_classes,
        history_len: meta.history_len,
        input: if video { InputKind::Video } else { InputKind::Frame },
        window: if video {
            meta.frames
        } else {
            ModelConfig::default().window
        },
        ..ModelConfig::default()
    }
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::Config(format!("{what} must be a JSON object")))
}

/// Overlays user keys on `base`; unknown keys are rejected when the merged
/// object is deserialized.
fn overlay<T>(base: &T, user: Option<&Value>, aliases: &[(&str, &str)], what: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut merged = serde_json::to_value(base)?;
    if let Some(user) = user {
        let target = merged.as_object_mut().expect("structs serialize to objects");
        for (k, v) in object(user, what)? {
            let key = aliases
                .iter()
                .find(|(a, _)| a == k)
                .map_or(k.as_str(), |(_, canon)| canon);
            if !target.contains_key(key) {
                return Err(Error::Config(format!("{what}: unknown key \"{k}\"")));
            }
            target.insert(key.to_string(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Resolves `{"model": {...}, "train": {...}, "seed": n}` against a dataset
/// header. A top-level `seed` seeds both the initialization and the
/// shuffling unless the sections set their own.
pub fn resolve(user: Option<&Value>, meta: &DatasetMeta) -> Result<RunConfig> {
    let empty = Value::Object(Map::new());
    let user = user.unwrap_or(&empty);
    let top = object(user, "config")?;
    if let Some(k) = top.keys().find(|k| !TOP_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("config: unknown key \"{k}\"")));
    }
    let seed = match top.get("seed") {
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| Error::Config("config: seed must be a non-negative integer".into()))?,
        ),
        None => None,
    };
    let mut model_base = header_defaults(meta);
    let mut train_base = TrainConfig::default();
    if let Some(s) = seed {
        model_base.seed = s;
        train_base.seed = s;
    }
    let model = overlay(
        &model_base,
        top.get("model"),
        &[("D", "d_model"), ("N", "history_len")],
        "model",
    )?;
    let train = overlay(&train_base, top.get("train"), &[], "train")?;
    model.validate()?;
    train.validate()?;
    Ok(RunConfig { model, train })
}

pub fn read_json(path: &std::path::Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
