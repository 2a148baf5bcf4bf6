#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sacti_core::encoder::EncoderConfig;
use sacti_core::model::{ModelConfig, SactiModel};
use sacti_core::nn::{Activation, MlpSpec};
use sacti_core::synthetic::separable_dataset;
use sacti_core::text::{write_jsonl_dataset, ContextInstance};
use sacti_core::train::{train, TrainConfig};
use serde_json::Value;

pub fn micro_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        dropout: 0.1,
        lr: 0.01,
        seed: 5,
        model: ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                model_dim: 8,
                heads: 2,
                ff_dim: 8,
                max_pieces: 64,
                feature_layer: None,
            },
            subword_vocab: 50,
            pair_mlp: MlpSpec::new(vec![6], Activation::Tanh),
            label_mlp: MlpSpec::new(vec![6], Activation::Tanh),
            arc_mlp: MlpSpec::new(vec![4], Activation::Tanh),
            rel_mlp: MlpSpec::new(vec![4], Activation::Tanh),
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub fn write_dataset(path: &Path, data: &[ContextInstance]) {
    let mut buf = Vec::new();
    write_jsonl_dataset(&mut buf, data).unwrap();
    std::fs::write(path, buf).unwrap();
}

/// A directory with train/dev/test splits and a micro `config.json`.
pub fn workspace(epochs: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("train.jsonl"), &separable_dataset(12, 1));
    write_dataset(&dir.path().join("dev.jsonl"), &separable_dataset(4, 2));
    write_dataset(&dir.path().join("test.jsonl"), &separable_dataset(8, 3));
    std::fs::write(
        dir.path().join("config.json"),
        serde_json::to_vec_pretty(&micro_config(epochs)).unwrap(),
    )
    .unwrap();
    dir
}

pub fn trained_model() -> SactiModel {
    train(&separable_dataset(12, 1), None, &micro_config(2)).unwrap().model
}

pub fn write_checkpoint(dir: &Path) -> PathBuf {
    let config = micro_config(2);
    let model = train(&separable_dataset(12, 1), None, &config).unwrap().model;
    let path = dir.join("model.ckpt");
    std::fs::write(&path, model.to_checkpoint(serde_json::to_value(&config).unwrap()).encode()).unwrap();
    path
}

fn openapi() -> Value {
    serde_json::from_str(sacti_cli::service::OPENAPI).unwrap()
}

fn resolve<'a>(doc: &'a Value, schema: &'a Value) -> &'a Value {
    match schema.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let name = r.rsplit('/').next().unwrap();
            &doc["components"]["schemas"][name]
        }
        None => schema,
    }
}

fn check(doc: &Value, schema: &Value, value: &Value, at: &str) -> Result<(), String> {
    if value.is_null() && schema.get("nullable") == Some(&Value::Bool(true)) {
        return Ok(());
    }
    let schema = resolve(doc, schema);
    let ty = schema.get("type").and_then(Value::as_str);
    let ok = match ty {
        Some("object") => value.is_object(),
        Some("array") => value.is_array(),
        Some("string") => value.is_string(),
        Some("integer") => value.is_u64() || value.is_i64(),
        Some("number") => value.is_number(),
        Some("boolean") => value.is_boolean(),
        _ => true,
    };
    if !ok {
        return Err(format!("{at}: expected {ty:?}, found {value}"));
    }
    if let Some(obj) = value.as_object() {
        for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = req.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{at}: missing `{key}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => check(doc, s, v, &format!("{at}.{k}"))?,
                None => match schema.get("additionalProperties") {
                    Some(Value::Bool(false)) => return Err(format!("{at}: unexpected `{k}`")),
                    Some(s @ Value::Object(_)) => check(doc, s, v, &format!("{at}.{k}"))?,
                    _ => {}
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            check(doc, items, v, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

/// Checks `value` against the response schema the API document publishes
/// for `method path` and `status`.
pub fn assert_matches_schema(method: &str, path: &str, status: u16, value: &Value) {
    let doc = openapi();
    let op = &doc["paths"][path][method];
    assert!(op.is_object(), "{method} {path} is not documented");
    let schema = &op["responses"][status.to_string()]["content"]["application/json"]["schema"];
    assert!(schema.is_object(), "{method} {path} {status} is not documented");
    if let Err(e) = check(&doc, schema, value, "$") {
        panic!("{method} {path} {status}: {e}");
    }
}
