//! Flat `key = value` run configuration: one entry per line, `#` comments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::block::BlockConfig;
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::train::TrainSettings;

/// A parsed training run configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub settings: TrainSettings,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Optional checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "line {}: empty key or value",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{key}'",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "data",
    "out",
    "seed",
    "epochs",
    "lr",
    "weight_decay",
    "lr_decay_epoch",
    "lr_decay_factor",
    "patience",
    "n_rho",
    "n_theta",
    "resume",
    "block_support",
    "block_channels_in",
    "block_channels_mid",
    "block_channels_out",
    "block_sigma_low",
    "block_sigma_high",
];

/// Parses a config file. Unknown keys are an error, listed by name.
pub fn parse_train_config(text: &str, base_dir: &Path) -> Result<TrainConfig> {
    let map = parse_pairs(text)?;
    let unknown: Vec<&str> = map
        .keys()
        .map(|k| k.as_str())
        .filter(|k| !KNOWN_KEYS.contains(k))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "unknown config keys: {}",
            unknown.join(", ")
        )));
    }

    let get = |k: &str| map.get(k).map(|s| s.as_str());
    let model = get("model").ok_or_else(|| Error::Config("missing 'model' key".into()))?;
    let kind = ModelKind::parse(model)?;
    let data = get("data").ok_or_else(|| Error::Config("missing 'data' key".into()))?;
    let seed: u64 = parse_num(&map, "seed")?.unwrap_or(0);

    let mut settings = TrainSettings::for_kind(kind, seed);
    if let Some(v) = parse_num::<usize>(&map, "epochs")? {
        settings.epochs = v;
    }
    if let Some(v) = parse_num::<f32>(&map, "lr")? {
        settings.lr = v;
    }
    if let Some(v) = parse_num::<f32>(&map, "weight_decay")? {
        settings.weight_decay = v;
    }
    if let Some(v) = parse_num::<usize>(&map, "lr_decay_epoch")? {
        settings.lr_decay_epoch = Some(v);
    }
    if let Some(v) = parse_num::<f32>(&map, "lr_decay_factor")? {
        settings.lr_decay_factor = v;
    }
    if let Some(v) = parse_num::<usize>(&map, "patience")? {
        settings.patience = v;
    }
    if let Some(v) = parse_num::<usize>(&map, "n_rho")? {
        settings.n_rho = v;
    }
    if let Some(v) = parse_num::<usize>(&map, "n_theta")? {
        settings.n_theta = v;
    }

    if let ModelKind::Block(variant) = kind {
        let mut block = BlockConfig::new(variant);
        if let Some(v) = parse_num::<usize>(&map, "block_support")? {
            block.support = v;
        }
        if let Some(v) = parse_num::<usize>(&map, "block_channels_in")? {
            block.channels_in = v;
        }
        if let Some(v) = parse_num::<usize>(&map, "block_channels_mid")? {
            block.channels_mid = v;
        }
        if let Some(v) = parse_num::<usize>(&map, "block_channels_out")? {
            block.channels_out = v;
        }
        if let Some(v) = parse_num::<f64>(&map, "block_sigma_low")? {
            block.sigma_range.0 = v;
        }
        if let Some(v) = parse_num::<f64>(&map, "block_sigma_high")? {
            block.sigma_range.1 = v;
        }
        block.validate()?;
        settings.block = Some(block);
    } else {
        for key in KNOWN_KEYS.iter().filter(|k| k.starts_with("block_")) {
            if map.contains_key(*key) {
                return Err(Error::Config(format!(
                    "key '{key}' only applies to block_variant models"
                )));
            }
        }
    }

    let resolve = |p: &str| -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    };
    let out = get("out").unwrap_or("runs");
    Ok(TrainConfig {
        settings,
        data_dir: resolve(data),
        out_dir: resolve(out),
        resume: get("resume").map(resolve),
    })
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_train_config(&text, base)
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(s) => s
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{s}'"))),
    }
}
