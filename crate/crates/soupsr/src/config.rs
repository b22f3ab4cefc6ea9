//! Training configuration files and dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use soupsr_core::model::{DiscriminatorConfig, GeneratorConfig};
use soupsr_core::trainer::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    /// Dataset manifest written by `build-dataset`.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub discriminator: DiscriminatorConfig,
    /// Stage-1 checkpoint that fine-tuning starts from.
    pub pretrained: Option<PathBuf>,
    /// Write `epoch-NNNN.soup` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainFile {
    fn default() -> Self {
        TrainFile {
            dataset: PathBuf::from("dataset.json"),
            output_dir: PathBuf::from("run"),
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            pretrained: None,
            checkpoint_every: 1,
        }
    }
}

/// Parse `a.b.c=value`; the value is JSON when it parses as JSON and a
/// string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let Some((k, v)) = s.split_once('=') else {
        return Err(Error::Usage(format!("override `{s}` is not key=value")));
    };
    let path: Vec<String> = k.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Usage(format!("override key `{k}` is malformed")));
    }
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
    Ok((path, value))
}

/// Apply overrides to `base`; every key must already exist in the fully
/// resolved config (defaults included).
pub fn apply_overrides<T: Serialize + serde::de::DeserializeOwned>(base: &T, overrides: &[String]) -> Result<T> {
    let mut root = serde_json::to_value(base)?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        let mut node = &mut root;
        for (i, key) in path.iter().enumerate() {
            let next = match node {
                Value::Object(map) => map.get_mut(key),
                Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            };
            node = next.ok_or_else(|| Error::Usage(format!("unknown config key `{}`", path[..=i].join("."))))?;
        }
        *node = value;
    }
    serde_json::from_value(root).map_err(|e| Error::Usage(format!("invalid config after overrides: {e}")))
}

pub fn load_train_file(path: &Path, overrides: &[String]) -> Result<TrainFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut f: TrainFile = serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    f = apply_overrides(&f, overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [Some(&mut f.dataset), Some(&mut f.output_dir), f.pretrained.as_mut()].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    f.generator.validate()?;
    f.train.validate()?;
    f.discriminator.validate()?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys_and_reject_unknown_ones() {
        let f = TrainFile::default();
        let g = apply_overrides(&f, &["train.lr_init=0.001".into(), "generator.scales=[2,3]".into(), "output_dir=out".into()]).unwrap();
        assert_eq!(g.train.lr_init, 1e-3);
        assert_eq!(g.generator.scales, vec![2, 3]);
        assert_eq!(g.output_dir, PathBuf::from("out"));
        assert!(matches!(apply_overrides(&f, &["train.lr=1".into()]), Err(Error::Usage(_))));
        assert!(matches!(apply_overrides(&f, &["train.lr_init".into()]), Err(Error::Usage(_))));
        assert!(matches!(apply_overrides(&f, &["train.batch_size=\"x\"".into()]), Err(Error::Usage(_))));
    }
}
