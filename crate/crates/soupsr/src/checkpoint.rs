//! Generator checkpoints, extractor weights and resumable training state,
//! all stored as `.soup` archives.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;
use soupsr_core::model::{Generator, GeneratorConfig, MultiScaleCheckpoint, Stage};
use soupsr_core::optim::{Adam, AdamConfig, AdamSlot, PlateauScheduler};
use soupsr_core::params::ParamSet;
use soupsr_core::perceptual::{PerceptualConfig, VggExtractor};
use soupsr_core::trainer::{EpochRecord, TrainStage, TrainState};
use soupsr_core::{Shape, Tensor};

use crate::archive::{self, expect_kind, field, to_value, ArchiveManifest, TensorMap};
use crate::error::{corrupt, Error, Result};

pub const KIND_GENERATOR: &str = "generator";
pub const KIND_EXTRACTOR: &str = "vgg19_extractor";
pub const KIND_TRAIN_STATE: &str = "train_state";

/// File name looked up under `SOUPSR_CACHE` for extractor weights.
pub const EXTRACTOR_FILE: &str = "vgg19.soup";

fn ckpt_body(c: &MultiScaleCheckpoint) -> BTreeMap<String, Value> {
    let mut b = BTreeMap::new();
    b.insert("checkpoint_version".into(), to_value(&soupsr_core::model::CHECKPOINT_VERSION));
    b.insert("config".into(), to_value(&c.config));
    b.insert("stage".into(), to_value(&c.stage));
    b.insert("seed".into(), to_value(&c.seed));
    b.insert("metadata".into(), to_value(&c.metadata));
    b
}

fn prefixed(src: &ParamSet<f32>, prefix: &str, out: &mut TensorMap) {
    for (k, v) in src {
        out.insert(format!("{prefix}{k}"), v.clone());
    }
}

fn strip(src: &TensorMap, prefix: &str) -> TensorMap {
    src.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|r| (r.to_string(), v.clone()))).collect()
}

fn ckpt_from(m: &ArchiveManifest, tensors: &TensorMap) -> Result<MultiScaleCheckpoint> {
    let version: u32 = field(m, "checkpoint_version")?;
    if version != soupsr_core::model::CHECKPOINT_VERSION {
        return Err(corrupt(format!("checkpoint version {version} is not supported")));
    }
    let config: GeneratorConfig = field(m, "config")?;
    let mut ckpt = Generator::init(&config, 0).map_err(|e| corrupt(format!("checkpoint config: {e}")))?;
    let expected = ckpt.flat_params();
    if let Some(missing) = expected.keys().find(|k| !tensors.contains_key(*k)) {
        return Err(corrupt(format!("checkpoint lacks tensor `{missing}`")));
    }
    ckpt.set_flat_params(tensors)?;
    ckpt.stage = field(m, "stage")?;
    ckpt.seed = field(m, "seed")?;
    ckpt.metadata = field(m, "metadata")?;
    ckpt.validate()?;
    Ok(ckpt)
}

pub fn save_checkpoint(c: &MultiScaleCheckpoint, path: &Path) -> Result<()> {
    archive::save_archive(path, KIND_GENERATOR, ckpt_body(c), &c.flat_params())
}

pub fn load_checkpoint(path: &Path) -> Result<MultiScaleCheckpoint> {
    let (m, t) = archive::load_archive(path)?;
    expect_kind(&m, KIND_GENERATOR)?;
    ckpt_from(&m, &t)
}

pub fn save_extractor(ex: &VggExtractor<f32>, path: &Path) -> Result<()> {
    let mut b = BTreeMap::new();
    b.insert("widths".into(), to_value(&ex.widths()));
    archive::save_archive(path, KIND_EXTRACTOR, b, ex.params())
}

pub fn load_extractor(path: &Path, layer: &str) -> Result<VggExtractor<f32>> {
    let (m, t) = archive::load_archive(path)?;
    expect_kind(&m, KIND_EXTRACTOR)?;
    Ok(VggExtractor::from_params(t, layer)?)
}

/// Where the extractor weights came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorSource {
    File(PathBuf),
    Substitute { width_divisor: usize, seed: u64 },
}

/// `weights_path`, else `$SOUPSR_CACHE/vgg19.soup`, else the seeded
/// substitute network.
pub fn resolve_extractor(cfg: &PerceptualConfig) -> Result<(VggExtractor<f32>, ExtractorSource)> {
    let cached = std::env::var_os("SOUPSR_CACHE").map(|d| Path::new(&d).join(EXTRACTOR_FILE));
    let path = match (&cfg.weights_path, cached) {
        (Some(p), _) => Some(PathBuf::from(p)),
        (None, Some(p)) if p.exists() => Some(p),
        _ => None,
    };
    match path {
        Some(p) => Ok((load_extractor(&p, &cfg.feature_layer)?, ExtractorSource::File(p))),
        None => {
            log::warn!(
                "no extractor weights found; using the seeded substitute (width / {}, seed {})",
                cfg.substitute_width_divisor,
                cfg.substitute_seed
            );
            let ex = VggExtractor::substitute(&cfg.feature_layer, cfg.substitute_width_divisor, cfg.substitute_seed)?;
            Ok((ex, ExtractorSource::Substitute { width_divisor: cfg.substitute_width_divisor, seed: cfg.substitute_seed }))
        }
    }
}

fn put_adam(opt: &Adam, prefix: &str, tensors: &mut TensorMap, body: &mut BTreeMap<String, Value>) {
    let mut steps = BTreeMap::new();
    for (name, slot) in &opt.slots {
        let shape = Shape::new(slot.m.len(), 1, 1, 1, 1);
        tensors.insert(format!("{prefix}.m.{name}"), Tensor::from_vec(shape, slot.m.clone()).unwrap());
        tensors.insert(format!("{prefix}.v.{name}"), Tensor::from_vec(shape, slot.v.clone()).unwrap());
        steps.insert(name.clone(), slot.t);
    }
    body.insert(format!("{prefix}.config"), to_value(&opt.config));
    body.insert(format!("{prefix}.steps"), to_value(&steps));
}

fn get_adam(m: &ArchiveManifest, prefix: &str, tensors: &TensorMap) -> Result<Adam> {
    let config: AdamConfig = field(m, &format!("{prefix}.config"))?;
    let steps: BTreeMap<String, u64> = field(m, &format!("{prefix}.steps"))?;
    let mut opt = Adam::new(config);
    for (name, t) in steps {
        let get = |k: &str| {
            tensors.get(&format!("{prefix}.{k}.{name}")).map(|x| x.data().to_vec()).ok_or_else(|| corrupt(format!("missing optimiser moment {k} for `{name}`")))
        };
        opt.slots.insert(name.clone(), AdamSlot { m: get("m")?, v: get("v")?, t });
    }
    Ok(opt)
}

/// Everything in [`TrainState`], so a resumed run continues bit-for-bit.
pub fn save_train_state(st: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = TensorMap::new();
    let mut body = BTreeMap::new();
    body.insert("stage".into(), to_value(&st.stage));
    body.insert("epoch".into(), to_value(&st.epoch));
    body.insert("finished".into(), to_value(&st.finished));
    body.insert("stopped".into(), to_value(&st.stopped));
    body.insert("scheduler".into(), to_value(&st.scheduler));
    body.insert("history".into(), to_value(&st.history));
    body.insert("current".into(), Value::Object(ckpt_body(&st.current).into_iter().collect()));
    prefixed(&st.current.flat_params(), "current.", &mut tensors);
    if let Some((val, best)) = &st.best {
        body.insert("best_val_loss".into(), to_value(val));
        body.insert("best".into(), Value::Object(ckpt_body(best).into_iter().collect()));
        prefixed(&best.flat_params(), "best.", &mut tensors);
    }
    put_adam(&st.g_opt, "opt_g", &mut tensors, &mut body);
    if let (Some(d), Some(opt)) = (&st.disc, &st.d_opt) {
        prefixed(d, "disc.", &mut tensors);
        put_adam(opt, "opt_d", &mut tensors, &mut body);
    }
    archive::save_archive(path, KIND_TRAIN_STATE, body, &tensors)
}

fn sub_manifest(m: &ArchiveManifest, key: &str) -> Result<ArchiveManifest> {
    let body: BTreeMap<String, Value> = field(m, key)?;
    Ok(ArchiveManifest { format_version: m.format_version, kind: KIND_GENERATOR.into(), tensors: Vec::new(), body })
}

pub fn load_train_state(path: &Path) -> Result<TrainState> {
    let (m, t) = archive::load_archive(path)?;
    expect_kind(&m, KIND_TRAIN_STATE)?;
    let current = ckpt_from(&sub_manifest(&m, "current")?, &strip(&t, "current."))?;
    let best = match m.body.get("best_val_loss") {
        Some(_) => Some((field::<f64>(&m, "best_val_loss")?, ckpt_from(&sub_manifest(&m, "best")?, &strip(&t, "best."))?)),
        None => None,
    };
    let stage: TrainStage = field(&m, "stage")?;
    let (disc, d_opt) = if m.body.contains_key("opt_d.config") {
        (Some(strip(&t, "disc.")), Some(get_adam(&m, "opt_d", &t)?))
    } else {
        (None, None)
    };
    let history: Vec<EpochRecord> = field(&m, "history")?;
    let scheduler: PlateauScheduler = field(&m, "scheduler")?;
    Ok(TrainState {
        stage,
        epoch: field(&m, "epoch")?,
        current,
        best,
        g_opt: get_adam(&m, "opt_g", &t)?,
        scheduler,
        disc,
        d_opt,
        history,
        finished: field(&m, "finished")?,
        stopped: field(&m, "stopped")?,
    })
}

/// Stage label as written in reports.
pub fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Initialized => "initialized",
        Stage::MsePretrained => "mse_pretrained",
        Stage::PerceptualGan => "perceptual_gan",
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
