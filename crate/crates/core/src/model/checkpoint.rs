use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::String;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generator::GeneratorConfig;
use crate::error::{bail, Result};
use crate::params::{self, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    MsePretrained,
    PerceptualGan,
}

/// Shared backbone plus one pre/post module per integer sampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleCheckpoint {
    pub config: GeneratorConfig,
    pub backbone: ParamSet<f32>,
    pub per_scale: BTreeMap<u32, ParamSet<f32>>,
    pub stage: Stage,
    pub seed: u64,
    /// Free-form provenance (training digest, optimiser settings, ...).
    pub metadata: BTreeMap<String, String>,
}

impl MultiScaleCheckpoint {
    pub fn new(
        config: GeneratorConfig,
        backbone: ParamSet<f32>,
        per_scale: BTreeMap<u32, ParamSet<f32>>,
        stage: Stage,
        seed: u64,
    ) -> Self {
        MultiScaleCheckpoint { config, backbone, per_scale, stage, seed, metadata: BTreeMap::new() }
    }

    /// Checks the layout against what `config` would initialise, that every
    /// scale module has the same layout, and that all tensors are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let want_backbone = self.config.init_backbone(&mut rng);
        let want_scale = self.config.init_scale_module(&mut rng);
        if !params::same_layout(&want_backbone, &self.backbone) {
            bail!(Corruption, "backbone tensors do not match the generator config");
        }
        for s in &self.config.scales {
            match self.per_scale.get(s) {
                Some(p) if params::same_layout(&want_scale, p) => {}
                Some(_) => bail!(Corruption, "scale {s} module does not match the generator config"),
                None => bail!(Corruption, "missing module for scale {s}"),
            }
        }
        if self.per_scale.len() != self.config.scales.len() {
            bail!(Corruption, "checkpoint holds modules for scales not in the config");
        }
        if !params::all_finite(&self.backbone) || !self.per_scale.values().all(params::all_finite) {
            bail!(Corruption, "non-finite parameter values");
        }
        Ok(())
    }

    /// All trainable tensors under the names used by the generator graph.
    pub fn flat_params(&self) -> ParamSet<f32> {
        let mut out = ParamSet::new();
        for (k, v) in &self.backbone {
            out.insert(alloc::format!("backbone.{k}"), v.clone());
        }
        for (s, p) in &self.per_scale {
            for (k, v) in p {
                out.insert(alloc::format!("scale{s}.{k}"), v.clone());
            }
        }
        out
    }

    /// Inverse of [`Self::flat_params`]; unknown names are an error.
    pub fn set_flat_params(&mut self, flat: &ParamSet<f32>) -> Result<()> {
        for (name, t) in flat {
            let slot = if let Some(rest) = name.strip_prefix("backbone.") {
                self.backbone.get_mut(rest)
            } else if let Some(rest) = name.strip_prefix("scale") {
                let (s, key) = rest.split_once('.').unwrap_or(("", ""));
                s.parse::<u32>().ok().and_then(|s| self.per_scale.get_mut(&s)).and_then(|p| p.get_mut(key))
            } else {
                None
            };
            match slot {
                Some(dst) if dst.shape() == t.shape() => *dst = t.clone(),
                _ => bail!(Corruption, "unexpected parameter `{name}` {}", t.shape()),
            }
        }
        Ok(())
    }
}

/// Parameters effective at a (possibly fractional) sampling factor.
#[derive(Debug, Clone)]
pub struct EffectiveParams<'a> {
    pub backbone: &'a ParamSet<f32>,
    pub per_scale: Cow<'a, ParamSet<f32>>,
    /// `m = floor(s)`.
    pub lower: u32,
    /// `alpha = s - m`; zero means the integer module is used directly.
    pub alpha: f64,
}

impl EffectiveParams<'_> {
    pub fn upper(&self) -> Option<u32> {
        (self.alpha > 0.0).then_some(self.lower + 1)
    }
}

/// `(1 - alpha) * a + alpha * b` per element; endpoints are returned exactly.
pub fn blend(a: &ParamSet<f32>, b: &ParamSet<f32>, alpha: f64) -> Result<ParamSet<f32>> {
    if !params::same_layout(a, b) {
        bail!(Shape, "cannot blend parameter sets with different layouts");
    }
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let mut out = ParamSet::new();
    for ((k, ta), tb) in a.iter().zip(b.values()) {
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| ((1.0 - alpha) * x as f64 + alpha * y as f64) as f32)
            .collect();
        out.insert(k.clone(), Tensor::from_vec(ta.shape(), data)?);
    }
    Ok(out)
}

/// Scale-specific parameters for factor `s`: integer factors use their own
/// module, fractional ones blend the two neighbouring modules with weight
/// `alpha = s - floor(s)`. The backbone is shared and passed through.
pub fn interpolate_params(ckpt: &MultiScaleCheckpoint, s: f64) -> Result<EffectiveParams<'_>> {
    let (lo, hi) = (ckpt.config.min_scale() as f64, ckpt.config.max_scale() as f64);
    if !(s.is_finite() && s >= lo && s <= hi) {
        bail!(Range, "sampling factor {s} outside the checkpoint's range [{lo}, {hi}]");
    }
    let m = libm::floor(s) as u32;
    let alpha = s - m as f64;
    let lower = scale_module(ckpt, m)?;
    if alpha == 0.0 {
        return Ok(EffectiveParams { backbone: &ckpt.backbone, per_scale: Cow::Borrowed(lower), lower: m, alpha });
    }
    let upper = scale_module(ckpt, m + 1)?;
    Ok(EffectiveParams { backbone: &ckpt.backbone, per_scale: Cow::Owned(blend(lower, upper, alpha)?), lower: m, alpha })
}

fn scale_module(ckpt: &MultiScaleCheckpoint, s: u32) -> Result<&ParamSet<f32>> {
    match ckpt.per_scale.get(&s) {
        Some(p) => Ok(p),
        None => bail!(Range, "checkpoint has no module for sampling factor {s}"),
    }
}
