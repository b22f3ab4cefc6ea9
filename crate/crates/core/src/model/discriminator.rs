use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{Eager, Ops};
use crate::kernels::ConvGeom;
use crate::params::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

const SLOPE: f64 = 0.2;

/// Strided 3-D conv classifier: one stride-2 stage per entry of `channels`,
/// global average pooling and a linear logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub channels: Vec<usize>,
    pub input_patch: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { channels: alloc::vec![32, 64, 128, 256], input_patch: crate::dataset::PATCH_SIZE }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 || self.channels.contains(&0) {
            bail!(Config, "discriminator needs at least two non-empty stages");
        }
        if self.input_patch >> self.channels.len() == 0 {
            bail!(Config, "{} stride-2 stages reduce a {}^3 patch to nothing", self.channels.len(), self.input_patch);
        }
        Ok(())
    }
}

/// Head weights start at zero, so a fresh discriminator outputs logit 0.
pub fn init_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut cin = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        params::init_conv(&mut p, &format!("stage{i}"), c, cin, [3; 3], 1.0, &mut rng);
        cin = c;
    }
    params::init_conv_zero(&mut p, "head", 1, cin, [1; 3]);
    Ok(p)
}

pub struct PatchDiscriminator;

impl PatchDiscriminator {
    /// Logits `[N, 1, 1, 1, 1]` for patches `[N, 1, P, P, P]`; parameter
    /// names are prefixed with `disc.`.
    pub fn forward<T: Scalar, O: Ops<T>>(o: &mut O, cfg: &DiscriminatorConfig, p: &ParamSet<T>, x: &O::V) -> Result<O::V> {
        let s = o.value(x).shape();
        let want = cfg.input_patch;
        if s.c() != 1 || [s.d(), s.h(), s.w()] != [want; 3] {
            bail!(Shape, "discriminator expects [N, 1, {want}, {want}, {want}], got {s}");
        }
        let mut h = x.clone();
        for i in 0..cfg.channels.len() {
            let w = o.param(&format!("disc.stage{i}.weight"), params::get(p, &format!("stage{i}.weight"))?);
            let b = o.param(&format!("disc.stage{i}.bias"), params::get(p, &format!("stage{i}.bias"))?);
            h = o.conv(&h, &w, Some(&b), ConvGeom::cube(3, 2))?;
            h = o.leaky_relu(&h, SLOPE);
        }
        let pooled = o.global_mean_pool(&h);
        let w = o.param("disc.head.weight", params::get(p, "head.weight")?);
        let b = o.param("disc.head.bias", params::get(p, "head.bias")?);
        o.conv(&pooled, &w, Some(&b), ConvGeom::pointwise())
    }
}

/// Logit for a single `P x P x P` patch given as a flat `Z, Y, X` buffer.
pub fn discriminate(cfg: &DiscriminatorConfig, p: &ParamSet<f32>, patch: &Tensor<f32>) -> Result<f64> {
    let s = patch.shape();
    let want = cfg.input_patch;
    if s.len() != want * want * want || [s.d(), s.h(), s.w()] != [want; 3] {
        bail!(Shape, "patch {s} is not {want}^3");
    }
    if !patch.all_finite() {
        bail!(Data, "patch contains non-finite values");
    }
    let x = patch.clone().reshape(Shape::new(1, 1, want, want, want))?;
    let mut e = Eager;
    let xv = e.constant(x);
    let logit = PatchDiscriminator::forward(&mut e, cfg, p, &xv)?;
    Ok(logit.item() as f64)
}
