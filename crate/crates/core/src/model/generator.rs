use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{interpolate_params, MultiScaleCheckpoint, Stage};
use crate::degradation::upsample_cubic;
use crate::error::{bail, Result};
use crate::graph::{Eager, Ops};
use crate::kernels::ConvGeom;
use crate::params::{self, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::Volume;

const SLOPE: f64 = 0.2;
const RRDB_RESIDUAL_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    /// conv -> leaky ReLU -> conv, plus identity.
    PlainResidual,
    /// Residual-in-residual dense block (three 5-conv dense blocks).
    Rrdb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub n_residual_blocks: usize,
    pub block_type: BlockType,
    /// Dense-block growth channels (RRDB only); defaults to half the base width.
    pub growth_channels: Option<usize>,
    pub scales: Vec<u32>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 64,
            n_residual_blocks: 8,
            block_type: BlockType::PlainResidual,
            growth_channels: None,
            scales: alloc::vec![2, 3, 4, 5, 6],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_residual_blocks == 0 {
            bail!(Config, "base_channels and n_residual_blocks must be >= 1");
        }
        if self.scales.is_empty() {
            bail!(Config, "at least one scale is required");
        }
        if self.scales[0] < 2 || self.scales.windows(2).any(|w| w[1] != w[0] + 1) {
            bail!(Config, "scales must be consecutive integers >= 2, got {:?}", self.scales);
        }
        Ok(())
    }

    fn growth(&self) -> usize {
        self.growth_channels.unwrap_or((self.base_channels / 2).max(1))
    }

    pub fn min_scale(&self) -> u32 {
        self.scales[0]
    }

    pub fn max_scale(&self) -> u32 {
        *self.scales.last().unwrap()
    }

    /// Number of chained 3x3x3 convolutions on the longest input-to-output
    /// path, i.e. the receptive radius in voxels.
    pub fn receptive_radius(&self) -> usize {
        let per_block = match self.block_type {
            BlockType::PlainResidual => 2,
            BlockType::Rrdb => 15,
        };
        1 + per_block * self.n_residual_blocks + 1 + 2
    }

    /// Backbone parameters, freshly initialised.
    pub fn init_backbone<R: rand::Rng>(&self, rng: &mut R) -> ParamSet<f32> {
        let c = self.base_channels;
        let k = [3; 3];
        let mut p = ParamSet::new();
        for b in 0..self.n_residual_blocks {
            match self.block_type {
                BlockType::PlainResidual => {
                    params::init_conv(&mut p, &format!("block{b}.conv1"), c, c, k, 1.0, rng);
                    params::init_conv(&mut p, &format!("block{b}.conv2"), c, c, k, 0.1, rng);
                }
                BlockType::Rrdb => {
                    let g = self.growth();
                    for r in 0..3 {
                        for i in 0..5 {
                            let cin = c + i * g;
                            let cout = if i == 4 { c } else { g };
                            params::init_conv(&mut p, &format!("block{b}.rdb{r}.conv{i}"), cout, cin, k, 0.1, rng);
                        }
                    }
                }
            }
        }
        params::init_conv(&mut p, "trunk", c, c, k, 1.0, rng);
        p
    }

    /// Per-scale pre/post module. The last conv starts at zero so an
    /// untrained generator reproduces its cubic-interpolated input.
    pub fn init_scale_module<R: rand::Rng>(&self, rng: &mut R) -> ParamSet<f32> {
        let c = self.base_channels;
        let k = [3; 3];
        let mut p = ParamSet::new();
        params::init_conv(&mut p, "pre", c, 1, k, 1.0, rng);
        params::init_conv(&mut p, "post1", c, c, k, 1.0, rng);
        params::init_conv_zero(&mut p, "post2", 1, c, k);
        p
    }
}

/// Stateless forward definitions of the generator network.
pub struct Generator;

impl Generator {
    /// Fresh checkpoint with all scale modules initialised from `seed`.
    pub fn init(cfg: &GeneratorConfig, seed: u64) -> Result<MultiScaleCheckpoint> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = cfg.init_backbone(&mut rng);
        let mut per_scale = BTreeMap::new();
        for &s in &cfg.scales {
            per_scale.insert(s, cfg.init_scale_module(&mut rng));
        }
        let ckpt = MultiScaleCheckpoint::new(cfg.clone(), backbone, per_scale, Stage::Initialized, seed);
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn conv<T: Scalar, O: Ops<T>>(o: &mut O, p: &ParamSet<T>, prefix: &str, name: &str, x: &O::V) -> Result<O::V> {
        let w = o.param(&format!("{prefix}{name}.weight"), params::get(p, &format!("{name}.weight"))?);
        let b = o.param(&format!("{prefix}{name}.bias"), params::get(p, &format!("{name}.bias"))?);
        o.conv(x, &w, Some(&b), ConvGeom::cube(3, 1))
    }

    /// `x` is the cubic-upsampled input `[N, 1, D, H, W]`; returns `x` plus
    /// the learned residual. Graph parameter names are prefixed with
    /// `backbone.` and `scale<s>.`.
    pub fn forward<T: Scalar, O: Ops<T>>(
        o: &mut O,
        cfg: &GeneratorConfig,
        backbone: &ParamSet<T>,
        scale_params: &ParamSet<T>,
        scale_tag: &str,
        x: &O::V,
    ) -> Result<O::V> {
        let sp = format!("scale{scale_tag}.");
        let bp = "backbone.";
        let feat = Self::conv(o, scale_params, &sp, "pre", x)?;
        let mut h = feat.clone();
        for b in 0..cfg.n_residual_blocks {
            h = match cfg.block_type {
                BlockType::PlainResidual => {
                    let t = Self::conv(o, backbone, bp, &format!("block{b}.conv1"), &h)?;
                    let t = o.leaky_relu(&t, SLOPE);
                    let t = Self::conv(o, backbone, bp, &format!("block{b}.conv2"), &t)?;
                    o.add(&h, &t)?
                }
                BlockType::Rrdb => {
                    let mut r = h.clone();
                    for rdb in 0..3 {
                        let mut feats = alloc::vec![r.clone()];
                        let mut last = r.clone();
                        for i in 0..5 {
                            let inp = if feats.len() == 1 { feats[0].clone() } else { o.concat(&feats)? };
                            let t = Self::conv(o, backbone, bp, &format!("block{b}.rdb{rdb}.conv{i}"), &inp)?;
                            if i < 4 {
                                let t = o.leaky_relu(&t, SLOPE);
                                feats.push(t);
                            } else {
                                last = t;
                            }
                        }
                        let scaled = o.scale(&last, RRDB_RESIDUAL_SCALE);
                        r = o.add(&r, &scaled)?;
                    }
                    let scaled = o.scale(&r, RRDB_RESIDUAL_SCALE);
                    o.add(&h, &scaled)?
                }
            };
        }
        let t = Self::conv(o, backbone, bp, "trunk", &h)?;
        let h = o.add(&feat, &t)?;
        let h = Self::conv(o, scale_params, &sp, "post1", &h)?;
        let h = o.leaky_relu(&h, SLOPE);
        let r = Self::conv(o, scale_params, &sp, "post2", &h)?;
        o.add(x, &r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Edge of the cubic tiles the network is evaluated on; each tile is
    /// padded by the receptive radius so the stitched result matches a
    /// whole-volume pass.
    pub tile: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { tile: 48 }
    }
}

/// Super-resolve `v` along Z by factor `s`.
pub fn generate(ckpt: &MultiScaleCheckpoint, v: &Volume, s: f64) -> Result<Volume> {
    generate_with(ckpt, v, s, GenerateOptions::default())
}

pub fn generate_with(ckpt: &MultiScaleCheckpoint, v: &Volume, s: f64, opts: GenerateOptions) -> Result<Volume> {
    let eff = interpolate_params(ckpt, s)?;
    if v.dims()[0] < 4 {
        bail!(Dimension, "need at least 4 slices, got {}", v.dims()[0]);
    }
    let up = upsample_cubic(v, s)?;
    let out = run_tiled(&ckpt.config, &ckpt.backbone, &eff.per_scale, &up, opts.tile.max(1))?;
    if let Some(i) = out.iter().position(|x| !x.is_finite()) {
        let [_, h, w] = up.dims();
        bail!(
            Numerical,
            "non-finite generator output at voxel ({}, {}, {}) for s = {s} (m = {}, alpha = {})",
            i / (h * w),
            (i / w) % h,
            i % w,
            eff.lower,
            eff.alpha
        );
    }
    up.with_data(up.dims(), up.spacing(), out)
}

fn run_tiled(cfg: &GeneratorConfig, backbone: &ParamSet<f32>, scale: &ParamSet<f32>, up: &Volume, tile: usize) -> Result<Vec<f32>> {
    let dims = up.dims();
    let halo = cfg.receptive_radius();
    let mut out = alloc::vec![0f32; up.data().len()];
    let starts = |d: usize| (0..d).step_by(tile).collect::<Vec<_>>();
    for &z0 in &starts(dims[0]) {
        for &y0 in &starts(dims[1]) {
            for &x0 in &starts(dims[2]) {
                let core0 = [z0, y0, x0];
                let mut lo = [0; 3];
                let mut size = [0; 3];
                let mut core_size = [0; 3];
                for a in 0..3 {
                    core_size[a] = tile.min(dims[a] - core0[a]);
                    lo[a] = core0[a].saturating_sub(halo);
                    size[a] = (core0[a] + core_size[a] + halo).min(dims[a]) - lo[a];
                }
                let region = if size == dims { up.clone() } else { up.crop(lo, size)? };
                let mut e = Eager;
                let x = e.constant(region.to_tensor::<f32>());
                let y = Generator::forward(&mut e, cfg, backbone, scale, "", &x)?;
                let y = y.data();
                for z in 0..core_size[0] {
                    for yy in 0..core_size[1] {
                        let src = ((core0[0] + z - lo[0]) * size[1] + core0[1] + yy - lo[1]) * size[2] + core0[2] - lo[2];
                        let dst = up.index(core0[0] + z, core0[1] + yy, core0[2]);
                        out[dst..dst + core_size[2]].copy_from_slice(&y[src..src + core_size[2]]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Forward pass for a batch of pre-upsampled patches without recording.
pub(crate) fn forward_eager(cfg: &GeneratorConfig, backbone: &ParamSet<f32>, scale: &ParamSet<f32>, x: Tensor<f32>) -> Result<Tensor<f32>> {
    let mut e = Eager;
    let xv = e.constant(x);
    let y = Generator::forward(&mut e, cfg, backbone, scale, "", &xv)?;
    Ok(alloc::rc::Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
}
